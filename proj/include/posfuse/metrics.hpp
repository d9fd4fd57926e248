// OSPA distance between finite point sets and the precision statistic of a
// set of confirmed tracks.
#pragma once

#include "posfuse/tracker.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace posfuse {

/// Minimum-cost assignment of every row to a distinct column of a rows <= cols
/// cost matrix (shortest augmenting path form of the Hungarian method).
/// Returns the column assigned to each row.
inline std::vector<int> hungarian(const Eigen::MatrixXd& cost)
{
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    if (n > m) throw InvalidParameter("hungarian: more rows than columns");
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based potentials; p[j] is the row matched to column j, 0 if none.
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> assignment(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] != 0) assignment[p[j] - 1] = j - 1;
    return assignment;
}

struct OspaParams {
    double cutoff = 100.0;
    double order = 2.0;

    void validate() const
    {
        if (!(cutoff > 0.0)) throw InvalidParameter("ospa: cutoff must be positive");
        if (!(order >= 1.0)) throw InvalidParameter("ospa: order must be at least 1");
    }
};

using PointSet = std::vector<Eigen::Vector2d>;

inline double ospa(const PointSet& x, const PointSet& y, const OspaParams& params = {})
{
    params.validate();
    const PointSet& small = x.size() <= y.size() ? x : y;
    const PointSet& large = x.size() <= y.size() ? y : x;
    const auto m = small.size();
    const auto n = large.size();
    if (n == 0) return 0.0;
    const double c = params.cutoff;
    const double p = params.order;
    double total = std::pow(c, p) * static_cast<double>(n - m);
    if (m > 0) {
        Eigen::MatrixXd cost(m, n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                cost(i, j) = std::pow(std::min(c, (small[i] - large[j]).norm()), p);
        const auto match = hungarian(cost);
        for (std::size_t i = 0; i < m; ++i) total += cost(i, match[i]);
    }
    return std::pow(total / static_cast<double>(n), 1.0 / p);
}

/// Positions (state coordinates 0 and 2) of a track list.
inline PointSet track_positions(const std::vector<Track>& tracks)
{
    PointSet out;
    out.reserve(tracks.size());
    for (const auto& t : tracks) out.emplace_back(t.mean(0), t.mean(2));
    return out;
}

/// -(1/N) sum_i log det P_i; empty when there are no tracks.
inline std::optional<double> precision_stat(const std::vector<Track>& tracks)
{
    if (tracks.empty()) return std::nullopt;
    double sum = 0.0;
    for (const auto& t : tracks) sum += log_det(checked_llt(t.cov, "precision_stat"));
    return -sum / static_cast<double>(tracks.size());
}

}  // namespace posfuse
