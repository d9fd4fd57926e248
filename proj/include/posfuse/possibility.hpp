// Gaussian possibility functions and Gaussian max-mixtures.
//
// A Gaussian possibility function is the unnormalised kernel
//   N(x; mu, P) = exp(-1/2 (x - mu)' P^{-1} (x - mu)),
// whose supremum is 1. A max-mixture F(x) = max_i alpha_i N(x; mu_i, P_i)
// represents a presence function on the state space. Weights are kept in the
// log domain so that long products over sensors do not underflow.
#pragma once

#include "posfuse/core.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace posfuse {

struct GaussianComponent {
    double log_weight = 0.0;
    Vector mean;
    Matrix cov;
    TagSet tags;

    double weight() const { return std::exp(log_weight); }
    int dim() const { return static_cast<int>(mean.size()); }

    bool operator==(const GaussianComponent&) const = default;
};

/// Builds a validated component: weight in (0, 1], covariance SPD.
inline GaussianComponent make_component(double weight, Vector mean, Matrix cov, TagSet tags = {})
{
    if (!(weight > 0.0 && weight <= 1.0))
        throw InvalidParameter("component weight must lie in (0, 1]");
    if (cov.rows() != mean.size())
        throw InvalidParameter("component mean and covariance dimensions differ");
    checked_llt(cov, "make_component");
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    return GaussianComponent{std::log(weight), std::move(mean), std::move(cov), std::move(tags)};
}

struct MaxMixture {
    int dim = 0;
    std::vector<GaussianComponent> components;

    MaxMixture() = default;
    explicit MaxMixture(int d) : dim(d)
    {
        if (d <= 0 || d > kMaxDim) throw InvalidParameter("mixture dimension out of range");
    }
    MaxMixture(int d, std::vector<GaussianComponent> comps) : MaxMixture(d)
    {
        for (auto& c : comps) add(std::move(c));
    }

    void add(GaussianComponent c)
    {
        if (c.dim() != dim || c.cov.rows() != dim || c.cov.cols() != dim)
            throw InvalidParameter("component dimension does not match mixture");
        components.push_back(std::move(c));
    }

    std::size_t size() const { return components.size(); }
    bool empty() const { return components.empty(); }

    bool operator==(const MaxMixture&) const = default;
};

// ---------------------------------------------------------------------------
// Evaluation

inline double eval_gaussian(const Vector& x, const Vector& mean, const Matrix& cov)
{
    if (x.size() != mean.size() || cov.rows() != mean.size())
        throw InvalidParameter("eval_gaussian: dimension mismatch");
    auto llt = checked_llt(cov, "eval_gaussian");
    return std::exp(-0.5 * inv_quad(llt, x - mean));
}

/// log F(x); -inf for the empty mixture.
inline double log_eval_mixture(const MaxMixture& f, const Vector& x)
{
    if (x.size() != f.dim) throw InvalidParameter("eval_mixture: dimension mismatch");
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : f.components) {
        Eigen::LLT<Matrix> llt(c.cov);
        if (llt.info() != Eigen::Success) throw NumericalError("eval_mixture: covariance not SPD");
        best = std::max(best, c.log_weight - 0.5 * inv_quad(llt, x - c.mean));
    }
    return best;
}

inline double eval_mixture(const MaxMixture& f, const Vector& x)
{
    return std::exp(log_eval_mixture(f, x));
}

// ---------------------------------------------------------------------------
// Powers and products

/// Raises F to an arbitrary positive exponent. Exponents above one sharpen
/// the mixture and are used when a node holding a fraction of the network
/// information is rescaled for decisions.
inline MaxMixture power_unbounded(const MaxMixture& f, double w)
{
    if (!(w > 0.0) || !std::isfinite(w)) throw InvalidParameter("power: exponent must be positive");
    MaxMixture out = f;
    if (w == 1.0) return out;
    for (auto& c : out.components) {
        c.log_weight *= w;
        c.cov /= w;
    }
    return out;
}

/// F^w: weights alpha^w, covariances P/w. w = 0 would be the all-one
/// function, which no finite max-mixture represents.
inline MaxMixture power(const MaxMixture& f, double w)
{
    if (!(w > 0.0 && w <= 1.0)) throw InvalidParameter("power: exponent must lie in (0, 1]");
    return power_unbounded(f, w);
}

namespace detail {

/// Product of two Gaussian possibility terms given a factor of Pa + Pb.
inline GaussianComponent product_with(const GaussianComponent& a, const GaussianComponent& b,
                                      const Eigen::LLT<Matrix>& sum_llt, double log_weight)
{
    GaussianComponent out;
    out.log_weight = log_weight;
    // (Pa + Pb)^{-1} Pa, reused for both mean and covariance.
    Matrix gain = sum_llt.solve(a.cov);
    out.mean = a.mean + gain.transpose() * (b.mean - a.mean);
    out.cov = a.cov - a.cov * gain;
    symmetrise(out.cov);
    out.tags = tag_union(a.tags, b.tags);
    return out;
}

/// Fused log weight alpha_a alpha_b N(mu_a; mu_b, Pa + Pb), with the factor.
inline std::pair<double, Eigen::LLT<Matrix>> product_log_weight(const GaussianComponent& a,
                                                                const GaussianComponent& b)
{
    Matrix sum = a.cov + b.cov;
    Eigen::LLT<Matrix> llt(sum);
    if (llt.info() != Eigen::Success) throw NumericalError("product: covariance sum not SPD");
    double lw = a.log_weight + b.log_weight - 0.5 * inv_quad(llt, b.mean - a.mean);
    return {lw, std::move(llt)};
}

}  // namespace detail

/// Pointwise product of two weighted Gaussian terms, as one weighted term.
inline GaussianComponent product_pair(const GaussianComponent& a, const GaussianComponent& b)
{
    if (a.dim() != b.dim()) throw InvalidParameter("product_pair: dimension mismatch");
    checked_llt(a.cov, "product_pair");
    checked_llt(b.cov, "product_pair");
    auto [lw, llt] = detail::product_log_weight(a, b);
    return detail::product_with(a, b, llt, lw);
}

/// Pointwise product F1 * F2 as the cross-product max-mixture. Pairs whose
/// fused weight falls below min_weight are skipped (pruning fused into the
/// product); the default keeps every pair.
inline MaxMixture fuse_product(const MaxMixture& f1, const MaxMixture& f2, double min_weight = 0.0)
{
    if (f1.dim != f2.dim) throw InvalidParameter("fuse_product: dimension mismatch");
    MaxMixture out(f1.dim);
    const double floor = min_weight > 0.0 ? std::log(min_weight) : -std::numeric_limits<double>::infinity();
    out.components.reserve(f1.size() * f2.size());
    for (const auto& a : f1.components) {
        if (a.log_weight < floor) continue;
        for (const auto& b : f2.components) {
            if (a.log_weight + b.log_weight < floor) continue;
            auto [lw, llt] = detail::product_log_weight(a, b);
            if (lw < floor) continue;
            out.components.push_back(detail::product_with(a, b, llt, lw));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Marginalisation, prediction, update

/// sup over the dropped coordinates; exact for Gaussian terms.
inline MaxMixture marginalise(const MaxMixture& f, const std::vector<int>& keep)
{
    if (keep.empty()) throw InvalidParameter("marginalise: empty index set");
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] < 0 || keep[i] >= f.dim) throw InvalidParameter("marginalise: index out of range");
        for (std::size_t j = 0; j < i; ++j)
            if (keep[j] == keep[i]) throw InvalidParameter("marginalise: repeated index");
    }
    const int k = static_cast<int>(keep.size());
    MaxMixture out(k);
    for (const auto& c : f.components) {
        GaussianComponent m;
        m.log_weight = c.log_weight;
        m.mean.resize(k);
        m.cov.resize(k, k);
        for (int i = 0; i < k; ++i) {
            m.mean(i) = c.mean(keep[i]);
            for (int j = 0; j < k; ++j) m.cov(i, j) = c.cov(keep[i], keep[j]);
        }
        m.tags = c.tags;
        out.components.push_back(std::move(m));
    }
    return out;
}

/// Closed-form Bayes update of one component under a linear-Gaussian
/// likelihood N(y; Hx, R). q = sup_x h(y|x) N(x; mu, P) = N(y; H mu, S).
struct ComponentUpdate {
    double q = 0.0;
    double log_q = 0.0;
    GaussianComponent posterior;
};

namespace detail {

/// Innovation-independent part of a Kalman update, shared across observations.
struct KalmanTerms {
    Eigen::LLT<Matrix> s_llt;
    Vector predicted_obs;
    Matrix gain;
    Matrix posterior_cov;
    double log_det_s = 0.0;
};

inline KalmanTerms kalman_terms(const GaussianComponent& c, const Matrix& h, const Matrix& r)
{
    KalmanTerms t;
    Matrix ph = c.cov * h.transpose();
    Matrix s = h * ph + r;
    symmetrise(s);
    t.s_llt.compute(s);
    if (t.s_llt.info() != Eigen::Success || !(t.s_llt.matrixLLT().diagonal().array() > 0.0).all())
        throw NumericalError("bayes update: innovation covariance is singular");
    t.predicted_obs = h * c.mean;
    t.gain = t.s_llt.solve(ph.transpose()).transpose();
    Matrix ikh = Matrix::Identity(c.dim(), c.dim()) - t.gain * h;
    t.posterior_cov = ikh * c.cov;
    symmetrise(t.posterior_cov);
    t.log_det_s = log_det(t.s_llt);
    return t;
}

}  // namespace detail

inline ComponentUpdate bayes_update_component(const GaussianComponent& c, const Vector& y, const Matrix& h,
                                              const Matrix& r, std::optional<ObservationId> id = std::nullopt)
{
    if (h.cols() != c.dim() || h.rows() != y.size() || r.rows() != y.size() || r.cols() != y.size())
        throw InvalidParameter("bayes_update_component: dimension mismatch");
    checked_llt(c.cov, "bayes_update_component");
    auto t = detail::kalman_terms(c, h, r);
    Vector innovation = y - t.predicted_obs;
    ComponentUpdate u;
    u.log_q = -0.5 * inv_quad(t.s_llt, innovation);
    u.q = std::exp(u.log_q);
    u.posterior.log_weight = c.log_weight;
    u.posterior.mean = c.mean + t.gain * innovation;
    u.posterior.cov = t.posterior_cov;
    u.posterior.tags = c.tags;
    if (id) tag_insert(u.posterior.tags, *id);
    return u;
}

namespace detail {

inline GaussianComponent sup_predict(const GaussianComponent& c, const Matrix& g, const Matrix& q, double w)
{
    GaussianComponent out;
    out.log_weight = c.log_weight;
    out.mean = g * c.mean;
    out.cov = g * c.cov * g.transpose() + q / w;
    symmetrise(out.cov);
    out.tags = c.tags;
    return out;
}

}  // namespace detail

/// sup_x N(x'; G x, Q/w) alpha N(x; mu, P) = alpha N(x'; G mu, G P G' + Q/w).
inline GaussianComponent sup_predict_component(const GaussianComponent& c, const Matrix& g, const Matrix& q,
                                               double w = 1.0)
{
    if (g.rows() != c.dim() || g.cols() != c.dim() || q.rows() != c.dim())
        throw InvalidParameter("sup_predict_component: dimension mismatch");
    if (!(w > 0.0 && w <= 1.0)) throw InvalidParameter("sup_predict_component: exponent must lie in (0, 1]");
    check_psd(q, "sup_predict_component");
    return detail::sup_predict(c, g, q, w);
}

// ---------------------------------------------------------------------------
// Distances

namespace detail {

/// log of the normalised overlap coefficient between two Gaussian shapes.
inline double log_overlap(const Vector& ma, const Matrix& pa, double log_det_a, const Vector& mb,
                          const Matrix& pb, double log_det_b)
{
    Matrix sum = pa + pb;
    Eigen::LLT<Matrix> llt(sum);
    if (llt.info() != Eigen::Success) throw NumericalError("hellinger: covariance sum not SPD");
    const double d = static_cast<double>(ma.size());
    return -0.25 * inv_quad(llt, mb - ma) + 0.5 * d * std::log(2.0) + 0.25 * (log_det_a + log_det_b) -
           0.5 * log_det(llt);
}

inline double hellinger_from_log_overlap(double log_b)
{
    const double b = std::min(1.0, std::exp(log_b));
    return std::sqrt(std::max(0.0, 1.0 - b));
}

}  // namespace detail

/// Shape-only Hellinger distance between two Gaussian possibility terms:
/// sqrt(1 - B), B = int sqrt(fa fb) / sqrt(int fa int fb). Weights are ignored.
inline double hellinger_distance(const GaussianComponent& a, const GaussianComponent& b)
{
    if (a.dim() != b.dim()) throw InvalidParameter("hellinger_distance: dimension mismatch");
    auto la = checked_llt(a.cov, "hellinger_distance");
    auto lb = checked_llt(b.cov, "hellinger_distance");
    return detail::hellinger_from_log_overlap(
        detail::log_overlap(a.mean, a.cov, log_det(la), b.mean, b.cov, log_det(lb)));
}

/// Squared Mahalanobis distance (mu_b - mu_a)' Pa^{-1} (mu_b - mu_a).
inline double mahalanobis_distance(const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b)
{
    if (mean_a.size() != mean_b.size() || cov_a.rows() != mean_a.size())
        throw InvalidParameter("mahalanobis_distance: dimension mismatch");
    auto llt = checked_llt(cov_a, "mahalanobis_distance");
    return inv_quad(llt, mean_b - mean_a);
}

inline double mahalanobis_distance(const GaussianComponent& a, const GaussianComponent& b)
{
    return mahalanobis_distance(a.mean, a.cov, b.mean);
}

// ---------------------------------------------------------------------------
// Mixture reduction

/// Drops components with weight strictly below threshold; order preserved.
inline MaxMixture prune(const MaxMixture& f, double threshold)
{
    MaxMixture out(f.dim);
    if (threshold <= 0.0) {
        out.components = f.components;
        return out;
    }
    const double floor = std::log(threshold);
    for (const auto& c : f.components)
        if (!(c.log_weight < floor)) out.components.push_back(c);
    return out;
}

enum class MergeDistance { hellinger, mahalanobis };

namespace detail {

/// Greedy clustering: the heaviest unassigned component seeds a cluster and
/// absorbs every unassigned component for which near(seed, other) holds.
/// Ties in weight go to the lower index.
template <class Weight, class Near>
std::vector<std::vector<std::size_t>> greedy_clusters(std::size_t n, Weight weight, Near near)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return weight(i) > weight(j); });
    std::vector<char> used(n, 0);
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t oi = 0; oi < n; ++oi) {
        const std::size_t seed = order[oi];
        if (used[seed]) continue;
        used[seed] = 1;
        std::vector<std::size_t> cluster{seed};
        for (std::size_t oj = oi + 1; oj < n; ++oj) {
            const std::size_t other = order[oj];
            if (used[other]) continue;
            if (near(seed, other)) {
                used[other] = 1;
                cluster.push_back(other);
            }
        }
        clusters.push_back(std::move(cluster));
    }
    return clusters;
}

/// Moment-matched mean and covariance with relative weights rel[i].
template <class Comp>
std::pair<Vector, Matrix> moment_match(const std::vector<Comp>& comps, const std::vector<std::size_t>& cluster,
                                       const std::vector<double>& rel)
{
    const auto& first = comps[cluster.front()];
    double total = 0.0;
    Vector mean = Vector::Zero(first.mean.size());
    for (std::size_t k = 0; k < cluster.size(); ++k) {
        mean += rel[k] * comps[cluster[k]].mean;
        total += rel[k];
    }
    mean /= total;
    Matrix cov = Matrix::Zero(first.mean.size(), first.mean.size());
    for (std::size_t k = 0; k < cluster.size(); ++k) {
        Vector d = comps[cluster[k]].mean - mean;
        cov += rel[k] * (comps[cluster[k]].cov + d * d.transpose());
    }
    cov /= total;
    symmetrise(cov);
    return {mean, cov};
}

}  // namespace detail

/// Observation tags of a merged component: those of the cluster seed, or the
/// union over the cluster.
enum class TagMerge { seed, union_all };

/// Greedy merge. The merged weight is the largest weight in the cluster so
/// the mixture keeps its presence-function semantics; mean and covariance
/// are moment matched with the cluster weights.
inline MaxMixture merge(const MaxMixture& f, MergeDistance distance, double threshold,
                        TagMerge tag_merge = TagMerge::seed)
{
    const auto& comps = f.components;
    const std::size_t n = comps.size();
    MaxMixture out(f.dim);
    if (n == 0) return out;

    std::vector<double> log_dets(n), traces(n);
    std::vector<Eigen::LLT<Matrix>> factors;
    factors.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        factors.emplace_back(comps[i].cov);
        if (factors.back().info() != Eigen::Success) throw NumericalError("merge: covariance not SPD");
        log_dets[i] = log_det(factors.back());
        traces[i] = comps[i].cov.trace();
    }

    std::function<bool(std::size_t, std::size_t)> near;
    if (distance == MergeDistance::hellinger) {
        // Overlap B <= exp(-|d|^2 / (4 tr(Pa + Pb))); reject cheaply before factoring.
        const double min_overlap = 1.0 - threshold * threshold;
        const double max_scaled = min_overlap > 0.0 ? -4.0 * std::log(min_overlap) : std::numeric_limits<double>::infinity();
        near = [&, max_scaled](std::size_t i, std::size_t j) {
            const double d2 = (comps[j].mean - comps[i].mean).squaredNorm();
            if (d2 > max_scaled * (traces[i] + traces[j])) return false;
            const double lb = detail::log_overlap(comps[i].mean, comps[i].cov, log_dets[i], comps[j].mean,
                                                  comps[j].cov, log_dets[j]);
            return detail::hellinger_from_log_overlap(lb) <= threshold;
        };
    } else {
        near = [&](std::size_t i, std::size_t j) {
            return inv_quad(factors[j], comps[j].mean - comps[i].mean) <= threshold;
        };
    }

    auto clusters = detail::greedy_clusters(n, [&](std::size_t i) { return comps[i].log_weight; }, near);
    out.components.reserve(clusters.size());
    for (const auto& cluster : clusters) {
        if (cluster.size() == 1) {
            out.components.push_back(comps[cluster.front()]);
            continue;
        }
        const double top = comps[cluster.front()].log_weight;
        std::vector<double> rel(cluster.size());
        TagSet tags = comps[cluster.front()].tags;
        for (std::size_t k = 0; k < cluster.size(); ++k) {
            rel[k] = std::exp(comps[cluster[k]].log_weight - top);
            if (tag_merge == TagMerge::union_all) tags = tag_union(tags, comps[cluster[k]].tags);
        }
        auto [mean, cov] = detail::moment_match(comps, cluster, rel);
        out.components.push_back(GaussianComponent{top, std::move(mean), std::move(cov), std::move(tags)});
    }
    return out;
}

/// Keeps the `cap` heaviest components (ties to the lower index), preserving
/// their relative order.
inline MaxMixture truncate(const MaxMixture& f, std::size_t cap)
{
    if (f.size() <= cap) return f;
    std::vector<std::size_t> order(f.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return f.components[i].log_weight > f.components[j].log_weight;
    });
    order.resize(cap);
    std::sort(order.begin(), order.end());
    MaxMixture out(f.dim);
    out.components.reserve(cap);
    for (auto i : order) out.components.push_back(f.components[i]);
    return out;
}

/// Largest component weight; 0 for the empty mixture.
inline double max_weight(const MaxMixture& f)
{
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : f.components) best = std::max(best, c.log_weight);
    return std::exp(best);
}

/// Drops tags older than `oldest` from every component.
inline void trim_tags(MaxMixture& f, std::uint32_t oldest)
{
    for (auto& c : f.components)
        if (std::any_of(c.tags.begin(), c.tags.end(), [oldest](const ObservationId& id) { return id.time < oldest; }))
            c.tags = tags_since(c.tags, oldest);
}

}  // namespace posfuse
