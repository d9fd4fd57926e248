// Basic vocabulary shared by every posfuse header: linear-algebra aliases,
// error types and observation identifiers.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <compare>
#include <cstdint>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace posfuse {

/// Largest state/observation dimension handled with stack-allocated storage.
inline constexpr int kMaxDim = 8;

using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

/// Raised when an argument violates a documented precondition.
class InvalidParameter : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation breaks down numerically (e.g. singular innovation).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Identifies one observation: which sensor produced it, at which scan, and
/// its position within that sensor's scan.
struct ObservationId {
    std::uint32_t sensor = 0;
    std::uint32_t time = 0;
    std::uint32_t index = 0;

    auto operator<=>(const ObservationId&) const = default;
};

/// Sorted, duplicate-free list of observation identifiers.
using TagSet = std::vector<ObservationId>;

inline TagSet tag_union(const TagSet& a, const TagSet& b)
{
    if (a.empty()) return b;
    if (b.empty()) return a;
    TagSet out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline void tag_insert(TagSet& tags, const ObservationId& id)
{
    auto it = std::lower_bound(tags.begin(), tags.end(), id);
    if (it == tags.end() || *it != id) tags.insert(it, id);
}

inline bool tags_disjoint(const TagSet& a, const TagSet& b)
{
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (*i < *j) ++i;
        else if (*j < *i) ++j;
        else return false;
    }
    return true;
}

/// Tags with time index >= oldest.
inline TagSet tags_since(const TagSet& tags, std::uint32_t oldest)
{
    TagSet out;
    std::copy_if(tags.begin(), tags.end(), std::back_inserter(out),
                 [oldest](const ObservationId& id) { return id.time >= oldest; });
    return out;
}

inline void symmetrise(Matrix& m)
{
    m = (0.5 * (m + m.transpose())).eval();
}

/// Cholesky factorisation that rejects non-symmetric, non-finite or
/// non-positive-definite input.
inline Eigen::LLT<Matrix> checked_llt(const Matrix& m, const char* what)
{
    if (m.rows() != m.cols() || m.rows() == 0)
        throw InvalidParameter(std::string(what) + ": covariance must be square and non-empty");
    if (!m.allFinite())
        throw InvalidParameter(std::string(what) + ": covariance has non-finite entries");
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw InvalidParameter(std::string(what) + ": covariance is not symmetric");
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all())
        throw InvalidParameter(std::string(what) + ": covariance is not positive definite");
    return llt;
}

/// Rejects matrices that are not symmetric positive semi-definite. Process
/// noise of a nearly-constant-velocity model is rank deficient, so
/// transition covariances are only required to be PSD.
inline void check_psd(const Matrix& m, const char* what)
{
    if (m.rows() != m.cols() || m.rows() == 0)
        throw InvalidParameter(std::string(what) + ": matrix must be square and non-empty");
    if (!m.allFinite()) throw InvalidParameter(std::string(what) + ": matrix has non-finite entries");
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw InvalidParameter(std::string(what) + ": matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-12 * scale)
        throw InvalidParameter(std::string(what) + ": matrix is not positive semi-definite");
}

/// log det of an SPD matrix from its Cholesky factor.
inline double log_det(const Eigen::LLT<Matrix>& llt)
{
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Quadratic form v' M^{-1} v from a Cholesky factor of M.
inline double inv_quad(const Eigen::LLT<Matrix>& llt, const Vector& v)
{
    Vector z = llt.matrixL().solve(v);
    return z.squaredNorm();
}

}  // namespace posfuse
