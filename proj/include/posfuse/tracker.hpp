// Possibilistic analogue of the PHD filter on Gaussian max-mixtures.
#pragma once

#include "posfuse/possibility.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace posfuse {

/// Transition g(x' | x) = N(x'; G x, Q); Q may be singular.
struct MotionModel {
    Matrix G;
    Matrix Q;

    void validate(int dim) const
    {
        if (G.rows() != dim || G.cols() != dim || Q.rows() != dim || Q.cols() != dim)
            throw InvalidParameter("motion model: dimension mismatch");
        check_psd(Q, "motion model Q");
    }
};

/// Axis-aligned box in observation space.
struct Box {
    Vector lower;
    Vector upper;

    bool contains(const Vector& y) const
    {
        return (y.array() >= lower.array()).all() && (y.array() <= upper.array()).all();
    }
    double volume() const { return (upper - lower).prod(); }
};

/// Likelihood h(y | x) = N(y; H x, R) for observations expressed in the
/// global frame; raw sensor observations are local, y_local = H (x - x_s) + v.
struct ObservationModel {
    Matrix H;
    Matrix R;
    /// Detection-failure possibility inside the field of view; 1 outside.
    double alpha_df = 1.0;
    Box fov;
    Vector sensor_offset;
    std::uint32_t sensor_id = 0;

    double alpha_df_at(const Vector& state) const
    {
        return fov.contains(H * state) ? alpha_df : 1.0;
    }

    Vector to_global(const Vector& local) const
    {
        if (sensor_offset.size() == 0) return local;
        return local + H * sensor_offset;
    }

    void validate(int dim) const
    {
        if (H.cols() != dim || R.rows() != H.rows() || R.cols() != H.rows())
            throw InvalidParameter("observation model: dimension mismatch");
        if (!(alpha_df > 0.0 && alpha_df <= 1.0))
            throw InvalidParameter("observation model: alpha_df must lie in (0, 1]");
        if (fov.lower.size() != H.rows() || fov.upper.size() != H.rows() ||
            !(fov.upper.array() > fov.lower.array()).all())
            throw InvalidParameter("observation model: degenerate field of view");
        if (sensor_offset.size() != 0 && sensor_offset.size() != dim)
            throw InvalidParameter("observation model: sensor offset dimension mismatch");
        checked_llt(R, "observation model R");
    }
};

struct BirthModel {
    MaxMixture birth_mixture;
    /// Constant birth possibility over the observed region.
    double birth_scalar = 0.0;
};

struct ClutterModel {
    /// Constant false-alarm presence value on the observation space.
    double f_fa = 1.0;
};

struct Observation {
    /// Sensor-local coordinates.
    Vector value;
    ObservationId id;
};

struct MaintenanceConfig {
    double prune_threshold = 1e-4;
    double merge_threshold = 0.75;
    std::size_t cap = 2000;
    TagMerge merge_tags = TagMerge::seed;
    bool enabled = true;
};

struct ExtractionConfig {
    double tau_tilde = 0.1;
    int n_sensors = 1;
    /// Number of most recent scans whose observation tags must be disjoint
    /// between confirmed tracks.
    int window = 10;
    /// Skip components with no observation inside the window, such as
    /// undetected birth terms.
    bool require_observation = true;
};

struct Track {
    Vector mean;
    Matrix cov;
    double weight = 0.0;
};

/// sup_x g^w(x_k | x) F(x) joined with the birth terms. Survival possibility
/// is one, so weights carry over unchanged.
inline MaxMixture predict(const MaxMixture& f, const MotionModel& motion, const BirthModel& birth, double w = 1.0)
{
    if (!(w > 0.0 && w <= 1.0)) throw InvalidParameter("predict: exponent must lie in (0, 1]");
    motion.validate(f.dim);
    if (!birth.birth_mixture.empty() && birth.birth_mixture.dim != f.dim)
        throw InvalidParameter("predict: birth mixture dimension mismatch");
    MaxMixture out(f.dim);
    out.components.reserve(f.size() + birth.birth_mixture.size());
    for (const auto& c : f.components) out.components.push_back(detail::sup_predict(c, motion.G, motion.Q, w));
    for (const auto& b : birth.birth_mixture.components) out.components.push_back(b);
    return out;
}

/// Multi-observation update. Output layout: the m missed-detection copies
/// first, then m detected copies for each observation in input order.
inline MaxMixture update(const MaxMixture& f, const std::vector<Observation>& ys, const ObservationModel& obs,
                         const ClutterModel& clutter)
{
    obs.validate(f.dim);
    if (!(clutter.f_fa > 0.0 && clutter.f_fa <= 1.0))
        throw InvalidParameter("update: false-alarm value must lie in (0, 1]");
    const std::size_t m = f.size();
    MaxMixture out(f.dim);
    out.components.reserve(m * (1 + ys.size()));

    for (const auto& c : f.components) {
        GaussianComponent missed = c;
        missed.log_weight += std::log(obs.alpha_df_at(c.mean));
        out.components.push_back(std::move(missed));
    }
    if (ys.empty() || m == 0) return out;

    std::vector<detail::KalmanTerms> terms;
    terms.reserve(m);
    for (const auto& c : f.components) terms.push_back(detail::kalman_terms(c, obs.H, obs.R));

    const double log_f_fa = std::log(clutter.f_fa);
    std::vector<double> log_q(m);
    std::vector<Vector> innovations(m);
    for (const auto& y : ys) {
        if (y.value.size() != obs.H.rows()) throw InvalidParameter("update: observation dimension mismatch");
        const Vector global = obs.to_global(y.value);
        double log_d = log_f_fa;
        for (std::size_t i = 0; i < m; ++i) {
            innovations[i] = global - terms[i].predicted_obs;
            log_q[i] = -0.5 * inv_quad(terms[i].s_llt, innovations[i]);
            log_d = std::max(log_d, f.components[i].log_weight + log_q[i]);
        }
        for (std::size_t i = 0; i < m; ++i) {
            const auto& c = f.components[i];
            GaussianComponent det;
            det.log_weight = c.log_weight + log_q[i] - log_d;
            det.mean = c.mean + terms[i].gain * innovations[i];
            det.cov = terms[i].posterior_cov;
            det.tags = c.tags;
            tag_insert(det.tags, y.id);
            out.components.push_back(std::move(det));
        }
    }
    return out;
}

/// Prune, merge with the Hellinger distance, then keep the `cap` heaviest.
inline MaxMixture maintain(const MaxMixture& f, double prune_threshold, double merge_threshold, std::size_t cap,
                           TagMerge merge_tags = TagMerge::seed)
{
    auto out = prune(f, prune_threshold);
    out = merge(out, MergeDistance::hellinger, merge_threshold, merge_tags);
    return truncate(out, cap);
}

inline MaxMixture maintain(const MaxMixture& f, const MaintenanceConfig& cfg)
{
    if (!cfg.enabled) return f;
    return maintain(f, cfg.prune_threshold, cfg.merge_threshold, cfg.cap, cfg.merge_tags);
}

/// Per-sensor confirmation threshold tau = tau_tilde * alpha_df^alpha_df.
inline double confirmation_threshold(double tau_tilde, double alpha_df)
{
    return tau_tilde * std::pow(alpha_df, alpha_df);
}

namespace detail {

/// Greedy selection over candidates sorted by decreasing log weight, skipping
/// any candidate that shares a recent observation with an accepted one.
template <class Comp, class LogWeight>
std::vector<std::size_t> select_disjoint(const std::vector<Comp>& comps, LogWeight log_weight, double log_threshold,
                                         int window, std::uint32_t now, bool require_observation)
{
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < comps.size(); ++i)
        if (log_weight(comps[i]) >= log_threshold) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return log_weight(comps[a]) > log_weight(comps[b]); });
    const std::uint32_t oldest = now + 1 > static_cast<std::uint32_t>(window) ? now + 1 - window : 0;
    std::vector<std::size_t> accepted;
    std::vector<TagSet> accepted_tags;
    for (auto i : order) {
        TagSet recent = tags_since(comps[i].tags, oldest);
        if (require_observation && recent.empty()) continue;
        bool clash = false;
        for (const auto& t : accepted_tags) {
            if (!tags_disjoint(t, recent)) {
                clash = true;
                break;
            }
        }
        if (clash) continue;
        accepted.push_back(i);
        accepted_tags.push_back(std::move(recent));
    }
    return accepted;
}

}  // namespace detail

/// Confirms components with weight >= tau^n, tau = tau_tilde alpha_df^alpha_df,
/// and keeps only components that do not share observations within the
/// tag window. `now` is the current scan index.
inline std::vector<Track> extract_tracks(const MaxMixture& f, const ExtractionConfig& cfg, double alpha_df,
                                         std::uint32_t now = 0)
{
    if (!(cfg.tau_tilde > 0.0 && cfg.tau_tilde <= 1.0)) throw InvalidParameter("extract_tracks: tau_tilde out of range");
    if (cfg.n_sensors < 1 || cfg.window < 1) throw InvalidParameter("extract_tracks: invalid configuration");
    const double log_threshold = cfg.n_sensors * std::log(confirmation_threshold(cfg.tau_tilde, alpha_df));
    auto picked = detail::select_disjoint(
        f.components, [](const GaussianComponent& c) { return c.log_weight; }, log_threshold, cfg.window, now,
        cfg.require_observation);
    std::vector<Track> tracks;
    tracks.reserve(picked.size());
    for (auto i : picked) {
        const auto& c = f.components[i];
        tracks.push_back(Track{c.mean, c.cov, c.weight()});
    }
    return tracks;
}

}  // namespace posfuse
