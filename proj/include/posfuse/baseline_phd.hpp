// Probabilistic GM-PHD filter with covariance-intersection fusion. Mirrors the
// possibilistic pipelines step for step so the two can be compared directly.
#pragma once

#include "posfuse/fusion.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

namespace posfuse::phd {

struct GmComponent {
    double weight = 0.0;
    Vector mean;
    Matrix cov;
    TagSet tags;

    bool operator==(const GmComponent&) const = default;
};

struct GmIntensity {
    int dim = 0;
    std::vector<GmComponent> components;

    double mass() const
    {
        double m = 0.0;
        for (const auto& c : components) m += c.weight;
        return m;
    }
    std::size_t size() const { return components.size(); }
    bool empty() const { return components.empty(); }

    bool operator==(const GmIntensity&) const = default;
};

struct PhdParams {
    double p_d = 0.7;
    double p_s = 1.0 - 1e-3;
    /// Clutter intensity per unit observation volume, lambda_fa / V.
    double clutter_intensity = 1e-5;
    GmIntensity birth;
    double prune_threshold = 5e-4;
    double merge_threshold = 8.0;
    std::size_t cap = 2000;
    bool maintenance = true;
    TagMerge merge_tags = TagMerge::seed;
    double tau_tilde = 0.1;
    int window = 10;
    bool require_observation = true;
};

/// Confirmation threshold tau_tilde (1 - p_d)^{n (1 - p_d)}.
inline double confirmation_threshold(double tau_tilde, double p_d, int n)
{
    return tau_tilde * std::pow(1.0 - p_d, n * (1.0 - p_d));
}

inline GmIntensity phd_predict(const GmIntensity& in, const MotionModel& motion, const PhdParams& params)
{
    motion.validate(in.dim);
    GmIntensity out{in.dim, {}};
    out.components.reserve(in.size() + params.birth.size());
    for (const auto& c : in.components) {
        GmComponent p;
        p.weight = params.p_s * c.weight;
        p.mean = motion.G * c.mean;
        p.cov = motion.G * c.cov * motion.G.transpose() + motion.Q;
        symmetrise(p.cov);
        p.tags = c.tags;
        out.components.push_back(std::move(p));
    }
    for (const auto& b : params.birth.components) out.components.push_back(b);
    return out;
}

/// Standard GM-PHD corrector; detection probability p_d inside the field of
/// view, zero outside.
inline GmIntensity phd_update(const GmIntensity& in, const std::vector<Observation>& ys, const ObservationModel& obs,
                              const PhdParams& params)
{
    obs.validate(in.dim);
    const std::size_t m = in.size();
    GmIntensity out{in.dim, {}};
    out.components.reserve(m * (1 + ys.size()));
    std::vector<double> pd(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& c = in.components[i];
        pd[i] = obs.fov.contains(obs.H * c.mean) ? params.p_d : 0.0;
        GmComponent missed = c;
        missed.weight *= 1.0 - pd[i];
        out.components.push_back(std::move(missed));
    }
    if (ys.empty() || m == 0) return out;

    std::vector<detail::KalmanTerms> terms;
    terms.reserve(m);
    for (const auto& c : in.components) {
        GaussianComponent shape{0.0, c.mean, c.cov, {}};
        terms.push_back(detail::kalman_terms(shape, obs.H, obs.R));
    }
    const double log_norm = 0.5 * static_cast<double>(obs.H.rows()) * std::log(2.0 * std::numbers::pi);
    std::vector<double> lik(m);
    std::vector<Vector> innovations(m);
    for (const auto& y : ys) {
        const Vector global = obs.to_global(y.value);
        double denom = params.clutter_intensity;
        for (std::size_t i = 0; i < m; ++i) {
            innovations[i] = global - terms[i].predicted_obs;
            const double log_density =
                -0.5 * inv_quad(terms[i].s_llt, innovations[i]) - 0.5 * terms[i].log_det_s - log_norm;
            lik[i] = pd[i] * in.components[i].weight * std::exp(log_density);
            denom += lik[i];
        }
        for (std::size_t i = 0; i < m; ++i) {
            const auto& c = in.components[i];
            GmComponent det;
            det.weight = denom > 0.0 ? lik[i] / denom : 0.0;
            det.mean = c.mean + terms[i].gain * innovations[i];
            det.cov = terms[i].posterior_cov;
            det.tags = c.tags;
            tag_insert(det.tags, y.id);
            out.components.push_back(std::move(det));
        }
    }
    return out;
}

inline GmIntensity phd_prune(const GmIntensity& in, double threshold)
{
    GmIntensity out{in.dim, {}};
    for (const auto& c : in.components)
        if (!(c.weight < threshold)) out.components.push_back(c);
    return out;
}

/// Mahalanobis merging measured in each candidate's own covariance; merged
/// weight is the cluster sum.
inline GmIntensity phd_merge(const GmIntensity& in, double threshold, TagMerge tag_merge = TagMerge::seed)
{
    const auto& comps = in.components;
    const std::size_t n = comps.size();
    std::vector<Eigen::LLT<Matrix>> factors;
    factors.reserve(n);
    for (const auto& c : comps) {
        factors.emplace_back(c.cov);
        if (factors.back().info() != Eigen::Success) throw NumericalError("phd_merge: covariance not SPD");
    }
    auto clusters = posfuse::detail::greedy_clusters(
        n, [&](std::size_t i) { return comps[i].weight; },
        [&](std::size_t i, std::size_t j) { return inv_quad(factors[j], comps[j].mean - comps[i].mean) <= threshold; });
    GmIntensity out{in.dim, {}};
    for (const auto& cluster : clusters) {
        if (cluster.size() == 1) {
            out.components.push_back(comps[cluster.front()]);
            continue;
        }
        std::vector<double> rel(cluster.size());
        double total = 0.0;
        TagSet tags = comps[cluster.front()].tags;
        for (std::size_t k = 0; k < cluster.size(); ++k) {
            rel[k] = comps[cluster[k]].weight;
            total += rel[k];
            if (tag_merge == TagMerge::union_all) tags = tag_union(tags, comps[cluster[k]].tags);
        }
        if (!(total > 0.0)) std::fill(rel.begin(), rel.end(), 1.0);
        auto [mean, cov] = posfuse::detail::moment_match(comps, cluster, rel);
        out.components.push_back(GmComponent{total, std::move(mean), std::move(cov), std::move(tags)});
    }
    return out;
}

inline GmIntensity phd_truncate(const GmIntensity& in, std::size_t cap)
{
    if (in.size() <= cap) return in;
    std::vector<std::size_t> order(in.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return in.components[i].weight > in.components[j].weight; });
    order.resize(cap);
    std::sort(order.begin(), order.end());
    GmIntensity out{in.dim, {}};
    for (auto i : order) out.components.push_back(in.components[i]);
    return out;
}

inline GmIntensity phd_maintain(const GmIntensity& in, const PhdParams& params)
{
    if (!params.maintenance) return in;
    return phd_truncate(phd_merge(phd_prune(in, params.prune_threshold), params.merge_threshold, params.merge_tags), params.cap);
}

/// Covariance intersection of two intensities. Components are paired
/// greedily by smallest Mahalanobis distance under the summed covariance
/// (gated at `gate`); pairs are
/// fused with CI, unpaired components pass through scaled by their side's
/// exponent, and the result is rescaled to the geometric mean of the input
/// masses.
inline GmIntensity ci_fuse(const GmIntensity& a, const GmIntensity& b, double omega, double gate = 8.0)
{
    if (!(omega > 0.0 && omega < 1.0)) throw InvalidParameter("ci_fuse: omega must lie in (0, 1)");
    if (a.dim != b.dim) throw InvalidParameter("ci_fuse: dimension mismatch");
    GmIntensity out{a.dim, {}};
    const double target_mass = std::pow(a.mass(), omega) * std::pow(b.mass(), 1.0 - omega);
    if (!(target_mass > 0.0)) return out;

    std::vector<Eigen::LLT<Matrix>> fa;
    fa.reserve(a.size());
    for (const auto& c : a.components) {
        fa.emplace_back(c.cov);
        if (fa.back().info() != Eigen::Success) throw NumericalError("ci_fuse: covariance not SPD");
    }
    struct Candidate {
        double distance;
        std::size_t i, j;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) {
            Eigen::LLT<Matrix> joint(a.components[i].cov + b.components[j].cov);
            const double d = inv_quad(joint, b.components[j].mean - a.components[i].mean);
            if (d <= gate) candidates.push_back({d, i, j});
        }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& x, const Candidate& y) { return x.distance < y.distance; });
    std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
    for (const auto& cand : candidates) {
        if (used_a[cand.i] || used_b[cand.j]) continue;
        used_a[cand.i] = used_b[cand.j] = 1;
        const auto& ca = a.components[cand.i];
        const auto& cb = b.components[cand.j];
        Matrix ia = fa[cand.i].solve(Matrix::Identity(a.dim, a.dim));
        Eigen::LLT<Matrix> lb(cb.cov);
        Matrix ib = lb.solve(Matrix::Identity(a.dim, a.dim));
        Matrix info = omega * ia + (1.0 - omega) * ib;
        symmetrise(info);
        Eigen::LLT<Matrix> linfo(info);
        GmComponent f;
        f.cov = linfo.solve(Matrix::Identity(a.dim, a.dim));
        symmetrise(f.cov);
        f.mean = f.cov * (omega * ia * ca.mean + (1.0 - omega) * ib * cb.mean);
        f.weight = std::pow(ca.weight, omega) * std::pow(cb.weight, 1.0 - omega);
        f.tags = tag_union(ca.tags, cb.tags);
        out.components.push_back(std::move(f));
    }
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!used_a[i]) {
            out.components.push_back(a.components[i]);
            out.components.back().weight *= omega;
        }
    for (std::size_t j = 0; j < b.size(); ++j)
        if (!used_b[j]) {
            out.components.push_back(b.components[j]);
            out.components.back().weight *= 1.0 - omega;
        }
    const double mass = out.mass();
    if (mass > 0.0)
        for (auto& c : out.components) c.weight *= target_mass / mass;
    return out;
}

/// Generalised CI of several intensities with exponents summing to one,
/// folded pairwise with maintenance after each new factor. Identical inputs
/// are combined first (CI is idempotent on equal operands).
inline GmIntensity ci_fuse_all(const std::vector<std::pair<const GmIntensity*, double>>& factors,
                               const PhdParams& params)
{
    if (factors.empty()) throw InvalidParameter("ci_fuse_all: no factors");
    std::vector<std::pair<const GmIntensity*, double>> grouped;
    for (const auto& [f, e] : factors) {
        if (!(e > 0.0)) throw InvalidParameter("ci_fuse_all: exponents must be positive");
        auto it = std::find_if(grouped.begin(), grouped.end(),
                               [f = f](const auto& g) { return g.first == f || *g.first == *f; });
        if (it != grouped.end()) it->second += e;
        else grouped.emplace_back(f, e);
    }
    GmIntensity acc = *grouped.front().first;
    double cumulative = grouped.front().second;
    for (std::size_t k = 1; k < grouped.size(); ++k) {
        const double e = grouped[k].second;
        acc = ci_fuse(acc, *grouped[k].first, cumulative / (cumulative + e), params.merge_threshold);
        acc = phd_maintain(acc, params);
        cumulative += e;
    }
    return acc;
}

inline std::vector<Track> phd_extract(const GmIntensity& in, const PhdParams& params, int n, std::uint32_t now)
{
    const double log_threshold = std::log(confirmation_threshold(params.tau_tilde, params.p_d, n));
    auto picked = posfuse::detail::select_disjoint(
        in.components, [](const GmComponent& c) { return c.weight > 0.0 ? std::log(c.weight) : -HUGE_VAL; },
        log_threshold, params.window, now, params.require_observation);
    std::vector<Track> tracks;
    for (auto i : picked) {
        const auto& c = in.components[i];
        tracks.push_back(Track{c.mean, c.cov, c.weight});
    }
    return tracks;
}

inline void trim_tags(GmIntensity& in, std::uint32_t oldest)
{
    for (auto& c : in.components)
        if (std::any_of(c.tags.begin(), c.tags.end(), [oldest](const ObservationId& id) { return id.time < oldest; }))
            c.tags = tags_since(c.tags, oldest);
}

struct PhdModels {
    MotionModel motion;
    PhdParams params;
    std::vector<ObservationModel> sensors;

    int n() const { return static_cast<int>(sensors.size()); }
};

struct PhdStepOutput {
    GmIntensity posterior;
    std::vector<Track> tracks;
};

/// Centralised probabilistic fusion: every node updates the full prediction
/// and the node posteriors are combined with CI, omega = 1/n each.
inline PhdStepOutput phd_centralised_step(const GmIntensity& central, const ScanObservations& obs,
                                          const PhdModels& models, std::uint32_t scan)
{
    const int n = models.n();
    if (static_cast<int>(obs.size()) != n) throw InvalidParameter("phd centralised: one observation set per sensor");
    auto predicted = phd_predict(central, models.motion, models.params);
    std::vector<GmIntensity> nodes;
    nodes.reserve(n);
    for (int i = 0; i < n; ++i)
        nodes.push_back(phd_maintain(phd_update(predicted, obs[i], models.sensors[i], models.params), models.params));
    std::vector<std::pair<const GmIntensity*, double>> factors;
    for (const auto& node : nodes) factors.emplace_back(&node, 1.0 / n);
    PhdStepOutput out;
    out.posterior = phd_maintain(ci_fuse_all(factors, models.params), models.params);
    trim_tags(out.posterior, oldest_tag_time(scan, models.params.window));
    out.tracks = phd_extract(out.posterior, models.params, n, scan);
    return out;
}

/// Iterated-corrector multi-sensor PHD update.
inline PhdStepOutput phd_sequential_step(const GmIntensity& in, const ScanObservations& obs, const PhdModels& models,
                                         std::uint32_t scan)
{
    const int n = models.n();
    if (static_cast<int>(obs.size()) != n) throw InvalidParameter("phd sequential: one observation set per sensor");
    auto post = phd_predict(in, models.motion, models.params);
    for (int i = 0; i < n; ++i) post = phd_update(post, obs[i], models.sensors[i], models.params);
    PhdStepOutput out;
    out.posterior = phd_maintain(post, models.params);
    trim_tags(out.posterior, oldest_tag_time(scan, models.params.window));
    out.tracks = phd_extract(out.posterior, models.params, n, scan);
    return out;
}

struct PhdDecentralisedOutput {
    std::vector<GmIntensity> nodes;
    std::vector<std::vector<Track>> tracks;
    std::vector<GossipRoundStats> rounds;
};

inline std::size_t serialized_size(const GmIntensity& in)
{
    // Same record layout as the possibilistic message: weight, mean, cov, tags.
    MaxMixture shape(in.dim);
    for (const auto& c : in.components)
        shape.components.push_back(GaussianComponent{std::log(std::min(1.0, std::max(c.weight, 1e-300))), c.mean,
                                                     c.cov, c.tags});
    return posfuse::serialized_size(shape);
}

/// Decentralised probabilistic fusion: undiscounted prediction and local
/// update at every node, then L rounds of CI gossip with Metropolis weights.
inline PhdDecentralisedOutput phd_decentralised_step(const std::vector<GmIntensity>& nodes,
                                                     const ScanObservations& obs, const NetworkGraph& graph,
                                                     const MetropolisWeights& weights, const PhdModels& models,
                                                     int rounds, std::uint32_t scan, bool measure_messages = true)
{
    const int n = models.n();
    if (static_cast<int>(nodes.size()) != n || static_cast<int>(obs.size()) != n || graph.n != n)
        throw InvalidParameter("phd decentralised: node, observation and graph sizes differ");
    std::vector<GmIntensity> current;
    current.reserve(n);
    for (int i = 0; i < n; ++i) {
        auto predicted = phd_predict(nodes[i], models.motion, models.params);
        current.push_back(phd_maintain(phd_update(predicted, obs[i], models.sensors[i], models.params), models.params));
    }
    PhdDecentralisedOutput out;
    for (int l = 0; l < rounds; ++l) {
        GossipRoundStats stats;
        if (measure_messages)
            for (int i = 0; i < n; ++i) stats.message_bytes += serialized_size(current[i]) * (graph.neighbours[i].size() - 1);
        std::vector<GmIntensity> next;
        next.reserve(n);
        for (int i = 0; i < n; ++i) {
            std::vector<std::pair<const GmIntensity*, double>> factors;
            for (int j : graph.neighbours[i]) factors.emplace_back(&current[j], weights.pi(i, j));
            next.push_back(phd_maintain(ci_fuse_all(factors, models.params), models.params));
            stats.components += next.back().size();
        }
        current = std::move(next);
        out.rounds.push_back(stats);
    }
    const std::uint32_t oldest = oldest_tag_time(scan, models.params.window);
    for (auto& node : current) {
        trim_tags(node, oldest);
        out.tracks.push_back(phd_extract(node, models.params, n, scan));
    }
    out.nodes = std::move(current);
    return out;
}

}  // namespace posfuse::phd
