// Multi-sensor fusion of presence functions: centralised fusion by
// splitting/product, decentralised fusion by discounted prediction and
// Metropolis-weighted gossip, and helpers for correlated observations.
#pragma once

#include "posfuse/serialization.hpp"
#include "posfuse/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <queue>
#include <utility>
#include <vector>

namespace posfuse {

// ---------------------------------------------------------------------------
// Network

/// Undirected graph; neighbours[i] is sorted and contains i itself.
struct NetworkGraph {
    int n = 0;
    std::vector<std::pair<int, int>> edges;
    std::vector<std::vector<int>> neighbours;

    static NetworkGraph from_edges(int n, const std::vector<std::pair<int, int>>& edge_list)
    {
        if (n < 1) throw InvalidParameter("graph needs at least one node");
        NetworkGraph g;
        g.n = n;
        g.neighbours.assign(n, {});
        for (int i = 0; i < n; ++i) g.neighbours[i].push_back(i);
        for (auto [a, b] : edge_list) {
            if (a < 0 || b < 0 || a >= n || b >= n) throw InvalidParameter("edge endpoint out of range");
            if (a == b) throw InvalidParameter("self loops are implicit");
            auto e = std::minmax(a, b);
            if (std::find(g.edges.begin(), g.edges.end(), std::pair<int, int>(e.first, e.second)) != g.edges.end())
                continue;
            g.edges.emplace_back(e.first, e.second);
            g.neighbours[a].push_back(b);
            g.neighbours[b].push_back(a);
        }
        for (auto& nb : g.neighbours) std::sort(nb.begin(), nb.end());
        return g;
    }

    /// Each node linked to its two neighbours in index order.
    static NetworkGraph ring(int n)
    {
        std::vector<std::pair<int, int>> e;
        for (int i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
        if (n > 2) e.emplace_back(n - 1, 0);
        return from_edges(n, e);
    }

    static NetworkGraph complete(int n)
    {
        std::vector<std::pair<int, int>> e;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) e.emplace_back(i, j);
        return from_edges(n, e);
    }

    bool connected() const
    {
        if (n == 0) return false;
        std::vector<char> seen(n, 0);
        std::queue<int> q;
        q.push(0);
        seen[0] = 1;
        int count = 1;
        while (!q.empty()) {
            int i = q.front();
            q.pop();
            for (int j : neighbours[i])
                if (!seen[j]) {
                    seen[j] = 1;
                    ++count;
                    q.push(j);
                }
        }
        return count == n;
    }

    /// Hop distances from node `from`.
    std::vector<int> distances(int from) const
    {
        std::vector<int> d(n, -1);
        std::queue<int> q;
        d[from] = 0;
        q.push(from);
        while (!q.empty()) {
            int i = q.front();
            q.pop();
            for (int j : neighbours[i])
                if (d[j] < 0) {
                    d[j] = d[i] + 1;
                    q.push(j);
                }
        }
        return d;
    }
};

struct MetropolisWeights {
    Eigen::MatrixXd pi;
};

/// pi_ij = 1 / max(#N_i, #N_j) for neighbours j != i, pi_ii = 1 - sum of the
/// others. Neighbourhood sizes count the node itself.
inline MetropolisWeights metropolis_weights(const NetworkGraph& g)
{
    if (!g.connected()) throw InvalidParameter("metropolis_weights: graph is not connected");
    MetropolisWeights w;
    w.pi = Eigen::MatrixXd::Zero(g.n, g.n);
    for (int i = 0; i < g.n; ++i) {
        double off = 0.0;
        for (int j : g.neighbours[i]) {
            if (j == i) continue;
            const auto ni = g.neighbours[i].size();
            const auto nj = g.neighbours[j].size();
            w.pi(i, j) = 1.0 / static_cast<double>(std::max(ni, nj));
            off += w.pi(i, j);
        }
        w.pi(i, i) = 1.0 - off;
    }
    return w;
}

// ---------------------------------------------------------------------------
// Configuration

enum class FusionMode { centralised, decentralised, sequential };

struct FusionConfig {
    FusionMode mode = FusionMode::centralised;
    /// Information split between nodes; empty means uniform 1/n.
    std::vector<double> split_weights;
    int gossip_rounds = 2;
    /// Adds a birth-times-detection-failure term to every node posterior
    /// before the product.
    bool birth_augment = false;
    /// When non-empty, decentralised births keep these (observed) coordinates
    /// undiscounted and only inflate the rest; otherwise the whole birth
    /// term is raised to the node's split weight.
    std::vector<int> birth_observed_coords;
    /// Record serialised message sizes during gossip.
    bool measure_messages = true;
    MaintenanceConfig maintenance;
    ExtractionConfig extraction;
};

/// Models shared by every node plus one observation model per sensor.
struct SensorModels {
    MotionModel motion;
    BirthModel birth;
    ClutterModel clutter;
    std::vector<ObservationModel> sensors;

    int n() const { return static_cast<int>(sensors.size()); }
    double alpha_df() const { return sensors.empty() ? 1.0 : sensors.front().alpha_df; }
};

using ScanObservations = std::vector<std::vector<Observation>>;

inline std::vector<double> resolve_split_weights(const FusionConfig& cfg, int n)
{
    if (cfg.split_weights.empty()) return std::vector<double>(n, 1.0 / n);
    if (static_cast<int>(cfg.split_weights.size()) != n)
        throw InvalidParameter("split weights: one weight per node required");
    double total = 0.0;
    for (double w : cfg.split_weights) {
        if (!(w > 0.0 && (w < 1.0 || (n == 1 && w == 1.0))))
            throw InvalidParameter("split weights must lie in (0, 1)");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidParameter("split weights must sum to one");
    return cfg.split_weights;
}

inline std::uint32_t oldest_tag_time(std::uint32_t scan, int window)
{
    return scan + 1 > static_cast<std::uint32_t>(window) ? scan + 1 - static_cast<std::uint32_t>(window) : 0;
}

// ---------------------------------------------------------------------------
// Products of several powered mixtures

namespace detail {

inline bool close_entries(const auto& a, const auto& b, double rel)
{
    const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
    return (a - b).cwiseAbs().maxCoeff() <= rel * scale;
}

}  // namespace detail

/// Same components in the same order with identical tags, every number equal
/// up to `rel` relative to the largest entry of its vector or matrix. Nodes
/// that reached consensus differ only by rounding in their exponents.
inline bool nearly_equal(const MaxMixture& a, const MaxMixture& b, double rel = 1e-12)
{
    if (a.dim != b.dim || a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& ca = a.components[i];
        const auto& cb = b.components[i];
        if (ca.tags != cb.tags) return false;
        if (std::abs(ca.log_weight - cb.log_weight) > rel * std::max(1.0, std::abs(ca.log_weight))) return false;
        if (!detail::close_entries(ca.mean, cb.mean, rel) || !detail::close_entries(ca.cov, cb.cov, rel)) return false;
    }
    return true;
}

/// prod_k F_k^{e_k}, folded left to right with maintenance after each new
/// factor. Factors that hold the same mixture (up to rounding) are combined
/// first through F^a F^b = F^{a+b}.
inline MaxMixture fuse_powered(const std::vector<std::pair<const MaxMixture*, double>>& factors,
                               const MaintenanceConfig& maintenance)
{
    if (factors.empty()) throw InvalidParameter("fuse_powered: no factors");
    std::vector<std::pair<const MaxMixture*, double>> grouped;
    for (const auto& [f, e] : factors) {
        if (!(e > 0.0)) throw InvalidParameter("fuse_powered: exponents must be positive");
        auto it = std::find_if(grouped.begin(), grouped.end(),
                               [f = f](const auto& g) { return g.first == f || nearly_equal(*g.first, *f); });
        if (it != grouped.end()) it->second += e;
        else grouped.emplace_back(f, e);
    }
    const double floor = maintenance.enabled ? maintenance.prune_threshold : 0.0;
    MaxMixture acc = power_unbounded(*grouped.front().first, grouped.front().second);
    for (std::size_t k = 1; k < grouped.size(); ++k) {
        acc = fuse_product(acc, power_unbounded(*grouped[k].first, grouped[k].second), floor);
        acc = maintain(acc, maintenance);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Sequential multi-sensor update (lossless reference)

inline MaxMixture sequential_multisensor_update(const MaxMixture& f, const ScanObservations& obs,
                                                const SensorModels& models)
{
    if (static_cast<int>(obs.size()) != models.n())
        throw InvalidParameter("sequential update: one observation set per sensor required");
    MaxMixture out = f;
    for (int i = 0; i < models.n(); ++i) out = update(out, obs[i], models.sensors[i], models.clutter);
    return out;
}

struct StepOutput {
    MaxMixture posterior;
    std::vector<Track> tracks;
};

/// Predict, sequentially update with every sensor, maintain and extract.
inline StepOutput sequential_step(const MaxMixture& f, const ScanObservations& obs, const SensorModels& models,
                                  const FusionConfig& cfg, std::uint32_t scan)
{
    StepOutput out;
    auto predicted = predict(f, models.motion, models.birth, 1.0);
    out.posterior = maintain(sequential_multisensor_update(predicted, obs, models), cfg.maintenance);
    trim_tags(out.posterior, oldest_tag_time(scan, cfg.extraction.window));
    ExtractionConfig ext = cfg.extraction;
    ext.n_sensors = models.n();
    out.tracks = extract_tracks(out.posterior, ext, models.alpha_df(), scan);
    return out;
}

// ---------------------------------------------------------------------------
// Centralised fusion

/// Birth term times detection failure, added to a node posterior so that
/// targets missed by that node survive the product.
inline void augment_birth(MaxMixture& node, const BirthModel& birth, double alpha_df)
{
    for (const auto& b : birth.birth_mixture.components) {
        GaussianComponent c = b;
        c.log_weight = std::log(birth.birth_scalar) + std::log(alpha_df);
        c.tags.clear();
        node.components.push_back(std::move(c));
    }
}

/// Node posteriors of one centralised step: each node updates its share
/// F^{w_i} of the central prediction.
inline std::vector<MaxMixture> centralised_node_posteriors(const MaxMixture& predicted, const ScanObservations& obs,
                                                           const SensorModels& models, const FusionConfig& cfg)
{
    const int n = models.n();
    if (static_cast<int>(obs.size()) != n) throw InvalidParameter("centralised step: one observation set per sensor");
    const auto w = resolve_split_weights(cfg, n);
    std::vector<MaxMixture> nodes;
    nodes.reserve(n);
    for (int i = 0; i < n; ++i) {
        auto post = update(power(predicted, w[i]), obs[i], models.sensors[i], models.clutter);
        if (cfg.birth_augment) augment_birth(post, models.birth, models.sensors[i].alpha_df);
        nodes.push_back(maintain(post, cfg.maintenance));
    }
    return nodes;
}

/// One scan of centralised fusion: predict at the centre, split, update at
/// every node, multiply the node posteriors, maintain and extract with the
/// tau^n threshold.
inline StepOutput centralised_step(const MaxMixture& central, const ScanObservations& obs,
                                   const SensorModels& models, const FusionConfig& cfg, std::uint32_t scan)
{
    auto predicted = predict(central, models.motion, models.birth, 1.0);
    auto nodes = centralised_node_posteriors(predicted, obs, models, cfg);
    std::vector<std::pair<const MaxMixture*, double>> factors;
    for (const auto& node : nodes) factors.emplace_back(&node, 1.0);

    StepOutput out;
    out.posterior = maintain(fuse_powered(factors, cfg.maintenance), cfg.maintenance);
    trim_tags(out.posterior, oldest_tag_time(scan, cfg.extraction.window));
    ExtractionConfig ext = cfg.extraction;
    ext.n_sensors = models.n();
    out.tracks = extract_tracks(out.posterior, ext, models.alpha_df(), scan);
    return out;
}

// ---------------------------------------------------------------------------
// Decentralised fusion

/// Discounts a birth model for a node holding share w of the information:
/// observed coordinates keep their covariance, the others are inflated by
/// 1/w (cross terms by 1/sqrt(w)), weights become alpha^w.
inline BirthModel birth_discount(const BirthModel& birth, const std::vector<int>& observed, double w)
{
    if (!(w > 0.0 && w <= 1.0)) throw InvalidParameter("birth_discount: weight must lie in (0, 1]");
    BirthModel out = birth;
    if (w == 1.0) return out;
    const int d = birth.birth_mixture.dim;
    Vector scale = Vector::Constant(d, 1.0 / std::sqrt(w));
    for (int k : observed) {
        if (k < 0 || k >= d) throw InvalidParameter("birth_discount: coordinate out of range");
        scale(k) = 1.0;
    }
    for (auto& c : out.birth_mixture.components) {
        c.log_weight *= w;
        c.cov = (scale.asDiagonal() * c.cov * scale.asDiagonal()).eval();
        symmetrise(c.cov);
    }
    out.birth_scalar = std::pow(birth.birth_scalar, w);
    return out;
}

struct GossipRoundStats {
    std::size_t components = 0;
    std::size_t message_bytes = 0;
};

struct DecentralisedOutput {
    std::vector<MaxMixture> nodes;
    std::vector<std::vector<Track>> tracks;
    std::vector<GossipRoundStats> rounds;
};

/// L rounds of F^{(i,l)} = prod_{j in N_i} [F^{(j,l-1)}]^{pi_ij}.
inline std::vector<MaxMixture> gossip(std::vector<MaxMixture> nodes, const NetworkGraph& graph,
                                      const MetropolisWeights& weights, int rounds,
                                      const MaintenanceConfig& maintenance, bool measure_messages,
                                      std::vector<GossipRoundStats>* trace = nullptr)
{
    if (static_cast<int>(nodes.size()) != graph.n) throw InvalidParameter("gossip: one mixture per node required");
    for (int l = 0; l < rounds; ++l) {
        GossipRoundStats stats;
        if (measure_messages)
            for (int i = 0; i < graph.n; ++i)
                stats.message_bytes += serialized_size(nodes[i]) * (graph.neighbours[i].size() - 1);
        std::vector<MaxMixture> next;
        next.reserve(graph.n);
        for (int i = 0; i < graph.n; ++i) {
            std::vector<std::pair<const MaxMixture*, double>> factors;
            for (int j : graph.neighbours[i]) factors.emplace_back(&nodes[j], weights.pi(i, j));
            next.push_back(maintain(fuse_powered(factors, maintenance), maintenance));
            stats.components += next.back().size();
        }
        nodes = std::move(next);
        if (trace) trace->push_back(stats);
    }
    return nodes;
}

/// One scan of decentralised fusion at every node: discounted prediction
/// with g^{w_i}, local update, gossip, then extraction on [F_i]^n.
inline DecentralisedOutput decentralised_step(const std::vector<MaxMixture>& nodes, const ScanObservations& obs,
                                              const NetworkGraph& graph, const MetropolisWeights& weights,
                                              const SensorModels& models, const FusionConfig& cfg, std::uint32_t scan)
{
    const int n = models.n();
    if (static_cast<int>(nodes.size()) != n || static_cast<int>(obs.size()) != n || graph.n != n)
        throw InvalidParameter("decentralised step: node, observation and graph sizes differ");
    const auto w = resolve_split_weights(cfg, n);

    std::vector<MaxMixture> local;
    local.reserve(n);
    for (int i = 0; i < n; ++i) {
        BirthModel birth = cfg.birth_observed_coords.empty()
                               ? BirthModel{power(models.birth.birth_mixture, w[i]), std::pow(models.birth.birth_scalar, w[i])}
                               : birth_discount(models.birth, cfg.birth_observed_coords, w[i]);
        auto predicted = predict(nodes[i], models.motion, birth, w[i]);
        local.push_back(maintain(update(predicted, obs[i], models.sensors[i], models.clutter), cfg.maintenance));
    }

    DecentralisedOutput out;
    out.nodes = gossip(std::move(local), graph, weights, cfg.gossip_rounds, cfg.maintenance, cfg.measure_messages,
                       &out.rounds);
    const std::uint32_t oldest = oldest_tag_time(scan, cfg.extraction.window);
    ExtractionConfig ext = cfg.extraction;
    ext.n_sensors = n;
    for (auto& node : out.nodes) {
        trim_tags(node, oldest);
        out.tracks.push_back(extract_tracks(power_unbounded(node, n), ext, models.alpha_df(), scan));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dependent observations

/// Per-sensor variance of an independent product bound on a two-sensor
/// Gaussian likelihood with covariance [[s2, rho], [rho, s2]]: the largest
/// eigenvalue s2 + |rho|.
inline double correlated_bound(double sigma2, double rho)
{
    if (!(sigma2 > 0.0) || !(std::abs(rho) < sigma2))
        throw InvalidParameter("correlated_bound: covariance is not positive definite");
    return sigma2 + std::abs(rho);
}

/// Effective local likelihood when the first observation stage h1 has
/// unknown inter-sensor dependence: h2(y | z) h1(z | x)^w, with the sup over
/// z taken in closed form. h1 maps state to intermediate z, h2 maps z to y.
inline ObservationModel partial_dependence_likelihood(const ObservationModel& h2, const ObservationModel& h1_marginal,
                                                      double w)
{
    if (!(w > 0.0 && w <= 1.0)) throw InvalidParameter("partial_dependence_likelihood: weight must lie in (0, 1]");
    if (h2.H.cols() != h1_marginal.H.rows() || h1_marginal.R.rows() != h1_marginal.H.rows() ||
        h2.R.rows() != h2.H.rows())
        throw InvalidParameter("partial_dependence_likelihood: dimension mismatch");
    checked_llt(h1_marginal.R, "partial_dependence_likelihood h1");
    checked_llt(h2.R, "partial_dependence_likelihood h2");
    ObservationModel out = h2;
    out.H = h2.H * h1_marginal.H;
    out.R = h2.R + h2.H * (h1_marginal.R / w) * h2.H.transpose();
    symmetrise(out.R);
    return out;
}

}  // namespace posfuse
