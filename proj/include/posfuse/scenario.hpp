// Simulated multi-target, multi-sensor scenario: nearly-constant-velocity
// targets in the plane observed by sensors on the boundary of a square
// surveillance region, plus translation of the probabilistic scenario
// parameters into possibilistic models.
#pragma once

#include "posfuse/baseline_phd.hpp"
#include "posfuse/fusion.hpp"
#include "posfuse/serialization.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace posfuse {

struct BirthEvent {
    int scan = 1;
    int count = 0;
};

struct ScenarioConfig {
    int scans = 30;
    double dt = 1.0;
    /// Process-noise standard deviation.
    double sigma = 0.5;
    /// Observation-noise standard deviation.
    double sigma_obs = 5.0;
    /// Birth velocity standard deviation.
    double sigma_v = 5.0;
    std::array<double, 2> region_lower{0.0, 0.0};
    std::array<double, 2> region_upper{1000.0, 1000.0};
    double p_d = 0.7;
    double p_s = 1.0 - 1e-3;
    double lambda_b = 0.1;
    double lambda_fa = 10.0;
    int n_sensors = 4;
    std::vector<BirthEvent> births{{1, 3}, {10, 1}, {20, 2}};
    /// Explicit sensor positions in boundary order; empty selects the preset
    /// layout for 4 or 8 sensors.
    std::vector<std::array<double, 2>> sensor_positions;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (scans < 1 || !(dt > 0.0) || !(sigma > 0.0) || !(sigma_obs > 0.0) || !(sigma_v > 0.0))
            throw InvalidParameter("scenario: scans, dt and noise levels must be positive");
        if (!(region_upper[0] > region_lower[0] && region_upper[1] > region_lower[1]))
            throw InvalidParameter("scenario: degenerate region");
        if (!(p_d >= 0.0 && p_d <= 1.0) || !(p_s >= 0.0 && p_s <= 1.0))
            throw InvalidParameter("scenario: probabilities must lie in [0, 1]");
        if (!(lambda_b > 0.0) || !(lambda_fa >= 0.0)) throw InvalidParameter("scenario: invalid Poisson rates");
        if (n_sensors < 1) throw InvalidParameter("scenario: at least one sensor required");
        if (!sensor_positions.empty() && static_cast<int>(sensor_positions.size()) != n_sensors)
            throw InvalidParameter("scenario: sensor position count differs from n_sensors");
        for (const auto& b : births)
            if (b.scan < 1 || b.count < 0) throw InvalidParameter("scenario: invalid birth event");
    }

    double volume() const { return (region_upper[0] - region_lower[0]) * (region_upper[1] - region_lower[1]); }
};

struct ScenarioMatrices {
    Matrix G, Q, H, R;
};

/// G = I2 (x) [[1, dt], [0, 1]], Q = sigma^2 I2 (x) [[dt^4/4, dt^3/2], [dt^3/2, dt^2]],
/// H selects the two positions, R = sigma_obs^2 I2. State order (x, vx, y, vy).
inline ScenarioMatrices build_matrices(const ScenarioConfig& cfg)
{
    ScenarioMatrices m;
    const double dt = cfg.dt;
    Matrix g_block(2, 2);
    g_block << 1.0, dt, 0.0, 1.0;
    Matrix q_block(2, 2);
    q_block << std::pow(dt, 4) / 4.0, std::pow(dt, 3) / 2.0, std::pow(dt, 3) / 2.0, dt * dt;
    q_block *= cfg.sigma * cfg.sigma;
    m.G = Matrix::Zero(4, 4);
    m.Q = Matrix::Zero(4, 4);
    for (int b = 0; b < 2; ++b) {
        m.G.block(2 * b, 2 * b, 2, 2) = g_block;
        m.Q.block(2 * b, 2 * b, 2, 2) = q_block;
    }
    m.H = Matrix::Zero(2, 4);
    m.H(0, 0) = 1.0;
    m.H(1, 2) = 1.0;
    m.R = cfg.sigma_obs * cfg.sigma_obs * Matrix::Identity(2, 2);
    return m;
}

struct SensorLayout {
    std::vector<std::array<double, 2>> positions;
    NetworkGraph graph;
};

/// Sensors on the region boundary: corners for n = 4, corners and edge
/// midpoints for n = 8, linked in a ring along the boundary.
inline SensorLayout place_sensors(const ScenarioConfig& cfg)
{
    SensorLayout layout;
    if (!cfg.sensor_positions.empty()) {
        layout.positions = cfg.sensor_positions;
    } else {
        const auto [x0, y0] = cfg.region_lower;
        const auto [x1, y1] = cfg.region_upper;
        const double xm = 0.5 * (x0 + x1);
        const double ym = 0.5 * (y0 + y1);
        if (cfg.n_sensors == 4) {
            layout.positions = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
        } else if (cfg.n_sensors == 8) {
            layout.positions = {{x0, y0}, {xm, y0}, {x1, y0}, {x1, ym}, {x1, y1}, {xm, y1}, {x0, y1}, {x0, ym}};
        } else {
            throw InvalidParameter("place_sensors: presets exist for 4 or 8 sensors only; give explicit positions");
        }
    }
    layout.graph = NetworkGraph::ring(static_cast<int>(layout.positions.size()));
    return layout;
}

struct TargetTruth {
    int birth_scan = 1;
    /// First scan at which the target is no longer present; scans + 1 if it
    /// survives to the end.
    int death_scan = 0;
    /// State at each scan from birth_scan to death_scan - 1.
    std::vector<Vector> states;
    /// Per-axis process-noise draws that produced states[k] from states[k-1].
    std::vector<std::array<double, 2>> noises;

    bool alive(int scan) const { return scan >= birth_scan && scan < death_scan; }
    const Vector& state(int scan) const { return states.at(static_cast<std::size_t>(scan - birth_scan)); }
};

struct GroundTruth {
    std::vector<TargetTruth> targets;

    std::vector<Eigen::Vector2d> positions(int scan) const
    {
        std::vector<Eigen::Vector2d> out;
        for (const auto& t : targets)
            if (t.alive(scan)) out.emplace_back(t.state(scan)(0), t.state(scan)(2));
        return out;
    }
};

struct SensorScan {
    std::vector<Observation> observations;
    /// Index of the originating target, -1 for false alarms.
    std::vector<int> origin;
};

struct ScenarioData {
    ScenarioConfig config;
    SensorLayout layout;
    GroundTruth truth;
    /// frames[k - 1][i] holds sensor i's scan k.
    std::vector<std::vector<SensorScan>> frames;
    std::uint64_t truth_seed = 0;
    std::vector<std::uint64_t> sensor_seeds;

    ScanObservations observations(int scan) const
    {
        ScanObservations out;
        for (const auto& s : frames.at(static_cast<std::size_t>(scan - 1))) out.push_back(s.observations);
        return out;
    }
};

/// Stream seeds derive from the master seed through splitmix64 applied to
/// (master, run, stream); stream 0 drives the ground truth, stream 1 + i
/// drives sensor i.
inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t run, std::uint64_t stream)
{
    return splitmix64(splitmix64(splitmix64(master) ^ run) ^ (stream * 0xD1B54A32D192ED03ULL));
}

/// NCV step with the sampled per-axis accelerations; Q = sigma^2 g g' per axis
/// with g = (dt^2 / 2, dt).
inline Vector ncv_step(const ScenarioConfig& cfg, const Matrix& g, const Vector& x, const std::array<double, 2>& a)
{
    Vector next = g * x;
    const double dt = cfg.dt;
    for (int axis = 0; axis < 2; ++axis) {
        next(2 * axis) += cfg.sigma * a[axis] * dt * dt / 2.0;
        next(2 * axis + 1) += cfg.sigma * a[axis] * dt;
    }
    return next;
}

inline ScenarioData generate(const ScenarioConfig& cfg, std::uint64_t run = 0)
{
    cfg.validate();
    ScenarioData data;
    data.config = cfg;
    data.layout = place_sensors(cfg);
    const auto mats = build_matrices(cfg);
    const int n = static_cast<int>(data.layout.positions.size());

    data.truth_seed = stream_seed(cfg.seed, run, 0);
    std::mt19937_64 truth_rng(data.truth_seed);
    std::vector<std::mt19937_64> sensor_rng;
    for (int i = 0; i < n; ++i) {
        data.sensor_seeds.push_back(stream_seed(cfg.seed, run, static_cast<std::uint64_t>(1 + i)));
        sensor_rng.emplace_back(data.sensor_seeds.back());
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> ux(cfg.region_lower[0], cfg.region_upper[0]);
    std::uniform_real_distribution<double> uy(cfg.region_lower[1], cfg.region_upper[1]);
    std::bernoulli_distribution death(1.0 - cfg.p_s);
    std::bernoulli_distribution detect(cfg.p_d);
    std::poisson_distribution<int> clutter_count(cfg.lambda_fa);

    auto& targets = data.truth.targets;
    for (int k = 1; k <= cfg.scans; ++k) {
        for (auto& t : targets) {
            if (t.death_scan != cfg.scans + 1 || k <= t.birth_scan) continue;
            if (death(truth_rng)) {
                t.death_scan = k;
                continue;
            }
            std::array<double, 2> a{normal(truth_rng), normal(truth_rng)};
            t.states.push_back(ncv_step(cfg, mats.G, t.states.back(), a));
            t.noises.push_back(a);
        }
        for (const auto& ev : cfg.births) {
            if (ev.scan != k) continue;
            for (int c = 0; c < ev.count; ++c) {
                TargetTruth t;
                t.birth_scan = k;
                t.death_scan = cfg.scans + 1;
                Vector x(4);
                x(0) = ux(truth_rng);
                x(2) = uy(truth_rng);
                x(1) = cfg.sigma_v * normal(truth_rng);
                x(3) = cfg.sigma_v * normal(truth_rng);
                t.states.push_back(x);
                targets.push_back(std::move(t));
            }
        }

        std::vector<SensorScan> frame(n);
        for (int i = 0; i < n; ++i) {
            auto& rng = sensor_rng[i];
            const Eigen::Vector2d xs(data.layout.positions[i][0], data.layout.positions[i][1]);
            std::vector<std::pair<Vector, int>> raw;
            for (std::size_t ti = 0; ti < targets.size(); ++ti) {
                const auto& t = targets[ti];
                if (!t.alive(k)) continue;
                if (!detect(rng)) continue;
                Vector y(2);
                y(0) = t.state(k)(0) - xs(0) + cfg.sigma_obs * normal(rng);
                y(1) = t.state(k)(2) - xs(1) + cfg.sigma_obs * normal(rng);
                raw.emplace_back(y, static_cast<int>(ti));
            }
            const int nfa = clutter_count(rng);
            for (int c = 0; c < nfa; ++c) {
                Vector y(2);
                y(0) = ux(rng) - xs(0);
                y(1) = uy(rng) - xs(1);
                raw.emplace_back(y, -1);
            }
            std::shuffle(raw.begin(), raw.end(), rng);
            for (std::size_t j = 0; j < raw.size(); ++j) {
                frame[i].observations.push_back(Observation{
                    raw[j].first, ObservationId{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k),
                                                static_cast<std::uint32_t>(j)}});
                frame[i].origin.push_back(raw[j].second);
            }
        }
        data.frames.push_back(std::move(frame));
    }
    return data;
}

/// Replays a target's trajectory from its initial state and stored noises.
inline std::vector<Vector> replay_trajectory(const ScenarioConfig& cfg, const TargetTruth& t)
{
    const auto mats = build_matrices(cfg);
    std::vector<Vector> states{t.states.front()};
    for (const auto& a : t.noises) states.push_back(ncv_step(cfg, mats.G, states.back(), a));
    return states;
}

// ---------------------------------------------------------------------------
// Parameter translation

/// c = 2 pi sigma_obs^2 / V: ratio of the likelihood "volume" to the
/// observation-space volume.
inline double translation_constant(const ScenarioConfig& cfg)
{
    return 2.0 * std::numbers::pi * cfg.sigma_obs * cfg.sigma_obs / cfg.volume();
}

/// Zero-velocity Gaussian centred on the region whose position shape is at
/// least 1/2 everywhere in the region; velocity variance sigma_v^2.
inline std::pair<Vector, Matrix> covering_gaussian(const ScenarioConfig& cfg)
{
    const double cx = 0.5 * (cfg.region_lower[0] + cfg.region_upper[0]);
    const double cy = 0.5 * (cfg.region_lower[1] + cfg.region_upper[1]);
    const double hx = 0.5 * (cfg.region_upper[0] - cfg.region_lower[0]);
    const double hy = 0.5 * (cfg.region_upper[1] - cfg.region_lower[1]);
    const double pos_var = (hx * hx + hy * hy) / (2.0 * std::log(2.0));
    Vector mean(4);
    mean << cx, 0.0, cy, 0.0;
    Vector diag(4);
    diag << pos_var, cfg.sigma_v * cfg.sigma_v, pos_var, cfg.sigma_v * cfg.sigma_v;
    return {mean, Matrix(diag.asDiagonal())};
}

struct PossibilisticModels {
    SensorModels models;
    double c = 0.0;
};

/// alpha_s = 1, alpha_df = 1 - p_d inside the region, alpha_b = min(1, c lambda_b),
/// F_fa = min(1, c lambda_fa).
inline PossibilisticModels translate_parameters(const ScenarioConfig& cfg, const SensorLayout& layout)
{
    const auto mats = build_matrices(cfg);
    PossibilisticModels out;
    out.c = translation_constant(cfg);
    const double alpha_b = std::min(1.0, out.c * cfg.lambda_b);
    const double f_fa = std::min(1.0, out.c * cfg.lambda_fa);
    auto& m = out.models;
    m.motion = MotionModel{mats.G, mats.Q};
    auto [mean, cov] = covering_gaussian(cfg);
    m.birth.birth_mixture = MaxMixture(4);
    m.birth.birth_mixture.add(GaussianComponent{std::log(alpha_b), mean, cov, {}});
    m.birth.birth_scalar = alpha_b;
    m.clutter.f_fa = f_fa;
    Box fov{Vector(Eigen::Vector2d(cfg.region_lower[0], cfg.region_lower[1])),
            Vector(Eigen::Vector2d(cfg.region_upper[0], cfg.region_upper[1]))};
    for (std::size_t i = 0; i < layout.positions.size(); ++i) {
        ObservationModel obs;
        obs.H = mats.H;
        obs.R = mats.R;
        obs.alpha_df = std::max(1.0 - cfg.p_d, std::numeric_limits<double>::min());
        obs.fov = fov;
        obs.sensor_offset = Vector::Zero(4);
        obs.sensor_offset(0) = layout.positions[i][0];
        obs.sensor_offset(2) = layout.positions[i][1];
        obs.sensor_id = static_cast<std::uint32_t>(i);
        m.sensors.push_back(std::move(obs));
    }
    return out;
}

/// Probabilistic counterpart: Gaussian birth intensity of mass lambda_b with
/// the same shape as the possibilistic birth term, clutter lambda_fa / V.
inline phd::PhdModels phd_models(const ScenarioConfig& cfg, const SensorLayout& layout)
{
    const auto pos = translate_parameters(cfg, layout);
    phd::PhdModels out;
    out.motion = pos.models.motion;
    out.sensors = pos.models.sensors;
    out.params.p_d = cfg.p_d;
    out.params.p_s = cfg.p_s;
    out.params.clutter_intensity = cfg.lambda_fa / cfg.volume();
    auto [mean, cov] = covering_gaussian(cfg);
    out.params.birth = phd::GmIntensity{4, {phd::GmComponent{cfg.lambda_b, mean, cov, {}}}};
    return out;
}

// ---------------------------------------------------------------------------
// JSON dump

inline nlohmann::json config_to_json(const ScenarioConfig& cfg)
{
    nlohmann::json births = nlohmann::json::array();
    for (const auto& b : cfg.births) births.push_back({{"scan", b.scan}, {"count", b.count}});
    nlohmann::json j{{"scans", cfg.scans},
                     {"dt", cfg.dt},
                     {"sigma", cfg.sigma},
                     {"sigma_obs", cfg.sigma_obs},
                     {"sigma_v", cfg.sigma_v},
                     {"region_lower", cfg.region_lower},
                     {"region_upper", cfg.region_upper},
                     {"p_d", cfg.p_d},
                     {"p_s", cfg.p_s},
                     {"lambda_b", cfg.lambda_b},
                     {"lambda_fa", cfg.lambda_fa},
                     {"n_sensors", cfg.n_sensors},
                     {"births", births},
                     {"seed", cfg.seed}};
    if (!cfg.sensor_positions.empty()) j["sensor_positions"] = cfg.sensor_positions;
    return j;
}

inline ScenarioConfig config_from_json(const nlohmann::json& j, ScenarioConfig cfg = {})
{
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("scans", cfg.scans);
    get("dt", cfg.dt);
    get("sigma", cfg.sigma);
    get("sigma_obs", cfg.sigma_obs);
    get("sigma_v", cfg.sigma_v);
    get("region_lower", cfg.region_lower);
    get("region_upper", cfg.region_upper);
    get("p_d", cfg.p_d);
    get("p_s", cfg.p_s);
    get("lambda_b", cfg.lambda_b);
    get("lambda_fa", cfg.lambda_fa);
    get("n_sensors", cfg.n_sensors);
    get("seed", cfg.seed);
    get("sensor_positions", cfg.sensor_positions);
    if (j.contains("births")) {
        cfg.births.clear();
        for (const auto& b : j.at("births")) cfg.births.push_back({b.at("scan").get<int>(), b.at("count").get<int>()});
    }
    return cfg;
}

inline nlohmann::json scenario_to_json(const ScenarioData& data, std::uint64_t run = 0)
{
    nlohmann::json truth = nlohmann::json::array();
    for (const auto& t : data.truth.targets) {
        nlohmann::json states = nlohmann::json::array();
        for (const auto& s : t.states) states.push_back(vector_to_json(s));
        truth.push_back({{"birth_scan", t.birth_scan},
                         {"death_scan", t.death_scan},
                         {"states", states},
                         {"noises", t.noises}});
    }
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t k = 0; k < data.frames.size(); ++k) {
        nlohmann::json scan = nlohmann::json::array();
        for (const auto& s : data.frames[k]) {
            nlohmann::json obs = nlohmann::json::array();
            for (std::size_t j = 0; j < s.observations.size(); ++j)
                obs.push_back({{"value", vector_to_json(s.observations[j].value)},
                               {"id", s.observations[j].id},
                               {"origin", s.origin[j]}});
            scan.push_back(obs);
        }
        frames.push_back({{"scan", k + 1}, {"sensors", scan}});
    }
    return nlohmann::json{{"format", "posfuse-scenario-v1"},
                          {"config", config_to_json(data.config)},
                          {"run", run},
                          {"seeds", {{"truth", data.truth_seed}, {"sensors", data.sensor_seeds}}},
                          {"sensor_positions", data.layout.positions},
                          {"truth", truth},
                          {"frames", frames}};
}

}  // namespace posfuse
