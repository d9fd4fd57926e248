// Monte Carlo experiment driver: runs one pipeline variant over many seeded
// scenario realisations, scores every scan and aggregates across runs.
#pragma once

#include "posfuse/baseline_phd.hpp"
#include "posfuse/fusion.hpp"
#include "posfuse/metrics.hpp"
#include "posfuse/scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace posfuse {

inline constexpr const char* kResultsSchema = "posfuse-results-v1";

enum class FilterKind { possibilistic, probabilistic };

inline const char* to_string(FilterKind f) { return f == FilterKind::possibilistic ? "possibilistic" : "probabilistic"; }

inline const char* to_string(FusionMode m)
{
    switch (m) {
    case FusionMode::centralised: return "centralised";
    case FusionMode::decentralised: return "decentralised";
    case FusionMode::sequential: return "sequential";
    }
    return "?";
}

inline FilterKind parse_filter(const std::string& s)
{
    if (s == "possibilistic") return FilterKind::possibilistic;
    if (s == "probabilistic") return FilterKind::probabilistic;
    throw InvalidParameter("unknown filter '" + s + "'");
}

inline FusionMode parse_mode(const std::string& s)
{
    if (s == "centralised" || s == "centralized") return FusionMode::centralised;
    if (s == "decentralised" || s == "decentralized") return FusionMode::decentralised;
    if (s == "sequential") return FusionMode::sequential;
    throw InvalidParameter("unknown mode '" + s + "'");
}

struct ExperimentConfig {
    ScenarioConfig scenario;
    FilterKind filter = FilterKind::possibilistic;
    FusionMode mode = FusionMode::centralised;
    int runs = 100;
    int gossip_rounds = 2;
    MaintenanceConfig maintenance;
    double tau_tilde = 0.1;
    int window = 10;
    double phd_prune = 5e-4;
    double phd_merge = 8.0;
    OspaParams ospa;
    /// Worker threads; 0 picks the hardware concurrency.
    unsigned threads = 0;

    void validate() const
    {
        scenario.validate();
        ospa.validate();
        if (runs < 1) throw InvalidParameter("runs must be positive");
        if (gossip_rounds < 0) throw InvalidParameter("gossip rounds must be non-negative");
        if (!(tau_tilde > 0.0 && tau_tilde <= 1.0)) throw InvalidParameter("tau_tilde must lie in (0, 1]");
        if (window < 1) throw InvalidParameter("window must be positive");
        if (!(maintenance.prune_threshold >= 0.0 && maintenance.prune_threshold < 1.0) || !(phd_prune >= 0.0))
            throw InvalidParameter("prune thresholds out of range");
        if (!(maintenance.merge_threshold > 0.0) || !(phd_merge > 0.0) || maintenance.cap < 1)
            throw InvalidParameter("merge thresholds and cap must be positive");
    }
};

struct ScanRecord {
    double ospa = 0.0;
    double ospa_c50 = 0.0;
    double ospa_c200 = 0.0;
    std::optional<double> precision;
    double tracks = 0.0;
    double components = 0.0;
    std::vector<GossipRoundStats> rounds;
    double wall_seconds = 0.0;
};

struct RunResult {
    std::uint64_t run = 0;
    std::vector<ScanRecord> scans;

    double mean_ospa() const
    {
        double s = 0.0;
        for (const auto& r : scans) s += r.ospa;
        return scans.empty() ? 0.0 : s / static_cast<double>(scans.size());
    }

    std::optional<double> mean_precision() const
    {
        double s = 0.0;
        int count = 0;
        for (const auto& r : scans)
            if (r.precision) {
                s += *r.precision;
                ++count;
            }
        if (count == 0) return std::nullopt;
        return s / count;
    }
};

namespace detail {

/// Metrics of one scan averaged over the nodes that report tracks; a
/// centralised pipeline is a single node.
inline void score_scan(ScanRecord& rec, const std::vector<std::vector<Track>>& per_node, const PointSet& truth,
                       const OspaParams& ospa_params)
{
    OspaParams c50 = ospa_params, c200 = ospa_params;
    c50.cutoff = 50.0;
    c200.cutoff = 200.0;
    double precision_sum = 0.0;
    int precision_nodes = 0;
    for (const auto& tracks : per_node) {
        const auto est = track_positions(tracks);
        rec.ospa += ospa(est, truth, ospa_params);
        rec.ospa_c50 += ospa(est, truth, c50);
        rec.ospa_c200 += ospa(est, truth, c200);
        rec.tracks += static_cast<double>(tracks.size());
        if (auto p = precision_stat(tracks)) {
            precision_sum += *p;
            ++precision_nodes;
        }
    }
    const double n = static_cast<double>(per_node.size());
    rec.ospa /= n;
    rec.ospa_c50 /= n;
    rec.ospa_c200 /= n;
    rec.tracks /= n;
    if (precision_nodes > 0) rec.precision = precision_sum / precision_nodes;
}

template <class Mixture>
double mean_size(const std::vector<Mixture>& nodes)
{
    double s = 0.0;
    for (const auto& f : nodes) s += static_cast<double>(f.size());
    return nodes.empty() ? 0.0 : s / static_cast<double>(nodes.size());
}

}  // namespace detail

inline RunResult simulate_run(const ExperimentConfig& cfg, std::uint64_t run)
{
    const auto data = generate(cfg.scenario, run);
    const int n = static_cast<int>(data.layout.positions.size());
    const auto weights = metropolis_weights(data.layout.graph);
    RunResult result;
    result.run = run;

    if (cfg.filter == FilterKind::possibilistic) {
        const auto models = translate_parameters(cfg.scenario, data.layout).models;
        FusionConfig fc;
        fc.mode = cfg.mode;
        fc.gossip_rounds = cfg.gossip_rounds;
        fc.maintenance = cfg.maintenance;
        fc.extraction.tau_tilde = cfg.tau_tilde;
        fc.extraction.window = cfg.window;
        MaxMixture central(4);
        std::vector<MaxMixture> nodes(n, MaxMixture(4));
        for (int k = 1; k <= cfg.scenario.scans; ++k) {
            const auto start = std::chrono::steady_clock::now();
            ScanRecord rec;
            std::vector<std::vector<Track>> tracks;
            const auto obs = data.observations(k);
            const auto scan = static_cast<std::uint32_t>(k);
            if (cfg.mode == FusionMode::decentralised) {
                auto step = decentralised_step(nodes, obs, data.layout.graph, weights, models, fc, scan);
                nodes = std::move(step.nodes);
                tracks = std::move(step.tracks);
                rec.rounds = std::move(step.rounds);
                rec.components = detail::mean_size(nodes);
            } else {
                auto step = cfg.mode == FusionMode::centralised ? centralised_step(central, obs, models, fc, scan)
                                                                : sequential_step(central, obs, models, fc, scan);
                central = std::move(step.posterior);
                tracks.push_back(std::move(step.tracks));
                rec.components = static_cast<double>(central.size());
            }
            detail::score_scan(rec, tracks, data.truth.positions(k), cfg.ospa);
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            result.scans.push_back(std::move(rec));
        }
    } else {
        auto models = phd_models(cfg.scenario, data.layout);
        models.params.prune_threshold = cfg.phd_prune;
        models.params.merge_threshold = cfg.phd_merge;
        models.params.cap = cfg.maintenance.cap;
        models.params.maintenance = cfg.maintenance.enabled;
        models.params.tau_tilde = cfg.tau_tilde;
        models.params.window = cfg.window;
        phd::GmIntensity central{4, {}};
        std::vector<phd::GmIntensity> nodes(n, phd::GmIntensity{4, {}});
        for (int k = 1; k <= cfg.scenario.scans; ++k) {
            const auto start = std::chrono::steady_clock::now();
            ScanRecord rec;
            std::vector<std::vector<Track>> tracks;
            const auto obs = data.observations(k);
            const auto scan = static_cast<std::uint32_t>(k);
            if (cfg.mode == FusionMode::decentralised) {
                auto step = phd::phd_decentralised_step(nodes, obs, data.layout.graph, weights, models,
                                                        cfg.gossip_rounds, scan);
                nodes = std::move(step.nodes);
                tracks = std::move(step.tracks);
                rec.rounds = std::move(step.rounds);
                rec.components = detail::mean_size(nodes);
            } else {
                auto step = cfg.mode == FusionMode::centralised ? phd::phd_centralised_step(central, obs, models, scan)
                                                                : phd::phd_sequential_step(central, obs, models, scan);
                central = std::move(step.posterior);
                tracks.push_back(std::move(step.tracks));
                rec.components = static_cast<double>(central.size());
            }
            detail::score_scan(rec, tracks, data.truth.positions(k), cfg.ospa);
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            result.scans.push_back(std::move(rec));
        }
    }
    return result;
}

/// Runs 0 .. runs-1 on a pool of worker threads. Results are stored by run
/// index, so the output does not depend on scheduling.
inline std::vector<RunResult> run_all(const ExperimentConfig& cfg)
{
    cfg.validate();
    std::vector<RunResult> results(static_cast<std::size_t>(cfg.runs));
    unsigned workers = cfg.threads != 0 ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(cfg.runs));
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(workers);
    auto work = [&](unsigned w) {
        try {
            for (int r = next++; r < cfg.runs; r = next++)
                results[static_cast<std::size_t>(r)] = simulate_run(cfg, static_cast<std::uint64_t>(r));
        } catch (...) {
            errors[w] = std::current_exception();
            next = cfg.runs;
        }
    };
    if (workers <= 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

// ---------------------------------------------------------------------------
// Aggregation and output

struct ScanSummary {
    int scan = 0;
    double ospa_mean = 0.0, ospa_std = 0.0;
    double ospa_c50_mean = 0.0, ospa_c200_mean = 0.0;
    double precision_mean = std::numeric_limits<double>::quiet_NaN();
    double precision_std = std::numeric_limits<double>::quiet_NaN();
    int precision_count = 0;
    double tracks_mean = 0.0;
    double components_mean = 0.0;
    int runs = 0;
    std::vector<double> round_components, round_bytes;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v)
{
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

inline std::string fmt(double x)
{
    if (std::isnan(x)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

inline std::vector<ScanSummary> aggregate(const std::vector<RunResult>& results, int rounds)
{
    if (results.empty()) return {};
    const std::size_t scans = results.front().scans.size();
    std::vector<ScanSummary> out;
    for (std::size_t k = 0; k < scans; ++k) {
        ScanSummary s;
        s.scan = static_cast<int>(k + 1);
        s.runs = static_cast<int>(results.size());
        std::vector<double> o, o50, o200, prec, tr, comp;
        std::vector<std::vector<double>> rc(rounds), rb(rounds);
        for (const auto& r : results) {
            const auto& rec = r.scans.at(k);
            o.push_back(rec.ospa);
            o50.push_back(rec.ospa_c50);
            o200.push_back(rec.ospa_c200);
            if (rec.precision) prec.push_back(*rec.precision);
            tr.push_back(rec.tracks);
            comp.push_back(rec.components);
            for (int l = 0; l < rounds && l < static_cast<int>(rec.rounds.size()); ++l) {
                rc[l].push_back(static_cast<double>(rec.rounds[l].components));
                rb[l].push_back(static_cast<double>(rec.rounds[l].message_bytes));
            }
        }
        std::tie(s.ospa_mean, s.ospa_std) = detail::mean_std(o);
        s.ospa_c50_mean = detail::mean_std(o50).first;
        s.ospa_c200_mean = detail::mean_std(o200).first;
        std::tie(s.precision_mean, s.precision_std) = detail::mean_std(prec);
        s.precision_count = static_cast<int>(prec.size());
        s.tracks_mean = detail::mean_std(tr).first;
        s.components_mean = detail::mean_std(comp).first;
        for (int l = 0; l < rounds; ++l) {
            s.round_components.push_back(detail::mean_std(rc[l]).first);
            s.round_bytes.push_back(detail::mean_std(rb[l]).first);
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Versioned CSV: a "# schema:" comment line, a header, one row per scan.
/// Empty precision cells mean no run confirmed a track at that scan.
inline std::string results_csv(const std::vector<ScanSummary>& rows, int rounds)
{
    std::ostringstream os;
    os << "# schema: " << kResultsSchema << '\n';
    os << "scan,ospa_mean,ospa_std,ospa_c50_mean,ospa_c200_mean,precision_mean,precision_std,precision_count,"
          "tracks_mean,components_mean,runs";
    for (int l = 1; l <= rounds; ++l) os << ",round" << l << "_components,round" << l << "_bytes";
    os << '\n';
    using detail::fmt;
    for (const auto& r : rows) {
        os << r.scan << ',' << fmt(r.ospa_mean) << ',' << fmt(r.ospa_std) << ',' << fmt(r.ospa_c50_mean) << ','
           << fmt(r.ospa_c200_mean) << ',' << fmt(r.precision_mean) << ',' << fmt(r.precision_std) << ','
           << r.precision_count << ',' << fmt(r.tracks_mean) << ',' << fmt(r.components_mean) << ',' << r.runs;
        for (int l = 0; l < rounds; ++l) os << ',' << fmt(r.round_components[l]) << ',' << fmt(r.round_bytes[l]);
        os << '\n';
    }
    return os.str();
}

/// Per-run, per-scan trace rows.
inline std::string runs_csv(const std::vector<RunResult>& results)
{
    std::ostringstream os;
    os << "# schema: " << kResultsSchema << "-runs\n";
    os << "run,scan,ospa,ospa_c50,ospa_c200,precision,tracks,components\n";
    using detail::fmt;
    for (const auto& r : results)
        for (std::size_t k = 0; k < r.scans.size(); ++k) {
            const auto& s = r.scans[k];
            os << r.run << ',' << k + 1 << ',' << fmt(s.ospa) << ',' << fmt(s.ospa_c50) << ',' << fmt(s.ospa_c200)
               << ',' << (s.precision ? fmt(*s.precision) : std::string()) << ',' << fmt(s.tracks) << ','
               << fmt(s.components) << '\n';
        }
    return os.str();
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& cfg)
{
    return nlohmann::json{{"scenario", config_to_json(cfg.scenario)},
                          {"filter", to_string(cfg.filter)},
                          {"mode", to_string(cfg.mode)},
                          {"runs", cfg.runs},
                          {"gossip_rounds", cfg.gossip_rounds},
                          {"maintenance",
                           {{"enabled", cfg.maintenance.enabled},
                            {"prune", cfg.maintenance.prune_threshold},
                            {"merge", cfg.maintenance.merge_threshold},
                            {"cap", cfg.maintenance.cap}}},
                          {"phd", {{"prune", cfg.phd_prune}, {"merge", cfg.phd_merge}}},
                          {"extraction", {{"tau_tilde", cfg.tau_tilde}, {"window", cfg.window}}},
                          {"ospa", {{"cutoff", cfg.ospa.cutoff}, {"order", cfg.ospa.order}}}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig cfg = {})
{
    if (j.contains("scenario")) cfg.scenario = config_from_json(j.at("scenario"), cfg.scenario);
    if (j.contains("filter")) cfg.filter = parse_filter(j.at("filter").get<std::string>());
    if (j.contains("mode")) cfg.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("runs")) cfg.runs = j.at("runs").get<int>();
    if (j.contains("gossip_rounds")) cfg.gossip_rounds = j.at("gossip_rounds").get<int>();
    if (j.contains("maintenance")) {
        const auto& m = j.at("maintenance");
        if (m.contains("enabled")) cfg.maintenance.enabled = m.at("enabled").get<bool>();
        if (m.contains("prune")) cfg.maintenance.prune_threshold = m.at("prune").get<double>();
        if (m.contains("merge")) cfg.maintenance.merge_threshold = m.at("merge").get<double>();
        if (m.contains("cap")) cfg.maintenance.cap = m.at("cap").get<std::size_t>();
    }
    if (j.contains("phd")) {
        const auto& p = j.at("phd");
        if (p.contains("prune")) cfg.phd_prune = p.at("prune").get<double>();
        if (p.contains("merge")) cfg.phd_merge = p.at("merge").get<double>();
    }
    if (j.contains("extraction")) {
        const auto& e = j.at("extraction");
        if (e.contains("tau_tilde")) cfg.tau_tilde = e.at("tau_tilde").get<double>();
        if (e.contains("window")) cfg.window = e.at("window").get<int>();
    }
    if (j.contains("ospa")) {
        const auto& o = j.at("ospa");
        if (o.contains("cutoff")) cfg.ospa.cutoff = o.at("cutoff").get<double>();
        if (o.contains("order")) cfg.ospa.order = o.at("order").get<double>();
    }
    return cfg;
}

inline std::string config_hash(const ExperimentConfig& cfg)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a(experiment_to_json(cfg).dump())));
    return buf;
}

struct ExperimentOutput {
    std::vector<RunResult> runs;
    std::vector<ScanSummary> summary;
    std::string csv;
};

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg)
{
    ExperimentOutput out;
    out.runs = run_all(cfg);
    const int rounds = cfg.mode == FusionMode::decentralised ? cfg.gossip_rounds : 0;
    out.summary = aggregate(out.runs, rounds);
    out.csv = results_csv(out.summary, rounds);
    return out;
}

/// Writes results.csv and config.json (plus runs.csv when tracing, and a
/// timing.json sidecar kept apart so the other files are byte-reproducible).
inline void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const ExperimentOutput& out,
                          bool trace)
{
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
        f << text;
        if (!f) throw std::runtime_error("write failed for " + (dir / name).string());
    };
    write("results.csv", out.csv);
    nlohmann::json echo{{"schema", kResultsSchema}, {"config", experiment_to_json(cfg)}, {"config_hash", config_hash(cfg)}};
    write("config.json", echo.dump(2) + "\n");
    if (trace) write("runs.csv", runs_csv(out.runs));
    nlohmann::json timing = nlohmann::json::array();
    for (const auto& r : out.runs) {
        double total = 0.0;
        for (const auto& s : r.scans) total += s.wall_seconds;
        timing.push_back({{"run", r.run}, {"seconds", total}});
    }
    write("timing.json", timing.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Comparison of two results files

struct ResultsTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const
    {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw InvalidParameter("results file lacks column '" + name + "'");
        return static_cast<int>(it - header.begin());
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline ResultsTable parse_results_csv(const std::string& text)
{
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != std::string("# schema: ") + kResultsSchema)
        throw InvalidParameter("results file does not carry schema " + std::string(kResultsSchema));
    ResultsTable t;
    if (!std::getline(is, line)) throw InvalidParameter("results file has no header");
    t.header = split_csv_line(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size()) throw InvalidParameter("results row has wrong number of cells");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

struct ComparisonRow {
    int scan = 0;
    double ospa_delta = 0.0;
    std::optional<double> precision_delta;
};

struct Comparison {
    std::vector<ComparisonRow> rows;
    double mean_ospa_delta = 0.0;
    std::optional<double> mean_precision_delta;
};

/// Per-scan differences a - b of mean OSPA and mean precision.
inline Comparison compare(const ResultsTable& a, const ResultsTable& b)
{
    if (a.rows.size() != b.rows.size()) throw InvalidParameter("compare: scan counts differ");
    const int ra = a.column("runs"), rb = b.column("runs");
    const int oa = a.column("ospa_mean"), ob = b.column("ospa_mean");
    const int pa = a.column("precision_mean"), pb = b.column("precision_mean");
    Comparison c;
    double prec_sum = 0.0;
    int prec_count = 0;
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
        if (a.rows[k][ra] != b.rows[k][rb]) throw InvalidParameter("compare: run counts differ");
        ComparisonRow row;
        row.scan = static_cast<int>(k + 1);
        row.ospa_delta = std::stod(a.rows[k][oa]) - std::stod(b.rows[k][ob]);
        c.mean_ospa_delta += row.ospa_delta;
        if (!a.rows[k][pa].empty() && !b.rows[k][pb].empty()) {
            row.precision_delta = std::stod(a.rows[k][pa]) - std::stod(b.rows[k][pb]);
            prec_sum += *row.precision_delta;
            ++prec_count;
        }
        c.rows.push_back(row);
    }
    if (!c.rows.empty()) c.mean_ospa_delta /= static_cast<double>(c.rows.size());
    if (prec_count > 0) c.mean_precision_delta = prec_sum / prec_count;
    return c;
}

}  // namespace posfuse
