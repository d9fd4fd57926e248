// Command-line front end for the Monte Carlo harness.
#include "posfuse/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

std::string read_file(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Possibilistic multi-sensor fusion experiments"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run a Monte Carlo experiment");
    std::string config_path, filter, mode, out_dir = "results";
    int runs = 0, gossip_rounds = -1, sensors = 0, threads = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool disable_maintenance = false, trace = false;
    double ospa_cutoff = 0.0, ospa_order = 0.0;
    run->add_option("--config", config_path, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
    run->add_option("--filter", filter, "possibilistic | probabilistic");
    run->add_option("--mode", mode, "centralised | decentralised | sequential");
    run->add_option("--runs", runs, "Monte Carlo runs")->check(CLI::PositiveNumber);
    run->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { seed = s; seed_set = true; },
                                            "Master seed");
    run->add_option("--sensors", sensors, "Number of sensors (4 or 8)")->check(CLI::IsMember({4, 8}));
    run->add_option("--gossip-rounds", gossip_rounds, "Gossip rounds per scan")->check(CLI::NonNegativeNumber);
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    run->add_flag("--disable-maintenance", disable_maintenance, "Turn off pruning, merging and capping");
    run->add_option("--ospa-cutoff", ospa_cutoff, "OSPA cutoff c")->check(CLI::PositiveNumber);
    run->add_option("--ospa-order", ospa_order, "OSPA order p")->check(CLI::Range(1.0, 1e9));
    run->add_flag("--trace", trace, "Also write per-run traces (runs.csv)");

    auto* cmp = app.add_subcommand("compare", "Per-scan differences between two results files (a - b)");
    std::string csv_a, csv_b;
    cmp->add_option("a", csv_a, "First results.csv")->required()->check(CLI::ExistingFile);
    cmp->add_option("b", csv_b, "Second results.csv")->required()->check(CLI::ExistingFile);

    auto* dump = app.add_subcommand("scenario", "Dump one simulated scenario as JSON");
    std::string dump_config;
    std::uint64_t dump_run = 0;
    int dump_sensors = 0;
    dump->add_option("--config", dump_config, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
    dump->add_option("--run", dump_run, "Run index");
    dump->add_option("--sensors", dump_sensors, "Number of sensors (4 or 8)")->check(CLI::IsMember({4, 8}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            posfuse::ExperimentConfig cfg;
            if (!config_path.empty()) cfg = posfuse::experiment_from_json(nlohmann::json::parse(read_file(config_path)));
            if (!filter.empty()) cfg.filter = posfuse::parse_filter(filter);
            if (!mode.empty()) cfg.mode = posfuse::parse_mode(mode);
            if (runs > 0) cfg.runs = runs;
            if (seed_set) cfg.scenario.seed = seed;
            if (sensors > 0) {
                cfg.scenario.n_sensors = sensors;
                cfg.scenario.sensor_positions.clear();
            }
            if (gossip_rounds >= 0) cfg.gossip_rounds = gossip_rounds;
            if (disable_maintenance) cfg.maintenance.enabled = false;
            if (ospa_cutoff > 0.0) cfg.ospa.cutoff = ospa_cutoff;
            if (ospa_order > 0.0) cfg.ospa.order = ospa_order;
            cfg.threads = static_cast<unsigned>(threads);
            const auto out = posfuse::run_experiment(cfg);
            posfuse::write_outputs(out_dir, cfg, out, trace);
            double total = 0.0;
            for (const auto& r : out.runs) total += r.mean_ospa();
            std::printf("%s/%s n=%d runs=%d: mean OSPA %.3f -> %s\n", posfuse::to_string(cfg.filter),
                        posfuse::to_string(cfg.mode), cfg.scenario.n_sensors, cfg.runs,
                        total / static_cast<double>(out.runs.size()), out_dir.c_str());
        } else if (*cmp) {
            const auto a = posfuse::parse_results_csv(read_file(csv_a));
            const auto b = posfuse::parse_results_csv(read_file(csv_b));
            const auto c = posfuse::compare(a, b);
            std::printf("scan,ospa_delta,precision_delta\n");
            for (const auto& r : c.rows) {
                if (r.precision_delta) std::printf("%d,%.6g,%.6g\n", r.scan, r.ospa_delta, *r.precision_delta);
                else std::printf("%d,%.6g,\n", r.scan, r.ospa_delta);
            }
            std::printf("# mean ospa delta %.6g (%s)\n", c.mean_ospa_delta,
                        c.mean_ospa_delta < 0 ? "a lower" : c.mean_ospa_delta > 0 ? "b lower" : "equal");
            if (c.mean_precision_delta)
                std::printf("# mean precision delta %.6g (%s)\n", *c.mean_precision_delta,
                            *c.mean_precision_delta > 0 ? "a higher" : *c.mean_precision_delta < 0 ? "b higher" : "equal");
        } else if (*dump) {
            posfuse::ExperimentConfig cfg;
            if (!dump_config.empty()) cfg = posfuse::experiment_from_json(nlohmann::json::parse(read_file(dump_config)));
            if (dump_sensors > 0) {
                cfg.scenario.n_sensors = dump_sensors;
                cfg.scenario.sensor_positions.clear();
            }
            std::cout << posfuse::scenario_to_json(posfuse::generate(cfg.scenario, dump_run), dump_run).dump() << '\n';
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
