#include <filesystem>
#include <fstream>
#include <optional>
#include <iostream>

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include "guardnn/attacks.hpp"
#include "guardnn/experiment.hpp"

namespace {

using namespace guardnn;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitSecurity = 2;
constexpr int kExitIo = 3;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<u64> seed;  // unset = take the config's value
    u32 jobs = 0;             // 0 = take the config's value
    bool emit_traces = false;

    u64 seed_or(u64 fallback) const { return seed ? *seed : fallback; }
};

experiment::ExperimentConfig load_config(const CommonArgs& args) {
    experiment::ExperimentConfig cfg;
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw std::ios_base::failure("cannot open config: " + args.config_path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        cfg = experiment::parse_config(text);
    }
    if (args.seed) cfg.seed = *args.seed;
    if (args.jobs > 0) cfg.jobs = args.jobs;
    cfg.emit_traces = cfg.emit_traces || args.emit_traces;
    return cfg;
}

void write_file(const std::string& dir, const std::string& name, const std::string& content) {
    std::filesystem::create_directories(dir);
    auto path = std::filesystem::path(dir) / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::ios_base::failure("cannot write " + path.string());
    out << content;
    if (!out) throw std::ios_base::failure("write failed: " + path.string());
}

int cmd_run(const CommonArgs& args) {
    auto cfg = load_config(args);
    auto report = experiment::run_sweep(cfg);
    auto text = experiment::report_text(report);
    std::cout << text;
    write_file(args.out_dir, "report.txt", text);
    write_file(args.out_dir, "report.json", experiment::report_json(report));
    if (cfg.emit_traces)
        write_file(args.out_dir, "traces.txt", experiment::traces_text(report));
    return report.all_ok ? kExitOk : kExitSecurity;
}

int cmd_attack(const CommonArgs& args) {
    auto outcomes = attacks::run_standard_battery(args.seed_or(1));
    auto table = attacks::to_table(outcomes);
    std::cout << table;

    nlohmann::ordered_json j;
    j["seed"] = args.seed_or(1);
    j["outcomes"] = nlohmann::ordered_json::array();
    bool all_pass = true;
    for (const auto& o : outcomes) {
        all_pass = all_pass && o.pass;
        j["outcomes"].push_back({{"attack", o.name},
                                 {"scheme", harness::to_string(o.scheme)},
                                 {"trials", o.trials},
                                 {"detected", o.detected},
                                 {"undetected", o.undetected},
                                 {"leaks", o.leaks},
                                 {"crashes", o.crashes},
                                 {"pass", o.pass},
                                 {"detail", o.detail}});
    }
    j["all_pass"] = all_pass;
    write_file(args.out_dir, "attacks.txt", table);
    write_file(args.out_dir, "attacks.json", j.dump(2) + "\n");
    return all_pass ? kExitOk : kExitSecurity;
}

int cmd_trace(const CommonArgs& args, const std::string& network, const std::string& mode_s,
              const std::string& scheme_s) {
    auto cfg = load_config(args);
    cfg.networks = {network};
    cfg.modes = {mode_s == "training" ? workload::Mode::Training : workload::Mode::Inference};
    if (mode_s != "training" && mode_s != "inference")
        throw ConfigError("mode must be inference|training");

    harness::SchemeId scheme = harness::SchemeId::GuardNnCi;
    bool known = false;
    for (auto id : harness::all_schemes())
        if (scheme_s == harness::to_string(id)) {
            scheme = id;
            known = true;
        }
    if (!known) throw ConfigError("unknown scheme '" + scheme_s + "'");

    auto spec = experiment::resolve_network(cfg, network);
    auto dfg = workload::build_network(spec, cfg.modes[0]);
    memprot::KeystreamAudit audit;
    harness::SessionOptions opts;
    opts.mode = cfg.modes[0];
    opts.writes_per_region = cfg.writes_per_region;
    opts.crypto_seed = cfg.seed;
    opts.data_seed = cfg.seed + 1;
    opts.geometry = cfg.geometry;
    opts.retain_trace = true;
    auto result = harness::run_session(dfg, scheme, opts, &audit);

    std::ostringstream os;
    os << network << " " << experiment::mode_name(opts.mode) << " "
       << harness::to_string(scheme) << "  groups=" << result.group_count
       << "  transactions=" << result.trace.count << "  digest=0x" << std::hex
       << result.trace.digest << std::dec << "\n";
    for (const auto& t : result.records) {
        os << t.seq << "\t" << memprot::to_string(t.purpose) << "\t"
           << (t.is_write ? "W" : "R") << "\t0x" << std::hex << t.addr << std::dec << "\n";
    }
    std::cout << os.str().substr(0, 4096);
    if (result.records.size() > 40) std::cout << "... (full listing in trace.txt)\n";
    write_file(args.out_dir, "trace.txt", os.str());
    bool ok = result.completed && result.output_ok && result.attest_ok &&
              audit.violations() == 0;
    return ok ? kExitOk : kExitSecurity;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic secure DNN-accelerator simulator"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string network = "mlp-tiny", mode = "inference", scheme = "GuardNN_CI";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", args.config_path, "JSON experiment configuration");
        cmd->add_option("--seed", args.seed, "deterministic master seed");
        cmd->add_option("--out", args.out_dir, "output directory for reports");
        cmd->add_option("--jobs", args.jobs, "worker threads for the sweep");
        cmd->add_flag("--emit-traces", args.emit_traces, "also write per-group traces");
    };

    auto* run = app.add_subcommand("run", "run the protection sweep and write reports");
    add_common(run);
    auto* attack = app.add_subcommand("attack", "run the adversary battery");
    add_common(attack);
    auto* trace = app.add_subcommand("trace", "dump one session's transaction trace");
    add_common(trace);
    trace->add_option("--network", network, "preset or custom network name");
    trace->add_option("--mode", mode, "inference|training");
    trace->add_option("--scheme", scheme, "NP|BP|GuardNN_C|GuardNN_CI");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(args);
        if (attack->parsed()) return cmd_attack(args);
        return cmd_trace(args, network, mode, scheme);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSecurity;
    }
    return kExitOk;
}
