#include "guardnn/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace guardnn::experiment {

namespace {

using nlohmann::ordered_json;

workload::Mode parse_mode(const std::string& s) {
    if (s == "inference") return workload::Mode::Inference;
    if (s == "training") return workload::Mode::Training;
    throw ConfigError("unknown mode '" + s + "' (expected inference|training)");
}

harness::SchemeId parse_scheme(const std::string& s) {
    for (auto id : harness::all_schemes())
        if (s == harness::to_string(id)) return id;
    if (s == "np") return harness::SchemeId::Np;
    if (s == "bp") return harness::SchemeId::Bp;
    if (s == "guardnn_c") return harness::SchemeId::GuardNnC;
    if (s == "guardnn_ci") return harness::SchemeId::GuardNnCi;
    throw ConfigError("unknown scheme '" + s + "'");
}

void expect_keys(const ordered_json& obj, std::initializer_list<const char*> allowed,
                 const char* where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) known = true;
        if (!known)
            throw ConfigError(std::string("unknown key '") + it.key() + "' in " + where);
    }
}

} // namespace

const char* mode_name(workload::Mode m) {
    return m == workload::Mode::Training ? "training" : "inference";
}

ExperimentConfig default_config() {
    return ExperimentConfig{};
}

ExperimentConfig parse_config(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be an object");
    expect_keys(j,
                {"networks", "custom_networks", "modes", "schemes", "writes_per_region", "seed",
                 "jobs", "emit_traces", "geometry", "timing"},
                "config");
    ExperimentConfig cfg;
    try {
        if (j.contains("custom_networks")) {
            for (const auto& n : j["custom_networks"]) {
                auto spec = workload::parse_network_spec(n.dump());
                if (spec.name.empty()) throw ConfigError("custom network needs a name");
                cfg.custom[spec.name] = spec;
            }
        }
        if (j.contains("networks")) {
            cfg.networks.clear();
            for (const auto& n : j["networks"]) cfg.networks.push_back(n.get<std::string>());
        }
        if (j.contains("modes")) {
            cfg.modes.clear();
            for (const auto& m : j["modes"]) cfg.modes.push_back(parse_mode(m.get<std::string>()));
        }
        if (j.contains("schemes")) {
            cfg.schemes.clear();
            for (const auto& s : j["schemes"])
                cfg.schemes.push_back(parse_scheme(s.get<std::string>()));
        }
        cfg.writes_per_region = j.value("writes_per_region", cfg.writes_per_region);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.jobs = j.value("jobs", cfg.jobs);
        cfg.emit_traces = j.value("emit_traces", cfg.emit_traces);
        if (j.contains("geometry")) {
            const auto& g = j["geometry"];
            expect_keys(g, {"mac_width_bytes", "cache_capacity_bytes", "tree_arity"}, "geometry");
            cfg.geometry.mac_width_bytes = g.value("mac_width_bytes", cfg.geometry.mac_width_bytes);
            cfg.geometry.cache_capacity_bytes =
                g.value("cache_capacity_bytes", cfg.geometry.cache_capacity_bytes);
            cfg.geometry.tree_arity = g.value("tree_arity", cfg.geometry.tree_arity);
        }
        if (j.contains("timing")) {
            const auto& t = j["timing"];
            expect_keys(t,
                        {"transaction_bytes", "bandwidth_bytes_per_cycle", "macs_per_cycle",
                         "layer_fill_cycles", "metadata_stall_cycles"},
                        "timing");
            cfg.timing.transaction_bytes = t.value("transaction_bytes", cfg.timing.transaction_bytes);
            cfg.timing.bandwidth_bytes_per_cycle =
                t.value("bandwidth_bytes_per_cycle", cfg.timing.bandwidth_bytes_per_cycle);
            cfg.timing.macs_per_cycle = t.value("macs_per_cycle", cfg.timing.macs_per_cycle);
            cfg.timing.layer_fill_cycles =
                t.value("layer_fill_cycles", cfg.timing.layer_fill_cycles);
            cfg.timing.metadata_stall_cycles =
                t.value("metadata_stall_cycles", cfg.timing.metadata_stall_cycles);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    if (cfg.writes_per_region == 0) throw ConfigError("writes_per_region must be >= 1");
    if (cfg.networks.empty()) throw ConfigError("no networks selected");
    if (cfg.modes.empty()) throw ConfigError("no modes selected");
    if (cfg.schemes.empty()) throw ConfigError("no schemes selected");
    return cfg;
}

workload::NetworkSpec resolve_network(const ExperimentConfig& config, const std::string& name) {
    auto it = config.custom.find(name);
    if (it != config.custom.end()) return it->second;
    return workload::preset(name);
}

SweepReport run_sweep(const ExperimentConfig& config) {
    SweepReport report;
    report.config = config;

    struct Task {
        std::string network;
        workload::Mode mode;
        size_t first_row; // row slot of this task's first scheme
    };
    std::vector<Task> tasks;
    for (const auto& n : config.networks)
        for (auto m : config.modes)
            tasks.push_back({n, m, tasks.size() * config.schemes.size()});
    report.rows.resize(tasks.size() * config.schemes.size());
    std::vector<u64> violations(tasks.size(), 0);

    auto run_task = [&](size_t ti) {
        const Task& task = tasks[ti];
        auto spec = resolve_network(config, task.network);
        auto dfg = workload::build_network(spec, task.mode);

        auto run_cell = [&](harness::SchemeId scheme) {
            memprot::KeystreamAudit audit;
            harness::SessionOptions opts;
            opts.mode = task.mode;
            opts.writes_per_region = config.writes_per_region;
            opts.crypto_seed = config.seed * 1000003 + ti * 101 + static_cast<u64>(scheme) * 17 + 1;
            opts.data_seed = config.seed * 2000003 + ti * 211 + static_cast<u64>(scheme) * 19 + 2;
            opts.geometry = config.geometry;
            opts.keep_exports = false;
            auto result = harness::run_session(dfg, scheme, opts, &audit);
            violations[ti] += audit.violations();
            return result;
        };

        // The no-protection baseline anchors the ratios for the whole task.
        auto np_result = run_cell(harness::SchemeId::Np);
        auto np_perf = perfmodel::analyze(np_result, harness::SchemeId::Np, config.timing);

        for (size_t si = 0; si < config.schemes.size(); ++si) {
            auto scheme = config.schemes[si];
            SweepRow row;
            row.network = task.network;
            row.mode = task.mode;
            row.scheme = scheme;
            auto result = scheme == harness::SchemeId::Np ? std::move(np_result)
                                                          : run_cell(scheme);
            row.perf = perfmodel::analyze(result, scheme, config.timing);
            perfmodel::relativize(row.perf, np_perf);
            row.trace = result.trace;
            row.completed = result.completed;
            row.cert_ok = result.cert_ok;
            row.session_sig_ok = result.session_sig_ok;
            row.output_ok = result.output_ok;
            row.attest_ok = result.attest_ok;
            row.instructions = result.instructions;
            row.failure = result.failure;
            report.rows[task.first_row + si] = std::move(row);
        }
    };

    u32 jobs = std::max<u32>(1, config.jobs);
    if (jobs <= 1 || tasks.size() <= 1) {
        for (size_t ti = 0; ti < tasks.size(); ++ti) run_task(ti);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&] {
            for (size_t ti = next.fetch_add(1); ti < tasks.size(); ti = next.fetch_add(1))
                run_task(ti);
        };
        std::vector<std::thread> pool;
        for (u32 w = 0; w < std::min<u32>(jobs, static_cast<u32>(tasks.size())); ++w)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (u64 v : violations) report.audit_violations += v;
    report.all_ok = report.audit_violations == 0;
    for (const auto& row : report.rows) report.all_ok = report.all_ok && row.ok();
    return report;
}

std::string report_text(const SweepReport& report) {
    std::ostringstream os;
    const auto& c = report.config;
    os << "protection sweep  seed=" << c.seed << "  writes_per_region=" << c.writes_per_region
       << "  mac_width=" << c.geometry.mac_width_bytes
       << "B  cache=" << c.geometry.cache_capacity_bytes << "B\n";
    os << "timing: " << c.timing.macs_per_cycle << " macs/cycle, "
       << c.timing.bandwidth_bytes_per_cycle << " B/cycle, fill=" << c.timing.layer_fill_cycles
       << ", stall=" << c.timing.metadata_stall_cycles << "\n\n";
    os << "network        mode       scheme        data_tx     mac_tx    vn_tx   tree_tx  "
          "traffic_x      cycles  slowdown  bound    status\n";
    os << "-------------- ---------- ---------- ---------- ---------- -------- --------- "
          "---------- ----------- --------- -------- --------\n";
    char line[320];
    for (const auto& r : report.rows) {
        std::snprintf(line, sizeof line,
                      "%-14s %-10s %-10s %10llu %10llu %8llu %9llu %10.4f %11llu %9.4f %-8s %s\n",
                      r.network.c_str(), mode_name(r.mode), harness::to_string(r.scheme),
                      static_cast<unsigned long long>(r.perf.data_tx),
                      static_cast<unsigned long long>(r.perf.mac_tx),
                      static_cast<unsigned long long>(r.perf.vn_tx),
                      static_cast<unsigned long long>(r.perf.tree_tx), r.perf.traffic_increase,
                      static_cast<unsigned long long>(r.perf.cycles), r.perf.slowdown,
                      r.perf.memory_bound ? "memory" : "compute",
                      r.ok() ? "ok" : (r.failure.empty() ? "FAILED" : r.failure.c_str()));
        os << line;
    }
    os << "\nkeystream audit violations: " << report.audit_violations << "\n";
    os << "overall: " << (report.all_ok ? "ok" : "FAILED") << "\n";
    return os.str();
}

std::string report_json(const SweepReport& report) {
    const auto& c = report.config;
    ordered_json j;
    j["config"] = {
        {"networks", c.networks},
        {"modes", [&] {
             std::vector<std::string> v;
             for (auto m : c.modes) v.push_back(mode_name(m));
             return v;
         }()},
        {"schemes", [&] {
             std::vector<std::string> v;
             for (auto s : c.schemes) v.push_back(harness::to_string(s));
             return v;
         }()},
        {"writes_per_region", c.writes_per_region},
        {"seed", c.seed},
        {"geometry",
         {{"mac_width_bytes", c.geometry.mac_width_bytes},
          {"cache_capacity_bytes", c.geometry.cache_capacity_bytes},
          {"tree_arity", c.geometry.tree_arity}}},
        {"timing",
         {{"transaction_bytes", c.timing.transaction_bytes},
          {"bandwidth_bytes_per_cycle", c.timing.bandwidth_bytes_per_cycle},
          {"macs_per_cycle", c.timing.macs_per_cycle},
          {"layer_fill_cycles", c.timing.layer_fill_cycles},
          {"metadata_stall_cycles", c.timing.metadata_stall_cycles}}},
    };
    j["rows"] = ordered_json::array();
    for (const auto& r : report.rows) {
        ordered_json row = {
            {"network", r.network},
            {"mode", mode_name(r.mode)},
            {"scheme", harness::to_string(r.scheme)},
            {"data_tx", r.perf.data_tx},
            {"mac_tx", r.perf.mac_tx},
            {"vn_tx", r.perf.vn_tx},
            {"tree_tx", r.perf.tree_tx},
            {"total_tx", r.perf.total_tx},
            {"traffic_increase", r.perf.traffic_increase},
            {"cycles", r.perf.cycles},
            {"slowdown", r.perf.slowdown},
            {"memory_bound", r.perf.memory_bound},
            {"trace_digest", r.trace.digest},
            {"transactions", r.trace.count},
            {"instructions", r.instructions},
            {"ok", r.ok()},
        };
        if (!r.failure.empty()) row["failure"] = r.failure;
        j["rows"].push_back(std::move(row));
    }
    j["security"] = {{"keystream_audit_violations", report.audit_violations},
                     {"all_sessions_ok", report.all_ok}};
    return j.dump(2) + "\n";
}

std::string traces_text(const SweepReport& report) {
    std::ostringstream os;
    for (const auto& r : report.rows) {
        os << r.network << " " << mode_name(r.mode) << " " << harness::to_string(r.scheme)
           << "  digest=0x" << std::hex << r.trace.digest << std::dec
           << "  transactions=" << r.trace.count << "\n";
        for (size_t g = 0; g < r.trace.groups.size(); ++g) {
            const auto& b = r.trace.groups[g];
            if (b.total() == 0) continue;
            const bool flush = g + 1 == r.trace.groups.size();
            os << "  group " << (flush ? "flush" : std::to_string(g));
            using memprot::Purpose;
            for (auto p : {Purpose::Data, Purpose::Mac, Purpose::Vn, Purpose::Tree}) {
                os << "  " << memprot::to_string(p) << " r=" << b.reads[static_cast<size_t>(p)]
                   << " w=" << b.writes[static_cast<size_t>(p)];
            }
            os << "\n";
        }
    }
    return os.str();
}

} // namespace guardnn::experiment
