#pragma once

#include <map>
#include <string>
#include <vector>

#include "guardnn/perfmodel.hpp"

// Sweep orchestration: (network × mode × scheme) honest sessions, relativized
// against the no-protection baseline, rendered as text and JSON reports.
// Everything is seed-deterministic, including under --jobs parallelism.
namespace guardnn::experiment {

struct ExperimentConfig {
    std::vector<std::string> networks{"mlp-tiny", "alexnet", "vgg16", "resnet50-like"};
    std::vector<workload::Mode> modes{workload::Mode::Inference, workload::Mode::Training};
    std::vector<harness::SchemeId> schemes{harness::all_schemes()};
    std::map<std::string, workload::NetworkSpec> custom; // referenced by name
    u32 writes_per_region = 1;
    u64 seed = 1;
    u32 jobs = 1;
    bool emit_traces = false;
    memprot::EngineGeometry geometry{};
    perfmodel::TimingParams timing{};
};

ExperimentConfig default_config();
// Strict JSON: unknown keys are configuration errors.
ExperimentConfig parse_config(const std::string& json_text);

const char* mode_name(workload::Mode m);

struct SweepRow {
    std::string network;
    workload::Mode mode = workload::Mode::Inference;
    harness::SchemeId scheme = harness::SchemeId::Np;
    perfmodel::CellPerf perf;
    harness::TraceSummary trace;
    bool completed = false, cert_ok = false, session_sig_ok = false, output_ok = false,
         attest_ok = false;
    u64 instructions = 0;
    std::string failure;
    bool ok() const {
        return completed && cert_ok && session_sig_ok && output_ok && attest_ok;
    }
};

struct SweepReport {
    ExperimentConfig config;
    std::vector<SweepRow> rows;
    u64 audit_violations = 0;
    bool all_ok = false;
};

SweepReport run_sweep(const ExperimentConfig& config);

std::string report_text(const SweepReport& report);
std::string report_json(const SweepReport& report);
// Per-group transaction breakdown for every row (for --emit-traces).
std::string traces_text(const SweepReport& report);

// Resolves a network name against presets and the config's custom entries.
workload::NetworkSpec resolve_network(const ExperimentConfig& config, const std::string& name);

} // namespace guardnn::experiment
