#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "guardnn/attacks.hpp"
#include "guardnn/experiment.hpp"

// Acceptance gate: ten end-to-end properties of the whole stack, one printed
// pass/fail line each, exiting nonzero if any fails. Covers round-trip
// correctness, tree-less metadata traffic, traffic-ratio windows, slowdown
// ordering, fault injection, confidentiality fuzzing, trace determinism,
// attestation discrimination, keystream uniqueness, and reproducibility.

namespace {

using namespace guardnn;
using harness::SchemeId;
using memprot::Purpose;

struct Criterion {
    bool pass = false;
    std::string detail;
};

template <typename F>
Criterion guarded(F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return {false, std::string("unhandled exception: ") + e.what()};
    }
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

std::string join_faults(const std::vector<std::string>& faults, size_t keep = 3) {
    std::ostringstream os;
    os << faults.size() << " violation" << (faults.size() == 1 ? "" : "s") << ":";
    for (size_t i = 0; i < faults.size() && i < keep; ++i) os << " [" << faults[i] << "]";
    if (faults.size() > keep) os << " ...";
    return os.str();
}

const experiment::SweepRow* find_row(const experiment::SweepReport& rep, const std::string& net,
                                     workload::Mode mode, SchemeId scheme) {
    for (const auto& row : rep.rows)
        if (row.network == net && row.mode == mode && row.scheme == scheme) return &row;
    return nullptr;
}

bool same_counts(const std::vector<memprot::PurposeCounts>& a,
                 const std::vector<memprot::PurposeCounts>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        for (int p = 0; p < 4; ++p)
            if (a[i].reads[p] != b[i].reads[p] || a[i].writes[p] != b[i].writes[p]) return false;
    return true;
}

// --- 1: randomized round-trip correctness ----------------------------------

// Random little networks: fc/identity chains with occasional residual adds,
// random widths and element sizes. Shapes stay consistent by construction.
workload::NetworkSpec random_net(Rng& rng, u64 index) {
    workload::NetworkSpec spec;
    spec.name = "rand-" + std::to_string(index);
    const u32 bit_choices[3] = {6, 8, 16};
    spec.element_bits = bit_choices[rng.below(3)];
    spec.input_elems = 8ull << rng.below(5); // 8..128 elements
    u64 cur = spec.input_elems;
    std::vector<u64> produced;
    u64 depth = 1 + rng.below(3);
    for (u64 i = 0; i < depth; ++i) {
        workload::LayerSpec l;
        u64 roll = rng.below(10);
        if (roll < 6) {
            l.kind = workload::LayerKind::Fc;
            l.in = cur;
            l.out = 8ull << rng.below(5);
            cur = l.out;
        } else if (roll < 8) {
            l.kind = workload::LayerKind::Identity;
        } else {
            // A residual add needs an earlier tensor of the same element count.
            std::vector<i32> candidates;
            if (spec.input_elems == cur) candidates.push_back(-1);
            for (size_t j = 0; j < produced.size(); ++j)
                if (produced[j] == cur) candidates.push_back(static_cast<i32>(j));
            if (candidates.empty()) {
                l.kind = workload::LayerKind::Identity;
            } else {
                l.kind = workload::LayerKind::Add;
                l.extra_inputs = {candidates[rng.below(candidates.size())]};
            }
        }
        produced.push_back(cur);
        spec.layers.push_back(l);
    }
    return spec;
}

Criterion round_trip() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(0xacce5501);
    u64 total = 0, clean = 0;
    std::string first;
    for (u64 t = 0; t < 1000; ++t) {
        auto spec = random_net(rng, t);
        auto dfg = workload::build_network(spec, workload::Mode::Inference);
        u32 writes = 1 + static_cast<u32>(rng.below(2));
        for (auto s : harness::all_schemes()) {
            harness::SessionOptions opts;
            opts.writes_per_region = writes;
            opts.crypto_seed = 0x100000 + t * 8 + static_cast<u64>(s);
            opts.data_seed = 0x900000 + t;
            opts.keep_exports = false;
            memprot::KeystreamAudit audit;
            auto r = harness::run_session(dfg, s, opts, &audit);
            ++total;
            if (r.completed && r.cert_ok && r.session_sig_ok && r.output_ok && r.attest_ok &&
                audit.violations() == 0) {
                ++clean;
            } else if (first.empty()) {
                first = spec.name + "/" + harness::to_string(s) +
                        (r.failure.empty() ? " (audit violation)" : ": " + r.failure);
            }
        }
    }
    double sec = elapsed(t0);
    Criterion c;
    c.pass = clean == total && sec < 60.0;
    std::ostringstream os;
    os << clean << "/" << total
       << " randomized inference sessions exported bit-exact outputs with verified signatures in "
       << num(sec, 1) << "s";
    if (!first.empty()) os << "; first failure: " << first;
    if (sec >= 60.0) os << "; exceeded the 60s budget";
    c.detail = os.str();
    return c;
}

// --- 2: zero stored-VN / tree traffic for the tree-less engine -------------

Criterion zero_metadata(const experiment::SweepReport& rep) {
    u64 runs = 0, bad = 0;
    for (const auto& row : rep.rows) {
        if (row.scheme != SchemeId::GuardNnC && row.scheme != SchemeId::GuardNnCi) continue;
        ++runs;
        if (!row.ok() || row.trace.totals.by(Purpose::Vn) != 0 ||
            row.trace.totals.by(Purpose::Tree) != 0)
            ++bad;
    }
    Criterion c;
    c.pass = runs > 0 && bad == 0;
    c.detail = std::to_string(runs - bad) + "/" + std::to_string(runs) +
               " tree-less sweep runs issued exactly zero Vn and zero Tree transactions";
    return c;
}

// --- 3: traffic-increase windows and the analytic MAC-layout oracle --------

Criterion traffic_ratios(const experiment::SweepReport& rep) {
    std::vector<std::string> faults;
    double ci_lo = 1e9, ci_hi = 0, bp_lo = 1e9, bp_hi = 0;
    const char* nets[] = {"mlp-tiny", "vgg16"};
    for (const char* net : nets) {
        for (auto mode : rep.config.modes) {
            std::string cell = std::string(net) + "/" + experiment::mode_name(mode);
            auto* c = find_row(rep, net, mode, SchemeId::GuardNnC);
            auto* ci = find_row(rep, net, mode, SchemeId::GuardNnCi);
            auto* bp = find_row(rep, net, mode, SchemeId::Bp);
            if (!c || !ci || !bp || !c->ok() || !ci->ok() || !bp->ok()) {
                faults.push_back(cell + " rows missing or failed");
                continue;
            }
            if (c->perf.traffic_increase != 1.0)
                faults.push_back(cell + " confidentiality-only ratio " +
                                 num(c->perf.traffic_increase, 6) + " != 1.000000");
            double r = ci->perf.traffic_increase;
            ci_lo = std::min(ci_lo, r);
            ci_hi = std::max(ci_hi, r);
            if (r < 1.0156 || r > 1.032)
                faults.push_back(cell + " CI ratio " + num(r, 6) + " outside [1.0156,1.032]");
            double b = bp->perf.traffic_increase;
            bp_lo = std::min(bp_lo, b);
            bp_hi = std::max(bp_hi, b);
            if (b < 1.15 || b > 1.60)
                faults.push_back(cell + " baseline ratio " + num(b) + " outside [1.15,1.60]");
            if (b < r) faults.push_back(cell + " baseline ratio below CI ratio");

            auto dfg = workload::build_network(experiment::resolve_network(rep.config, net), mode);
            auto oracle = perfmodel::ci_oracle(dfg, rep.config.writes_per_region,
                                               rep.config.geometry.mac_width_bytes);
            if (ci->trace.groups.size() != oracle.group_mac_tx.size()) {
                faults.push_back(cell + " group count differs from the MAC-layout oracle");
            } else {
                for (size_t g = 0; g < oracle.group_mac_tx.size(); ++g) {
                    if (ci->trace.groups[g].by(Purpose::Mac) != oracle.group_mac_tx[g]) {
                        faults.push_back(cell + " group " + std::to_string(g) +
                                         " MAC traffic deviates from the oracle");
                        break;
                    }
                }
                if (ci->perf.mac_tx != oracle.mac_tx || ci->perf.data_tx != oracle.data_tx)
                    faults.push_back(cell + " traffic totals deviate from the oracle");
            }
        }
    }
    Criterion c;
    c.pass = faults.empty();
    c.detail = c.pass ? "mlp-tiny/vgg16: confidentiality-only == 1.000 exactly, CI in [" +
                            num(ci_lo) + "," + num(ci_hi) +
                            "] equal to the MAC-layout oracle per group, baseline in [" +
                            num(bp_lo, 3) + "," + num(bp_hi, 3) + "] and never below CI"
                      : join_faults(faults);
    return c;
}

// --- 4: slowdown ordering and bounds ----------------------------------------

Criterion slowdown_ordering(const experiment::SweepReport& rep) {
    std::vector<std::string> faults;
    u64 cells = 0, mem_bound = 0;
    for (const auto& net : rep.config.networks) {
        for (auto mode : rep.config.modes) {
            std::string cell = net + "/" + experiment::mode_name(mode);
            auto* np = find_row(rep, net, mode, SchemeId::Np);
            auto* c = find_row(rep, net, mode, SchemeId::GuardNnC);
            auto* ci = find_row(rep, net, mode, SchemeId::GuardNnCi);
            auto* bp = find_row(rep, net, mode, SchemeId::Bp);
            if (!np || !c || !ci || !bp || !np->ok() || !c->ok() || !ci->ok() || !bp->ok()) {
                faults.push_back(cell + " rows missing or failed");
                continue;
            }
            ++cells;
            double s_np = np->perf.slowdown, s_c = c->perf.slowdown;
            double s_ci = ci->perf.slowdown, s_bp = bp->perf.slowdown;
            if (!(s_np <= s_c && s_c <= s_ci && s_ci <= s_bp))
                faults.push_back(cell + " ordering broken: " + num(s_np) + " / " + num(s_c) +
                                 " / " + num(s_ci) + " / " + num(s_bp));
            if (ci->perf.memory_bound) {
                ++mem_bound;
                if (s_ci > 1.05)
                    faults.push_back(cell + " memory-bound CI slowdown " + num(s_ci) + " > 1.05");
            }
        }
    }

    // A wide dense convolution makes the multiplier array, not the memory
    // system, the bottleneck even with protection switched on.
    workload::NetworkSpec heavy;
    heavy.name = "conv-heavy";
    heavy.element_bits = 8;
    heavy.input_elems = 512 * 56 * 56;
    workload::LayerSpec conv;
    conv.kind = workload::LayerKind::Conv;
    conv.in_ch = 512;
    conv.out_ch = 512;
    conv.kernel = 7;
    conv.out_h = 56;
    conv.out_w = 56;
    heavy.layers = {conv};
    auto dfg = workload::build_network(heavy, workload::Mode::Inference);
    harness::SessionOptions opts;
    opts.keep_exports = false;
    opts.crypto_seed = 0x40001;
    opts.data_seed = 0x40002;
    auto np_run = harness::run_session(dfg, SchemeId::Np, opts, nullptr);
    opts.crypto_seed = 0x40003;
    memprot::KeystreamAudit audit;
    auto ci_run = harness::run_session(dfg, SchemeId::GuardNnCi, opts, &audit);
    auto np_perf = perfmodel::analyze(np_run, SchemeId::Np, rep.config.timing);
    auto ci_perf = perfmodel::analyze(ci_run, SchemeId::GuardNnCi, rep.config.timing);
    perfmodel::relativize(ci_perf, np_perf);
    if (!(np_run.completed && np_run.output_ok && ci_run.completed && ci_run.output_ok &&
          ci_run.attest_ok && audit.violations() == 0))
        faults.push_back("compute-bound cell failed to run clean");
    if (ci_perf.memory_bound) faults.push_back("constructed conv cell is not compute-bound");
    if (ci_perf.slowdown > 1.005)
        faults.push_back("compute-bound CI slowdown " + num(ci_perf.slowdown, 6) + " > 1.005");

    Criterion c;
    c.pass = faults.empty() && cells == rep.config.networks.size() * rep.config.modes.size();
    c.detail = c.pass ? "NP <= C <= CI <= BP on " + std::to_string(cells) + "/" +
                            std::to_string(cells) + " cells; CI <= 1.05 on " +
                            std::to_string(mem_bound) +
                            " memory-bound cells; compute-bound conv cell CI slowdown " +
                            num(ci_perf.slowdown, 6)
                      : join_faults(faults);
    return c;
}

// --- 5: tamper / replay / lied-counter fault injection ----------------------

Criterion fault_injection() {
    std::vector<attacks::AttackOutcome> outs;
    outs.push_back(attacks::tamper_sweep(SchemeId::GuardNnCi, 2000, 41));
    outs.push_back(attacks::tamper_sweep(SchemeId::Bp, 1200, 42));
    outs.push_back(attacks::tamper_sweep(SchemeId::GuardNnC, 600, 43));
    outs.push_back(attacks::replay_sweep(SchemeId::GuardNnCi, 300, 44));
    outs.push_back(attacks::replay_sweep(SchemeId::Bp, 400, 45));
    outs.push_back(attacks::replay_sweep(SchemeId::GuardNnC, 150, 46));
    outs.push_back(attacks::wrong_read_ctr_sweep(SchemeId::GuardNnCi, 200, 47));
    outs.push_back(attacks::wrong_read_ctr_sweep(SchemeId::Bp, 50, 48));
    outs.push_back(attacks::wrong_read_ctr_sweep(SchemeId::GuardNnC, 100, 49));

    u64 trials = 0, misses = 0, leaks = 0, crashes = 0;
    std::string first;
    bool pass = true;
    for (const auto& o : outs) {
        trials += o.trials;
        if (harness::integrity_of(o.scheme) && o.name != "wrong-read-ctr") misses += o.undetected;
        leaks += o.leaks;
        crashes += o.crashes;
        if (!o.pass) {
            pass = false;
            if (first.empty())
                first = o.name + "[" + harness::to_string(o.scheme) + "]: " + o.detail;
        }
    }
    Criterion c;
    c.pass = pass;
    std::ostringstream os;
    os << trials << " injections over ciphertext/MAC/VN/tree state and every replay "
       << "interleaving: " << misses << " integrity misses, " << leaks << " plaintext leaks, "
       << crashes << " crashes";
    if (!first.empty()) os << "; first failure: " << first;
    c.detail = os.str();
    return c;
}

// --- 6: confidentiality fuzzing ---------------------------------------------

Criterion confidentiality_fuzz() {
    auto t0 = std::chrono::steady_clock::now();
    auto o = attacks::fuzz_host(10, 10000, 51);
    double sec = elapsed(t0);
    Criterion c;
    c.pass = o.pass && o.trials >= 100000 && sec < 300.0;
    std::ostringstream os;
    os << "10 campaigns x 10000 host instructions (" << o.trials << " executed): " << o.leaks
       << " sentinel sightings, " << o.crashes << " crashes in " << num(sec, 1) << "s";
    if (!o.pass) os << "; " << o.detail;
    if (sec >= 300.0) os << "; exceeded the 300s budget";
    c.detail = os.str();
    return c;
}

// --- 7: trace determinism under independent data -----------------------------

Criterion trace_determinism(const experiment::SweepReport& rep) {
    std::vector<std::string> faults;
    u64 pairs = 0, k = 0;
    for (const auto& net : rep.config.networks) {
        auto dfg =
            workload::build_network(experiment::resolve_network(rep.config, net),
                                    workload::Mode::Inference);
        for (auto s : harness::all_schemes()) {
            std::string cell = net + "/" + harness::to_string(s);
            auto* row = find_row(rep, net, workload::Mode::Inference, s);
            if (!row || !row->ok()) {
                faults.push_back(cell + " sweep row missing or failed");
                continue;
            }
            // Same cell, fresh keys and fresh tensor data.
            harness::SessionOptions opts;
            opts.crypto_seed = 0x7000 + k * 7 + 3;
            opts.data_seed = 0x8000 + k * 13 + 5;
            opts.keep_exports = false;
            ++k;
            memprot::KeystreamAudit audit;
            auto b = harness::run_session(dfg, s, opts, &audit);
            ++pairs;
            if (!(b.completed && b.output_ok && b.attest_ok && audit.violations() == 0)) {
                faults.push_back(cell + " rerun failed: " + b.failure);
                continue;
            }
            if (b.trace.digest != row->trace.digest || b.trace.count != row->trace.count)
                faults.push_back(cell + " transaction stream differs");
            else if (!same_counts(b.trace.groups, row->trace.groups))
                faults.push_back(cell + " per-group buckets differ");
            if (perfmodel::analyze(b, s, rep.config.timing).cycles != row->perf.cycles)
                faults.push_back(cell + " cycle count differs");
        }
    }

    // Transaction-by-transaction comparison on the smallest network, both modes.
    for (auto mode : {workload::Mode::Inference, workload::Mode::Training}) {
        auto dfg = workload::build_network(workload::preset("mlp-tiny"), mode);
        harness::SessionResult runs[2];
        for (int i = 0; i < 2; ++i) {
            harness::SessionOptions opts;
            opts.mode = mode;
            opts.crypto_seed = 0xA100 + static_cast<u64>(i) * 31;
            opts.data_seed = 0xA900 + static_cast<u64>(i) * 57;
            opts.retain_trace = true;
            runs[i] = harness::run_session(dfg, SchemeId::GuardNnCi, opts, nullptr);
        }
        ++pairs;
        std::string cell = std::string("mlp-tiny/") + experiment::mode_name(mode);
        if (!runs[0].completed || !runs[1].completed)
            faults.push_back(cell + " record pair failed to run");
        if (runs[0].exported == runs[1].exported)
            faults.push_back(cell + " record pair computed identical data");
        if (runs[0].records.size() != runs[1].records.size()) {
            faults.push_back(cell + " record counts differ");
        } else {
            for (size_t i = 0; i < runs[0].records.size(); ++i) {
                const auto& x = runs[0].records[i];
                const auto& y = runs[1].records[i];
                if (x.seq != y.seq || x.purpose != y.purpose || x.addr != y.addr ||
                    x.is_write != y.is_write) {
                    faults.push_back(cell + " records diverge at transaction " +
                                     std::to_string(i));
                    break;
                }
            }
        }
    }

    Criterion c;
    c.pass = faults.empty() && pairs > 0;
    c.detail = c.pass ? std::to_string(pairs) +
                            " run pairs with independent data/weights: byte-identical "
                            "transaction traces and identical cycle counts"
                      : join_faults(faults);
    return c;
}

// --- 8: attestation discrimination ------------------------------------------

Criterion attestation_discrimination() {
    auto outs = attacks::attestation_divergence(100, 61);
    u64 trials = 0, flips = 0;
    std::string first;
    bool pass = !outs.empty();
    for (const auto& o : outs) {
        trials += o.trials;
        flips += o.detected;
        if (!o.pass) {
            pass = false;
            if (first.empty()) first = o.name + ": " + o.detail;
        }
    }
    Criterion c;
    c.pass = pass;
    std::ostringstream os;
    os << flips << "/" << trials
       << " single divergences (order / operand / weight byte / input byte) flipped "
          "verification from pass to fail";
    if (!first.empty()) os << "; first failure: " << first;
    c.detail = os.str();
    return c;
}

// --- 9: keystream uniqueness across the sweep --------------------------------

Criterion keystream_audit(const experiment::SweepReport& rep) {
    bool has_training = std::find(rep.config.modes.begin(), rep.config.modes.end(),
                                  workload::Mode::Training) != rep.config.modes.end();
    Criterion c;
    c.pass = rep.all_ok && has_training && rep.audit_violations == 0;
    c.detail = std::to_string(rep.audit_violations) +
               " duplicate counter values per key across " + std::to_string(rep.rows.size()) +
               " sweep runs including training weight updates";
    if (!rep.all_ok) c.detail += "; sweep rows not all clean";
    return c;
}

// --- 10: same-seed reproducibility -------------------------------------------

Criterion reproducibility(const experiment::SweepReport& rep) {
    auto rerun = experiment::run_sweep(rep.config);
    bool text_eq = experiment::report_text(rep) == experiment::report_text(rerun);
    bool json_eq = experiment::report_json(rep) == experiment::report_json(rerun);
    bool traces_eq = experiment::traces_text(rep) == experiment::traces_text(rerun);
    Criterion c;
    c.pass = text_eq && json_eq && traces_eq && rerun.all_ok;
    c.detail = c.pass ? "same-seed sweep rerun reproduced the text, JSON, and trace reports "
                        "byte-for-byte"
                      : std::string("mismatch:") + (text_eq ? "" : " text") +
                            (json_eq ? "" : " json") + (traces_eq ? "" : " traces") +
                            (rerun.all_ok ? "" : " rerun-not-clean");
    return c;
}

} // namespace

int main() {
    std::printf("acceptance gate: ten criteria over the default sweep and attack batteries\n");
    bool all = true;
    auto emit = [&](int idx, const Criterion& c) {
        std::printf("[%2d] %s  %s\n", idx, c.pass ? "pass" : "FAIL", c.detail.c_str());
        std::fflush(stdout);
        all = all && c.pass;
    };

    emit(1, guarded(round_trip));

    std::optional<experiment::SweepReport> rep;
    std::string sweep_err;
    try {
        rep.emplace(experiment::run_sweep(experiment::default_config()));
    } catch (const std::exception& e) {
        sweep_err = std::string("default sweep threw: ") + e.what();
    }
    auto with_sweep = [&](Criterion (*f)(const experiment::SweepReport&)) {
        return rep ? guarded([&] { return f(*rep); }) : Criterion{false, sweep_err};
    };

    emit(2, with_sweep(zero_metadata));
    emit(3, with_sweep(traffic_ratios));
    emit(4, with_sweep(slowdown_ordering));
    emit(5, guarded(fault_injection));
    emit(6, guarded(confidentiality_fuzz));
    emit(7, with_sweep(trace_determinism));
    emit(8, guarded(attestation_discrimination));
    emit(9, with_sweep(keystream_audit));
    emit(10, with_sweep(reproducibility));

    std::printf("%s\n", all ? "acceptance: all 10 criteria pass" : "acceptance: FAILURES above");
    return all ? 0 : 1;
}
