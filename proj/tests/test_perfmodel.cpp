#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <guardnn/perfmodel.hpp>

using namespace guardnn;
using namespace guardnn::perfmodel;
using harness::SchemeId;
using memprot::Purpose;

namespace {

workload::NetworkSpec two_fc() {
    workload::NetworkSpec s;
    s.name = "two";
    s.element_bits = 8;
    s.input_elems = 8;
    workload::LayerSpec a;
    a.kind = workload::LayerKind::Fc;
    a.in = 8;
    a.out = 16;
    workload::LayerSpec b;
    b.kind = workload::LayerKind::Fc;
    b.in = 16;
    b.out = 4;
    s.layers = {a, b};
    return s;
}

memprot::PurposeCounts counts(u64 data_r, u64 data_w, u64 mac_r, u64 mac_w, u64 vn_r = 0,
                              u64 tree_r = 0, u64 tree_w = 0) {
    memprot::PurposeCounts c;
    c.reads[static_cast<int>(Purpose::Data)] = data_r;
    c.writes[static_cast<int>(Purpose::Data)] = data_w;
    c.reads[static_cast<int>(Purpose::Mac)] = mac_r;
    c.writes[static_cast<int>(Purpose::Mac)] = mac_w;
    c.reads[static_cast<int>(Purpose::Vn)] = vn_r;
    c.reads[static_cast<int>(Purpose::Tree)] = tree_r;
    c.writes[static_cast<int>(Purpose::Tree)] = tree_w;
    return c;
}

} // namespace

TEST_CASE("MAC-line count per region pass follows the packed-tag layout") {
    // 8-byte tags, 8 per 64-byte line: eight adjacent chunks share one line.
    CHECK(mac_lines_for_pass(0, 0, 8) == 0);
    CHECK(mac_lines_for_pass(0, 512, 8) == 1);
    CHECK(mac_lines_for_pass(0, 4096, 8) == 1);
    CHECK(mac_lines_for_pass(0, 4608, 8) == 2);
    CHECK(mac_lines_for_pass(0, 8192, 8) == 2);
    CHECK(mac_lines_for_pass(0, 65536, 8) == 16);

    // A region straddling a tag-line boundary pays for both lines.
    CHECK(mac_lines_for_pass(3584, 1024, 8) == 2);
    CHECK(mac_lines_for_pass(4096, 1024, 8) == 1);

    // Wider tags pack fewer per line.
    CHECK(mac_lines_for_pass(0, 2048, 16) == 1);
    CHECK(mac_lines_for_pass(0, 2560, 16) == 2);
    CHECK(mac_lines_for_pass(0, 4096, 64) == 8);
}

TEST_CASE("the analytic traffic oracle matches a real integrity run per group") {
    for (auto mode : {workload::Mode::Inference, workload::Mode::Training}) {
        auto dfg = workload::build_network(two_fc(), mode);
        auto oracle = ci_oracle(dfg, 1);

        harness::SessionOptions opts;
        opts.crypto_seed = 31;
        opts.data_seed = 32;
        auto r = harness::run_session(dfg, SchemeId::GuardNnCi, opts, nullptr);
        REQUIRE(r.completed);

        u64 data = 0, mac = 0;
        REQUIRE(r.trace.groups.size() == oracle.group_mac_tx.size());
        for (size_t g = 0; g < r.trace.groups.size(); ++g) {
            data += r.trace.groups[g].by(Purpose::Data);
            mac += r.trace.groups[g].by(Purpose::Mac);
            CHECK(r.trace.groups[g].by(Purpose::Mac) == oracle.group_mac_tx[g]);
        }
        CHECK(data == oracle.data_tx);
        CHECK(mac == oracle.mac_tx);
    }
}

TEST_CASE("oracle write multiplicity scales with writes per region") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    auto once = ci_oracle(dfg, 1);
    auto twice = ci_oracle(dfg, 2);
    CHECK(twice.data_tx > once.data_tx);
    CHECK(twice.mac_tx > once.mac_tx);

    harness::SessionOptions opts;
    opts.crypto_seed = 31;
    opts.data_seed = 32;
    opts.writes_per_region = 2;
    auto r = harness::run_session(dfg, SchemeId::GuardNnCi, opts, nullptr);
    REQUIRE(r.completed);
    u64 mac = 0;
    for (const auto& g : r.trace.groups) mac += g.by(Purpose::Mac);
    CHECK(mac == twice.mac_tx);
}

TEST_CASE("group cycles are the roofline max plus fill and stall penalties") {
    harness::SessionResult r;
    r.group_macs = {u64{3} * 65536, 100};
    r.trace.groups = {counts(16, 8, 1, 1), counts(0, 0, 0, 0), counts(0, 0, 0, 2)};

    TimingParams p;
    auto np = analyze(r, SchemeId::Np, p);
    REQUIRE(np.groups.size() == 3);
    CHECK(np.groups[0].compute_cycles == 3);
    CHECK(np.groups[0].memory_cycles == 26); // 26 tx x 64 B at 64 B/cycle
    CHECK(np.groups[0].stall_cycles == 0);
    CHECK(np.groups[0].cycles == 26); // no fill without protection
    CHECK(np.groups[1].cycles == 1);  // compute-only group
    CHECK(np.cycles == 26 + 1 + 2);

    auto ci = analyze(r, SchemeId::GuardNnCi, p);
    CHECK(ci.groups[0].cycles == 26 + 12); // + pipeline fill
    CHECK(ci.groups[1].cycles == 1);       // zero-traffic groups skip the fill
    CHECK(ci.groups[2].cycles == 2);       // the flush bucket never pays it
    CHECK(ci.cycles == 38 + 1 + 2);
    CHECK(ci.total_tx == 28);
    CHECK(ci.mac_tx == 4); // two in group 0, two written back at the flush

    // The tree engine stalls once per metadata read.
    harness::SessionResult rb = r;
    rb.trace.groups[0] = counts(16, 8, 1, 1, 2, 3, 1);
    auto bp = analyze(rb, SchemeId::Bp, p);
    CHECK(bp.groups[0].memory_cycles == 32);
    CHECK(bp.groups[0].stall_cycles == 6 * 12); // mac+vn+tree reads
    CHECK(bp.groups[0].cycles == 32 + 72 + 12);
    CHECK(bp.vn_tx == 2);
    CHECK(bp.tree_tx == 4);
}

TEST_CASE("a group is compute-bound when MACs outweigh transfers") {
    harness::SessionResult r;
    r.group_macs = {u64{1000} * 65536};
    r.trace.groups = {counts(16, 8, 1, 1), counts(0, 0, 0, 0)};

    auto cell = analyze(r, SchemeId::GuardNnCi, TimingParams{});
    CHECK_FALSE(cell.memory_bound);
    CHECK(cell.groups[0].cycles == 1000 + 12); // compute dominates, fill still paid

    harness::SessionResult m;
    m.group_macs = {100};
    m.trace.groups = {counts(1000, 0, 0, 0), counts(0, 0, 0, 0)};
    CHECK(analyze(m, SchemeId::GuardNnCi, TimingParams{}).memory_bound);
}

TEST_CASE("relative metrics divide by the unprotected cell") {
    CellPerf np;
    np.total_tx = 100;
    np.cycles = 1000;
    CellPerf cell;
    cell.total_tx = 150;
    cell.cycles = 1500;
    relativize(cell, np);
    CHECK(cell.traffic_increase == doctest::Approx(1.5));
    CHECK(cell.slowdown == doctest::Approx(1.5));

    CellPerf degenerate;
    relativize(degenerate, CellPerf{}); // zero NP counters leave the defaults
    CHECK(degenerate.traffic_increase == doctest::Approx(1.0));
    CHECK(degenerate.slowdown == doctest::Approx(1.0));
}

TEST_CASE("scheme ordering holds on a real cell") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    harness::SessionOptions opts;
    opts.crypto_seed = 41;
    opts.data_seed = 42;

    TimingParams p;
    std::vector<CellPerf> cells;
    for (SchemeId s : harness::all_schemes()) {
        auto r = harness::run_session(dfg, s, opts, nullptr);
        REQUIRE(r.completed);
        cells.push_back(analyze(r, s, p));
    }
    auto& np = cells[0];
    for (auto& c : cells) relativize(c, np);

    // NP <= C <= CI <= BP in both traffic and time.
    CHECK(cells[2].total_tx == np.total_tx); // confidentiality-only is free
    CHECK(cells[3].total_tx >= cells[2].total_tx);
    CHECK(cells[1].total_tx >= cells[3].total_tx);
    CHECK(cells[2].cycles >= np.cycles);
    CHECK(cells[3].cycles >= cells[2].cycles);
    CHECK(cells[1].cycles >= cells[3].cycles);
}
