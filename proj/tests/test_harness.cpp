#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <guardnn/harness.hpp>

using namespace guardnn;
using namespace guardnn::harness;
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

SessionOptions options() {
    SessionOptions o;
    o.crypto_seed = 11;
    o.data_seed = 12;
    return o;
}

void check_clean(const SessionResult& r) {
    CHECK(r.completed);
    CHECK(r.cert_ok);
    CHECK(r.session_sig_ok);
    CHECK(r.output_ok);
    CHECK(r.attest_ok);
    CHECK(r.failure.empty());
}

} // namespace

TEST_CASE("scheme table: hardware kinds and integrity flags") {
    CHECK(all_schemes().size() == 4);
    CHECK(hardware_of(SchemeId::Np) == isa::HardwareKind::None);
    CHECK(hardware_of(SchemeId::Bp) == isa::HardwareKind::Baseline);
    CHECK(hardware_of(SchemeId::GuardNnC) == isa::HardwareKind::GuardNn);
    CHECK(hardware_of(SchemeId::GuardNnCi) == isa::HardwareKind::GuardNn);
    CHECK_FALSE(integrity_of(SchemeId::Np));
    CHECK(integrity_of(SchemeId::Bp));
    CHECK_FALSE(integrity_of(SchemeId::GuardNnC));
    CHECK(integrity_of(SchemeId::GuardNnCi));
    CHECK(std::string(to_string(SchemeId::GuardNnCi)) == "GuardNN_CI");
}

TEST_CASE("honest inference sessions verify end to end under every scheme") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    memprot::KeystreamAudit audit;

    SessionResult np, c;
    for (SchemeId s : all_schemes()) {
        // One audit may span runs only when their session keys differ.
        auto opts = options();
        opts.crypto_seed = 11 + static_cast<u64>(s);
        auto r = run_session(dfg, s, opts, &audit);
        check_clean(r);
        CHECK(r.instructions > 0);
        CHECK_FALSE(r.exported.empty());
        CHECK(r.group_count == 2);
        CHECK(r.trace.groups.size() == 3); // two layer groups + flush bucket

        switch (s) {
            case SchemeId::Np:
                CHECK(r.trace.totals.by(Purpose::Mac) == 0);
                CHECK(r.trace.totals.by(Purpose::Vn) == 0);
                CHECK(r.trace.totals.by(Purpose::Tree) == 0);
                np = r;
                break;
            case SchemeId::GuardNnC:
                c = r;
                break;
            case SchemeId::GuardNnCi:
                CHECK(r.trace.totals.by(Purpose::Mac) > 0);
                CHECK(r.trace.totals.by(Purpose::Vn) == 0);
                CHECK(r.trace.totals.by(Purpose::Tree) == 0);
                break;
            case SchemeId::Bp:
                CHECK(r.trace.totals.by(Purpose::Mac) > 0);
                CHECK(r.trace.totals.by(Purpose::Vn) > 0);
                CHECK(r.trace.totals.by(Purpose::Tree) > 0);
                break;
        }
    }
    CHECK(audit.violations() == 0);
    CHECK(audit.records() > 0);

    // Confidentiality-only adds zero transactions over no protection at all.
    CHECK(c.trace.digest == np.trace.digest);
    CHECK(c.trace.count == np.trace.count);
    CHECK(c.exported == np.exported);
}

TEST_CASE("honest training sessions export the updated weights") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Training);
    for (SchemeId s : {SchemeId::Np, SchemeId::GuardNnCi}) {
        auto r = run_session(dfg, s, options(), nullptr);
        check_clean(r);
        CHECK(r.group_count == 5); // forward x2, loss seed, backward x2
        // Both weight regions are exported, one chunk each.
        CHECK(r.exported.size() == 1024);
    }
}

TEST_CASE("the exported output matches the user-side reference computation") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    SessionDriver driver(dfg, SchemeId::GuardNnCi, options(), nullptr);
    REQUIRE(driver.handshake());
    REQUIRE(driver.import_all());
    for (size_t g = 0; g < driver.group_count(); ++g) REQUIRE(driver.run_group(g));
    driver.flush();
    REQUIRE(driver.export_and_check());
    REQUIRE(driver.attest_and_check());

    auto r = driver.take_result();
    check_clean(r);
    u32 out_id = dfg.layers.back().output_region;
    CHECK(r.exported == driver.reference(out_id));
}

TEST_CASE("a tampered weight import flips output and attestation verdicts") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    for (SchemeId s : {SchemeId::Np, SchemeId::Bp, SchemeId::GuardNnCi}) {
        SessionDriver driver(dfg, s, options(), nullptr);
        // Wreck a 64-byte stretch of layer 0's weights - wide enough that the
        // downstream layers cannot all miss it.
        for (size_t i = 0; i < 64; ++i) driver.corrupt_import(0, i, 0xa5);
        REQUIRE(driver.handshake());
        REQUIRE(driver.import_all()); // the import itself is well-formed
        for (size_t g = 0; g < driver.group_count(); ++g) driver.run_group(g);
        driver.flush();
        CHECK_FALSE(driver.export_and_check());
        driver.attest_and_check();
        auto r = driver.take_result();
        CHECK_FALSE(r.output_ok);
        CHECK(r.attest_ok == (s != SchemeId::GuardNnCi)); // only CI can tell why
        CHECK_FALSE(r.failure.empty());
    }
}

TEST_CASE("a tampered input import is caught the same way") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    SessionDriver driver(dfg, SchemeId::GuardNnCi, options(), nullptr);
    for (size_t i = 0; i < 64; ++i) driver.corrupt_import(dfg.input_region, i, 0x5a);
    REQUIRE(driver.handshake());
    REQUIRE(driver.import_all());
    for (size_t g = 0; g < driver.group_count(); ++g) driver.run_group(g);
    driver.flush();
    driver.export_and_check();
    driver.attest_and_check();
    auto r = driver.take_result();
    CHECK_FALSE(r.output_ok);
    CHECK_FALSE(r.attest_ok);
}

TEST_CASE("host edits to the instruction stream flip only the attestation") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    SessionDriver driver(dfg, SchemeId::GuardNnCi, options(), nullptr);
    REQUIRE(driver.handshake());
    REQUIRE(driver.import_all());

    // The host forwards group 0 with a doctored MAC count: computation is
    // unchanged, but the device logs what it actually executed.
    auto instrs = driver.group_instructions(0);
    for (const auto& honest : instrs) {
        isa::Instruction actual = honest;
        if (actual.op == isa::Opcode::Forward) actual.macs += 1;
        REQUIRE(driver.issue(actual, &honest).ok);
    }
    driver.apply_group_to_mirror(0);
    for (size_t g = 1; g < driver.group_count(); ++g) REQUIRE(driver.run_group(g));
    driver.flush();
    CHECK(driver.export_and_check()); // outputs are still bit-correct
    CHECK_FALSE(driver.attest_and_check());
    auto r = driver.take_result();
    CHECK(r.output_ok);
    CHECK_FALSE(r.attest_ok);
}

TEST_CASE("identical seeds reproduce sessions bit for bit") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    for (SchemeId s : {SchemeId::Bp, SchemeId::GuardNnCi}) {
        auto a = run_session(dfg, s, options(), nullptr);
        auto b = run_session(dfg, s, options(), nullptr);
        CHECK(a.trace.digest == b.trace.digest);
        CHECK(a.trace.count == b.trace.count);
        CHECK(a.exported == b.exported);
        CHECK(a.instructions == b.instructions);
    }
}

TEST_CASE("transaction traces are independent of the tensor data") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Training);
    for (SchemeId s : {SchemeId::Bp, SchemeId::GuardNnCi}) {
        auto opts1 = options();
        auto opts2 = options();
        opts2.data_seed = 777;
        auto a = run_session(dfg, s, opts1, nullptr);
        auto b = run_session(dfg, s, opts2, nullptr);
        check_clean(a);
        check_clean(b);
        CHECK(a.trace.digest == b.trace.digest);
        CHECK(a.trace.count == b.trace.count);
        CHECK(a.exported != b.exported); // the data itself did change
    }
}

TEST_CASE("the crypto seed changes keys but not addresses or outputs") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    auto opts1 = options();
    auto opts2 = options();
    opts2.crypto_seed = 999;
    auto a = run_session(dfg, SchemeId::GuardNnCi, opts1, nullptr);
    auto b = run_session(dfg, SchemeId::GuardNnCi, opts2, nullptr);
    check_clean(a);
    check_clean(b);
    CHECK(a.exported == b.exported);
    CHECK(a.trace.digest == b.trace.digest);
}

TEST_CASE("exports can be dropped and full records retained on demand") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Inference);
    auto opts = options();
    opts.keep_exports = false;
    opts.retain_trace = true;
    auto r = run_session(dfg, SchemeId::GuardNnCi, opts, nullptr);
    check_clean(r);
    CHECK(r.exported.empty());
    CHECK(r.records.size() == r.trace.count);

    auto quiet = run_session(dfg, SchemeId::GuardNnCi, options(), nullptr);
    CHECK(quiet.records.empty());
}

TEST_CASE("per-group MAC counts drive the timing model inputs") {
    auto dfg = workload::build_network(two_fc(), workload::Mode::Training);
    auto r = run_session(dfg, SchemeId::Np, options(), nullptr);
    REQUIRE(r.group_macs.size() == 5);
    CHECK(r.group_macs[0] == dfg.layers[0].macs);
    CHECK(r.group_macs[1] == dfg.layers[1].macs);
    CHECK(r.group_macs[3] == 2 * dfg.layers[1].macs); // backward pass costs double
    CHECK(r.group_macs[4] == 2 * dfg.layers[0].macs);
}

TEST_CASE("a preset network runs clean under the attesting scheme") {
    auto dfg = workload::build_network(workload::preset("mlp-tiny"), workload::Mode::Inference);
    auto r = run_session(dfg, SchemeId::GuardNnCi, options(), nullptr);
    check_clean(r);
    CHECK(r.trace.totals.by(Purpose::Vn) == 0);
    CHECK(r.trace.totals.by(Purpose::Tree) == 0);
}
