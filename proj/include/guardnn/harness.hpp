#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "guardnn/crypto.hpp"
#include "guardnn/isa.hpp"
#include "guardnn/memprot.hpp"
#include "guardnn/workload.hpp"

// Remote-user harness: drives a device through full sessions over the
// untrusted-host boundary while mirroring every computation and digest on the
// user side, so device outputs and attestations can be checked bit-for-bit.
namespace guardnn::harness {

// The four evaluated protection schemes.
enum class SchemeId : u8 { Np = 0, Bp = 1, GuardNnC = 2, GuardNnCi = 3 };
const char* to_string(SchemeId s);
const std::vector<SchemeId>& all_schemes();
isa::HardwareKind hardware_of(SchemeId s);
bool integrity_of(SchemeId s);

struct SessionOptions {
    workload::Mode mode = workload::Mode::Inference;
    u32 writes_per_region = 1;
    u64 crypto_seed = 1; // identities, session keys, nonces
    u64 data_seed = 2;   // tensor contents only
    memprot::EngineGeometry geometry{};
    bool retain_trace = false;
    bool keep_exports = true; // keep exported plaintext in the result
};

struct TraceSummary {
    memprot::PurposeCounts totals;  // everything the device ever issued
    memprot::PurposeCounts outside; // imports/exports (layer -1)
    std::vector<memprot::PurposeCounts> groups; // schedule groups + flush bucket
    u64 digest = 0;
    u64 count = 0;
};

struct SessionResult {
    bool completed = false;   // every issued instruction was accepted
    bool cert_ok = false;     // device certificate chains to the root
    bool session_sig_ok = false;
    bool output_ok = false;   // exports equal the user-side reference
    bool attest_ok = false;   // CI: signature verifies and digests mirror (true when n/a)
    std::string failure;      // first unexpected event, empty when clean

    TraceSummary trace;
    std::vector<memprot::Txn> records; // retained transactions (opt-in)
    std::vector<u64> group_macs;       // per schedule group, for the timing model
    size_t group_count = 0;
    Bytes exported; // concatenated exported plaintexts
    u64 instructions = 0;
};

// Drives one device session step by step. The honest path is
//   handshake(); import_all(); run_group(0..group_count); flush();
//   export_and_check(); attest_and_check();
// Attack scenarios interleave DRAM tampering between steps via device().
class SessionDriver {
public:
    SessionDriver(const workload::Dfg& dfg, SchemeId scheme, const SessionOptions& opts,
                  memprot::KeystreamAudit* audit);
    ~SessionDriver();

    bool handshake();
    bool import_all();
    size_t group_count() const { return groups_.size(); }
    bool run_group(size_t g);
    void flush(); // metadata write-back, accounted in its own trace bucket
    bool export_and_check();
    bool attest_and_check();

    // Everything in one call; returns the accumulated result.
    SessionResult run_all();
    SessionResult take_result();

    isa::Device& device() { return *device_; }
    const workload::Dfg& dfg() const { return dfg_; }
    SchemeId scheme() const { return scheme_; }
    // The user end of the session transport (null before the handshake).
    crypto::SecureChannel* channel() { return chan_.get(); }

    // User-side expected plaintext of a region (the mirror state).
    const Bytes& reference(u32 region_id) const;
    // Replace the pending import payload for a region (attestation-divergence
    // scenarios import tampered bytes while the mirror keeps the original).
    void corrupt_import(u32 region_id, size_t byte_index, u8 xor_mask);
    // Replace a region's import content and reference together (honest
    // payloads that embed known sentinels for leak scanning).
    void set_import_payload(u32 region_id, Bytes payload);

    // Sealed blob the device will accept next on the user→device direction.
    Bytes seal_for_device(BytesView plain);
    // Issue one instruction, tracking digests/log exactly like the honest
    // path. mirror_instr, when set, is what the user-side log absorbs instead
    // (host tampering with the plaintext instruction stream).
    isa::Response issue(const isa::Instruction& instr,
                        const isa::Instruction* mirror_instr = nullptr,
                        const std::optional<Bytes>& mirror_pdigest = std::nullopt);

    // Honest instruction sequence for one schedule group (SetReadCtr* then
    // Forward), exposed so attacks can permute or edit before issuing.
    std::vector<isa::Instruction> group_instructions(size_t g) const;
    // Advance the user-side mirror over one group (run_group does this
    // automatically; manual issuers call it themselves).
    void apply_group_to_mirror(size_t g);
    // The write epochs the schedule promises per region id.
    const std::vector<u64>& promised_epochs() const { return epochs_; }

    // User-side digest mirror values in device order (in/weight/out/log).
    std::array<std::array<u8, crypto::kDigestBytes>, 4> mirror_digests() const;

    void note_failure(const std::string& what);

private:
    struct Group {
        std::vector<workload::ScheduleStep> reads; // ReadRegion steps in order
        std::vector<workload::ScheduleStep> writes;
        workload::LayerKind kind = workload::LayerKind::Identity;
        u64 macs = 0;
    };

    void build_groups();
    isa::RegionOperand operand_of(u32 region_id) const;
    bool export_region(u32 region_id, bool needs_read_ctr, u64 epoch);

    const workload::Dfg& dfg_;
    SchemeId scheme_;
    SessionOptions opts_;
    memprot::KeystreamAudit* audit_;

    Rng rng_user_;
    Rng rng_data_;
    std::unique_ptr<crypto::Manufacturer> mfr_;
    std::unique_ptr<isa::Device> device_;
    std::unique_ptr<crypto::EphemeralSecret> user_eph_;
    std::unique_ptr<crypto::SecureChannel> chan_;
    std::array<u8, crypto::kPublicKeyBytes> cert_pub_{}; // certified signing key

    std::vector<Bytes> mirror_;  // expected plaintext per region id
    std::vector<Bytes> pending_import_; // payload to import (normally == mirror)
    std::vector<u64> epochs_;
    std::vector<Group> groups_;
    std::vector<workload::ScheduleStep> schedule_;

    crypto::Digest m_in_{crypto::Digest::Domain::InputHash};
    crypto::Digest m_w_{crypto::Digest::Domain::WeightHash};
    crypto::Digest m_out_{crypto::Digest::Domain::OutputHash};
    crypto::Digest m_log_{crypto::Digest::Domain::InstrLog};

    SessionResult result_;
};

// Honest end-to-end session.
SessionResult run_session(const workload::Dfg& dfg, SchemeId scheme, const SessionOptions& opts,
                          memprot::KeystreamAudit* audit);

} // namespace guardnn::harness
