#pragma once

#include <array>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "guardnn/common.hpp"
#include "guardnn/crypto.hpp"
#include "guardnn/memprot.hpp"
#include "guardnn/workload.hpp"

// Accelerator-side instruction set and device state machine. Instructions
// arrive from the (untrusted) host in the clear; bulk payloads are sealed
// end-to-end between the remote user and the device. Every operand is
// attacker-choosable — the device validates, never trusts.
namespace guardnn::isa {

enum class HardwareKind : u8 { None = 0, Baseline = 1, GuardNn = 2 };
const char* to_string(HardwareKind k);

enum class Opcode : u8 {
    GetPK = 1,
    InitSession = 2,
    SetWeight = 3,
    SetInput = 4,
    Forward = 5,
    SetReadCtr = 6,
    ExportOutput = 7,
    SignOutput = 8,
};
const char* to_string(Opcode op);

enum class Reject : u8 {
    None = 0,
    NoSession,       // operation requires an active session
    BadOperand,      // alignment/bounds/kind/limits violated
    BadTransport,    // sealed payload failed authentication or ordering
    MissingReadCtr,  // a feature/gradient chunk has no announced read counter
    UnknownEpoch,    // weight read or gradient pairing with no recorded write
    VnReuse,         // write would repeat a (chunk, domain) version number
    SessionExhausted,// an on-chip counter would overflow its field
    IntegrityFailure,// MAC or tree verification failed
    Unsupported,     // opcode not available on this device/mode
    BadKeyExchange,  // degenerate ephemeral public key
};
const char* to_string(Reject r);

struct RegionOperand {
    u32 id = 0; // caller bookkeeping only; carries no authority
    workload::RegionKind kind = workload::RegionKind::Feature;
    u64 base = 0;
    u64 size = 0;
    u64 paired_base = 0; // gradient writes: the activation this gradient pairs with
    bool has_paired = false;
};

struct Instruction {
    Opcode op = Opcode::GetPK;
    // InitSession
    std::array<u8, crypto::kPublicKeyBytes> user_public{};
    bool want_integrity = true;
    // SetWeight / SetInput / ExportOutput
    RegionOperand region;
    Bytes payload; // sealed user→device blob (imports only)
    // Forward
    u32 layer_index = 0;
    workload::LayerKind layer_kind = workload::LayerKind::Fc;
    u64 macs = 0;
    std::vector<RegionOperand> reads;
    std::vector<RegionOperand> writes;
    // SetReadCtr
    u64 range_base = 0;
    u64 range_size = 0;
    u64 read_ctr = 0;
};

struct Response {
    bool ok = false;
    Reject reason = Reject::None;
    Bytes body;
};

enum class ProtMode : u8 { Idle, Plain, ConfidentialityOnly, ConfidentialityIntegrity };
const char* to_string(ProtMode m);

struct DeviceConfig {
    HardwareKind kind = HardwareKind::GuardNn;
    u64 space_bytes = 0;
    memprot::EngineGeometry geometry{};
    bool retain_trace = false;
};

// Context strings signed by the device key.
inline constexpr const char* kSessionSigContext = "session-bind.v1";
inline constexpr const char* kAttestSigContext = "attest.v1";

class Device {
public:
    Device(const DeviceConfig& cfg, crypto::DeviceIdentity identity, Rng rng,
           memprot::KeystreamAudit* audit);

    Response execute(const Instruction& instr);

    // Host-visible surface: DRAM (tamperable) and an explicit metadata-cache
    // flush (the host can always force write-backs).
    memprot::ProtectedMemory& dram() { return mem_; }
    void flush_metadata();
    memprot::ProtectionEngine* engine() { return engine_.get(); }

    memprot::TraceSink& trace() { return trace_; }
    const memprot::TraceSink& trace() const { return trace_; }

    ProtMode mode() const;
    bool session_active() const { return active_; }
    u64 ctr_in() const { return ctr_in_; }
    u64 ctr_fw() const { return ctr_fw_; }
    u64 ctr_w() const { return ctr_w_; }
    u64 instructions_executed() const { return executed_; }
    u64 space_bytes() const { return cfg_.space_bytes; }
    const DeviceConfig& config() const { return cfg_; }

    // in(0), weight(1), output(2), instruction-log(3) digests (attesting mode)
    std::array<std::array<u8, crypto::kDigestBytes>, 4> digests() const;

    // Canonical byte encoding absorbed into the instruction-log digest; the
    // remote user mirrors it verbatim. Bulk payloads contribute the digest of
    // their plaintext (zeros when the transport layer rejected the blob).
    static Bytes log_encoding(const Instruction& instr, const std::optional<Bytes>& plain_digest);

    // Test hook: force counter values to probe overflow handling.
    void debug_set_counters(u64 in, u64 fw, u64 w);

private:
    Response reject(Reject r, const Instruction& instr, const std::optional<Bytes>& pdigest = std::nullopt);
    Response accept(Bytes body, const Instruction& instr, const std::optional<Bytes>& pdigest = std::nullopt);
    void absorb_log(const Instruction& instr, const std::optional<Bytes>& pdigest);

    Response do_get_pk();
    Response do_init_session(const Instruction& instr);
    Response do_set_region(const Instruction& instr); // SetWeight + SetInput
    Response do_forward(const Instruction& instr);
    Response do_set_read_ctr(const Instruction& instr);
    Response do_export(const Instruction& instr);
    Response do_sign(const Instruction& instr);

    bool region_shape_ok(const RegionOperand& op) const;
    // Per-chunk VNs for reading `op` under current counters; Reject::None on success.
    Reject resolve_read_vns(const RegionOperand& op, std::vector<u64>* vns) const;
    // Monotonicity guard over (chunk, domain); commits only when `commit`.
    bool guard_pass(const RegionOperand& op, const std::vector<u64>& vns, bool commit);

    bool attesting() const;

    DeviceConfig cfg_;
    crypto::DeviceIdentity identity_;
    Rng rng_;
    memprot::KeystreamAudit* audit_;
    memprot::ProtectedMemory mem_;
    memprot::TraceSink trace_;

    bool active_ = false;
    bool integrity_ = false;
    std::unique_ptr<memprot::ProtectionEngine> engine_;
    std::unique_ptr<crypto::SecureChannel> chan_;
    u64 ctr_in_ = 0, ctr_fw_ = 0, ctr_w_ = 0;
    std::unordered_map<u64, u64> read_ctr_;    // chunk base → announced epoch
    std::unordered_map<u64, u64> write_epoch_; // region base → epoch at last write
    std::unordered_map<u64, u64> vn_guard_;    // (chunk index << 2) | tag → last VN
    crypto::Digest in_digest_{crypto::Digest::Domain::InputHash};
    crypto::Digest w_digest_{crypto::Digest::Domain::WeightHash};
    crypto::Digest out_digest_{crypto::Digest::Domain::OutputHash};
    crypto::Digest log_digest_{crypto::Digest::Domain::InstrLog};
    u64 executed_ = 0;
};

} // namespace guardnn::isa
