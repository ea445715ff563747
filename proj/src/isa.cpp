#include "guardnn/isa.hpp"

#include <algorithm>
#include <cstring>

namespace guardnn::isa {

namespace {

constexpr u32 kMaxLayerIndex = 65535;
constexpr size_t kMaxOperands = 64;

void append_operand(Bytes& e, const RegionOperand& op) {
    append_u32le(e, op.id);
    e.push_back(static_cast<u8>(op.kind));
    append_u64le(e, op.base);
    append_u64le(e, op.size);
    e.push_back(op.has_paired ? 1 : 0);
    append_u64le(e, op.paired_base);
}

} // namespace

const char* to_string(HardwareKind k) {
    switch (k) {
        case HardwareKind::None: return "none";
        case HardwareKind::Baseline: return "baseline";
        case HardwareKind::GuardNn: return "guardnn";
    }
    return "?";
}

const char* to_string(Opcode op) {
    switch (op) {
        case Opcode::GetPK: return "GetPK";
        case Opcode::InitSession: return "InitSession";
        case Opcode::SetWeight: return "SetWeight";
        case Opcode::SetInput: return "SetInput";
        case Opcode::Forward: return "Forward";
        case Opcode::SetReadCtr: return "SetReadCTR";
        case Opcode::ExportOutput: return "ExportOutput";
        case Opcode::SignOutput: return "SignOutput";
    }
    return "?";
}

const char* to_string(Reject r) {
    switch (r) {
        case Reject::None: return "none";
        case Reject::NoSession: return "no-session";
        case Reject::BadOperand: return "bad-operand";
        case Reject::BadTransport: return "bad-transport";
        case Reject::MissingReadCtr: return "missing-read-ctr";
        case Reject::UnknownEpoch: return "unknown-epoch";
        case Reject::VnReuse: return "vn-reuse";
        case Reject::SessionExhausted: return "session-exhausted";
        case Reject::IntegrityFailure: return "integrity-failure";
        case Reject::Unsupported: return "unsupported";
        case Reject::BadKeyExchange: return "bad-key-exchange";
    }
    return "?";
}

const char* to_string(ProtMode m) {
    switch (m) {
        case ProtMode::Idle: return "idle";
        case ProtMode::Plain: return "plain";
        case ProtMode::ConfidentialityOnly: return "confidentiality";
        case ProtMode::ConfidentialityIntegrity: return "confidentiality+integrity";
    }
    return "?";
}

Device::Device(const DeviceConfig& cfg, crypto::DeviceIdentity identity, Rng rng,
               memprot::KeystreamAudit* audit)
    : cfg_(cfg), identity_(std::move(identity)), rng_(std::move(rng)), audit_(audit) {
    if (cfg_.space_bytes == 0 || cfg_.space_bytes % memprot::kChunkBytes != 0)
        throw ConfigError("protected space must be a nonzero multiple of 512 bytes");
    trace_.retain(cfg_.retain_trace);
}

ProtMode Device::mode() const {
    if (!active_) return ProtMode::Idle;
    if (cfg_.kind == HardwareKind::None) return ProtMode::Plain;
    return integrity_ ? ProtMode::ConfidentialityIntegrity : ProtMode::ConfidentialityOnly;
}

bool Device::attesting() const {
    return active_ && integrity_ && cfg_.kind == HardwareKind::GuardNn;
}

std::array<std::array<u8, crypto::kDigestBytes>, 4> Device::digests() const {
    return {in_digest_.value(), w_digest_.value(), out_digest_.value(), log_digest_.value()};
}

void Device::debug_set_counters(u64 in, u64 fw, u64 w) {
    ctr_in_ = in;
    ctr_fw_ = fw;
    ctr_w_ = w;
}

void Device::flush_metadata() {
    if (engine_) engine_->flush_metadata();
}

Bytes Device::log_encoding(const Instruction& instr, const std::optional<Bytes>& plain_digest) {
    Bytes e;
    e.push_back(static_cast<u8>(instr.op));
    switch (instr.op) {
        case Opcode::GetPK:
        case Opcode::SignOutput:
            break;
        case Opcode::InitSession:
            e.insert(e.end(), instr.user_public.begin(), instr.user_public.end());
            e.push_back(instr.want_integrity ? 1 : 0);
            break;
        case Opcode::SetWeight:
        case Opcode::SetInput:
        case Opcode::ExportOutput: {
            append_operand(e, instr.region);
            if (plain_digest) {
                e.insert(e.end(), plain_digest->begin(), plain_digest->end());
            } else {
                e.resize(e.size() + crypto::kDigestBytes, 0);
            }
            break;
        }
        case Opcode::Forward: {
            append_u32le(e, instr.layer_index);
            e.push_back(static_cast<u8>(instr.layer_kind));
            append_u64le(e, instr.macs);
            append_u32le(e, static_cast<u32>(instr.reads.size()));
            for (const auto& op : instr.reads) append_operand(e, op);
            append_u32le(e, static_cast<u32>(instr.writes.size()));
            for (const auto& op : instr.writes) append_operand(e, op);
            break;
        }
        case Opcode::SetReadCtr:
            append_u64le(e, instr.range_base);
            append_u64le(e, instr.range_size);
            append_u64le(e, instr.read_ctr);
            break;
    }
    return e;
}

void Device::absorb_log(const Instruction& instr, const std::optional<Bytes>& pdigest) {
    if (!attesting()) return;
    log_digest_.extend(log_encoding(instr, pdigest));
}

Response Device::reject(Reject r, const Instruction& instr, const std::optional<Bytes>& pdigest) {
    absorb_log(instr, pdigest);
    return Response{false, r, {}};
}

Response Device::accept(Bytes body, const Instruction& instr, const std::optional<Bytes>& pdigest) {
    absorb_log(instr, pdigest);
    return Response{true, Reject::None, std::move(body)};
}

bool Device::region_shape_ok(const RegionOperand& op) const {
    if (op.size == 0) return false;
    if (op.base % memprot::kChunkBytes != 0 || op.size % memprot::kChunkBytes != 0) return false;
    if (op.base >= cfg_.space_bytes || op.size > cfg_.space_bytes) return false;
    if (op.base + op.size > cfg_.space_bytes) return false;
    return true;
}

Reject Device::resolve_read_vns(const RegionOperand& op, std::vector<u64>* vns) const {
    u64 chunks = op.size / memprot::kChunkBytes;
    vns->clear();
    vns->reserve(chunks);
    using memprot::VersionNumber;
    switch (op.kind) {
        case workload::RegionKind::Feature:
        case workload::RegionKind::Gradient: {
            for (u64 c = 0; c < chunks; ++c) {
                auto it = read_ctr_.find(op.base + c * memprot::kChunkBytes);
                if (it == read_ctr_.end()) return Reject::MissingReadCtr;
                vns->push_back(VersionNumber::feature(ctr_in_, it->second).value);
            }
            return Reject::None;
        }
        case workload::RegionKind::Weight: {
            auto it = write_epoch_.find(op.base);
            if (it == write_epoch_.end()) return Reject::UnknownEpoch;
            vns->assign(chunks, VersionNumber::weight(it->second).value);
            return Reject::None;
        }
        case workload::RegionKind::Input:
            vns->assign(chunks, VersionNumber::input(ctr_in_).value);
            return Reject::None;
    }
    return Reject::BadOperand;
}

bool Device::guard_pass(const RegionOperand& op, const std::vector<u64>& vns, bool commit) {
    for (u64 c = 0; c < vns.size(); ++c) {
        u64 chunk = (op.base + c * memprot::kChunkBytes) / memprot::kChunkBytes;
        u64 key = (chunk << 2) | (vns[c] >> 62);
        auto it = vn_guard_.find(key);
        if (it != vn_guard_.end() && vns[c] <= it->second) return false;
        if (commit) vn_guard_[key] = vns[c];
    }
    return true;
}

Response Device::do_get_pk() {
    Bytes body(identity_.certificate.device_public.begin(), identity_.certificate.device_public.end());
    body.insert(body.end(), identity_.certificate.manufacturer_sig.bytes.begin(),
                identity_.certificate.manufacturer_sig.bytes.end());
    return Response{true, Reject::None, std::move(body)};
}

Response Device::do_init_session(const Instruction& instr) {
    crypto::EphemeralSecret eph = crypto::EphemeralSecret::generate(rng_);
    auto session = eph.agree(instr.user_public);
    if (!session) return reject(Reject::BadKeyExchange, instr);

    active_ = true;
    integrity_ = cfg_.kind == HardwareKind::GuardNn ? instr.want_integrity
                                                    : cfg_.kind == HardwareKind::Baseline;
    ctr_in_ = ctr_fw_ = ctr_w_ = 0;
    read_ctr_.clear();
    write_epoch_.clear();
    vn_guard_.clear();
    in_digest_.reset();
    w_digest_.reset();
    out_digest_.reset();
    log_digest_.reset();

    auto mem_key = crypto::SymmetricKey::generate(rng_, crypto::KeyRole::MemEnc);
    switch (cfg_.kind) {
        case HardwareKind::None:
            engine_ = std::make_unique<memprot::NullEngine>(mem_, trace_, cfg_.space_bytes);
            break;
        case HardwareKind::Baseline:
            engine_ = std::make_unique<memprot::BaselineEngine>(mem_, trace_, audit_, mem_key,
                                                                cfg_.space_bytes, cfg_.geometry);
            break;
        case HardwareKind::GuardNn:
            engine_ = std::make_unique<memprot::GuardNnEngine>(mem_, trace_, audit_, mem_key,
                                                               cfg_.space_bytes, cfg_.geometry,
                                                               integrity_);
            break;
    }
    chan_ = std::make_unique<crypto::SecureChannel>(*session, /*device_side=*/true);
    if (audit_) audit_->open_space(chan_->enc_key_fingerprint(), 2); // slot per direction
    trace_.set_layer(-1);

    auto dev_pub = eph.public_key();
    Bytes msg;
    msg.insert(msg.end(), kSessionSigContext, kSessionSigContext + std::strlen(kSessionSigContext));
    msg.insert(msg.end(), instr.user_public.begin(), instr.user_public.end());
    msg.insert(msg.end(), dev_pub.begin(), dev_pub.end());
    crypto::Signature sig = identity_.signing_key.sign(msg);

    Bytes body(dev_pub.begin(), dev_pub.end());
    body.insert(body.end(), sig.bytes.begin(), sig.bytes.end());
    return accept(std::move(body), instr);
}

Response Device::do_set_region(const Instruction& instr) {
    if (!active_) return reject(Reject::NoSession, instr);
    auto want_kind = instr.op == Opcode::SetWeight ? workload::RegionKind::Weight
                                                   : workload::RegionKind::Input;
    if (instr.region.kind != want_kind || !region_shape_ok(instr.region))
        return reject(Reject::BadOperand, instr);

    auto plain = chan_->open(instr.payload);
    if (!plain) return reject(Reject::BadTransport, instr);
    auto pd = crypto::sha256(*plain);
    Bytes pdigest(pd.begin(), pd.end());
    if (plain->size() != instr.region.size) return reject(Reject::BadOperand, instr, pdigest);

    using memprot::VersionNumber;
    u64 chunks = instr.region.size / memprot::kChunkBytes;
    std::vector<u64> vns;
    if (instr.op == Opcode::SetInput) {
        if (!VersionNumber::fits(ctr_in_ + 1, 0)) return reject(Reject::SessionExhausted, instr, pdigest);
        vns.assign(chunks, VersionNumber::input(ctr_in_ + 1).value);
    } else {
        if (!VersionNumber::fits(0, ctr_w_ + 1)) return reject(Reject::SessionExhausted, instr, pdigest);
        vns.assign(chunks, VersionNumber::weight(ctr_w_ + 1).value);
    }
    if (!guard_pass(instr.region, vns, false)) return reject(Reject::VnReuse, instr, pdigest);

    trace_.set_layer(-1);
    engine_->region_write(instr.region.base, *plain, vns);
    guard_pass(instr.region, vns, true);

    if (instr.op == Opcode::SetInput) {
        ++ctr_in_;
        ctr_fw_ = 0;
        write_epoch_[instr.region.base] = 0; // gradients pairing with the input use epoch 0
        if (attesting()) in_digest_.extend(*plain);
    } else {
        ++ctr_w_;
        write_epoch_[instr.region.base] = ctr_w_;
        if (attesting()) w_digest_.extend(*plain);
    }
    return accept({}, instr, pdigest);
}

Response Device::do_forward(const Instruction& instr) {
    if (!active_) return reject(Reject::NoSession, instr);
    if (instr.layer_index > kMaxLayerIndex) return reject(Reject::BadOperand, instr);
    if (instr.reads.size() > kMaxOperands || instr.writes.size() > kMaxOperands)
        return reject(Reject::BadOperand, instr);

    using memprot::VersionNumber;

    std::vector<std::vector<u64>> read_vns(instr.reads.size());
    for (size_t i = 0; i < instr.reads.size(); ++i) {
        if (!region_shape_ok(instr.reads[i])) return reject(Reject::BadOperand, instr);
        Reject r = resolve_read_vns(instr.reads[i], &read_vns[i]);
        if (r != Reject::None) return reject(r, instr);
    }

    // Plan write version numbers; features and weights advance their counters,
    // gradients reuse the epoch of the activation they pair with.
    u64 fw_next = ctr_fw_, w_next = ctr_w_;
    std::vector<std::vector<u64>> write_vns(instr.writes.size());
    std::vector<u64> write_epoch_used(instr.writes.size());
    for (size_t i = 0; i < instr.writes.size(); ++i) {
        const auto& op = instr.writes[i];
        if (!region_shape_ok(op)) return reject(Reject::BadOperand, instr);
        u64 chunks = op.size / memprot::kChunkBytes;
        switch (op.kind) {
            case workload::RegionKind::Feature:
                if (!VersionNumber::fits(ctr_in_, fw_next + 1))
                    return reject(Reject::SessionExhausted, instr);
                ++fw_next;
                write_epoch_used[i] = fw_next;
                write_vns[i].assign(chunks, VersionNumber::feature(ctr_in_, fw_next).value);
                break;
            case workload::RegionKind::Gradient: {
                if (!op.has_paired) return reject(Reject::BadOperand, instr);
                auto it = write_epoch_.find(op.paired_base);
                if (it == write_epoch_.end()) return reject(Reject::UnknownEpoch, instr);
                write_epoch_used[i] = it->second;
                write_vns[i].assign(chunks, VersionNumber::feature(ctr_in_, it->second).value);
                break;
            }
            case workload::RegionKind::Weight:
                if (!VersionNumber::fits(0, w_next + 1)) return reject(Reject::SessionExhausted, instr);
                ++w_next;
                write_epoch_used[i] = w_next;
                write_vns[i].assign(chunks, VersionNumber::weight(w_next).value);
                break;
            case workload::RegionKind::Input:
                return reject(Reject::BadOperand, instr);
        }
    }

    // Reuse guard, with intra-instruction writes overlaid so duplicates within
    // one Forward are caught too.
    {
        std::unordered_map<u64, u64> overlay;
        for (size_t i = 0; i < instr.writes.size(); ++i) {
            const auto& op = instr.writes[i];
            for (u64 c = 0; c < write_vns[i].size(); ++c) {
                u64 chunk = (op.base + c * memprot::kChunkBytes) / memprot::kChunkBytes;
                u64 key = (chunk << 2) | (write_vns[i][c] >> 62);
                u64 last = 0;
                if (auto it = vn_guard_.find(key); it != vn_guard_.end()) last = it->second;
                if (auto it = overlay.find(key); it != overlay.end()) last = std::max(last, it->second);
                if (write_vns[i][c] <= last) return reject(Reject::VnReuse, instr);
                overlay[key] = write_vns[i][c];
            }
        }
    }

    trace_.set_layer(static_cast<i32>(instr.layer_index));
    std::vector<Bytes> inputs;
    inputs.reserve(instr.reads.size());
    bool verified = true;
    for (size_t i = 0; i < instr.reads.size(); ++i) {
        auto rr = engine_->region_read(instr.reads[i].base, instr.reads[i].size, read_vns[i]);
        verified = verified && rr.verified;
        inputs.push_back(std::move(rr.plaintext));
    }
    if (integrity_ && !verified) return reject(Reject::IntegrityFailure, instr);

    std::vector<BytesView> views;
    views.reserve(inputs.size());
    for (const auto& b : inputs) views.emplace_back(b.data(), b.size());
    for (size_t i = 0; i < instr.writes.size(); ++i) {
        const auto& op = instr.writes[i];
        Bytes out = workload::layer_output(instr.layer_kind, static_cast<u32>(i), views, op.size);
        engine_->region_write(op.base, out, write_vns[i]);
        guard_pass(op, write_vns[i], true);
        write_epoch_[op.base] = write_epoch_used[i];
    }
    ctr_fw_ = fw_next;
    ctr_w_ = w_next;
    return accept({}, instr);
}

Response Device::do_set_read_ctr(const Instruction& instr) {
    if (!active_) return reject(Reject::NoSession, instr);
    if (instr.range_size == 0 || instr.range_base % memprot::kChunkBytes != 0 ||
        instr.range_size % memprot::kChunkBytes != 0 ||
        instr.range_base >= cfg_.space_bytes || instr.range_size > cfg_.space_bytes ||
        instr.range_base + instr.range_size > cfg_.space_bytes)
        return reject(Reject::BadOperand, instr);
    if (instr.read_ctr > memprot::VersionNumber::kEpochMax)
        return reject(Reject::BadOperand, instr);
    for (u64 a = instr.range_base; a < instr.range_base + instr.range_size; a += memprot::kChunkBytes)
        read_ctr_[a] = instr.read_ctr;
    return accept({}, instr);
}

Response Device::do_export(const Instruction& instr) {
    if (!active_) return reject(Reject::NoSession, instr);
    if (!region_shape_ok(instr.region)) return reject(Reject::BadOperand, instr);
    std::vector<u64> vns;
    Reject r = resolve_read_vns(instr.region, &vns);
    if (r != Reject::None) return reject(r, instr);

    trace_.set_layer(-1);
    auto rr = engine_->region_read(instr.region.base, instr.region.size, vns);
    if (integrity_ && !rr.verified) return reject(Reject::IntegrityFailure, instr);

    auto pd = crypto::sha256(rr.plaintext);
    Bytes pdigest(pd.begin(), pd.end());
    if (attesting()) out_digest_.extend(rr.plaintext);
    Bytes body = chan_->seal(rr.plaintext);
    // Channel keystream audit: slot 1 = device→user direction.
    if (audit_) audit_->record(chan_->enc_key_fingerprint(), 1, chan_->last_seal_nonce() + 1);
    return accept(std::move(body), instr, pdigest);
}

Response Device::do_sign(const Instruction& instr) {
    if (!active_) return reject(Reject::NoSession, instr);
    if (!attesting()) return reject(Reject::Unsupported, instr);
    auto d = digests();
    Bytes msg;
    msg.insert(msg.end(), kAttestSigContext, kAttestSigContext + std::strlen(kAttestSigContext));
    for (const auto& x : d) msg.insert(msg.end(), x.begin(), x.end());
    crypto::Signature sig = identity_.signing_key.sign(msg);
    Bytes body;
    for (const auto& x : d) body.insert(body.end(), x.begin(), x.end());
    body.insert(body.end(), sig.bytes.begin(), sig.bytes.end());
    return accept(std::move(body), instr);
}

Response Device::execute(const Instruction& instr) {
    ++executed_;
    switch (instr.op) {
        case Opcode::GetPK: return do_get_pk();
        case Opcode::InitSession: return do_init_session(instr);
        case Opcode::SetWeight:
        case Opcode::SetInput: return do_set_region(instr);
        case Opcode::Forward: return do_forward(instr);
        case Opcode::SetReadCtr: return do_set_read_ctr(instr);
        case Opcode::ExportOutput: return do_export(instr);
        case Opcode::SignOutput: return do_sign(instr);
    }
    return reject(Reject::Unsupported, instr);
}

} // namespace guardnn::isa
