#include "guardnn/harness.hpp"

#include <algorithm>
#include <cstring>

namespace guardnn::harness {

const char* to_string(SchemeId s) {
    switch (s) {
        case SchemeId::Np: return "NP";
        case SchemeId::Bp: return "BP";
        case SchemeId::GuardNnC: return "GuardNN_C";
        case SchemeId::GuardNnCi: return "GuardNN_CI";
    }
    return "?";
}

const std::vector<SchemeId>& all_schemes() {
    static const std::vector<SchemeId> v{SchemeId::Np, SchemeId::Bp, SchemeId::GuardNnC,
                                         SchemeId::GuardNnCi};
    return v;
}

isa::HardwareKind hardware_of(SchemeId s) {
    switch (s) {
        case SchemeId::Np: return isa::HardwareKind::None;
        case SchemeId::Bp: return isa::HardwareKind::Baseline;
        default: return isa::HardwareKind::GuardNn;
    }
}

bool integrity_of(SchemeId s) {
    return s == SchemeId::Bp || s == SchemeId::GuardNnCi;
}

namespace {

Bytes digest_bytes(BytesView data) {
    auto d = crypto::sha256(data);
    return Bytes(d.begin(), d.end());
}

} // namespace

SessionDriver::SessionDriver(const workload::Dfg& dfg, SchemeId scheme,
                             const SessionOptions& opts, memprot::KeystreamAudit* audit)
    : dfg_(dfg), scheme_(scheme), opts_(opts), audit_(audit),
      rng_user_(0), rng_data_(opts.data_seed) {
    Rng root(opts_.crypto_seed);
    Rng rng_mfr = root.fork(1);
    Rng rng_dev = root.fork(2);
    rng_user_ = root.fork(3);

    mfr_ = std::make_unique<crypto::Manufacturer>(rng_mfr);
    isa::DeviceConfig dc;
    dc.kind = hardware_of(scheme_);
    dc.space_bytes = std::max<u64>(dfg_.address_space_bytes(), memprot::kChunkBytes);
    dc.geometry = opts_.geometry;
    dc.retain_trace = opts_.retain_trace;
    device_ = std::make_unique<isa::Device>(dc, mfr_->issue_device(rng_mfr), std::move(rng_dev),
                                            audit_);

    // Mirror state and pending import payloads (weights by region id, then
    // the input) — generated up front so the data stream is deterministic.
    mirror_.resize(dfg_.regions.size());
    pending_import_.resize(dfg_.regions.size());
    for (const auto& r : dfg_.regions) mirror_[r.id] = Bytes(r.size_bytes, 0);
    for (const auto& r : dfg_.regions)
        if (r.kind == workload::RegionKind::Weight) {
            mirror_[r.id] = rng_data_.bytes(r.size_bytes);
            pending_import_[r.id] = mirror_[r.id];
        }
    if (!dfg_.regions.empty()) {
        u32 in_id = dfg_.input_region;
        mirror_[in_id] = rng_data_.bytes(dfg_.region(in_id).size_bytes);
        pending_import_[in_id] = mirror_[in_id];
    }

    epochs_ = workload::feature_write_epochs(dfg_, opts_.writes_per_region);
    schedule_ = dfg_.mode == workload::Mode::Training
                    ? workload::schedule_training(dfg_, opts_.writes_per_region)
                    : workload::schedule_inference(dfg_, opts_.writes_per_region);
    build_groups();
    result_.attest_ok = true; // downgraded only when an attestation check fails
    result_.completed = true;
}

SessionDriver::~SessionDriver() = default;

void SessionDriver::build_groups() {
    i32 max_group = -1;
    for (const auto& s : schedule_) max_group = std::max(max_group, s.layer);
    groups_.resize(static_cast<size_t>(max_group + 1));
    for (const auto& s : schedule_) {
        auto& g = groups_[static_cast<size_t>(s.layer)];
        if (s.kind == workload::StepKind::ReadRegion) g.reads.push_back(s);
        if (s.kind == workload::StepKind::WriteRegion) g.writes.push_back(s);
    }
    const size_t n = dfg_.layers.size();
    for (size_t g = 0; g < groups_.size(); ++g) {
        if (g < n) {
            groups_[g].kind = dfg_.layers[g].kind;
            groups_[g].macs = dfg_.layers[g].macs;
        } else if (g == n) {
            groups_[g].kind = workload::LayerKind::Identity; // loss seed
            groups_[g].macs = dfg_.regions.empty()
                                  ? 0
                                  : dfg_.region(dfg_.layers[n - 1].output_region).logical_bytes;
        } else {
            size_t li = n - 1 - (g - n - 1);
            groups_[g].kind = dfg_.layers[li].kind;
            groups_[g].macs = 2 * dfg_.layers[li].macs; // backward ≈ 2× forward work
        }
        result_.group_macs.push_back(groups_[g].macs);
    }
    result_.group_count = groups_.size();
}

void SessionDriver::note_failure(const std::string& what) {
    result_.completed = false;
    if (result_.failure.empty()) result_.failure = what;
}

const Bytes& SessionDriver::reference(u32 region_id) const {
    if (region_id >= mirror_.size()) throw SimError("region id out of range");
    return mirror_[region_id];
}

void SessionDriver::corrupt_import(u32 region_id, size_t byte_index, u8 xor_mask) {
    auto& p = pending_import_.at(region_id);
    p.at(byte_index % p.size()) ^= xor_mask;
}

void SessionDriver::set_import_payload(u32 region_id, Bytes payload) {
    const auto& r = dfg_.region(region_id);
    if (payload.size() != r.size_bytes) throw SimError("import payload size mismatch");
    mirror_.at(region_id) = payload;
    pending_import_.at(region_id) = std::move(payload);
}

Bytes SessionDriver::seal_for_device(BytesView plain) {
    if (!chan_) throw SimError("seal before handshake");
    Bytes blob = chan_->seal(plain);
    if (audit_) audit_->record(chan_->enc_key_fingerprint(), 0, chan_->last_seal_nonce() + 1);
    return blob;
}

isa::Response SessionDriver::issue(const isa::Instruction& instr,
                                   const isa::Instruction* mirror_instr,
                                   const std::optional<Bytes>& mirror_pdigest) {
    // The user-side mirror absorbs intent at issue time; the device absorbs
    // what it actually executed. Honest runs keep the two identical.
    if (scheme_ == SchemeId::GuardNnCi && chan_) {
        if (instr.op == isa::Opcode::InitSession) {
            // handled in handshake(), which resets the mirror first
        } else {
            m_log_.extend(isa::Device::log_encoding(mirror_instr ? *mirror_instr : instr,
                                                    mirror_pdigest));
        }
    }
    ++result_.instructions;
    return device_->execute(instr);
}

isa::RegionOperand SessionDriver::operand_of(u32 region_id) const {
    const auto& r = dfg_.region(region_id);
    isa::RegionOperand op;
    op.id = r.id;
    op.kind = r.kind;
    op.base = r.base_addr;
    op.size = r.size_bytes;
    if (r.kind == workload::RegionKind::Gradient && r.paired_region) {
        op.has_paired = true;
        op.paired_base = dfg_.region(*r.paired_region).base_addr;
    }
    return op;
}

bool SessionDriver::handshake() {
    isa::Instruction get_pk;
    get_pk.op = isa::Opcode::GetPK;
    ++result_.instructions;
    auto pk_resp = device_->execute(get_pk);
    if (!pk_resp.ok || pk_resp.body.size() != crypto::kPublicKeyBytes + crypto::kSignatureBytes) {
        note_failure("GetPK failed");
        return false;
    }
    crypto::Certificate cert;
    std::copy_n(pk_resp.body.begin(), crypto::kPublicKeyBytes, cert.device_public.begin());
    std::copy_n(pk_resp.body.begin() + crypto::kPublicKeyBytes, crypto::kSignatureBytes,
                cert.manufacturer_sig.bytes.begin());
    result_.cert_ok = crypto::Manufacturer::verify_certificate(mfr_->root_public(), cert);
    if (!result_.cert_ok) note_failure("device certificate failed to verify");
    cert_pub_ = cert.device_public;

    user_eph_ = std::make_unique<crypto::EphemeralSecret>(crypto::EphemeralSecret::generate(rng_user_));
    isa::Instruction init;
    init.op = isa::Opcode::InitSession;
    init.user_public = user_eph_->public_key();
    init.want_integrity = integrity_of(scheme_);
    ++result_.instructions;
    auto resp = device_->execute(init);
    if (!resp.ok || resp.body.size() != crypto::kPublicKeyBytes + crypto::kSignatureBytes) {
        note_failure("InitSession failed");
        return false;
    }
    std::array<u8, crypto::kPublicKeyBytes> dev_pub{};
    std::copy_n(resp.body.begin(), crypto::kPublicKeyBytes, dev_pub.begin());
    crypto::Signature sig;
    std::copy_n(resp.body.begin() + crypto::kPublicKeyBytes, crypto::kSignatureBytes,
                sig.bytes.begin());
    Bytes bound;
    bound.insert(bound.end(), isa::kSessionSigContext,
                 isa::kSessionSigContext + std::strlen(isa::kSessionSigContext));
    bound.insert(bound.end(), init.user_public.begin(), init.user_public.end());
    bound.insert(bound.end(), dev_pub.begin(), dev_pub.end());
    result_.session_sig_ok = crypto::verify_sig(cert.device_public, bound, sig);
    if (!result_.session_sig_ok) note_failure("session binding signature failed");

    auto session = user_eph_->agree(BytesView(dev_pub.data(), dev_pub.size()));
    if (!session) {
        note_failure("key agreement failed");
        return false;
    }
    chan_ = std::make_unique<crypto::SecureChannel>(*session, /*device_side=*/false);

    // Mirror the device's attestation state: reset, then absorb InitSession.
    m_in_.reset();
    m_w_.reset();
    m_out_.reset();
    m_log_.reset();
    if (scheme_ == SchemeId::GuardNnCi)
        m_log_.extend(isa::Device::log_encoding(init, std::nullopt));
    return result_.cert_ok && result_.session_sig_ok;
}

bool SessionDriver::import_all() {
    if (dfg_.regions.empty()) return true;
    bool ok = true;
    for (const auto& r : dfg_.regions) {
        if (r.kind != workload::RegionKind::Weight) continue;
        isa::Instruction instr;
        instr.op = isa::Opcode::SetWeight;
        instr.region = operand_of(r.id);
        instr.payload = seal_for_device(pending_import_[r.id]);
        Bytes().swap(pending_import_[r.id]); // large nets: drop the staging copy
        if (scheme_ == SchemeId::GuardNnCi) m_w_.extend(mirror_[r.id]);
        auto resp = issue(instr, nullptr, digest_bytes(mirror_[r.id]));
        if (!resp.ok) {
            note_failure(std::string("SetWeight rejected: ") + isa::to_string(resp.reason));
            ok = false;
        }
    }
    u32 in_id = dfg_.input_region;
    isa::Instruction instr;
    instr.op = isa::Opcode::SetInput;
    instr.region = operand_of(in_id);
    instr.payload = seal_for_device(pending_import_[in_id]);
    if (scheme_ == SchemeId::GuardNnCi) m_in_.extend(mirror_[in_id]);
    auto resp = issue(instr, nullptr, digest_bytes(mirror_[in_id]));
    if (!resp.ok) {
        note_failure(std::string("SetInput rejected: ") + isa::to_string(resp.reason));
        ok = false;
    }
    return ok;
}

std::vector<isa::Instruction> SessionDriver::group_instructions(size_t g) const {
    const Group& grp = groups_.at(g);
    std::vector<isa::Instruction> out;
    // Announce read counters (deduplicated per target range).
    std::vector<std::pair<u64, u64>> announced;
    for (const auto& s : grp.reads) {
        if (!s.has_read_ctr) continue;
        const auto& r = dfg_.region(s.region);
        if (std::find(announced.begin(), announced.end(),
                      std::pair<u64, u64>{r.base_addr, s.expected_read_ctr}) != announced.end())
            continue;
        announced.push_back({r.base_addr, s.expected_read_ctr});
        isa::Instruction sc;
        sc.op = isa::Opcode::SetReadCtr;
        sc.range_base = r.base_addr;
        sc.range_size = r.size_bytes;
        sc.read_ctr = s.expected_read_ctr;
        out.push_back(std::move(sc));
    }
    isa::Instruction fw;
    fw.op = isa::Opcode::Forward;
    fw.layer_index = static_cast<u32>(g);
    fw.layer_kind = grp.kind;
    fw.macs = grp.macs;
    for (const auto& s : grp.reads) fw.reads.push_back(operand_of(s.region));
    for (const auto& s : grp.writes) fw.writes.push_back(operand_of(s.region));
    out.push_back(std::move(fw));
    return out;
}

void SessionDriver::apply_group_to_mirror(size_t g) {
    const Group& grp = groups_[g];
    std::vector<Bytes> copies;
    copies.reserve(grp.reads.size());
    for (const auto& s : grp.reads) copies.push_back(mirror_[s.region]);
    std::vector<BytesView> views;
    views.reserve(copies.size());
    for (const auto& b : copies) views.emplace_back(b.data(), b.size());
    for (size_t i = 0; i < grp.writes.size(); ++i) {
        const auto& r = dfg_.region(grp.writes[i].region);
        mirror_[r.id] =
            workload::layer_output(grp.kind, static_cast<u32>(i), views, r.size_bytes);
    }
}

bool SessionDriver::run_group(size_t g) {
    bool ok = true;
    for (const auto& instr : group_instructions(g)) {
        auto resp = issue(instr);
        if (!resp.ok) {
            note_failure("group " + std::to_string(g) + " " + isa::to_string(instr.op) +
                         " rejected: " + isa::to_string(resp.reason));
            ok = false;
        }
    }
    apply_group_to_mirror(g);
    return ok;
}

void SessionDriver::flush() {
    device_->trace().set_layer(static_cast<i32>(groups_.size()));
    device_->flush_metadata();
    device_->trace().set_layer(-1);
}

bool SessionDriver::export_region(u32 region_id, bool needs_read_ctr, u64 epoch) {
    const auto& r = dfg_.region(region_id);
    if (needs_read_ctr) {
        isa::Instruction sc;
        sc.op = isa::Opcode::SetReadCtr;
        sc.range_base = r.base_addr;
        sc.range_size = r.size_bytes;
        sc.read_ctr = epoch;
        auto resp = issue(sc);
        if (!resp.ok) {
            note_failure("export SetReadCTR rejected");
            return false;
        }
    }
    isa::Instruction ex;
    ex.op = isa::Opcode::ExportOutput;
    ex.region = operand_of(region_id);
    if (scheme_ == SchemeId::GuardNnCi) m_out_.extend(mirror_[region_id]);
    auto resp = issue(ex, nullptr, digest_bytes(mirror_[region_id]));
    if (!resp.ok) {
        note_failure(std::string("ExportOutput rejected: ") + isa::to_string(resp.reason));
        return false;
    }
    auto plain = chan_->open(resp.body);
    if (!plain) {
        note_failure("export blob failed to open");
        return false;
    }
    if (opts_.keep_exports)
        result_.exported.insert(result_.exported.end(), plain->begin(), plain->end());
    if (*plain != mirror_[region_id]) {
        note_failure("exported bytes differ from the reference");
        return false;
    }
    return true;
}

bool SessionDriver::export_and_check() {
    if (dfg_.layers.empty()) {
        result_.output_ok = true;
        return true;
    }
    bool ok = true;
    if (dfg_.mode == workload::Mode::Inference) {
        u32 out_id = dfg_.layers.back().output_region;
        ok = export_region(out_id, true, epochs_[out_id]);
    } else {
        // Training result: the updated weights.
        for (const auto& layer : dfg_.layers)
            if (layer.weight_region)
                ok = export_region(*layer.weight_region, false, 0) && ok;
    }
    result_.output_ok = ok;
    return ok;
}

bool SessionDriver::attest_and_check() {
    if (scheme_ != SchemeId::GuardNnCi) {
        result_.attest_ok = true;
        return true;
    }
    auto expect = mirror_digests();
    isa::Instruction sign;
    sign.op = isa::Opcode::SignOutput;
    auto resp = issue(sign);
    if (!resp.ok || resp.body.size() != 4 * crypto::kDigestBytes + crypto::kSignatureBytes) {
        result_.attest_ok = false;
        note_failure("SignOutput failed");
        return false;
    }
    Bytes msg;
    msg.insert(msg.end(), isa::kAttestSigContext,
               isa::kAttestSigContext + std::strlen(isa::kAttestSigContext));
    msg.insert(msg.end(), resp.body.begin(), resp.body.begin() + 4 * crypto::kDigestBytes);
    crypto::Signature sig;
    std::copy_n(resp.body.begin() + 4 * crypto::kDigestBytes, crypto::kSignatureBytes,
                sig.bytes.begin());
    bool sig_ok = crypto::verify_sig(cert_pub_, msg, sig);

    bool digests_ok = true;
    for (int i = 0; i < 4; ++i)
        digests_ok = digests_ok && std::memcmp(resp.body.data() + i * crypto::kDigestBytes,
                                               expect[i].data(), crypto::kDigestBytes) == 0;
    result_.attest_ok = sig_ok && digests_ok;
    if (!result_.attest_ok) note_failure(sig_ok ? "attestation digests diverge" : "attestation signature invalid");
    return result_.attest_ok;
}

std::array<std::array<u8, crypto::kDigestBytes>, 4> SessionDriver::mirror_digests() const {
    return {m_in_.value(), m_w_.value(), m_out_.value(), m_log_.value()};
}

SessionResult SessionDriver::run_all() {
    if (handshake() && import_all()) {
        for (size_t g = 0; g < groups_.size(); ++g)
            if (!run_group(g)) break;
        flush();
        export_and_check();
        attest_and_check();
    }
    return take_result();
}

SessionResult SessionDriver::take_result() {
    const auto& t = device_->trace();
    result_.trace.totals = t.totals();
    result_.trace.outside = t.outside();
    result_.trace.groups = t.layer_counts();
    result_.trace.groups.resize(groups_.size() + 1); // schedule groups + flush bucket
    result_.trace.digest = t.digest();
    result_.trace.count = t.count();
    result_.records = t.records();
    return std::move(result_);
}

SessionResult run_session(const workload::Dfg& dfg, SchemeId scheme, const SessionOptions& opts,
                          memprot::KeystreamAudit* audit) {
    SessionDriver driver(dfg, scheme, opts, audit);
    return driver.run_all();
}

} // namespace guardnn::harness
