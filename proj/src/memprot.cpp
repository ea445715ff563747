#include "guardnn/memprot.hpp"

#include <algorithm>
#include <cstring>

namespace guardnn::memprot {

namespace {

u64 fnv_step(u64 d, u64 v) {
    for (int i = 0; i < 8; ++i) {
        d ^= (v >> (8 * i)) & 0xff;
        d *= 1099511628211ULL;
    }
    return d;
}

u64 round_up(u64 v, u64 align) { return (v + align - 1) / align * align; }

void check_region(u64 base, u64 size, u64 space) {
    if (base % kChunkBytes != 0 || size % kChunkBytes != 0)
        throw SimError("region not chunk-aligned");
    if (base + size > space || base + size < base)
        throw SimError("region outside protected space");
}

Bytes mac_payload(BytesView ct, u64 addr, u64 vn) {
    Bytes p(ct.begin(), ct.end());
    append_u64le(p, addr);
    append_u64le(p, vn);
    return p;
}

} // namespace

const char* to_string(Purpose p) {
    switch (p) {
        case Purpose::Data: return "data";
        case Purpose::Mac: return "mac";
        case Purpose::Vn: return "vn";
        case Purpose::Tree: return "tree";
    }
    return "?";
}

u64 PurposeCounts::total() const {
    u64 t = 0;
    for (int i = 0; i < 4; ++i) t += reads[i] + writes[i];
    return t;
}

u64 PurposeCounts::metadata_reads() const {
    return reads[1] + reads[2] + reads[3];
}

PurposeCounts& PurposeCounts::operator+=(const PurposeCounts& o) {
    for (int i = 0; i < 4; ++i) {
        reads[i] += o.reads[i];
        writes[i] += o.writes[i];
    }
    return *this;
}

void TraceSink::set_layer(i32 layer) {
    layer_ = layer;
    digest_ = fnv_step(digest_, 0x4C00000000000000ULL | static_cast<u32>(layer));
}

void TraceSink::note(Purpose p, u64 addr, bool is_write) {
    ++seq_;
    digest_ = fnv_step(digest_, static_cast<u64>(p) << 1 | (is_write ? 1 : 0));
    digest_ = fnv_step(digest_, addr);
    PurposeCounts& bucket = layer_ < 0 ? outside_ : (layers_.resize(std::max<size_t>(layers_.size(), static_cast<size_t>(layer_) + 1)), layers_[static_cast<size_t>(layer_)]);
    auto idx = static_cast<int>(p);
    (is_write ? bucket.writes[idx] : bucket.reads[idx])++;
    (is_write ? totals_.writes[idx] : totals_.reads[idx])++;
    if (retain_) records_.push_back(Txn{seq_, p, addr, is_write});
}

void KeystreamAudit::open_space(u64 key_fp, u64 slots) {
    auto& sp = spaces_[key_fp];
    if (sp.last.size() < slots) sp.last.resize(slots, 0);
}

void KeystreamAudit::record(u64 key_fp, u64 slot, u64 vn) {
    ++records_;
    auto& sp = spaces_[key_fp];
    if (sp.last.size() <= slot) sp.last.resize(slot + 1, 0);
    if (vn <= sp.last[slot]) ++violations_;
    sp.last[slot] = std::max(sp.last[slot], vn);
}

// ---------------------------------------------------------------------------
// NullEngine

NullEngine::NullEngine(ProtectedMemory& mem, TraceSink& trace, u64 space_bytes)
    : mem_(mem), trace_(trace), space_(space_bytes) {
    if (mem_.data.size() < space_) mem_.data.resize(space_);
}

void NullEngine::region_write(u64 base, BytesView plaintext, std::span<const u64>) {
    check_region(base, plaintext.size(), space_);
    std::memcpy(mem_.data.data() + base, plaintext.data(), plaintext.size());
    for (u64 off = 0; off < plaintext.size(); off += kLineBytes)
        trace_.note(Purpose::Data, base + off, true);
}

ReadResult NullEngine::region_read(u64 base, u64 size, std::span<const u64>) {
    check_region(base, size, space_);
    ReadResult r;
    r.plaintext.assign(mem_.data.begin() + static_cast<ptrdiff_t>(base),
                       mem_.data.begin() + static_cast<ptrdiff_t>(base + size));
    for (u64 off = 0; off < size; off += kLineBytes)
        trace_.note(Purpose::Data, base + off, false);
    return r;
}

// ---------------------------------------------------------------------------
// GuardNnEngine

GuardNnEngine::GuardNnEngine(ProtectedMemory& mem, TraceSink& trace, KeystreamAudit* audit,
                             const crypto::SymmetricKey& mem_key, u64 space_bytes,
                             const EngineGeometry& geom, bool integrity)
    : mem_(mem),
      trace_(trace),
      audit_(audit),
      cipher_(mem_key),
      mac_(crypto::derive_key(mem_key, "mem.mac", crypto::KeyRole::Mac)),
      key_fp_(mem_key.fingerprint()),
      space_(space_bytes),
      mac_base_(round_up(space_bytes, kLineBytes)),
      mac_width_(geom.mac_width_bytes),
      integrity_(integrity) {
    if (mac_width_ == 0 || mac_width_ > 32 || kLineBytes % mac_width_ != 0)
        throw ConfigError("mac width must divide the 64-byte line");
    if (mem_.data.size() < space_) mem_.data.resize(space_);
    u64 chunks = space_ / kChunkBytes;
    if (integrity_ && mem_.chunk_macs.size() < chunks * mac_width_)
        mem_.chunk_macs.resize(chunks * mac_width_);
    if (audit_) audit_->open_space(key_fp_, chunks);
}

void GuardNnEngine::touch_mac_line(u64 chunk_index, bool is_write) {
    u64 line_addr = mac_base_ + chunk_index * mac_width_ / kLineBytes * kLineBytes;
    if (last_mac_line_ && *last_mac_line_ == std::pair{line_addr, is_write}) return;
    trace_.note(Purpose::Mac, line_addr, is_write);
    last_mac_line_ = {line_addr, is_write};
}

void GuardNnEngine::write_chunk(u64 addr, BytesView plaintext512, u64 vn) {
    if (plaintext512.size() != kChunkBytes) throw SimError("chunk write must be 512 bytes");
    check_region(addr, kChunkBytes, space_);
    u64 chunk = addr / kChunkBytes;
    if (audit_) audit_->record(key_fp_, chunk, vn);
    u8* ct = mem_.data.data() + addr;
    std::memcpy(ct, plaintext512.data(), kChunkBytes);
    cipher_.xor_run(addr, vn, std::span<u8>(ct, kChunkBytes));
    for (u64 j = 0; j < kLinesPerChunk; ++j) trace_.note(Purpose::Data, addr + j * kLineBytes, true);
    if (integrity_) {
        Bytes tag = mac_.tag(mac_payload(BytesView(ct, kChunkBytes), addr, vn), mac_width_);
        std::memcpy(mem_.chunk_macs.data() + chunk * mac_width_, tag.data(), mac_width_);
        touch_mac_line(chunk, true);
    }
}

std::pair<Bytes, bool> GuardNnEngine::read_chunk(u64 addr, u64 vn) {
    check_region(addr, kChunkBytes, space_);
    u64 chunk = addr / kChunkBytes;
    for (u64 j = 0; j < kLinesPerChunk; ++j) trace_.note(Purpose::Data, addr + j * kLineBytes, false);
    const u8* ct = mem_.data.data() + addr;
    bool ok = true;
    if (integrity_) {
        touch_mac_line(chunk, false);
        Bytes tag = mac_.tag(mac_payload(BytesView(ct, kChunkBytes), addr, vn), mac_width_);
        ok = std::memcmp(tag.data(), mem_.chunk_macs.data() + chunk * mac_width_, mac_width_) == 0;
    }
    Bytes plain(ct, ct + kChunkBytes);
    cipher_.xor_run(addr, vn, std::span<u8>(plain.data(), plain.size()));
    return {std::move(plain), ok};
}

void GuardNnEngine::region_write(u64 base, BytesView plaintext, std::span<const u64> chunk_vns) {
    check_region(base, plaintext.size(), space_);
    if (chunk_vns.size() != plaintext.size() / kChunkBytes)
        throw SimError("one version number required per chunk");
    last_mac_line_.reset();
    for (u64 c = 0; c < chunk_vns.size(); ++c)
        write_chunk(base + c * kChunkBytes, plaintext.subspan(c * kChunkBytes, kChunkBytes), chunk_vns[c]);
}

ReadResult GuardNnEngine::region_read(u64 base, u64 size, std::span<const u64> chunk_vns) {
    check_region(base, size, space_);
    if (chunk_vns.size() != size / kChunkBytes)
        throw SimError("one version number required per chunk");
    last_mac_line_.reset();
    ReadResult r;
    r.plaintext.reserve(size);
    for (u64 c = 0; c < chunk_vns.size(); ++c) {
        auto [plain, ok] = read_chunk(base + c * kChunkBytes, chunk_vns[c]);
        r.verified = r.verified && ok;
        r.plaintext.insert(r.plaintext.end(), plain.begin(), plain.end());
    }
    return r;
}

// ---------------------------------------------------------------------------
// BaselineEngine

BaselineEngine::BaselineEngine(ProtectedMemory& mem, TraceSink& trace, KeystreamAudit* audit,
                               const crypto::SymmetricKey& mem_key, u64 space_bytes,
                               const EngineGeometry& geom)
    : mem_(mem),
      trace_(trace),
      audit_(audit),
      cipher_(mem_key),
      mac_(crypto::derive_key(mem_key, "mem.mac", crypto::KeyRole::Mac)),
      key_fp_(mem_key.fingerprint()),
      space_(space_bytes),
      lines_(space_bytes / kLineBytes),
      mac_width_(geom.mac_width_bytes) {
    if (geom.tree_arity != 8)
        throw ConfigError("tree arity is fixed at 8 by the 64-byte line / 8-byte node layout");
    if (mac_width_ == 0 || mac_width_ > 32 || kLineBytes % mac_width_ != 0)
        throw ConfigError("mac width must divide the 64-byte line");
    cache_capacity_lines_ = geom.cache_capacity_bytes / kLineBytes;
    if (cache_capacity_lines_ < 32)
        throw ConfigError("metadata cache must hold at least 32 lines");

    if (mem_.data.size() < space_) mem_.data.resize(space_);

    vn_base_ = round_up(space_, kLineBytes);
    u64 vn_lines = (lines_ * 8 + kLineBytes - 1) / kLineBytes;
    mac_base_ = vn_base_ + vn_lines * kLineBytes;
    u64 mac_lines = (lines_ * mac_width_ + kLineBytes - 1) / kLineBytes;
    // Tables padded out to whole 64-B lines.
    if (mem_.line_vns.size() < vn_lines * 8) mem_.line_vns.resize(vn_lines * 8, 0);
    if (mem_.line_macs.size() < mac_lines * kLineBytes) mem_.line_macs.resize(mac_lines * kLineBytes);

    // Tree level 0 has one node per VN-table line; each further level has one
    // node per line of the level below, down to a single line under the root.
    u64 next_base = mac_base_ + mac_lines * kLineBytes;
    u64 nodes = vn_lines;
    mem_.tree.clear();
    while (true) {
        LevelGeom lg;
        lg.nodes = nodes;
        lg.lines = (nodes * 8 + kLineBytes - 1) / kLineBytes;
        lg.base = next_base;
        tree_geom_.push_back(lg);
        mem_.tree.emplace_back(lg.lines * kLineBytes, u8{0});
        next_base += lg.lines * kLineBytes;
        if (lg.lines <= 1) break;
        nodes = lg.lines;
    }
    // Seed every level (and the root) consistently over the all-zero tables.
    for (size_t lv = 0; lv < tree_geom_.size(); ++lv) {
        const auto& lg = tree_geom_[lv];
        for (u64 i = 0; i < lg.nodes; ++i) {
            const u8* child = lv == 0 ? reinterpret_cast<const u8*>(mem_.line_vns.data()) + i * kLineBytes
                                      : mem_.tree[lv - 1].data() + i * kLineBytes;
            auto nv = node_value(lv, i, child);
            std::memcpy(mem_.tree[lv].data() + i * 8, nv.data(), 8);
        }
    }
    root_ = node_value(tree_geom_.size(), 0, mem_.tree.back().data());

    if (audit_) audit_->open_space(key_fp_, lines_);
}

std::array<u8, 8> BaselineEngine::node_value(u64 level, u64 index, const u8* child_line) const {
    Bytes p(child_line, child_line + kLineBytes);
    append_u64le(p, level);
    append_u64le(p, index);
    auto tag = mac_.tag8(p);
    std::array<u8, 8> out{};
    std::memcpy(out.data(), tag.data(), 8);
    return out;
}

BaselineEngine::MetaKind BaselineEngine::classify(u64 addr, size_t* tree_level) const {
    if (addr >= vn_base_ && addr < mac_base_) return MetaKind::Vn;
    if (addr >= mac_base_ && addr < tree_geom_.front().base) return MetaKind::Mac;
    for (size_t lv = 0; lv < tree_geom_.size(); ++lv) {
        const auto& lg = tree_geom_[lv];
        if (addr >= lg.base && addr < lg.base + lg.lines * kLineBytes) {
            if (tree_level) *tree_level = lv;
            return MetaKind::Tree;
        }
    }
    throw SimError("address is not metadata");
}

Purpose BaselineEngine::purpose_of(u64 addr) const {
    switch (classify(addr)) {
        case MetaKind::Vn: return Purpose::Vn;
        case MetaKind::Mac: return Purpose::Mac;
        case MetaKind::Tree: return Purpose::Tree;
    }
    return Purpose::Tree;
}

u8* BaselineEngine::backing(u64 addr) {
    size_t lv = 0;
    switch (classify(addr, &lv)) {
        case MetaKind::Vn: return reinterpret_cast<u8*>(mem_.line_vns.data()) + (addr - vn_base_);
        case MetaKind::Mac: return mem_.line_macs.data() + (addr - mac_base_);
        case MetaKind::Tree: return mem_.tree[lv].data() + (addr - tree_geom_[lv].base);
    }
    return nullptr;
}

bool BaselineEngine::parent_of(u64 addr, u64* node_addr, size_t* parent_level) const {
    size_t lv = 0;
    MetaKind k = classify(addr, &lv);
    if (k == MetaKind::Mac) return false;
    u64 line_index;
    size_t plevel;
    if (k == MetaKind::Vn) {
        line_index = (addr - vn_base_) / kLineBytes;
        plevel = 0;
    } else {
        if (lv + 1 >= tree_geom_.size()) return false; // top line, covered by the root
        line_index = (addr - tree_geom_[lv].base) / kLineBytes;
        plevel = lv + 1;
    }
    *node_addr = tree_geom_[plevel].base + line_index * 8;
    *parent_level = plevel;
    return true;
}

void BaselineEngine::ensure_space() {
    while (lru_.size() >= cache_capacity_lines_) evict_one();
}

void BaselineEngine::evict_one() {
    CacheLine victim = lru_.back();
    where_.erase(victim.addr);
    lru_.pop_back();
    if (victim.dirty) write_back(victim);
}

// Parent nodes are kept current in cache at every modification (see
// tree_update), so eviction is a plain copy-out with no recursive fetches.
void BaselineEngine::write_back(const CacheLine& line) {
    trace_.note(purpose_of(line.addr), line.addr, true);
    std::memcpy(backing(line.addr), line.bytes.data(), kLineBytes);
}

void BaselineEngine::mark_dirty(u64 addr) {
    auto it = where_.find(addr);
    if (it != where_.end()) it->second->dirty = true;
}

std::array<u8, kLineBytes>* BaselineEngine::fetch_meta(u64 addr, bool* ok) {
    auto it = where_.find(addr);
    if (it != where_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second);
        if (fault_ && ok) *ok = false;
        return &it->second->bytes; // hit: served from the trusted cache copy
    }
    trace_.note(purpose_of(addr), addr, false);
    CacheLine cl{addr, {}, false};
    std::memcpy(cl.bytes.data(), backing(addr), kLineBytes);

    // Verify the fill: VN and tree lines must match their parent node (walk
    // continues recursively until a cached line or the on-chip root).
    size_t lv = 0;
    if (classify(addr, &lv) != MetaKind::Mac) {
        u64 node_addr;
        size_t plevel;
        if (!parent_of(addr, &node_addr, &plevel)) {
            if (node_value(tree_geom_.size(), 0, cl.bytes.data()) != root_) fault_ = true;
        } else {
            u64 index = (node_addr - tree_geom_[plevel].base) / 8;
            auto expect = node_value(plevel, index, cl.bytes.data());
            bool pok = true;
            auto* pline = fetch_meta(node_addr / kLineBytes * kLineBytes, &pok);
            if (!pok || std::memcmp(pline->data() + node_addr % kLineBytes, expect.data(), 8) != 0)
                fault_ = true;
        }
    }
    if (fault_ && ok) *ok = false;
    ensure_space();
    lru_.push_front(cl);
    where_[addr] = lru_.begin();
    return &lru_.front().bytes;
}

void BaselineEngine::write_line(u64 addr, BytesView plaintext64) {
    if (plaintext64.size() != kLineBytes) throw SimError("line write must be 64 bytes");
    if (addr % kLineBytes != 0 || addr + kLineBytes > space_) throw SimError("line outside protected space");
    u64 line = addr / kLineBytes;
    u64 vn_line_addr = vn_base_ + line / 8 * kLineBytes;
    bool ok = true;
    auto* vl = fetch_meta(vn_line_addr, &ok);
    u64 vn;
    std::memcpy(&vn, vl->data() + line % 8 * 8, 8);
    vn = (vn + 1) & ((u64{1} << 56) - 1);
    std::memcpy(vl->data() + line % 8 * 8, &vn, 8);
    mark_dirty(vn_line_addr);
    tree_update(addr); // keep ancestor nodes current so write-back needs no fixup
    if (audit_) audit_->record(key_fp_, line, vn);

    u8* ct = mem_.data.data() + addr;
    std::memcpy(ct, plaintext64.data(), kLineBytes);
    cipher_.xor_run(addr, vn, std::span<u8>(ct, kLineBytes));
    trace_.note(Purpose::Data, addr, true);

    Bytes tag = mac_.tag(mac_payload(BytesView(ct, kLineBytes), addr, vn), mac_width_);
    u64 tag_addr = mac_base_ + line * mac_width_;
    u64 mac_line_addr = tag_addr / kLineBytes * kLineBytes;
    auto* ml = fetch_meta(mac_line_addr, &ok);
    std::memcpy(ml->data() + tag_addr % kLineBytes, tag.data(), mac_width_);
    mark_dirty(mac_line_addr);
}

std::pair<Bytes, bool> BaselineEngine::read_line(u64 addr) {
    if (addr % kLineBytes != 0 || addr + kLineBytes > space_) throw SimError("line outside protected space");
    u64 line = addr / kLineBytes;
    bool ok = true;
    auto* vl = fetch_meta(vn_base_ + line / 8 * kLineBytes, &ok);
    u64 vn;
    std::memcpy(&vn, vl->data() + line % 8 * 8, 8);

    trace_.note(Purpose::Data, addr, false);
    const u8* ct = mem_.data.data() + addr;

    u64 tag_addr = mac_base_ + line * mac_width_;
    auto* ml = fetch_meta(tag_addr / kLineBytes * kLineBytes, &ok);
    Bytes tag = mac_.tag(mac_payload(BytesView(ct, kLineBytes), addr, vn), mac_width_);
    if (std::memcmp(ml->data() + tag_addr % kLineBytes, tag.data(), mac_width_) != 0) ok = false;

    Bytes plain(ct, ct + kLineBytes);
    cipher_.xor_run(addr, vn, std::span<u8>(plain.data(), plain.size()));
    return {std::move(plain), ok};
}

void BaselineEngine::region_write(u64 base, BytesView plaintext, std::span<const u64>) {
    check_region(base, plaintext.size(), space_);
    for (u64 off = 0; off < plaintext.size(); off += kLineBytes)
        write_line(base + off, plaintext.subspan(off, kLineBytes));
}

ReadResult BaselineEngine::region_read(u64 base, u64 size, std::span<const u64>) {
    check_region(base, size, space_);
    ReadResult r;
    r.plaintext.reserve(size);
    for (u64 off = 0; off < size; off += kLineBytes) {
        auto [plain, ok] = read_line(base + off);
        r.verified = r.verified && ok;
        r.plaintext.insert(r.plaintext.end(), plain.begin(), plain.end());
    }
    return r;
}

void BaselineEngine::tree_update(u64 line_addr) {
    u64 line = line_addr / kLineBytes;
    bool ok = true;
    u64 cur = vn_base_ + line / 8 * kLineBytes;
    while (true) {
        auto* bytes = fetch_meta(cur, &ok);
        u64 node_addr;
        size_t plevel;
        if (!parent_of(cur, &node_addr, &plevel)) {
            root_ = node_value(tree_geom_.size(), 0, bytes->data());
            return;
        }
        u64 index = (node_addr - tree_geom_[plevel].base) / 8;
        auto nv = node_value(plevel, index, bytes->data());
        u64 parent_line = node_addr / kLineBytes * kLineBytes;
        auto* pl = fetch_meta(parent_line, &ok);
        std::memcpy(pl->data() + node_addr % kLineBytes, nv.data(), 8);
        mark_dirty(parent_line);
        cur = parent_line;
    }
}

bool BaselineEngine::tree_verify(u64 line_addr) {
    u64 line = line_addr / kLineBytes;
    bool ok = true;
    fetch_meta(vn_base_ + line / 8 * kLineBytes, &ok);
    return ok;
}

void BaselineEngine::flush_metadata() {
    std::vector<u64> dirty;
    for (const auto& cl : lru_)
        if (cl.dirty) dirty.push_back(cl.addr);
    std::sort(dirty.begin(), dirty.end());
    for (u64 addr : dirty) {
        auto it = where_.find(addr);
        it->second->dirty = false;
        write_back(*it->second);
    }
    // Writeback-and-invalidate: later reads re-fill (and re-verify) from DRAM.
    lru_.clear();
    where_.clear();
}

} // namespace guardnn::memprot
