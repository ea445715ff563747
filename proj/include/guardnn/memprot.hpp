#pragma once

#include <list>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "guardnn/common.hpp"
#include "guardnn/crypto.hpp"

// Off-chip memory protection engines over simulated DRAM:
//  - GuardNnEngine: tree-less scheme, version numbers derived from on-chip
//    counters (never stored off-chip) plus one MAC per 512-B chunk.
//  - BaselineEngine: conventional engine with per-64-B-line stored version
//    numbers, per-line MACs, a hash tree over the VN table with an on-chip
//    root, and an LRU write-back metadata cache.
//  - NullEngine: no protection, plaintext DRAM (the NP reference point).
namespace guardnn::memprot {

constexpr u64 kChunkBytes = 512;
constexpr u64 kLineBytes = 64;
constexpr u64 kBlockBytes = 16;
constexpr u64 kLinesPerChunk = kChunkBytes / kLineBytes;

// ---------------------------------------------------------------------------
// Version numbers: domain_tag(2) ∥ primary_ctr(30) ∥ epoch_ctr(32).
// The tag keeps feature/weight/input streams disjoint under one key.

struct VersionNumber {
    static constexpr u64 kPrimaryMax = (u64{1} << 30) - 1;
    static constexpr u64 kEpochMax = (u64{1} << 32) - 1;
    enum class Tag : u8 { Feature = 0, Weight = 1, Input = 2 };

    u64 value = 0;

    static bool fits(u64 primary, u64 epoch) {
        return primary <= kPrimaryMax && epoch <= kEpochMax;
    }
    static VersionNumber feature(u64 ctr_in, u64 epoch) { return make(Tag::Feature, ctr_in, epoch); }
    static VersionNumber weight(u64 ctr_w) { return make(Tag::Weight, 0, ctr_w); }
    static VersionNumber input(u64 ctr_in) { return make(Tag::Input, ctr_in, 0); }

    Tag tag() const { return static_cast<Tag>(value >> 62); }
    u64 primary() const { return (value >> 32) & kPrimaryMax; }
    u64 epoch() const { return value & kEpochMax; }
    bool operator==(const VersionNumber&) const = default;

private:
    static VersionNumber make(Tag tag, u64 primary, u64 epoch) {
        if (!fits(primary, epoch)) throw SimError("version number counter overflow");
        return VersionNumber{(static_cast<u64>(tag) << 62) | (primary << 32) | epoch};
    }
};

// Full block-cipher counter input: block address ∥ VN.
struct CounterValue {
    u64 block_addr = 0;
    u64 vn = 0;
    bool operator==(const CounterValue&) const = default;
};

// ---------------------------------------------------------------------------
// Transaction trace

enum class Purpose : u8 { Data = 0, Mac = 1, Vn = 2, Tree = 3 };
const char* to_string(Purpose p);

struct Txn {
    u64 seq = 0;
    Purpose purpose = Purpose::Data;
    u64 addr = 0;
    bool is_write = false;
};

struct PurposeCounts {
    u64 reads[4]{};
    u64 writes[4]{};

    u64 by(Purpose p) const { return reads[static_cast<int>(p)] + writes[static_cast<int>(p)]; }
    u64 total() const;
    u64 metadata_reads() const;
    PurposeCounts& operator+=(const PurposeCounts& o);
};

// Per-device transaction recorder: totals, per-layer-group buckets, and a
// rolling digest for O(1)-memory trace-equality checks. Full records are
// retained only on request.
class TraceSink {
public:
    void set_layer(i32 layer); // -1 = outside the schedule (imports/exports)
    i32 layer() const { return layer_; }
    void note(Purpose p, u64 addr, bool is_write);

    const PurposeCounts& totals() const { return totals_; }
    const PurposeCounts& outside() const { return outside_; }
    const std::vector<PurposeCounts>& layer_counts() const { return layers_; }
    u64 digest() const { return digest_; }
    u64 count() const { return seq_; }

    void retain(bool on) { retain_ = on; }
    const std::vector<Txn>& records() const { return records_; }

private:
    i32 layer_ = -1;
    u64 seq_ = 0;
    u64 digest_ = 14695981039346656037ULL;
    PurposeCounts totals_;
    PurposeCounts outside_;
    std::vector<PurposeCounts> layers_;
    bool retain_ = false;
    std::vector<Txn> records_;
};

// ---------------------------------------------------------------------------
// Keystream-uniqueness audit. Write-granule VNs are strictly monotonic per
// (key, slot) in any honest or accepted execution, so a strict-increase check
// proves the no-duplicate-CounterValue property; any non-monotonic record is
// counted as a violation (an over-approximation that can only fail loudly).

class KeystreamAudit {
public:
    // Dense per-slot tracking for one key; slot = chunk/line index for memory
    // keys, direction bit for transport keys (whose VN is the tagged nonce).
    void open_space(u64 key_fp, u64 slots);
    void record(u64 key_fp, u64 slot, u64 vn);

    u64 records() const { return records_; }
    u64 violations() const { return violations_; }

private:
    struct Space {
        std::vector<u64> last; // 0 = never used (all real VNs are nonzero)
    };
    std::unordered_map<u64, Space> spaces_;
    u64 records_ = 0;
    u64 violations_ = 0;
};

// ---------------------------------------------------------------------------
// Simulated DRAM. Every field is host-visible and tamperable by the harness;
// only the engines' on-chip state (keys, cache, tree root) is not here.

struct ProtectedMemory {
    Bytes data;           // ciphertext (plaintext under NullEngine)
    Bytes chunk_macs;     // GuardNN CI: chunks × mac_width
    std::vector<u64> line_vns; // baseline: one stored VN per 64-B line
    Bytes line_macs;      // baseline: lines × mac_width
    std::vector<Bytes> tree;   // baseline: tree level ℓ-1 → packed 8-B nodes
};

struct EngineGeometry {
    u32 mac_width_bytes = 8;
    u64 cache_capacity_bytes = 32 * 1024;
    u32 tree_arity = 8; // fixed by the 64-B line / 8-B node layout
};

struct ReadResult {
    Bytes plaintext;
    bool verified = true;
};

class ProtectionEngine {
public:
    virtual ~ProtectionEngine() = default;
    virtual bool integrity() const = 0;
    // Whole-region transfers; chunk_vns has one VN value per 512-B chunk
    // (ignored by engines that store their own VNs).
    virtual void region_write(u64 base, BytesView plaintext, std::span<const u64> chunk_vns) = 0;
    virtual ReadResult region_read(u64 base, u64 size, std::span<const u64> chunk_vns) = 0;
    // Write back dirty cached metadata and drop the cache (no-op for engines
    // without one). Needed before poking DRAM metadata from outside.
    virtual void flush_metadata() {}
};

// ---------------------------------------------------------------------------

class NullEngine final : public ProtectionEngine {
public:
    NullEngine(ProtectedMemory& mem, TraceSink& trace, u64 space_bytes);
    bool integrity() const override { return false; }
    void region_write(u64 base, BytesView plaintext, std::span<const u64> chunk_vns) override;
    ReadResult region_read(u64 base, u64 size, std::span<const u64> chunk_vns) override;

private:
    ProtectedMemory& mem_;
    TraceSink& trace_;
    u64 space_;
};

// Tree-less engine. `integrity` false = confidentiality-only (no MAC state,
// no metadata traffic at all).
class GuardNnEngine final : public ProtectionEngine {
public:
    GuardNnEngine(ProtectedMemory& mem, TraceSink& trace, KeystreamAudit* audit,
                  const crypto::SymmetricKey& mem_key, u64 space_bytes,
                  const EngineGeometry& geom, bool integrity);

    bool integrity() const override { return integrity_; }
    void region_write(u64 base, BytesView plaintext, std::span<const u64> chunk_vns) override;
    ReadResult region_read(u64 base, u64 size, std::span<const u64> chunk_vns) override;

    // Single-chunk operations (the write-combining MAC-line buffer persists
    // across calls, so sequential chunks amortize their MAC traffic).
    void write_chunk(u64 addr, BytesView plaintext512, u64 vn);
    std::pair<Bytes, bool> read_chunk(u64 addr, u64 vn);

    u64 mac_table_base() const { return mac_base_; }

private:
    void touch_mac_line(u64 chunk_index, bool is_write);

    ProtectedMemory& mem_;
    TraceSink& trace_;
    KeystreamAudit* audit_;
    crypto::BlockCipher cipher_;
    crypto::MacKey mac_;
    u64 key_fp_;
    u64 space_;
    u64 mac_base_;
    u32 mac_width_;
    bool integrity_;
    // last MAC line touched, per direction — models a one-line combining buffer
    std::optional<std::pair<u64, bool>> last_mac_line_;
};

// Conventional engine: stored per-line VNs + per-line MACs + hash tree over
// the VN table, all behind an LRU write-back metadata cache. Cached lines are
// served from the cache copy (DRAM tampering of a cached line has no effect);
// fills are verified against the parent node up to the on-chip root.
class BaselineEngine final : public ProtectionEngine {
public:
    BaselineEngine(ProtectedMemory& mem, TraceSink& trace, KeystreamAudit* audit,
                   const crypto::SymmetricKey& mem_key, u64 space_bytes,
                   const EngineGeometry& geom);

    bool integrity() const override { return true; }
    void region_write(u64 base, BytesView plaintext, std::span<const u64> chunk_vns) override;
    ReadResult region_read(u64 base, u64 size, std::span<const u64> chunk_vns) override;
    void flush_metadata() override;

    // Per-line primitives (64 B).
    void write_line(u64 addr, BytesView plaintext64);
    std::pair<Bytes, bool> read_line(u64 addr);

    // Recompute the whole ancestor chain of a data line's VN (eager update).
    void tree_update(u64 line_addr);
    // Fetch-and-verify the line's VN through the tree; trusted cached nodes
    // short-circuit the walk (warm verify costs zero transactions).
    bool tree_verify(u64 line_addr);

    size_t tree_levels() const { return tree_geom_.size(); }
    u64 vn_table_base() const { return vn_base_; }
    u64 mac_table_base() const { return mac_base_; }
    u64 tree_level_base(size_t level) const { return tree_geom_[level].base; }
    u64 tree_level_nodes(size_t level) const { return tree_geom_[level].nodes; }

private:
    struct CacheLine {
        u64 addr;
        std::array<u8, kLineBytes> bytes;
        bool dirty;
    };
    struct LevelGeom {
        u64 base = 0;
        u64 nodes = 0;
        u64 lines = 0;
    };
    enum class MetaKind : u8 { Vn, Mac, Tree };

    // Cache access to the metadata line at `addr`; fills verify (VN/tree
    // lines) against the parent. Returns the cached copy, or nullptr when a
    // fill failed verification.
    std::array<u8, kLineBytes>* fetch_meta(u64 addr, bool* ok);
    void mark_dirty(u64 addr);
    void evict_one();
    void write_back(const CacheLine& line);
    void ensure_space();

    MetaKind classify(u64 addr, size_t* tree_level = nullptr) const;
    Purpose purpose_of(u64 addr) const;
    u8* backing(u64 addr);
    // parent tree node location of a VN/tree line
    bool parent_of(u64 addr, u64* node_addr, size_t* parent_level) const;
    std::array<u8, 8> node_value(u64 level, u64 index, const u8* child_line) const;

    ProtectedMemory& mem_;
    TraceSink& trace_;
    KeystreamAudit* audit_;
    crypto::BlockCipher cipher_;
    crypto::MacKey mac_;
    u64 key_fp_;
    u64 space_;
    u64 lines_;
    u64 vn_base_, mac_base_;
    u32 mac_width_;
    std::vector<LevelGeom> tree_geom_;
    std::array<u8, 8> root_{};
    bool fault_ = false; // latched on any failed fill verification

    size_t cache_capacity_lines_;
    std::list<CacheLine> lru_; // front = most recent
    std::unordered_map<u64, std::list<CacheLine>::iterator> where_;
};

} // namespace guardnn::memprot
