#pragma once

#include <cstdint>
#include <cstddef>
#include <cstring>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace guardnn {

using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i32 = std::int32_t;
using i64 = std::int64_t;

using Bytes = std::vector<u8>;
using BytesView = std::span<const u8>;

// Fatal simulator misuse (bad config, broken invariant in an honest run).
// Device-level rejections are responses, not exceptions; see isa::Response.
struct SimError : std::runtime_error {
    explicit SimError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline void append(Bytes& out, BytesView more) {
    out.insert(out.end(), more.begin(), more.end());
}

inline void append_u64le(Bytes& out, u64 v) {
    for (int i = 0; i < 8; i++) out.push_back(static_cast<u8>(v >> (8 * i)));
}

inline void append_u32le(Bytes& out, u32 v) {
    for (int i = 0; i < 4; i++) out.push_back(static_cast<u8>(v >> (8 * i)));
}

std::string hex(BytesView data);

// Deterministic simulation randomness. mt19937_64 output is pinned by the
// standard, so the same seed reproduces byte-identical runs on any platform.
// Distributions are hand-rolled for the same reason.
class Rng {
public:
    explicit Rng(u64 seed);

    u64 next_u64();
    u32 next_u32();
    // Uniform in [0, n). n must be nonzero.
    u64 below(u64 n);
    void fill(std::span<u8> out);
    Bytes bytes(size_t n);

    // Independent child stream, stable under reordering of other draws.
    Rng fork(u64 salt) const;

private:
    std::mt19937_64 engine_;
    u64 seed_;
};

// FNV-1a, used for stable non-cryptographic keys (cell seeds, trace digests).
inline u64 fnv1a(BytesView data, u64 h = 1469598103934665603ULL) {
    for (u8 b : data) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

inline u64 fnv1a_str(std::string_view s, u64 h = 1469598103934665603ULL) {
    return fnv1a(BytesView(reinterpret_cast<const u8*>(s.data()), s.size()), h);
}

} // namespace guardnn
