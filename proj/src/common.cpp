#include "guardnn/common.hpp"

namespace guardnn {

std::string hex(BytesView data) {
    static const char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (u8 b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

Rng::Rng(u64 seed) : engine_(seed), seed_(seed) {}

u64 Rng::next_u64() {
    return engine_();
}

u32 Rng::next_u32() {
    return static_cast<u32>(engine_() >> 32);
}

u64 Rng::below(u64 n) {
    if (n == 0) throw SimError("Rng::below(0)");
    // Rejection sampling keeps the draw unbiased and portable.
    const u64 limit = ~u64{0} - (~u64{0} % n);
    u64 v;
    do {
        v = engine_();
    } while (v >= limit);
    return v % n;
}

void Rng::fill(std::span<u8> out) {
    size_t i = 0;
    while (i < out.size()) {
        u64 v = engine_();
        for (int k = 0; k < 8 && i < out.size(); k++, i++) {
            out[i] = static_cast<u8>(v >> (8 * k));
        }
    }
}

Bytes Rng::bytes(size_t n) {
    Bytes out(n);
    fill(out);
    return out;
}

Rng Rng::fork(u64 salt) const {
    // splitmix64 of (seed, salt) so child streams do not depend on how many
    // draws the parent has made.
    u64 z = seed_ ^ (salt + 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z = z ^ (z >> 31);
    return Rng(z);
}

} // namespace guardnn
