#include "guardnn/crypto.hpp"

#include <cstring>

#include <openssl/evp.h>
#include <openssl/sha.h>

namespace guardnn::crypto {

namespace {

[[noreturn]] void ossl_fail(const char* what) {
    throw SimError(std::string("openssl failure in ") + what);
}

void put_u64be(u8* out, u64 v) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<u8>(v >> (56 - 8 * i));
}

size_t message_overhead_reserve(size_t plaintext) {
    return plaintext + kChannelOverhead;
}

} // namespace

SymmetricKey SymmetricKey::generate(Rng& rng, KeyRole role) {
    SymmetricKey k;
    k.role = role;
    rng.fill(k.bytes);
    return k;
}

u64 SymmetricKey::fingerprint() const {
    auto d = sha256(BytesView(bytes.data(), bytes.size()));
    u64 fp = 0;
    for (int i = 0; i < 8; ++i) fp = (fp << 8) | d[i];
    return fp;
}

std::array<u8, kDigestBytes> sha256(BytesView data) {
    std::array<u8, kDigestBytes> out{};
    if (!EVP_Digest(data.data(), data.size(), out.data(), nullptr, EVP_sha256(), nullptr))
        ossl_fail("EVP_Digest");
    return out;
}

SymmetricKey derive_key(const SymmetricKey& parent, std::string_view label, KeyRole role) {
    Bytes buf(label.begin(), label.end());
    buf.insert(buf.end(), parent.bytes.begin(), parent.bytes.end());
    auto d = sha256(buf);
    SymmetricKey k;
    k.role = role;
    std::copy_n(d.begin(), kSymKeyBytes, k.bytes.begin());
    return k;
}

// ---------------------------------------------------------------------------
// BlockCipher

struct BlockCipher::Impl {
    EVP_CIPHER_CTX* ctx = nullptr;
    ~Impl() {
        if (ctx) EVP_CIPHER_CTX_free(ctx);
    }
};

BlockCipher::BlockCipher(const SymmetricKey& key) : impl_(std::make_unique<Impl>()) {
    impl_->ctx = EVP_CIPHER_CTX_new();
    if (!impl_->ctx) ossl_fail("EVP_CIPHER_CTX_new");
    if (EVP_EncryptInit_ex(impl_->ctx, EVP_aes_128_ecb(), nullptr, key.bytes.data(), nullptr) != 1)
        ossl_fail("EVP_EncryptInit_ex");
    EVP_CIPHER_CTX_set_padding(impl_->ctx, 0);
}

BlockCipher::~BlockCipher() = default;
BlockCipher::BlockCipher(BlockCipher&&) noexcept = default;
BlockCipher& BlockCipher::operator=(BlockCipher&&) noexcept = default;

std::array<u8, kCipherBlockBytes> BlockCipher::keystream(u64 block_addr, u64 vn) const {
    u8 in[kCipherBlockBytes];
    put_u64be(in, block_addr);
    put_u64be(in + 8, vn);
    std::array<u8, kCipherBlockBytes> out{};
    int len = 0;
    if (EVP_EncryptUpdate(impl_->ctx, out.data(), &len, in, sizeof in) != 1 ||
        len != static_cast<int>(sizeof in))
        ossl_fail("EVP_EncryptUpdate");
    return out;
}

void BlockCipher::xor_run(u64 start_addr, u64 vn, std::span<u8> data) const {
    // Batch counter blocks so large regions cost one EVP call per 2 KiB.
    constexpr size_t kBatchBlocks = 128;
    u8 counters[kBatchBlocks * kCipherBlockBytes];
    u8 stream[kBatchBlocks * kCipherBlockBytes];

    size_t off = 0;
    while (off < data.size()) {
        size_t remain = data.size() - off;
        size_t nblocks = (remain + kCipherBlockBytes - 1) / kCipherBlockBytes;
        if (nblocks > kBatchBlocks) nblocks = kBatchBlocks;
        for (size_t b = 0; b < nblocks; ++b) {
            put_u64be(counters + b * kCipherBlockBytes,
                      start_addr + static_cast<u64>(off + b * kCipherBlockBytes));
            put_u64be(counters + b * kCipherBlockBytes + 8, vn);
        }
        int len = 0;
        int inlen = static_cast<int>(nblocks * kCipherBlockBytes);
        if (EVP_EncryptUpdate(impl_->ctx, stream, &len, counters, inlen) != 1 || len != inlen)
            ossl_fail("EVP_EncryptUpdate");
        size_t chunk = std::min(remain, nblocks * kCipherBlockBytes);
        for (size_t i = 0; i < chunk; ++i) data[off + i] ^= stream[i];
        off += chunk;
    }
}

// ---------------------------------------------------------------------------
// MacKey: HMAC-SHA256 with the two pad states kept as template contexts.

struct MacKey::Impl {
    EVP_MD_CTX* inner = nullptr;
    EVP_MD_CTX* outer = nullptr;
    ~Impl() {
        if (inner) EVP_MD_CTX_free(inner);
        if (outer) EVP_MD_CTX_free(outer);
    }
};

MacKey::MacKey(const SymmetricKey& key) : impl_(std::make_unique<Impl>()) {
    u8 pad[64];
    impl_->inner = EVP_MD_CTX_new();
    impl_->outer = EVP_MD_CTX_new();
    if (!impl_->inner || !impl_->outer) ossl_fail("EVP_MD_CTX_new");

    std::memset(pad, 0x36, sizeof pad);
    for (size_t i = 0; i < kSymKeyBytes; ++i) pad[i] ^= key.bytes[i];
    if (EVP_DigestInit_ex(impl_->inner, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(impl_->inner, pad, sizeof pad) != 1)
        ossl_fail("hmac inner init");

    std::memset(pad, 0x5c, sizeof pad);
    for (size_t i = 0; i < kSymKeyBytes; ++i) pad[i] ^= key.bytes[i];
    if (EVP_DigestInit_ex(impl_->outer, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(impl_->outer, pad, sizeof pad) != 1)
        ossl_fail("hmac outer init");
}

MacKey::~MacKey() = default;
MacKey::MacKey(MacKey&&) noexcept = default;
MacKey& MacKey::operator=(MacKey&&) noexcept = default;

namespace {

struct HmacScratch {
    EVP_MD_CTX* ctx = nullptr;
    HmacScratch() : ctx(EVP_MD_CTX_new()) {}
    ~HmacScratch() {
        if (ctx) EVP_MD_CTX_free(ctx);
    }
};

std::array<u8, kDigestBytes> hmac_full(EVP_MD_CTX* inner, EVP_MD_CTX* outer, BytesView payload) {
    HmacScratch s;
    if (!s.ctx) ossl_fail("EVP_MD_CTX_new");
    std::array<u8, kDigestBytes> ih{}, out{};
    unsigned int len = 0;
    if (EVP_MD_CTX_copy_ex(s.ctx, inner) != 1 ||
        EVP_DigestUpdate(s.ctx, payload.data(), payload.size()) != 1 ||
        EVP_DigestFinal_ex(s.ctx, ih.data(), &len) != 1)
        ossl_fail("hmac inner");
    if (EVP_MD_CTX_copy_ex(s.ctx, outer) != 1 ||
        EVP_DigestUpdate(s.ctx, ih.data(), ih.size()) != 1 ||
        EVP_DigestFinal_ex(s.ctx, out.data(), &len) != 1)
        ossl_fail("hmac outer");
    return out;
}

} // namespace

std::array<u8, 8> MacKey::tag8(BytesView payload) const {
    auto full = hmac_full(impl_->inner, impl_->outer, payload);
    std::array<u8, 8> t{};
    std::copy_n(full.begin(), 8, t.begin());
    return t;
}

Bytes MacKey::tag(BytesView payload, size_t n) const {
    if (n == 0 || n > kDigestBytes) throw SimError("mac tag width out of range");
    auto full = hmac_full(impl_->inner, impl_->outer, payload);
    return Bytes(full.begin(), full.begin() + n);
}

// ---------------------------------------------------------------------------
// Digest chain

Digest::Digest(Domain domain) : domain_(domain) {
    reset();
}

void Digest::reset() {
    state_.fill(0);
    state_[0] = static_cast<u8>(domain_);
}

void Digest::extend(BytesView item) {
    auto leaf = sha256(item);
    Bytes buf;
    buf.reserve(2 * kDigestBytes);
    buf.insert(buf.end(), state_.begin(), state_.end());
    buf.insert(buf.end(), leaf.begin(), leaf.end());
    state_ = sha256(buf);
}

// ---------------------------------------------------------------------------
// Ed25519

struct SigningKey::Impl {
    EVP_PKEY* pkey = nullptr;
    ~Impl() {
        if (pkey) EVP_PKEY_free(pkey);
    }
};

SigningKey::SigningKey() : impl_(std::make_unique<Impl>()) {}
SigningKey::~SigningKey() = default;
SigningKey::SigningKey(SigningKey&&) noexcept = default;
SigningKey& SigningKey::operator=(SigningKey&&) noexcept = default;

SigningKey SigningKey::generate(Rng& rng) {
    std::array<u8, 32> seed{};
    rng.fill(seed);
    SigningKey k;
    k.impl_->pkey =
        EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed.data(), seed.size());
    if (!k.impl_->pkey) ossl_fail("EVP_PKEY_new_raw_private_key(ed25519)");
    return k;
}

std::array<u8, kPublicKeyBytes> SigningKey::public_key() const {
    std::array<u8, kPublicKeyBytes> pub{};
    size_t len = pub.size();
    if (EVP_PKEY_get_raw_public_key(impl_->pkey, pub.data(), &len) != 1 || len != pub.size())
        ossl_fail("EVP_PKEY_get_raw_public_key");
    return pub;
}

Signature SigningKey::sign(BytesView message) const {
    HmacScratch s;
    if (!s.ctx) ossl_fail("EVP_MD_CTX_new");
    Signature sig;
    size_t len = sig.bytes.size();
    if (EVP_DigestSignInit(s.ctx, nullptr, nullptr, nullptr, impl_->pkey) != 1 ||
        EVP_DigestSign(s.ctx, sig.bytes.data(), &len, message.data(), message.size()) != 1 ||
        len != sig.bytes.size())
        ossl_fail("EVP_DigestSign");
    return sig;
}

bool verify_sig(const std::array<u8, kPublicKeyBytes>& public_key, BytesView message,
                const Signature& sig) {
    EVP_PKEY* pkey =
        EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, public_key.data(), public_key.size());
    if (!pkey) return false;
    HmacScratch s;
    bool ok = s.ctx &&
              EVP_DigestVerifyInit(s.ctx, nullptr, nullptr, nullptr, pkey) == 1 &&
              EVP_DigestVerify(s.ctx, sig.bytes.data(), sig.bytes.size(), message.data(),
                               message.size()) == 1;
    EVP_PKEY_free(pkey);
    return ok;
}

// ---------------------------------------------------------------------------
// X25519

struct EphemeralSecret::Impl {
    EVP_PKEY* pkey = nullptr;
    ~Impl() {
        if (pkey) EVP_PKEY_free(pkey);
    }
};

EphemeralSecret::EphemeralSecret() : impl_(std::make_unique<Impl>()) {}
EphemeralSecret::~EphemeralSecret() = default;
EphemeralSecret::EphemeralSecret(EphemeralSecret&&) noexcept = default;
EphemeralSecret& EphemeralSecret::operator=(EphemeralSecret&&) noexcept = default;

EphemeralSecret EphemeralSecret::generate(Rng& rng) {
    std::array<u8, 32> seed{};
    rng.fill(seed);
    EphemeralSecret e;
    e.impl_->pkey =
        EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, seed.data(), seed.size());
    if (!e.impl_->pkey) ossl_fail("EVP_PKEY_new_raw_private_key(x25519)");
    return e;
}

std::array<u8, kPublicKeyBytes> EphemeralSecret::public_key() const {
    std::array<u8, kPublicKeyBytes> pub{};
    size_t len = pub.size();
    if (EVP_PKEY_get_raw_public_key(impl_->pkey, pub.data(), &len) != 1 || len != pub.size())
        ossl_fail("EVP_PKEY_get_raw_public_key");
    return pub;
}

std::optional<SymmetricKey> EphemeralSecret::agree(BytesView peer_public) const {
    if (peer_public.size() != kPublicKeyBytes) return std::nullopt;
    EVP_PKEY* peer = EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer_public.data(),
                                                 peer_public.size());
    if (!peer) return std::nullopt;

    std::array<u8, 32> shared{};
    size_t len = shared.size();
    EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new(impl_->pkey, nullptr);
    bool ok = ctx && EVP_PKEY_derive_init(ctx) == 1 && EVP_PKEY_derive_set_peer(ctx, peer) == 1 &&
              EVP_PKEY_derive(ctx, shared.data(), &len) == 1 && len == shared.size();
    if (ctx) EVP_PKEY_CTX_free(ctx);
    EVP_PKEY_free(peer);
    // OpenSSL already rejects the all-zero shared secret from low-order
    // points; a failed derive lands here as nullopt.
    if (!ok) return std::nullopt;

    Bytes buf;
    const std::string_view label = "session.v1";
    buf.insert(buf.end(), label.begin(), label.end());
    buf.insert(buf.end(), shared.begin(), shared.end());
    auto d = sha256(buf);
    SymmetricKey k;
    k.role = KeyRole::Session;
    std::copy_n(d.begin(), kSymKeyBytes, k.bytes.begin());
    return k;
}

// ---------------------------------------------------------------------------
// Manufacturer / device identity

Manufacturer::Manufacturer(Rng& rng) : root_(SigningKey::generate(rng)) {
    root_public_ = root_.public_key();
}

DeviceIdentity Manufacturer::issue_device(Rng& rng) const {
    auto sk = SigningKey::generate(rng);
    Certificate cert;
    cert.device_public = sk.public_key();
    cert.manufacturer_sig =
        root_.sign(BytesView(cert.device_public.data(), cert.device_public.size()));
    return DeviceIdentity{std::move(sk), cert};
}

bool Manufacturer::verify_certificate(const std::array<u8, kPublicKeyBytes>& root_public,
                                      const Certificate& cert) {
    return verify_sig(root_public, BytesView(cert.device_public.data(), cert.device_public.size()),
                      cert.manufacturer_sig);
}

// ---------------------------------------------------------------------------
// SecureChannel

SecureChannel::SecureChannel(const SymmetricKey& session, bool device_side)
    : cipher_(derive_key(session, "chan.enc", KeyRole::Session)),
      mac_(derive_key(session, "chan.mac", KeyRole::Mac)),
      enc_fp_(derive_key(session, "chan.enc", KeyRole::Session).fingerprint()),
      dir_bit_(device_side ? (u64{1} << 63) : 0) {}

Bytes SecureChannel::seal(BytesView plaintext) {
    u64 nonce = dir_bit_ | send_nonce_++;
    Bytes msg;
    msg.reserve(message_overhead_reserve(plaintext.size()));
    append_u64le(msg, nonce);
    msg.insert(msg.end(), plaintext.begin(), plaintext.end());
    cipher_.xor_run(0, nonce, std::span<u8>(msg.data() + 8, plaintext.size()));
    auto t = mac_.tag8(BytesView(msg.data(), msg.size()));
    msg.insert(msg.end(), t.begin(), t.end());
    return msg;
}

std::optional<Bytes> SecureChannel::open(BytesView message) {
    if (message.size() < kChannelOverhead) return std::nullopt;
    size_t body = message.size() - 8;
    auto want = mac_.tag8(BytesView(message.data(), body));
    if (!std::equal(want.begin(), want.end(), message.data() + body)) return std::nullopt;

    u64 nonce = 0;
    for (int i = 0; i < 8; ++i) nonce |= static_cast<u64>(message[i]) << (8 * i);
    u64 peer_dir = dir_bit_ ^ (u64{1} << 63);
    if ((nonce & (u64{1} << 63)) != peer_dir) return std::nullopt;
    u64 seq = nonce & ~(u64{1} << 63);
    if (seq < recv_next_) return std::nullopt; // replayed or reordered
    recv_next_ = seq + 1;

    Bytes out(message.begin() + 8, message.begin() + body);
    cipher_.xor_run(0, nonce, out);
    return out;
}

} // namespace guardnn::crypto
