#pragma once

#include <array>
#include <memory>
#include <optional>

#include "guardnn/common.hpp"

// Cryptographic primitives for the protection engines and the instruction
// set. Concrete algorithms (recorded in every report header):
//   block cipher   AES-128 (counter input = block address || version number)
//   mac            HMAC-SHA256 truncated to the configured tag width
//   hash           SHA-256, chained per domain
//   key agreement  X25519 ephemeral
//   signatures     Ed25519 (deterministic, which keeps transcripts replayable)
// All randomness is injected through Rng so whole simulations reproduce.
namespace guardnn::crypto {

constexpr size_t kSymKeyBytes = 16;
constexpr size_t kDigestBytes = 32;
constexpr size_t kPublicKeyBytes = 32;
constexpr size_t kSignatureBytes = 64;
constexpr size_t kCipherBlockBytes = 16;

enum class KeyRole { Session, MemEnc, Mac };

struct SymmetricKey {
    std::array<u8, kSymKeyBytes> bytes{};
    KeyRole role = KeyRole::Session;

    static SymmetricKey generate(Rng& rng, KeyRole role);
    // Stable 64-bit identifier for audit bookkeeping; not secret-preserving
    // in a cryptographic sense, fine for a simulator-side ledger.
    u64 fingerprint() const;
};

std::array<u8, kDigestBytes> sha256(BytesView data);

// Subkey derivation: SHA-256(label || parent)[0..16).
SymmetricKey derive_key(const SymmetricKey& parent, std::string_view label, KeyRole role);

// AES-128 keystream generator. One instance per key; the EVP context is
// cached so per-block cost stays low on multi-megabyte regions.
class BlockCipher {
public:
    explicit BlockCipher(const SymmetricKey& key);
    ~BlockCipher();
    BlockCipher(BlockCipher&&) noexcept;
    BlockCipher& operator=(BlockCipher&&) noexcept;
    BlockCipher(const BlockCipher&) = delete;
    BlockCipher& operator=(const BlockCipher&) = delete;

    // Keystream block for counter input (block_addr || vn), both big-endian.
    std::array<u8, kCipherBlockBytes> keystream(u64 block_addr, u64 vn) const;

    // XOR-encrypt/decrypt `data` in place. data.size() must be a multiple of
    // 16; block i uses counter (start_addr + 16*i, vn).
    void xor_run(u64 start_addr, u64 vn, std::span<u8> data) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// HMAC-SHA256 with precomputed pads, truncated to `n` bytes on request.
class MacKey {
public:
    explicit MacKey(const SymmetricKey& key);
    ~MacKey();
    MacKey(MacKey&&) noexcept;
    MacKey& operator=(MacKey&&) noexcept;
    MacKey(const MacKey&) = delete;
    MacKey& operator=(const MacKey&) = delete;

    std::array<u8, 8> tag8(BytesView payload) const;
    Bytes tag(BytesView payload, size_t n) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Attestation digest stream. extend() chains as
//   state = SHA256(state || SHA256(item))
// so a remote verifier can replay the stream item by item.
class Digest {
public:
    enum class Domain : u8 { InputHash = 1, WeightHash = 2, OutputHash = 3, InstrLog = 4 };

    explicit Digest(Domain domain);
    void reset();
    void extend(BytesView item);
    const std::array<u8, kDigestBytes>& value() const { return state_; }
    Domain domain() const { return domain_; }

private:
    Domain domain_;
    std::array<u8, kDigestBytes> state_{};
};

struct Signature {
    std::array<u8, kSignatureBytes> bytes{};
    bool operator==(const Signature&) const = default;
};

// Ed25519 signing key. Private material lives only inside this object.
class SigningKey {
public:
    static SigningKey generate(Rng& rng);
    ~SigningKey();
    SigningKey(SigningKey&&) noexcept;
    SigningKey& operator=(SigningKey&&) noexcept;
    SigningKey(const SigningKey&) = delete;
    SigningKey& operator=(const SigningKey&) = delete;

    std::array<u8, kPublicKeyBytes> public_key() const;
    Signature sign(BytesView message) const;

private:
    SigningKey();
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Malformed inputs return false, never throw.
bool verify_sig(const std::array<u8, kPublicKeyBytes>& public_key, BytesView message,
                const Signature& sig);

// X25519 ephemeral half of the key exchange.
class EphemeralSecret {
public:
    static EphemeralSecret generate(Rng& rng);
    ~EphemeralSecret();
    EphemeralSecret(EphemeralSecret&&) noexcept;
    EphemeralSecret& operator=(EphemeralSecret&&) noexcept;
    EphemeralSecret(const EphemeralSecret&) = delete;
    EphemeralSecret& operator=(const EphemeralSecret&) = delete;

    std::array<u8, kPublicKeyBytes> public_key() const;
    // nullopt on a degenerate peer element (low-order point, bad length).
    std::optional<SymmetricKey> agree(BytesView peer_public) const;

private:
    EphemeralSecret();
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct Certificate {
    std::array<u8, kPublicKeyBytes> device_public{};
    Signature manufacturer_sig;
};

// Per-device identity: SK_Accel plus the manufacturer-signed certificate.
struct DeviceIdentity {
    SigningKey signing_key;
    Certificate certificate;
};

// Fixture PKI root embedded in the remote-user harness.
class Manufacturer {
public:
    explicit Manufacturer(Rng& rng);

    DeviceIdentity issue_device(Rng& rng) const;
    const std::array<u8, kPublicKeyBytes>& root_public() const { return root_public_; }

    static bool verify_certificate(const std::array<u8, kPublicKeyBytes>& root_public,
                                   const Certificate& cert);

private:
    SigningKey root_;
    std::array<u8, kPublicKeyBytes> root_public_;
};

// Authenticated transport under the session key (encrypt-then-MAC).
// Message layout: nonce(8, little-endian) || ciphertext || tag(8).
// Nonces are per-direction counters; the device side sends odd direction
// bits so the two streams cannot collide under the shared key.
class SecureChannel {
public:
    SecureChannel(const SymmetricKey& session, bool device_side);

    Bytes seal(BytesView plaintext);
    // Rejects bad tags and non-monotonic nonces (transport replay).
    std::optional<Bytes> open(BytesView message);

    // Keystream counters consumed by seal(), for the uniqueness audit:
    // (block_addr = block index, vn = direction-tagged nonce).
    u64 enc_key_fingerprint() const { return enc_fp_; }
    u64 last_seal_nonce() const { return send_nonce_ - 1; }

private:
    BlockCipher cipher_;
    MacKey mac_;
    u64 enc_fp_;
    u64 dir_bit_;
    u64 send_nonce_ = 0;
    u64 recv_next_ = 0;
};

constexpr size_t kChannelOverhead = 16; // nonce + tag

} // namespace guardnn::crypto
