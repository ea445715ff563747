#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <openssl/hmac.h>

#include "guardnn/crypto.hpp"

using namespace guardnn;
using namespace guardnn::crypto;

namespace {

SymmetricKey key_from_bytes(std::initializer_list<u8> b, KeyRole role) {
    SymmetricKey k;
    k.role = role;
    std::copy(b.begin(), b.end(), k.bytes.begin());
    return k;
}

std::string hexstr(BytesView b) {
    static const char* d = "0123456789abcdef";
    std::string out;
    for (u8 c : b) {
        out.push_back(d[c >> 4]);
        out.push_back(d[c & 15]);
    }
    return out;
}

} // namespace

TEST_CASE("keystream matches the AES-128 reference vector") {
    // FIPS-197 appendix C.1: key 000102...0f, block 00112233445566778899aabbccddeeff.
    auto key = key_from_bytes({0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a,
                               0x0b, 0x0c, 0x0d, 0x0e, 0x0f},
                              KeyRole::MemEnc);
    BlockCipher c(key);
    auto ks = c.keystream(0x0011223344556677ULL, 0x8899aabbccddeeffULL);
    CHECK(hexstr(BytesView(ks.data(), ks.size())) == "69c4e0d86a7b0430d8cdb78070b4c55a");
}

TEST_CASE("keystream is deterministic and counter-separated") {
    Rng rng(1);
    auto key = SymmetricKey::generate(rng, KeyRole::MemEnc);
    BlockCipher c(key);
    CHECK(c.keystream(64, 7) == c.keystream(64, 7));
    CHECK(c.keystream(64, 7) != c.keystream(64, 8));
    CHECK(c.keystream(64, 7) != c.keystream(80, 7));
}

TEST_CASE("xor_run round-trips and advances the block address") {
    Rng rng(2);
    auto key = SymmetricKey::generate(rng, KeyRole::MemEnc);
    BlockCipher c(key);
    Bytes plain = rng.bytes(64);
    Bytes buf = plain;
    c.xor_run(1024, 5, std::span<u8>(buf.data(), buf.size()));
    CHECK(buf != plain);

    // Block i of the run uses counter (1024 + 16 i, vn).
    for (int i = 0; i < 4; ++i) {
        auto ks = c.keystream(1024 + 16 * i, 5);
        for (int j = 0; j < 16; ++j) CHECK((buf[16 * i + j] ^ ks[j]) == plain[16 * i + j]);
    }
    c.xor_run(1024, 5, std::span<u8>(buf.data(), buf.size()));
    CHECK(buf == plain);
}

TEST_CASE("mac tags are deterministic and truncate HMAC-SHA256") {
    Rng rng(3);
    auto key = SymmetricKey::generate(rng, KeyRole::Mac);
    MacKey mk(key);
    Bytes payload = rng.bytes(133);

    auto t1 = mk.tag8(payload);
    auto t2 = mk.tag8(payload);
    CHECK(t1 == t2);

    unsigned char full[32];
    unsigned int full_len = 0;
    HMAC(EVP_sha256(), key.bytes.data(), static_cast<int>(key.bytes.size()), payload.data(),
         payload.size(), full, &full_len);
    REQUIRE(full_len == 32);
    CHECK(std::memcmp(t1.data(), full, 8) == 0);
    CHECK(mk.tag(payload, 4) == Bytes(full, full + 4));
    CHECK(mk.tag(payload, 16) == Bytes(full, full + 16));
}

TEST_CASE("single-bit payload flips always change the tag") {
    Rng rng(4);
    auto key = SymmetricKey::generate(rng, KeyRole::Mac);
    MacKey mk(key);
    for (int trial = 0; trial < 1000; ++trial) {
        Bytes payload = rng.bytes(1 + rng.below(96));
        auto base = mk.tag8(payload);
        size_t bit = rng.below(payload.size() * 8);
        payload[bit / 8] ^= static_cast<u8>(1u << (bit % 8));
        CHECK(mk.tag8(payload) != base);
    }
}

TEST_CASE("empty payload has a defined tag") {
    Rng rng(5);
    MacKey mk(SymmetricKey::generate(rng, KeyRole::Mac));
    auto t = mk.tag8({});
    CHECK(t == mk.tag8({}));
}

TEST_CASE("sha256 matches the reference vector") {
    auto d = sha256(to_bytes("abc"));
    CHECK(hexstr(BytesView(d.data(), d.size())) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("digest stream chains and separates domains") {
    Digest a(Digest::Domain::InputHash);
    Digest b(Digest::Domain::InputHash);
    Digest c(Digest::Domain::WeightHash);

    a.extend(to_bytes("one"));
    a.extend(to_bytes("two"));
    b.extend(to_bytes("one"));
    CHECK(a.value() != b.value());
    b.extend(to_bytes("two"));
    CHECK(a.value() == b.value());

    c.extend(to_bytes("one"));
    c.extend(to_bytes("two"));
    CHECK(a.value() != c.value()); // same items, different domain

    // Chaining is order-sensitive.
    Digest d(Digest::Domain::InputHash);
    d.extend(to_bytes("two"));
    d.extend(to_bytes("one"));
    CHECK(a.value() != d.value());

    a.reset();
    b.reset();
    CHECK(a.value() == b.value());
}

TEST_CASE("derive_key separates labels and parents") {
    Rng rng(6);
    auto parent = SymmetricKey::generate(rng, KeyRole::Session);
    auto k1 = derive_key(parent, "enc", KeyRole::MemEnc);
    auto k2 = derive_key(parent, "enc", KeyRole::MemEnc);
    auto k3 = derive_key(parent, "mac", KeyRole::Mac);
    CHECK(k1.bytes == k2.bytes);
    CHECK(k1.bytes != k3.bytes);
    CHECK(k1.bytes != parent.bytes);
    CHECK(k1.role == KeyRole::MemEnc);
}

TEST_CASE("key generation is seed-deterministic") {
    Rng a(7), b(7), c(8);
    auto ka = SymmetricKey::generate(a, KeyRole::MemEnc);
    auto kb = SymmetricKey::generate(b, KeyRole::MemEnc);
    auto kc = SymmetricKey::generate(c, KeyRole::MemEnc);
    CHECK(ka.bytes == kb.bytes);
    CHECK(ka.bytes != kc.bytes);
    CHECK(ka.fingerprint() == kb.fingerprint());
}

TEST_CASE("signatures verify and reject any modification") {
    Rng rng(9);
    auto sk = SigningKey::generate(rng);
    auto pk = sk.public_key();
    Bytes msg = rng.bytes(200);
    auto sig = sk.sign(msg);

    CHECK(verify_sig(pk, msg, sig));

    Bytes wrong = msg;
    wrong[17] ^= 1;
    CHECK_FALSE(verify_sig(pk, wrong, sig));

    auto bad = sig;
    bad.bytes[3] ^= 1;
    CHECK_FALSE(verify_sig(pk, msg, bad));

    Signature zero{}; // malformed encoding must not crash
    CHECK_FALSE(verify_sig(pk, msg, zero));

    // Deterministic signatures keep transcripts replayable.
    CHECK(sk.sign(msg) == sig);
}

TEST_CASE("key agreement matches on both sides and rejects degenerate peers") {
    Rng rng(10);
    auto user = EphemeralSecret::generate(rng);
    auto dev = EphemeralSecret::generate(rng);

    auto u_pub = user.public_key();
    auto d_pub = dev.public_key();
    auto s1 = user.agree(BytesView(d_pub.data(), d_pub.size()));
    auto s2 = dev.agree(BytesView(u_pub.data(), u_pub.size()));
    REQUIRE(s1.has_value());
    REQUIRE(s2.has_value());
    CHECK(s1->bytes == s2->bytes);

    auto fresh = EphemeralSecret::generate(rng);
    auto f_pub = fresh.public_key();
    auto s3 = user.agree(BytesView(f_pub.data(), f_pub.size()));
    REQUIRE(s3.has_value());
    CHECK(s1->bytes != s3->bytes); // fresh ephemerals, fresh session key

    Bytes zeros(32, 0); // low-order point
    CHECK_FALSE(user.agree(zeros).has_value());
    Bytes short_key(31, 1);
    CHECK_FALSE(user.agree(short_key).has_value());
}

TEST_CASE("certificates chain to the manufacturer root") {
    Rng rng(11);
    Manufacturer mfr(rng);
    auto id = mfr.issue_device(rng);
    CHECK(Manufacturer::verify_certificate(mfr.root_public(), id.certificate));

    auto forged = id.certificate;
    forged.device_public[0] ^= 1;
    CHECK_FALSE(Manufacturer::verify_certificate(mfr.root_public(), forged));

    Rng other_rng(12);
    Manufacturer other(other_rng);
    CHECK_FALSE(Manufacturer::verify_certificate(other.root_public(), id.certificate));
}

TEST_CASE("secure channel seals, opens, and rejects replay and tampering") {
    Rng rng(13);
    auto session = SymmetricKey::generate(rng, KeyRole::Session);
    SecureChannel user(session, /*device_side=*/false);
    SecureChannel dev(session, /*device_side=*/true);

    Bytes msg = rng.bytes(700);
    Bytes blob = user.seal(msg);
    CHECK(blob.size() == msg.size() + kChannelOverhead);

    auto opened = dev.open(blob);
    REQUIRE(opened.has_value());
    CHECK(*opened == msg);

    CHECK_FALSE(dev.open(blob).has_value()); // transport replay

    Bytes tampered = user.seal(msg);
    tampered[kChannelOverhead / 2 + 3] ^= 1;
    CHECK_FALSE(dev.open(tampered).has_value());

    // Direction confusion: a device-sealed blob is not a user-sealed blob.
    Bytes from_dev = dev.seal(msg);
    SecureChannel dev2(session, true);
    CHECK_FALSE(dev2.open(from_dev).has_value());

    // Out-of-order delivery violates nonce monotonicity.
    Bytes b1 = user.seal(to_bytes("first"));
    Bytes b2 = user.seal(to_bytes("second"));
    SecureChannel dev3(session, true);
    REQUIRE(dev3.open(b2).has_value());
    CHECK_FALSE(dev3.open(b1).has_value());

    Bytes empty_blob = user.seal({});
    auto e = dev.open(empty_blob);
    REQUIRE(e.has_value());
    CHECK(e->empty());

    CHECK_FALSE(dev.open(Bytes(5, 0)).has_value()); // shorter than the framing
}

TEST_CASE("channel nonces advance monotonically for the audit") {
    Rng rng(14);
    auto session = SymmetricKey::generate(rng, KeyRole::Session);
    SecureChannel user(session, false);
    u64 prev = 0;
    for (int i = 0; i < 5; ++i) {
        user.seal(to_bytes("x"));
        u64 n = user.last_seal_nonce();
        if (i > 0) CHECK(n > prev);
        prev = n;
    }
}
