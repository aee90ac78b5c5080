#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <openssl/sha.h>

#include <fstream>
#include <random>
#include <set>

#include "edi/authorization.hpp"
#include "edi/secenv.hpp"
#include "support/testutil.hpp"

using namespace edi::secenv;

namespace {

// Independent digest oracle: OpenSSL, not the library the implementation uses.
Digest openssl_sha256(std::span<const std::uint8_t> data) {
  Digest out;
  SHA256(data.data(), data.size(), out.data());
  return out;
}

Bytes bytes_of(std::string_view s) {
  return Bytes(reinterpret_cast<const std::uint8_t*>(s.data()),
               reinterpret_cast<const std::uint8_t*>(s.data()) + s.size());
}

struct PairFixture {
  testutil::TempDir dir;
  Keystore ks = Keystore::open(dir.path());
  PairFixture() {
    ks.generate_pair("A");
    ks.generate_pair("B");
    ks.generate_psk("A-B");
  }
};

}  // namespace

TEST_CASE("digest matches the frozen SHA-256 vectors") {
  CHECK(to_hex(compute_digest(std::string_view(""))) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(to_hex(compute_digest(std::string_view("abc"))) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("digest agrees with the independent oracle on random inputs") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<std::size_t> len(0, 4096);
  for (int i = 0; i < 100; ++i) {
    Bytes data(len(rng));
    for (auto& b : data) b = static_cast<std::uint8_t>(byte(rng));
    CHECK(compute_digest(data) == openssl_sha256(data));
  }
}

TEST_CASE("digest is deterministic") {
  Bytes data = bytes_of("determinism");
  CHECK(compute_digest(data) == compute_digest(data));
}

TEST_CASE("wrap and unwrap round trip under both suites") {
  PairFixture fx;
  for (std::string_view suite : {kSuitePub1, kSuitePsk1}) {
    CAPTURE(suite);
    Bytes msg = bytes_of("the quick brown fox");
    SecureEnvelope env = wrap(msg, "A", "B", suite, fx.ks);
    UnwrapResult result = unwrap(env, fx.ks);
    CHECK(result.report.decrypted_ok);
    CHECK(result.report.digest_ok);
    CHECK(result.report.signature_ok);
    REQUIRE(result.plaintext.has_value());
    CHECK(*result.plaintext == msg);

    // Through the wire format too.
    SecureEnvelope decoded = decode_envelope(encode_envelope(env));
    UnwrapResult again = unwrap(decoded, fx.ks);
    REQUIRE(again.plaintext.has_value());
    CHECK(*again.plaintext == msg);
  }
}

TEST_CASE("round trip holds up to a mebibyte") {
  PairFixture fx;
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> byte(0, 255);
  Bytes msg(1 << 20);
  for (auto& b : msg) b = static_cast<std::uint8_t>(byte(rng));
  for (std::string_view suite : {kSuitePub1, kSuitePsk1}) {
    UnwrapResult result = unwrap(wrap(msg, "A", "B", suite, fx.ks), fx.ks);
    REQUIRE(result.plaintext.has_value());
    CHECK(*result.plaintext == msg);
  }
}

TEST_CASE("unknown suite is rejected") {
  PairFixture fx;
  CHECK_THROWS_AS(wrap(bytes_of("m"), "A", "B", "PUB-9", fx.ks), UnknownSuite);
}

TEST_CASE("missing keys are reported") {
  testutil::TempDir dir;
  Keystore ks = Keystore::open(dir.path());
  CHECK_THROWS_AS(wrap(bytes_of("m"), "A", "B", kSuitePub1, ks), MissingKey);
  CHECK_THROWS_AS(wrap(bytes_of("m"), "A", "B", kSuitePsk1, ks), MissingKey);
}

TEST_CASE("wraps of the same plaintext differ in nonce and ciphertext") {
  PairFixture fx;
  Bytes msg = bytes_of("repeat me");
  SecureEnvelope a = wrap(msg, "A", "B", kSuitePub1, fx.ks);
  SecureEnvelope b = wrap(msg, "A", "B", kSuitePub1, fx.ks);
  CHECK(a.nonce != b.nonce);
  CHECK(a.ciphertext != b.ciphertext);
  CHECK(a.plaintext_digest == b.plaintext_digest);
}

TEST_CASE("nonces stay unique over ten thousand wraps") {
  PairFixture fx;
  Bytes msg = bytes_of("n");
  std::set<Bytes> nonces;
  for (int i = 0; i < 10000; ++i) {
    SecureEnvelope env = wrap(msg, "A", "B", kSuitePsk1, fx.ks);
    CHECK(nonces.insert(env.nonce).second);
  }
  CHECK(nonces.size() == 10000);
}

TEST_CASE("a flipped ciphertext byte fails decryption and releases nothing") {
  PairFixture fx;
  SecureEnvelope env = wrap(bytes_of("sensitive"), "A", "B", kSuitePub1, fx.ks);
  env.ciphertext[0] ^= 0x01;
  UnwrapResult result = unwrap(env, fx.ks);
  CHECK_FALSE(result.report.decrypted_ok);
  CHECK(result.report.detail == "DecryptFailure");
  CHECK_FALSE(result.plaintext.has_value());
}

TEST_CASE("a flipped digest byte invalidates the signature") {
  PairFixture fx;
  SecureEnvelope env = wrap(bytes_of("sensitive"), "A", "B", kSuitePub1, fx.ks);
  env.plaintext_digest[0] ^= 0x01;
  UnwrapResult result = unwrap(env, fx.ks);
  CHECK_FALSE(result.report.signature_ok);
  CHECK_FALSE(result.plaintext.has_value());
}

TEST_CASE("a signature from a different sender does not verify") {
  PairFixture fx;
  fx.ks.generate_pair("C");
  SecureEnvelope env = wrap(bytes_of("order"), "A", "B", kSuitePub1, fx.ks);
  Bytes c_priv = fx.ks.get("C", KeyKind::private_key).material;
  env.signature = sign_detached(signing_input(env), c_priv);
  UnwrapResult result = unwrap(env, fx.ks);
  CHECK(result.report.decrypted_ok);
  CHECK(result.report.digest_ok);
  CHECK_FALSE(result.report.signature_ok);
  CHECK(result.report.detail == "SignatureInvalid");
  CHECK_FALSE(result.plaintext.has_value());
}

TEST_CASE("detached signatures verify only under the matching key and data") {
  PairFixture fx;
  Bytes a_priv = fx.ks.get("A", KeyKind::private_key).material;
  Bytes a_pub = fx.ks.get("A", KeyKind::public_key).material;
  Bytes b_pub = fx.ks.get("B", KeyKind::public_key).material;
  Bytes data = bytes_of("contract");
  Bytes sig = sign_detached(data, a_priv);
  CHECK(verify_detached(data, sig, a_pub));
  CHECK_FALSE(verify_detached(bytes_of("contract2"), sig, a_pub));
  CHECK_FALSE(verify_detached(data, sig, b_pub));
}

TEST_CASE("single-bit flips anywhere in the envelope always fail closed") {
  PairFixture fx;
  Bytes msg = bytes_of("short payload for exhaustive tampering");
  for (std::string_view suite : {kSuitePsk1, kSuitePub1}) {
    CAPTURE(suite);
    Bytes encoded = encode_envelope(wrap(msg, "A", "B", suite, fx.ks));
    int escapes = 0;
    for (std::size_t bit = 0; bit < encoded.size() * 8; ++bit) {
      Bytes tampered = encoded;
      tampered[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      try {
        UnwrapResult result = unwrap(decode_envelope(tampered), fx.ks);
        if (result.report.all_ok() || result.plaintext.has_value()) ++escapes;
      } catch (const MalformedEnvelope&) {
        // framing failure: nothing released
      }
    }
    CHECK(escapes == 0);
  }
}

TEST_CASE("keystore rejects a registry pinning other primitives") {
  testutil::TempDir dir;
  { Keystore::open(dir.path()); }
  // Overwrite with a conflicting registry.
  std::ofstream(dir.path() / "suites.json") << R"({"PSK-1":{"cipher":"rot13"}})";
  CHECK_THROWS_AS(Keystore::open(dir.path()), SuiteRegistryMismatch);
}

namespace {

struct AuthzFixture {
  testutil::TempDir dir;
  Keystore ks = Keystore::open(dir.path());
  AuthorizationPolicy policy;
  Bytes order = bytes_of("1\nPUB-1\nofficer\nseller\n................................");

  AuthzFixture() {
    ks.generate_pair("officer");
    ks.generate_pair("supervisor");
    ks.generate_pair("outsider");
    policy.limit_cents = {{"officer", 2500000}, {"supervisor", 10000000}};
    policy.supervisor = {{"officer", "supervisor"}};
    policy.validate();
  }

  Countersignature countersign(const std::string& who) {
    return {who, sign_detached(order, ks.get(who, KeyKind::private_key).material)};
  }
};

}  // namespace

TEST_CASE("an order over the limit is refused without a countersignature") {
  AuthzFixture fx;
  AuthzDecision d = check_authorization(3000000, "officer", {}, fx.policy, fx.order, fx.ks);
  CHECK_FALSE(d.authorized);
  CHECK(d.reason == "LIMIT_EXCEEDED");
}

TEST_CASE("a supervisor countersignature authorizes an over-limit order") {
  AuthzFixture fx;
  std::vector<Countersignature> sigs = {fx.countersign("supervisor")};
  AuthzDecision d = check_authorization(3000000, "officer", sigs, fx.policy, fx.order, fx.ks);
  CHECK(d.authorized);
  CHECK(d.approver == "supervisor");
}

TEST_CASE("the spending limit is inclusive") {
  AuthzFixture fx;
  AuthzDecision d = check_authorization(2500000, "officer", {}, fx.policy, fx.order, fx.ks);
  CHECK(d.authorized);
  CHECK(d.approver == "officer");
}

TEST_CASE("authorization is monotone in the amount") {
  AuthzFixture fx;
  std::vector<Countersignature> sigs = {fx.countersign("supervisor")};
  for (std::int64_t amount : {1, 100, 2500000, 3000000, 9999999}) {
    AuthzDecision big = check_authorization(amount, "officer", sigs, fx.policy, fx.order, fx.ks);
    if (!big.authorized) continue;
    AuthzDecision small =
        check_authorization(amount / 2, "officer", sigs, fx.policy, fx.order, fx.ks);
    CHECK(small.authorized);
  }
}

TEST_CASE("unknown signers and broken countersignatures are errors") {
  AuthzFixture fx;
  CHECK_THROWS_AS(check_authorization(1, "nobody", {}, fx.policy, fx.order, fx.ks),
                  UnknownSigner);

  Countersignature bad = fx.countersign("supervisor");
  bad.signature[0] ^= 0x01;
  std::vector<Countersignature> sigs = {bad};
  CHECK_THROWS_AS(check_authorization(3000000, "officer", sigs, fx.policy, fx.order, fx.ks),
                  InvalidCountersignature);
}

TEST_CASE("a valid countersignature from outside the chain does not authorize") {
  AuthzFixture fx;
  fx.policy.limit_cents["outsider"] = 100000000;
  std::vector<Countersignature> sigs = {fx.countersign("outsider")};
  AuthzDecision d = check_authorization(3000000, "officer", sigs, fx.policy, fx.order, fx.ks);
  CHECK_FALSE(d.authorized);
}

TEST_CASE("policies reject supervisor cycles and negative limits") {
  AuthorizationPolicy cyclic;
  cyclic.limit_cents = {{"a", 1}, {"b", 1}};
  cyclic.supervisor = {{"a", "b"}, {"b", "a"}};
  CHECK_THROWS_AS(cyclic.validate(), PolicyError);

  CHECK_THROWS_AS(AuthorizationPolicy::from_json(R"({"limits":{"a":-5}})"), PolicyError);
  AuthorizationPolicy ok = AuthorizationPolicy::from_json(
      R"({"limits":{"officer":2500000,"supervisor":10000000},"supervisors":{"officer":"supervisor"}})");
  CHECK(ok.limit_cents.at("officer") == 2500000);
}
