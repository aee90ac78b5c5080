#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "edi/keystore.hpp"

namespace edi::secenv {

inline constexpr std::string_view kSuitePsk1 = "PSK-1";
inline constexpr std::string_view kSuitePub1 = "PUB-1";

using Digest = std::array<std::uint8_t, 32>;

// SHA-256.
Digest compute_digest(std::span<const std::uint8_t> data);
Digest compute_digest(std::string_view data);

/*
 * Envelope wire format (docs/envelope-format.md):
 *
 *   "SECV" | u8 version=1 | frame(suite) | frame(sender_key_id)
 *   | frame(recipient_key_id) | frame(wrapped_key) | frame(nonce)
 *   | frame(ciphertext) | frame(digest, 32 bytes) | frame(signature)
 *
 * frame = u32 little-endian length + raw bytes; decode consumes the buffer
 * exactly. Header fields double as the AEAD associated data, and the
 * canonical signing input is the header line framing plus the raw digest,
 * so no field can be substituted without tripping a check.
 */
struct SecureEnvelope {
  std::uint8_t version = 1;
  std::string suite;
  std::string sender_key_id;
  std::string recipient_key_id;
  Bytes wrapped_key;  // empty for PSK-1
  Bytes nonce;
  Bytes ciphertext;
  Digest plaintext_digest{};
  Bytes signature;
};

class MalformedEnvelope : public std::runtime_error {
 public:
  explicit MalformedEnvelope(const std::string& what) : std::runtime_error(what) {}
};

class UnknownSuite : public std::runtime_error {
 public:
  explicit UnknownSuite(const std::string& suite)
      : std::runtime_error("unknown cipher suite '" + suite + "'") {}
};

Bytes encode_envelope(const SecureEnvelope& env);
SecureEnvelope decode_envelope(std::span<const std::uint8_t> bytes);

// UTF-8 "version\nsuite\nsender\nrecipient\n" followed by the raw digest.
Bytes signing_input(const SecureEnvelope& env);

// PSK-1: AEAD under the pair's pre-shared key, keyed MAC as the signature
// (integrity + authentication, but either key holder could forge — no
// third-party non-repudiation; use PUB-1 where that matters).
// PUB-1: fresh content key, AEAD, key sealed to the recipient's public key,
// Ed25519 signature under the sender's private key.
SecureEnvelope wrap(std::span<const std::uint8_t> plaintext, const std::string& sender,
                    const std::string& recipient, std::string_view suite,
                    const Keystore& keystore);

struct VerificationReport {
  bool decrypted_ok = false;
  bool digest_ok = false;
  bool signature_ok = false;
  std::optional<std::string> signer;
  std::string detail;  // first failure: MissingKey, UnknownSuite, DecryptFailure,
                       // DigestMismatch or SignatureInvalid
  bool all_ok() const { return decrypted_ok && digest_ok && signature_ok; }
};

struct UnwrapResult {
  std::optional<Bytes> plaintext;  // engaged only when report.all_ok()
  VerificationReport report;
};

UnwrapResult unwrap(const SecureEnvelope& env, const Keystore& keystore);

Bytes sign_detached(std::span<const std::uint8_t> data,
                    std::span<const std::uint8_t> private_key);
bool verify_detached(std::span<const std::uint8_t> data,
                     std::span<const std::uint8_t> signature,
                     std::span<const std::uint8_t> public_key);

// The psk key id a sender/recipient pair resolves to, if one is on disk:
// "<a>-<b>" in either order.
std::optional<std::string> resolve_psk_id(const std::string& a, const std::string& b,
                                          const Keystore& keystore);

}  // namespace edi::secenv
