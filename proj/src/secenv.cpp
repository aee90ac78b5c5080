#include "edi/secenv.hpp"

#include <sodium.h>

#include <cstring>

namespace edi::secenv {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'S', 'E', 'C', 'V'};
constexpr std::size_t kNonceBytes = crypto_aead_xchacha20poly1305_ietf_NPUBBYTES;
constexpr std::size_t kContentKeyBytes = crypto_aead_xchacha20poly1305_ietf_KEYBYTES;

// Sanity caps so garbage length fields cannot drive allocations.
constexpr std::size_t kMaxIdLen = 256;
constexpr std::size_t kMaxEnvelopeLen = 64u << 20;

void put_frame(Bytes& out, std::span<const std::uint8_t> data) {
  std::uint32_t n = static_cast<std::uint32_t>(data.size());
  out.push_back(static_cast<std::uint8_t>(n & 0xff));
  out.push_back(static_cast<std::uint8_t>((n >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((n >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((n >> 24) & 0xff));
  out.insert(out.end(), data.begin(), data.end());
}

void put_frame(Bytes& out, std::string_view s) {
  put_frame(out, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

struct Cursor {
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;

  Bytes frame(std::size_t max_len, const char* what) {
    if (buf.size() - pos < 4) throw MalformedEnvelope(std::string(what) + ": truncated length");
    std::uint32_t n = static_cast<std::uint32_t>(buf[pos]) |
                      (static_cast<std::uint32_t>(buf[pos + 1]) << 8) |
                      (static_cast<std::uint32_t>(buf[pos + 2]) << 16) |
                      (static_cast<std::uint32_t>(buf[pos + 3]) << 24);
    pos += 4;
    if (n > max_len || n > buf.size() - pos)
      throw MalformedEnvelope(std::string(what) + ": bad length " + std::to_string(n));
    Bytes out(buf.begin() + static_cast<std::ptrdiff_t>(pos),
              buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return out;
  }
};

// AEAD associated data: the header line framing without the digest, so a
// flipped digest still decrypts and is reported as the signature/digest
// failure it is.
Bytes header_aad(const SecureEnvelope& env) {
  std::string s = std::to_string(env.version) + "\n" + env.suite + "\n" +
                  env.sender_key_id + "\n" + env.recipient_key_id + "\n";
  return Bytes(s.begin(), s.end());
}

Bytes aead_encrypt(std::span<const std::uint8_t> plaintext, const Bytes& aad,
                   const Bytes& nonce, std::span<const std::uint8_t> key) {
  Bytes ct(plaintext.size() + crypto_aead_xchacha20poly1305_ietf_ABYTES);
  unsigned long long ct_len = 0;
  crypto_aead_xchacha20poly1305_ietf_encrypt(ct.data(), &ct_len, plaintext.data(),
                                             plaintext.size(), aad.data(), aad.size(),
                                             nullptr, nonce.data(), key.data());
  ct.resize(ct_len);
  return ct;
}

std::optional<Bytes> aead_decrypt(const Bytes& ciphertext, const Bytes& aad,
                                  const Bytes& nonce, std::span<const std::uint8_t> key) {
  if (nonce.size() != kNonceBytes) return std::nullopt;
  if (ciphertext.size() < crypto_aead_xchacha20poly1305_ietf_ABYTES) return std::nullopt;
  Bytes pt(ciphertext.size() - crypto_aead_xchacha20poly1305_ietf_ABYTES);
  unsigned long long pt_len = 0;
  if (crypto_aead_xchacha20poly1305_ietf_decrypt(pt.data(), &pt_len, nullptr,
                                                 ciphertext.data(), ciphertext.size(),
                                                 aad.data(), aad.size(), nonce.data(),
                                                 key.data()) != 0)
    return std::nullopt;
  pt.resize(pt_len);
  return pt;
}

}  // namespace

Digest compute_digest(std::span<const std::uint8_t> data) {
  crypto_init();
  Digest out;
  crypto_hash_sha256(out.data(), data.data(), data.size());
  return out;
}

Digest compute_digest(std::string_view data) {
  return compute_digest(
      std::span<const std::uint8_t>{reinterpret_cast<const std::uint8_t*>(data.data()),
                                    data.size()});
}

Bytes signing_input(const SecureEnvelope& env) {
  Bytes out = header_aad(env);
  out.insert(out.end(), env.plaintext_digest.begin(), env.plaintext_digest.end());
  return out;
}

Bytes encode_envelope(const SecureEnvelope& env) {
  Bytes out;
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(env.version);
  put_frame(out, env.suite);
  put_frame(out, env.sender_key_id);
  put_frame(out, env.recipient_key_id);
  put_frame(out, env.wrapped_key);
  put_frame(out, env.nonce);
  put_frame(out, env.ciphertext);
  put_frame(out, std::span<const std::uint8_t>{env.plaintext_digest.data(),
                                               env.plaintext_digest.size()});
  put_frame(out, env.signature);
  return out;
}

SecureEnvelope decode_envelope(std::span<const std::uint8_t> bytes) {
  if (bytes.size() > kMaxEnvelopeLen) throw MalformedEnvelope("envelope too large");
  if (bytes.size() < kMagic.size() + 1 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0)
    throw MalformedEnvelope("bad magic");
  SecureEnvelope env;
  env.version = bytes[4];
  if (env.version != 1)
    throw MalformedEnvelope("unsupported version " + std::to_string(env.version));

  Cursor cur{bytes, 5};
  Bytes suite = cur.frame(16, "suite");
  env.suite.assign(suite.begin(), suite.end());
  Bytes sender = cur.frame(kMaxIdLen, "sender key id");
  env.sender_key_id.assign(sender.begin(), sender.end());
  Bytes recipient = cur.frame(kMaxIdLen, "recipient key id");
  env.recipient_key_id.assign(recipient.begin(), recipient.end());
  env.wrapped_key = cur.frame(4096, "wrapped key");
  env.nonce = cur.frame(64, "nonce");
  env.ciphertext = cur.frame(kMaxEnvelopeLen, "ciphertext");
  Bytes digest = cur.frame(64, "digest");
  if (digest.size() != env.plaintext_digest.size())
    throw MalformedEnvelope("digest must be 32 bytes");
  std::copy(digest.begin(), digest.end(), env.plaintext_digest.begin());
  env.signature = cur.frame(512, "signature");
  if (cur.pos != bytes.size()) throw MalformedEnvelope("trailing bytes after envelope");
  return env;
}

std::optional<std::string> resolve_psk_id(const std::string& a, const std::string& b,
                                          const Keystore& keystore) {
  if (keystore.has(a + "-" + b, KeyKind::psk)) return a + "-" + b;
  if (keystore.has(b + "-" + a, KeyKind::psk)) return b + "-" + a;
  return std::nullopt;
}

SecureEnvelope wrap(std::span<const std::uint8_t> plaintext, const std::string& sender,
                    const std::string& recipient, std::string_view suite,
                    const Keystore& keystore) {
  crypto_init();
  SecureEnvelope env;
  env.version = 1;
  env.suite = std::string(suite);

  Bytes content_key;
  Bytes sender_priv;
  if (suite == kSuitePsk1) {
    std::optional<std::string> psk_id = resolve_psk_id(sender, recipient, keystore);
    if (!psk_id) throw MissingKey(sender + "-" + recipient, KeyKind::psk);
    KeyRecord psk = keystore.get(*psk_id, KeyKind::psk);
    if (psk.material.size() != kPskBytes)
      throw std::runtime_error("psk " + *psk_id + " must be 32 bytes");
    env.sender_key_id = *psk_id;
    env.recipient_key_id = *psk_id;
    content_key = psk.material;
  } else if (suite == kSuitePub1) {
    sender_priv = keystore.get(sender, KeyKind::private_key).material;
    KeyRecord recip_pub = keystore.get(recipient, KeyKind::public_key);
    env.sender_key_id = sender;
    env.recipient_key_id = recipient;

    content_key.resize(kContentKeyBytes);
    randombytes_buf(content_key.data(), content_key.size());

    unsigned char curve_pk[crypto_scalarmult_curve25519_BYTES];
    if (crypto_sign_ed25519_pk_to_curve25519(curve_pk, recip_pub.material.data()) != 0)
      throw std::runtime_error("cannot derive exchange key from public key " + recipient);
    env.wrapped_key.resize(content_key.size() + crypto_box_SEALBYTES);
    crypto_box_seal(env.wrapped_key.data(), content_key.data(), content_key.size(),
                    curve_pk);
  } else {
    throw UnknownSuite(std::string(suite));
  }

  env.plaintext_digest = compute_digest(plaintext);
  env.nonce.resize(kNonceBytes);
  randombytes_buf(env.nonce.data(), env.nonce.size());
  env.ciphertext = aead_encrypt(plaintext, header_aad(env), env.nonce, content_key);

  Bytes input = signing_input(env);
  if (suite == kSuitePsk1) {
    env.signature.resize(crypto_auth_BYTES);
    crypto_auth(env.signature.data(), input.data(), input.size(), content_key.data());
  } else {
    env.signature = sign_detached(input, sender_priv);
  }
  return env;
}

UnwrapResult unwrap(const SecureEnvelope& env, const Keystore& keystore) {
  crypto_init();
  UnwrapResult result;
  VerificationReport& report = result.report;
  auto fail = [&](const char* what) {
    if (report.detail.empty()) report.detail = what;
  };

  if (env.version != 1 || (env.suite != kSuitePsk1 && env.suite != kSuitePub1)) {
    fail("UnknownSuite");
    return result;
  }

  // Resolve the decryption key.
  Bytes content_key;
  if (env.suite == kSuitePsk1) {
    std::optional<KeyRecord> psk = keystore.find(env.recipient_key_id, KeyKind::psk);
    if (!psk || psk->material.size() != kPskBytes) {
      fail("MissingKey");
      return result;
    }
    content_key = psk->material;
  } else {
    std::optional<KeyRecord> priv =
        keystore.find(env.recipient_key_id, KeyKind::private_key);
    if (!priv || priv->material.size() != crypto_sign_SECRETKEYBYTES) {
      fail("MissingKey");
      return result;
    }
    unsigned char curve_sk[crypto_scalarmult_curve25519_BYTES];
    unsigned char curve_pk[crypto_scalarmult_curve25519_BYTES];
    if (crypto_sign_ed25519_sk_to_curve25519(curve_sk, priv->material.data()) != 0) {
      fail("DecryptFailure");
      return result;
    }
    crypto_scalarmult_base(curve_pk, curve_sk);
    if (env.wrapped_key.size() != kContentKeyBytes + crypto_box_SEALBYTES) {
      fail("DecryptFailure");
      return result;
    }
    content_key.resize(kContentKeyBytes);
    if (crypto_box_seal_open(content_key.data(), env.wrapped_key.data(),
                             env.wrapped_key.size(), curve_pk, curve_sk) != 0) {
      fail("DecryptFailure");
      return result;
    }
  }

  std::optional<Bytes> plaintext =
      aead_decrypt(env.ciphertext, header_aad(env), env.nonce, content_key);
  if (plaintext) {
    report.decrypted_ok = true;
    Digest recomputed = compute_digest(*plaintext);
    report.digest_ok = sodium_memcmp(recomputed.data(), env.plaintext_digest.data(),
                                     recomputed.size()) == 0;
    if (!report.digest_ok) fail("DigestMismatch");
  } else {
    fail("DecryptFailure");
  }

  // The signature covers the header and digest only, so it is checkable even
  // when decryption failed.
  Bytes input = signing_input(env);
  if (env.suite == kSuitePsk1) {
    report.signature_ok =
        env.signature.size() == crypto_auth_BYTES &&
        crypto_auth_verify(env.signature.data(), input.data(), input.size(),
                           content_key.data()) == 0;
  } else {
    std::optional<KeyRecord> sender_pub =
        keystore.find(env.sender_key_id, KeyKind::public_key);
    report.signature_ok = sender_pub && verify_detached(input, env.signature,
                                                        sender_pub->material);
  }
  if (!report.signature_ok)
    fail("SignatureInvalid");
  else
    report.signer = env.sender_key_id;

  if (report.all_ok()) result.plaintext = std::move(*plaintext);
  return result;
}

Bytes sign_detached(std::span<const std::uint8_t> data,
                    std::span<const std::uint8_t> private_key) {
  crypto_init();
  if (private_key.size() != crypto_sign_SECRETKEYBYTES)
    throw std::runtime_error("signing key must be 64 bytes");
  Bytes sig(crypto_sign_BYTES);
  unsigned long long sig_len = 0;
  crypto_sign_detached(sig.data(), &sig_len, data.data(), data.size(), private_key.data());
  sig.resize(sig_len);
  return sig;
}

bool verify_detached(std::span<const std::uint8_t> data,
                     std::span<const std::uint8_t> signature,
                     std::span<const std::uint8_t> public_key) {
  crypto_init();
  if (signature.size() != crypto_sign_BYTES ||
      public_key.size() != crypto_sign_PUBLICKEYBYTES)
    return false;
  return crypto_sign_verify_detached(signature.data(), data.data(), data.size(),
                                     public_key.data()) == 0;
}

}  // namespace edi::secenv
