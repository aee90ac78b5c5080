#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace edi::secenv {

using Bytes = std::vector<std::uint8_t>;

constexpr std::size_t kPskBytes = 32;

// Initializes libsodium; safe to call repeatedly.
void crypto_init();

std::string to_hex(std::span<const std::uint8_t> data);
Bytes from_hex(std::string_view hex);

enum class KeyKind { psk, public_key, private_key };

std::string_view key_extension(KeyKind kind);

struct KeyRecord {
  std::string key_id;
  KeyKind kind;
  Bytes material;
  std::int64_t created = 0;  // unix seconds, taken from the file mtime
};

class MissingKey : public std::runtime_error {
 public:
  MissingKey(const std::string& key_id, KeyKind kind)
      : std::runtime_error("missing key " + key_id + std::string(key_extension(kind))),
        key_id_(key_id),
        kind_(kind) {}
  const std::string& key_id() const { return key_id_; }
  KeyKind kind() const { return kind_; }

 private:
  std::string key_id_;
  KeyKind kind_;
};

class SuiteRegistryMismatch : public std::runtime_error {
 public:
  explicit SuiteRegistryMismatch(const std::string& what) : std::runtime_error(what) {}
};

// Flat key directory: keys/<key_id>.{psk|pub|priv}, raw bytes. suites.json
// pins the primitive choices so both ends of a deployment agree; open()
// writes it when absent and refuses a directory pinning anything else.
class Keystore {
 public:
  static Keystore open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }

  KeyRecord get(const std::string& key_id, KeyKind kind) const;
  std::optional<KeyRecord> find(const std::string& key_id, KeyKind kind) const;
  bool has(const std::string& key_id, KeyKind kind) const;

  // Ed25519 pair; returns the key id. Private material is written 0600.
  std::string generate_pair(const std::string& key_id) const;
  std::string generate_psk(const std::string& key_id) const;
  void put_public(const std::string& key_id, std::span<const std::uint8_t> material) const;

 private:
  explicit Keystore(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::filesystem::path dir_;
};

}  // namespace edi::secenv
