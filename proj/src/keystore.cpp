#include "edi/keystore.hpp"

#include <sodium.h>

#include <fstream>
#include <mutex>

#include "json.hpp"

namespace edi::secenv {

namespace {

using nlohmann::json;

// What this build implements. A keystore pinning anything else belongs to an
// incompatible deployment and is rejected at open().
json expected_suites() {
  return json{
      {"PSK-1",
       {{"hash", "sha-256"},
        {"cipher", "xchacha20poly1305-ietf"},
        {"signature", "hmac-sha512-256"}}},
      {"PUB-1",
       {{"hash", "sha-256"},
        {"cipher", "xchacha20poly1305-ietf"},
        {"wrap", "x25519-sealed-box"},
        {"signature", "ed25519"}}}};
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data,
                bool restrict_perms) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
  }
  if (restrict_perms)
    std::filesystem::permissions(path, std::filesystem::perms::owner_read |
                                           std::filesystem::perms::owner_write,
                                 std::filesystem::perm_options::replace);
}

}  // namespace

void crypto_init() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw std::runtime_error("libsodium initialization failed");
  });
}

std::string to_hex(std::span<const std::uint8_t> data) {
  std::string out(data.size() * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), data.data(), data.size());
  out.resize(data.size() * 2);
  return out;
}

Bytes from_hex(std::string_view hex) {
  Bytes out(hex.size() / 2 + 1);
  std::size_t got = 0;
  if (sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(), nullptr, &got,
                     nullptr) != 0)
    throw std::runtime_error("bad hex string");
  out.resize(got);
  return out;
}

std::string_view key_extension(KeyKind kind) {
  switch (kind) {
    case KeyKind::psk: return ".psk";
    case KeyKind::public_key: return ".pub";
    case KeyKind::private_key: return ".priv";
  }
  return "";
}

Keystore Keystore::open(const std::filesystem::path& dir) {
  crypto_init();
  std::filesystem::create_directories(dir);
  std::filesystem::path registry = dir / "suites.json";
  if (std::filesystem::exists(registry)) {
    json found;
    try {
      Bytes raw = read_file(registry);
      found = json::parse(raw.begin(), raw.end());
    } catch (const std::exception& e) {
      throw SuiteRegistryMismatch("unreadable suite registry " + registry.string() + ": " +
                                  e.what());
    }
    if (found != expected_suites())
      throw SuiteRegistryMismatch("suite registry " + registry.string() +
                                  " pins primitives this build does not implement");
  } else {
    std::string text = expected_suites().dump(2) + "\n";
    write_file(registry, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()},
               false);
  }
  return Keystore(dir);
}

std::optional<KeyRecord> Keystore::find(const std::string& key_id, KeyKind kind) const {
  std::filesystem::path path = dir_ / (key_id + std::string(key_extension(kind)));
  std::error_code ec;
  if (!std::filesystem::exists(path, ec) || ec) return std::nullopt;
  KeyRecord rec;
  rec.key_id = key_id;
  rec.kind = kind;
  rec.material = read_file(path);
  auto mtime = std::filesystem::last_write_time(path, ec);
  if (!ec)
    rec.created = std::chrono::duration_cast<std::chrono::seconds>(
                      mtime.time_since_epoch())
                      .count();
  return rec;
}

KeyRecord Keystore::get(const std::string& key_id, KeyKind kind) const {
  std::optional<KeyRecord> rec = find(key_id, kind);
  if (!rec) throw MissingKey(key_id, kind);
  return std::move(*rec);
}

bool Keystore::has(const std::string& key_id, KeyKind kind) const {
  return find(key_id, kind).has_value();
}

std::string Keystore::generate_pair(const std::string& key_id) const {
  crypto_init();
  Bytes pk(crypto_sign_PUBLICKEYBYTES), sk(crypto_sign_SECRETKEYBYTES);
  crypto_sign_keypair(pk.data(), sk.data());
  write_file(dir_ / (key_id + ".pub"), pk, false);
  write_file(dir_ / (key_id + ".priv"), sk, true);
  return key_id;
}

std::string Keystore::generate_psk(const std::string& key_id) const {
  crypto_init();
  Bytes key(kPskBytes);
  randombytes_buf(key.data(), key.size());
  write_file(dir_ / (key_id + ".psk"), key, true);
  return key_id;
}

void Keystore::put_public(const std::string& key_id,
                          std::span<const std::uint8_t> material) const {
  if (material.size() != crypto_sign_PUBLICKEYBYTES)
    throw std::runtime_error("public key for " + key_id + " must be " +
                             std::to_string(crypto_sign_PUBLICKEYBYTES) + " bytes");
  write_file(dir_ / (key_id + ".pub"), material, false);
}

}  // namespace edi::secenv
