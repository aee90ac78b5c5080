#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <thread>

#include "edi/journal.hpp"
#include "edi/vancore.hpp"

namespace edi::service {

class DataDirLocked : public std::runtime_error {
 public:
  explicit DataDirLocked(const std::string& dir)
      : std::runtime_error("data directory " + dir + " is locked by another instance") {}
};

class BindFailure : public std::runtime_error {
 public:
  explicit BindFailure(const std::string& what) : std::runtime_error(what) {}
};

struct ServiceConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 0;  // 0 binds an ephemeral port, published in <dataDir>/van.port
  std::filesystem::path data_dir;
  std::filesystem::path keystore_dir;  // empty: <dataDir>/keys
  std::int64_t session_ttl_s = 3600;
  std::int64_t delivery_interval_ms = 200;
  int max_hops = 3;
  std::string admin_id = "admin";
  std::string admin_password;
  std::string van_key_id = "van";
  std::vector<van::InterconnectRoute> routes;

  static ServiceConfig from_json(std::string_view json_bytes);
  static ServiceConfig from_json_file(const std::filesystem::path& path);
};

/*
 * Durable deployment of the VAN: locks the data directory, recovers state by
 * journal replay, serves the HTTP API and runs the delivery loop.
 *
 * Layout under dataDir:
 *   van.lock          exclusive-instance lock
 *   van.port          bound port, written after listen
 *   partners.json     partner profiles + interconnect routes (atomic rewrite)
 *   messages.journal  deposit and transition records (+ counter advances)
 *   audit.journal     one record per audit event
 *   blobs/<id>.bin    payloads, written before their journal record
 */
class VanService {
 public:
  explicit VanService(const ServiceConfig& config);
  ~VanService();
  VanService(const VanService&) = delete;

  void start();
  void stop();
  int port() const { return port_; }
  std::string base_url() const;
  van::Van& van() { return *van_; }
  const ServiceConfig& config() const { return config_; }

  // Replays a (stopped) data directory and returns the canonical state
  // fingerprint; two replays of the same bytes must agree.
  static std::string replay_fingerprint(const ServiceConfig& config);

 private:
  void run_delivery_tick();

  struct Impl;
  std::unique_ptr<Impl> impl_;
  ServiceConfig config_;
  std::unique_ptr<van::Van> van_;
  int port_ = 0;
};

std::int64_t now_ms();

// Splits "http://host:port/some/path" into client base and path.
std::pair<std::string, std::string> split_url(const std::string& url);

}  // namespace edi::service
