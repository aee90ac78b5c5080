#include "edi/vanservice.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <fstream>

#include "edi/multipart.hpp"
#include "edi/secenv.hpp"
#include "httplib.h"
#include "json.hpp"

namespace edi::service {

namespace {

using nlohmann::json;
namespace vc = edi::van;

struct Paths {
  std::filesystem::path lock;
  std::filesystem::path port;
  std::filesystem::path partners;
  std::filesystem::path messages;
  std::filesystem::path audit;
  std::filesystem::path blobs;

  explicit Paths(const std::filesystem::path& data_dir)
      : lock(data_dir / "van.lock"),
        port(data_dir / "van.port"),
        partners(data_dir / "partners.json"),
        messages(data_dir / "messages.journal"),
        audit(data_dir / "audit.journal"),
        blobs(data_dir / "blobs") {}
};

json profile_to_json(const vc::PartnerProfile& p) {
  json j;
  j["partnerId"] = p.partner_id;
  j["passwordHash"] = p.password_hash;
  j["role"] = std::string(vc::to_string(p.role));
  j["authorizedSenders"] = p.authorized_senders;
  j["allowedDocTypes"] = p.allowed_doc_types;
  j["deliveryMode"] = p.delivery_mode == vc::DeliveryMode::forward ? "forward" : "retrieve";
  j["forwardEndpoint"] = p.forward_endpoint;
  j["autoAck"] = p.auto_ack;
  if (p.notification) {
    j["notifyEndpoint"] = p.notification->endpoint;
    j["notifyDocTypes"] = p.notification->doc_type_filter;
  }
  return j;
}

vc::PartnerProfile profile_from_json(const json& j) {
  vc::PartnerProfile p;
  p.partner_id = j.at("partnerId").get<std::string>();
  p.password_hash = j.value("passwordHash", "");
  p.role = vc::role_from_string(j.value("role", "user"));
  for (const auto& s : j.value("authorizedSenders", json::array()))
    p.authorized_senders.insert(s.get<std::string>());
  for (const auto& s : j.value("allowedDocTypes", json::array()))
    p.allowed_doc_types.insert(s.get<std::string>());
  p.delivery_mode = j.value("deliveryMode", "retrieve") == "forward"
                        ? vc::DeliveryMode::forward
                        : vc::DeliveryMode::retrieve;
  p.forward_endpoint = j.value("forwardEndpoint", "");
  p.auto_ack = j.value("autoAck", false);
  if (j.contains("notifyEndpoint") && !j.at("notifyEndpoint").get<std::string>().empty()) {
    vc::Notification n;
    n.endpoint = j.at("notifyEndpoint").get<std::string>();
    for (const auto& s : j.value("notifyDocTypes", json::array()))
      n.doc_type_filter.insert(s.get<std::string>());
    p.notification = n;
  }
  return p;
}

json route_to_json(const vc::InterconnectRoute& r) {
  return json{{"pattern", r.pattern},
              {"endpoint", r.endpoint},
              {"peerId", r.peer_id},
              {"peerPassword", r.peer_password}};
}

vc::InterconnectRoute route_from_json(const json& j) {
  vc::InterconnectRoute r;
  r.pattern = j.at("pattern").get<std::string>();
  r.endpoint = j.at("endpoint").get<std::string>();
  r.peer_id = j.value("peerId", "");
  r.peer_password = j.value("peerPassword", "");
  return r;
}

json audit_to_json(const vc::AuditEvent& e) {
  json j;
  j["seq"] = e.seq;
  j["ts"] = e.ts;
  j["msg"] = e.message_id;
  j["actor"] = e.actor;
  j["action"] = e.action;
  j["detail"] = e.detail;
  j["sender"] = e.sender;
  j["recipient"] = e.recipient;
  j["bytes"] = e.bytes;
  return j;
}

vc::AuditEvent audit_from_json(const json& j) {
  vc::AuditEvent e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.ts = j.at("ts").get<std::int64_t>();
  e.message_id = j.at("msg").get<std::uint64_t>();
  e.actor = j.at("actor").get<std::string>();
  e.action = j.at("action").get<std::string>();
  e.detail = j.at("detail").get<std::string>();
  e.sender = j.value("sender", "");
  e.recipient = j.value("recipient", "");
  e.bytes = j.value("bytes", std::uint64_t{0});
  return e;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_blob(const std::filesystem::path& path, const vc::Bytes& payload) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw std::runtime_error("cannot write blob " + path.string());
  std::size_t off = 0;
  while (off < payload.size()) {
    ssize_t n = ::write(fd, payload.data() + off, payload.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw std::runtime_error("blob write failed: " + path.string());
    }
    off += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

vc::Bytes read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptJournal("journal references a missing blob " + path.string());
  return vc::Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
}

// Journals every mutation the Van reports. Called under the Van's write lock,
// so appends are serialized.
class DiskSink : public vc::StateSink {
 public:
  explicit DiskSink(const Paths& paths)
      : paths_(paths), messages_(paths.messages), audit_(paths.audit) {}

  void deposit_stored(const vc::VanMessage& msg, const vc::Bytes& payload,
                      std::span<const vc::AuditEvent> events) override {
    write_blob(paths_.blobs / (std::to_string(msg.id) + ".bin"), payload);
    json j;
    j["t"] = "msg";
    j["id"] = msg.id;
    j["sender"] = msg.header.sender_id;
    j["recipient"] = msg.header.recipient_id;
    j["control"] = msg.header.control;
    j["docTypes"] = msg.header.doc_types;
    j["ack"] = msg.header.ack_requested;
    j["hops"] = msg.header.hop_count;
    j["status"] = std::string(vc::to_string(msg.status));
    j["reason"] = msg.reject_reason;
    j["relay"] = msg.relay;
    j["ts"] = msg.received_at;
    messages_.append(j.dump());
    for (const vc::AuditEvent& e : events) audit_.append(audit_to_json(e).dump());
  }

  void transition_recorded(const vc::VanMessage& msg, const vc::AuditEvent& event) override {
    json j;
    j["t"] = "tr";
    j["id"] = msg.id;
    j["to"] = std::string(vc::to_string(msg.status));
    j["ts"] = event.ts;
    messages_.append(j.dump());
    audit_.append(audit_to_json(event).dump());
  }

  void audit_recorded(const vc::AuditEvent& event) override {
    audit_.append(audit_to_json(event).dump());
  }

  void partners_changed(const std::vector<vc::PartnerProfile>& partners,
                        const std::vector<vc::InterconnectRoute>& routes) override {
    json j;
    j["partners"] = json::array();
    for (const auto& p : partners) j["partners"].push_back(profile_to_json(p));
    j["routes"] = json::array();
    for (const auto& r : routes) j["routes"].push_back(route_to_json(r));
    write_file_atomic(paths_.partners, j.dump(2) + "\n");
  }

  void counter_advanced(const std::string& scope, std::uint64_t last) override {
    json j;
    j["t"] = "ctr";
    j["scope"] = scope;
    j["last"] = last;
    messages_.append(j.dump());
  }

 private:
  Paths paths_;
  JournalWriter messages_;
  JournalWriter audit_;
};

// Rebuilds a Van from the durable files. Restore entry points never touch
// the sink, so replays journal nothing.
void recover_state(vc::Van& van, const Paths& paths) {
  if (std::filesystem::exists(paths.partners)) {
    std::ifstream in(paths.partners, std::ios::binary);
    json j = json::parse(std::string((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>{}));
    for (const json& p : j.value("partners", json::array()))
      van.restore_partner(profile_from_json(p));
    for (const json& r : j.value("routes", json::array()))
      van.restore_route(route_from_json(r));
  }

  ReplayResult messages = replay_journal(paths.messages);
  for (const std::string& record : messages.records) {
    json j = json::parse(record);
    std::string type = j.at("t").get<std::string>();
    if (type == "msg") {
      vc::VanMessage m;
      m.id = j.at("id").get<std::uint64_t>();
      m.header.sender_id = j.at("sender").get<std::string>();
      m.header.recipient_id = j.at("recipient").get<std::string>();
      m.header.control = j.at("control").get<std::string>();
      for (const auto& s : j.at("docTypes")) m.header.doc_types.insert(s.get<std::string>());
      m.header.ack_requested = j.at("ack").get<bool>();
      m.header.hop_count = j.at("hops").get<int>();
      m.status = vc::status_from_string(j.at("status").get<std::string>());
      m.reject_reason = j.at("reason").get<std::string>();
      m.relay = j.at("relay").get<bool>();
      m.received_at = j.at("ts").get<std::int64_t>();
      if (m.status == vc::MessageStatus::queued) m.queued_at = m.received_at;
      vc::Bytes payload = read_blob(paths.blobs / (std::to_string(m.id) + ".bin"));
      m.payload_size = payload.size();
      van.restore_deposit(std::move(m), std::move(payload));
    } else if (type == "tr") {
      van.restore_transition(j.at("id").get<std::uint64_t>(),
                             vc::status_from_string(j.at("to").get<std::string>()),
                             j.at("ts").get<std::int64_t>(), "");
    } else if (type == "ctr") {
      van.restore_counter(j.at("scope").get<std::string>(),
                          j.at("last").get<std::uint64_t>());
    } else {
      throw CorruptJournal("unknown record type '" + type + "' in " +
                           paths.messages.string());
    }
  }

  ReplayResult audit = replay_journal(paths.audit);
  for (const std::string& record : audit.records)
    van.restore_audit(audit_from_json(json::parse(record)));
}

int http_status_for(const vc::VanError& e) {
  const std::string& code = e.code();
  if (code == "AUTH_FAILED" || code == "SESSION_INVALID") return 401;
  if (code == "FORBIDDEN" || code == "SENDER_MISMATCH") return 403;
  if (code == "DUPLICATE_CONTROL" || code == "WRONG_STATE" ||
      code == "ALREADY_ACKNOWLEDGED")
    return 409;
  if (code == "UNKNOWN_MESSAGE" || code == "UNKNOWN_PARTNER") return 404;
  if (code == "ACK_FAILED") return 422;
  return 400;
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", code}, {"message", message}}.dump(),
                  "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const vc::VanError& e) {
    send_error(res, http_status_for(e), e.code(), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "BAD_JSON", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "INTERNAL", e.what());
  }
}

vc::Bytes body_bytes(const httplib::Request& req) {
  return vc::Bytes(req.body.begin(), req.body.end());
}

std::set<std::string> split_csv(const std::string& s) {
  std::set<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    std::string item = s.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!item.empty()) out.insert(item);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string join_csv(const std::set<std::string>& values) {
  std::string out;
  for (const std::string& v : values) {
    if (!out.empty()) out += ",";
    out += v;
  }
  return out;
}

}  // namespace

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  std::size_t scheme = url.find("://");
  std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  std::size_t slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

ServiceConfig ServiceConfig::from_json(std::string_view json_bytes) {
  json j = json::parse(json_bytes);
  ServiceConfig cfg;
  if (j.contains("listen")) {
    std::string listen = j.at("listen").get<std::string>();
    std::size_t colon = listen.rfind(':');
    if (colon == std::string::npos)
      throw std::runtime_error("listen must be host:port");
    cfg.listen_host = listen.substr(0, colon);
    cfg.listen_port = std::stoi(listen.substr(colon + 1));
  }
  cfg.data_dir = j.at("dataDir").get<std::string>();
  if (j.contains("keystoreDir")) cfg.keystore_dir = j.at("keystoreDir").get<std::string>();
  cfg.session_ttl_s = j.value("sessionTtlSeconds", std::int64_t{3600});
  cfg.delivery_interval_ms = j.value("deliveryIntervalMs", std::int64_t{200});
  cfg.max_hops = j.value("maxHops", 3);
  cfg.admin_id = j.value("adminId", "admin");
  cfg.admin_password = j.value("adminPassword", "");
  cfg.van_key_id = j.value("vanKeyId", "van");
  for (const json& r : j.value("routes", json::array()))
    cfg.routes.push_back(route_from_json(r));
  return cfg;
}

ServiceConfig ServiceConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read service config " + path.string());
  return from_json(std::string((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>{}));
}

struct VanService::Impl {
  explicit Impl(const std::filesystem::path& data_dir) : paths(data_dir) {}
  ~Impl() {
    if (lock_fd >= 0) ::close(lock_fd);
  }

  Paths paths;
  int lock_fd = -1;
  std::unique_ptr<secenv::Keystore> keystore;
  std::unique_ptr<DiskSink> sink;
  httplib::Server server;
  std::thread server_thread;
  std::thread delivery_thread;
  std::atomic<bool> stopping{false};
  std::mutex cv_mutex;
  std::condition_variable cv;
  std::map<std::string, std::string> peer_tokens;  // endpoint base -> session
};

VanService::VanService(const ServiceConfig& config) : config_(config) {
  if (config_.data_dir.empty()) throw std::runtime_error("dataDir is required");
  std::filesystem::create_directories(config_.data_dir);
  impl_ = std::make_unique<Impl>(config_.data_dir);
  std::filesystem::create_directories(impl_->paths.blobs);

  impl_->lock_fd = ::open(impl_->paths.lock.c_str(), O_CREAT | O_RDWR, 0644);
  if (impl_->lock_fd < 0)
    throw std::runtime_error("cannot open lock file " + impl_->paths.lock.string());
  if (::flock(impl_->lock_fd, LOCK_EX | LOCK_NB) != 0) {
    ::close(impl_->lock_fd);
    impl_->lock_fd = -1;
    throw DataDirLocked(config_.data_dir.string());
  }

  std::filesystem::path ks_dir =
      config_.keystore_dir.empty() ? config_.data_dir / "keys" : config_.keystore_dir;
  impl_->keystore = std::make_unique<secenv::Keystore>(secenv::Keystore::open(ks_dir));
  if (!impl_->keystore->has(config_.van_key_id, secenv::KeyKind::private_key))
    impl_->keystore->generate_pair(config_.van_key_id);

  vc::VanConfig van_cfg;
  van_cfg.session_ttl_ms = config_.session_ttl_s * 1000;
  van_cfg.max_hops = config_.max_hops;
  van_cfg.van_key_id = config_.van_key_id;
  impl_->sink = std::make_unique<DiskSink>(impl_->paths);
  van_ = std::make_unique<vc::Van>(van_cfg, impl_->keystore.get(), impl_->sink.get());

  recover_state(*van_, impl_->paths);

  // Routes named in the config are seeded every boot; they may also appear in
  // partners.json once an admin touches routes, hence the dedup.
  for (const vc::InterconnectRoute& r : config_.routes) {
    bool present = false;
    for (const vc::InterconnectRoute& existing : van_->routes())
      if (existing.pattern == r.pattern && existing.endpoint == r.endpoint) present = true;
    if (!present) van_->restore_route(r);
  }

  if (!config_.admin_password.empty())
    van_->bootstrap_admin(config_.admin_id, config_.admin_password, now_ms());
}

VanService::~VanService() { stop(); }

std::string VanService::base_url() const {
  return "http://" + config_.listen_host + ":" + std::to_string(port_);
}

std::string VanService::replay_fingerprint(const ServiceConfig& config) {
  Paths paths(config.data_dir);
  vc::VanConfig van_cfg;
  van_cfg.session_ttl_ms = config.session_ttl_s * 1000;
  van_cfg.max_hops = config.max_hops;
  van_cfg.van_key_id = config.van_key_id;
  vc::Van van(van_cfg, nullptr, nullptr);
  recover_state(van, paths);
  return van.snapshot();
}

void VanService::start() {
  httplib::Server& svr = impl_->server;
  vc::Van* van = van_.get();
  secenv::Keystore* keystore = impl_->keystore.get();

  svr.Get("/v1/ping", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("pong", "text/plain");
  });

  svr.Post("/v1/session", [van](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = json::parse(req.body);
      vc::SessionToken token =
          van->authenticate(body.at("partnerId").get<std::string>(),
                            body.at("password").get<std::string>(), now_ms());
      res.set_content(json{{"token", token.token},
                           {"partnerId", token.partner_id},
                           {"expires", token.expires}}
                          .dump(),
                      "application/json");
    });
  });

  svr.Post("/v1/deposit", [van](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      vc::MessageHeader header;
      header.sender_id = req.get_header_value("X-EDI-Sender");
      header.recipient_id = req.get_header_value("X-EDI-Recipient");
      header.control = req.get_header_value("X-EDI-Control");
      header.doc_types = split_csv(req.get_header_value("X-EDI-DocTypes"));
      header.ack_requested = req.get_header_value("X-EDI-Ack") == "1";
      if (req.has_header("X-EDI-Hops"))
        header.hop_count = std::stoi(req.get_header_value("X-EDI-Hops"));
      if (header.sender_id.empty() || header.recipient_id.empty() ||
          header.control.empty())
        return send_error(res, 400, "BAD_HEADER",
                          "X-EDI-Sender, X-EDI-Recipient and X-EDI-Control are required");

      vc::DepositOutcome outcome = van->deposit(req.get_header_value("X-EDI-Session"),
                                                std::move(header), body_bytes(req),
                                                now_ms());
      json j{{"messageId", outcome.message_id},
             {"status", std::string(vc::to_string(outcome.status))}};
      if (outcome.status == vc::MessageStatus::rejected) {
        j["reason"] = outcome.reject_reason;
        res.status = 422;
        res.set_content(j.dump(), "application/json");
      } else {
        res.set_content(j.dump(), "application/json");
      }
    });
  });

  svr.Get("/v1/mailbox", [van](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      vc::RetrieveFilter filter;
      if (req.has_param("since")) filter.since = std::stoll(req.get_param_value("since"));
      if (req.has_param("docType")) filter.doc_type = req.get_param_value("docType");
      filter.redeliver = req.get_param_value("redeliver") == "1";
      std::vector<vc::RetrievedMessage> messages =
          van->retrieve(req.get_header_value("X-EDI-Session"), filter, now_ms());

      std::string boundary = make_boundary();
      std::vector<MultipartPart> parts;
      for (const vc::RetrievedMessage& m : messages) {
        MultipartPart part;
        part.headers["Content-Type"] = "application/octet-stream";
        part.headers["X-EDI-Message-Id"] = std::to_string(m.id);
        part.headers["X-EDI-Sender"] = m.header.sender_id;
        part.headers["X-EDI-Control"] = m.header.control;
        part.headers["X-EDI-DocTypes"] = join_csv(m.header.doc_types);
        part.headers["X-EDI-Ack"] = m.header.ack_requested ? "1" : "0";
        part.headers["X-EDI-Queued-At"] = std::to_string(m.queued_at);
        part.body.assign(m.payload.begin(), m.payload.end());
        parts.push_back(std::move(part));
      }
      res.set_content(build_multipart(parts, boundary),
                      ("multipart/mixed; boundary=" + boundary).c_str());
    });
  });

  svr.Post(R"(/v1/messages/(\d+)/ack)",
           [van](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               std::uint64_t id = std::stoull(req.matches[1].str());
               van->acknowledge(req.get_header_value("X-EDI-Session"), id, now_ms());
               res.set_content(json{{"acknowledged", true}}.dump(), "application/json");
             });
           });

  svr.Get("/v1/audit", [van](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      vc::AuditQuery query;
      if (req.has_param("messageId"))
        query.message_id = std::stoull(req.get_param_value("messageId"));
      if (req.has_param("partnerId")) query.partner_id = req.get_param_value("partnerId");
      if (req.has_param("from")) query.from = std::stoll(req.get_param_value("from"));
      if (req.has_param("to")) query.to = std::stoll(req.get_param_value("to"));
      std::vector<vc::AuditEvent> events =
          van->audit_trail(req.get_header_value("X-EDI-Session"), query, now_ms());
      json j;
      j["events"] = json::array();
      for (const vc::AuditEvent& e : events) {
        json je = audit_to_json(e);
        je.erase("t");
        j["events"].push_back(je);
      }
      res.set_content(j.dump(), "application/json");
    });
  });

  svr.Get("/v1/accounting", [van](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.has_param("partnerId"))
        return send_error(res, 400, "BAD_QUERY", "partnerId is required");
      std::int64_t from = req.has_param("from") ? std::stoll(req.get_param_value("from")) : 0;
      std::int64_t to = req.has_param("to") ? std::stoll(req.get_param_value("to")) : now_ms();
      vc::AccountingReport report =
          van->accounting(req.get_header_value("X-EDI-Session"),
                          req.get_param_value("partnerId"), from, to, now_ms());
      res.set_content(json{{"partnerId", report.partner_id},
                           {"from", report.from},
                           {"to", report.to},
                           {"messagesIn", report.messages_in},
                           {"messagesOut", report.messages_out},
                           {"bytesIn", report.bytes_in},
                           {"bytesOut", report.bytes_out}}
                          .dump(),
                      "application/json");
    });
  });

  auto upsert = [van, keystore](const httplib::Request& req, httplib::Response& res,
                                const std::string& id_from_path) {
    guarded(res, [&] {
      json body = json::parse(req.body);
      if (!id_from_path.empty()) body["partnerId"] = id_from_path;
      vc::PartnerProfile profile = profile_from_json(body);
      std::optional<std::string> password;
      if (body.contains("password")) password = body.at("password").get<std::string>();
      if (body.contains("publicKeyHex"))
        keystore->put_public(profile.partner_id,
                             secenv::from_hex(body.at("publicKeyHex").get<std::string>()));
      van->upsert_partner(req.get_header_value("X-EDI-Session"), std::move(profile),
                          password, now_ms());
      res.set_content(json{{"ok", true}}.dump(), "application/json");
    });
  };

  svr.Post("/v1/partners", [upsert](const httplib::Request& req, httplib::Response& res) {
    upsert(req, res, "");
  });
  svr.Put(R"(/v1/partners/([^/]+))",
          [upsert](const httplib::Request& req, httplib::Response& res) {
            upsert(req, res, req.matches[1].str());
          });

  svr.Post("/v1/routes", [van](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      van->add_route(req.get_header_value("X-EDI-Session"),
                     route_from_json(json::parse(req.body)), now_ms());
      res.set_content(json{{"ok", true}}.dump(), "application/json");
    });
  });

  if (config_.listen_port == 0) {
    port_ = svr.bind_to_any_port(config_.listen_host);
    if (port_ < 0) throw BindFailure("cannot bind to " + config_.listen_host);
  } else {
    if (!svr.bind_to_port(config_.listen_host, config_.listen_port))
      throw BindFailure("cannot bind to " + config_.listen_host + ":" +
                        std::to_string(config_.listen_port));
    port_ = config_.listen_port;
  }

  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  while (!impl_->server.is_running() && !impl_->stopping)
    std::this_thread::sleep_for(std::chrono::milliseconds(1));

  write_file_atomic(impl_->paths.port, std::to_string(port_) + "\n");

  impl_->delivery_thread = std::thread([this] {
    std::unique_lock lk(impl_->cv_mutex);
    while (!impl_->stopping) {
      impl_->cv.wait_for(lk, std::chrono::milliseconds(config_.delivery_interval_ms));
      if (impl_->stopping) break;
      lk.unlock();
      try {
        run_delivery_tick();
      } catch (const std::exception&) {
        // Delivery failures are recorded per message by the Van; a tick must
        // never take the loop down.
      }
      lk.lock();
    }
  });
}

void VanService::run_delivery_tick() {
  vc::DeliveryActions actions = van_->collect_delivery_actions(now_ms());

  for (const vc::PushAction& push : actions.pushes) {
    auto [base, path] = split_url(push.endpoint);
    httplib::Client cli(base);
    cli.set_connection_timeout(2, 0);
    cli.set_read_timeout(5, 0);
    httplib::Headers headers = {
        {"X-EDI-Message-Id", std::to_string(push.message_id)},
        {"X-EDI-Sender", push.header.sender_id},
        {"X-EDI-Control", push.header.control},
        {"X-EDI-DocTypes", join_csv(push.header.doc_types)},
    };
    std::string body(push.payload.begin(), push.payload.end());
    httplib::Result res = cli.Post(path, headers, body, "application/octet-stream");
    bool ok = res && res->status / 100 == 2;
    van_->record_push_result(push.message_id, ok, now_ms());
  }

  for (const vc::NotifyAction& notify : actions.notifications) {
    auto [base, path] = split_url(notify.endpoint);
    httplib::Client cli(base);
    cli.set_connection_timeout(2, 0);
    cli.set_read_timeout(5, 0);
    json notice{{"message_id", notify.message_id},
                {"sender", notify.sender},
                {"doc_types", notify.doc_types},
                {"queued_at", notify.queued_at}};
    httplib::Result res = cli.Post(path, notice.dump(), "application/json");
    bool ok = res && res->status / 100 == 2;
    van_->record_notify_result(notify.message_id, ok, now_ms());
  }

  for (const vc::RelayAction& relay : actions.relays) {
    auto [base, _] = split_url(relay.endpoint);
    bool definitive = false;
    std::string outcome = "peer unreachable";

    for (int attempt = 0; attempt < 2; ++attempt) {
      httplib::Client cli(base);
      cli.set_connection_timeout(2, 0);
      cli.set_read_timeout(5, 0);

      std::string& token = impl_->peer_tokens[base];
      if (token.empty()) {
        httplib::Result login =
            cli.Post("/v1/session",
                     json{{"partnerId", relay.peer_id}, {"password", relay.peer_password}}
                         .dump(),
                     "application/json");
        if (!login || login->status != 200) {
          outcome = login ? "peer login failed with status " + std::to_string(login->status)
                          : "peer unreachable";
          break;
        }
        token = json::parse(login->body).at("token").get<std::string>();
      }

      httplib::Headers headers = {
          {"X-EDI-Session", token},
          {"X-EDI-Sender", relay.header.sender_id},
          {"X-EDI-Recipient", relay.header.recipient_id},
          {"X-EDI-Control", relay.header.control},
          {"X-EDI-DocTypes", join_csv(relay.header.doc_types)},
          {"X-EDI-Ack", relay.header.ack_requested ? "1" : "0"},
          {"X-EDI-Hops", std::to_string(relay.header.hop_count)},
      };
      std::string body(relay.payload.begin(), relay.payload.end());
      httplib::Result res = cli.Post("/v1/deposit", headers, body,
                                     "application/octet-stream");
      if (!res) {
        outcome = "peer unreachable";
        break;
      }
      if (res->status == 401) {  // stale peer session; relog once
        token.clear();
        continue;
      }
      // The peer answered: 200 queued it, 409/422 definitively rejected it.
      definitive = res->status == 200 || res->status == 409 || res->status == 422;
      outcome = "peer status " + std::to_string(res->status);
      if (res->status == 422) {
        try {
          outcome += " reason " + json::parse(res->body).at("reason").get<std::string>();
        } catch (const std::exception&) {
        }
      }
      break;
    }
    van_->record_relay_result(relay.message_id, definitive, outcome, now_ms());
  }
}

void VanService::stop() {
  if (!impl_) return;
  {
    std::lock_guard lk(impl_->cv_mutex);
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  impl_->server.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
  if (impl_->delivery_thread.joinable()) impl_->delivery_thread.join();
}

}  // namespace edi::service
