// edi - trading partner client and VAN service launcher.
//
// Exit codes are part of the interface and stable:
//   0 success, 2 local error, 3 forbidden/authentication, 4 rejected by
//   screening or duplicate, 5 verification failure, 6 network failure.

#include <fcntl.h>
#include <sys/file.h>
#include <termios.h>
#include <unistd.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "edi/interchange.hpp"
#include "edi/multipart.hpp"
#include "edi/secenv.hpp"
#include "edi/translator.hpp"
#include "edi/vanservice.hpp"
#include "httplib.h"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
namespace ic = edi::interchange;
namespace tr = edi::translator;
namespace se = edi::secenv;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kLocal = 2;
constexpr int kForbidden = 3;
constexpr int kRejected = 4;
constexpr int kVerification = 5;
constexpr int kNetwork = 6;

struct ExitWith {
  int code;
  std::string message;
};

[[noreturn]] void bail(int code, const std::string& message) {
  throw ExitWith{code, message};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bail(kLocal, "cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>{});
}

void write_file(const fs::path& path, std::string_view content, bool restrict_perms = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) bail(kLocal, "cannot write " + path.string());
  out.close();
  if (restrict_perms)
    fs::permissions(path, fs::perms::owner_read | fs::perms::owner_write,
                    fs::perm_options::replace);
}

struct ClientConfig {
  std::string endpoint = "http://127.0.0.1:8472";
  std::string partner_id;
  fs::path keystore = "keys";
  fs::path maps_dir = "maps";
  fs::path cache_dir;
  bool ack_on_fetch = true;
  std::string van_key_id = "van";
};

ClientConfig load_config(const std::string& config_path) {
  ClientConfig cfg;
  fs::path path = config_path.empty() ? fs::path("edi.json") : fs::path(config_path);
  if (config_path.empty() && !fs::exists(path)) {
    cfg.cache_dir = ".edi-cache";
    return cfg;  // defaults only
  }
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    bail(kLocal, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.contains("password"))
    bail(kLocal, "config must not store a password; use EDI_PASSWORD or the prompt");
  fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  cfg.endpoint = j.value("endpoint", cfg.endpoint);
  cfg.partner_id = j.value("partnerId", "");
  cfg.keystore = resolve(j.value("keystore", "keys"));
  cfg.maps_dir = resolve(j.value("maps", "maps"));
  cfg.cache_dir = resolve(j.value("cacheDir", ".edi-cache"));
  cfg.ack_on_fetch = j.value("ackOnFetch", true);
  cfg.van_key_id = j.value("vanKeyId", "van");
  return cfg;
}

std::string prompt_password(const std::string& who) {
  const char* env = std::getenv("EDI_PASSWORD");
  if (env) return env;
  if (!isatty(STDIN_FILENO))
    bail(kLocal, "no password: set EDI_PASSWORD or run interactively");
  std::cerr << "password for " << who << ": " << std::flush;
  termios before{};
  tcgetattr(STDIN_FILENO, &before);
  termios quiet = before;
  quiet.c_lflag &= ~static_cast<tcflag_t>(ECHO);
  tcsetattr(STDIN_FILENO, TCSANOW, &quiet);
  std::string password;
  std::getline(std::cin, password);
  tcsetattr(STDIN_FILENO, TCSANOW, &before);
  std::cerr << "\n";
  return password;
}

// HTTP client with a cached session; re-login happens once on a stale token.
class VanClient {
 public:
  explicit VanClient(const ClientConfig& cfg) : cfg_(cfg) {}

  httplib::Result request(const std::function<httplib::Result(httplib::Client&,
                                                              const std::string&)>& fn) {
    ensure_session();
    httplib::Client cli = make_client();
    httplib::Result res = fn(cli, token_);
    if (res && res->status == 401) {
      drop_cache();
      ensure_session();
      httplib::Client retry = make_client();
      res = fn(retry, token_);
    }
    if (!res) bail(kNetwork, "cannot reach " + cfg_.endpoint);
    return res;
  }

  const std::string& partner() const { return cfg_.partner_id; }

 private:
  httplib::Client make_client() {
    httplib::Client cli(cfg_.endpoint);
    cli.set_connection_timeout(5, 0);
    cli.set_read_timeout(30, 0);
    return cli;
  }

  fs::path cache_path() const {
    return cfg_.cache_dir / ("session-" + cfg_.partner_id + ".json");
  }

  void drop_cache() {
    token_.clear();
    std::error_code ec;
    fs::remove(cache_path(), ec);
  }

  void ensure_session() {
    if (!token_.empty()) return;
    if (cfg_.partner_id.empty()) bail(kLocal, "config needs a partnerId");
    // The cache holds the token only, never the password.
    std::error_code ec;
    if (fs::exists(cache_path(), ec)) {
      try {
        json j = json::parse(read_file(cache_path()));
        if (j.value("endpoint", "") == cfg_.endpoint &&
            j.value("expires", std::int64_t{0}) > edi::service::now_ms() + 5000) {
          token_ = j.value("token", "");
          if (!token_.empty()) return;
        }
      } catch (const std::exception&) {
      }
    }
    std::string password = prompt_password(cfg_.partner_id);
    httplib::Client cli = make_client();
    httplib::Result res =
        cli.Post("/v1/session",
                 json{{"partnerId", cfg_.partner_id}, {"password", password}}.dump(),
                 "application/json");
    if (!res) bail(kNetwork, "cannot reach " + cfg_.endpoint);
    if (res->status == 401) bail(kForbidden, "authentication failed");
    if (res->status != 200) bail(kNetwork, "login failed with status " + std::to_string(res->status));
    json j = json::parse(res->body);
    token_ = j.at("token").get<std::string>();
    write_file(cache_path(),
               json{{"token", token_},
                    {"expires", j.at("expires").get<std::int64_t>()},
                    {"endpoint", cfg_.endpoint}}
                   .dump(),
               true);
  }

  ClientConfig cfg_;
  std::string token_;
};

[[noreturn]] void bail_http(const httplib::Result& res, const std::string& what) {
  std::string reason;
  try {
    json j = json::parse(res->body);
    reason = j.value("reason", j.value("error", ""));
    if (j.contains("message") && reason.empty()) reason = j.at("message").get<std::string>();
  } catch (const std::exception&) {
  }
  std::string message = what + " failed with status " + std::to_string(res->status) +
                        (reason.empty() ? "" : ": " + reason);
  switch (res->status) {
    case 401:
    case 403: bail(kForbidden, message);
    case 409:
    case 422: bail(kRejected, reason.empty() ? message : reason);
    default: bail(res->status >= 500 ? kNetwork : kLocal, message);
  }
}

// Interchange control numbers are issued from a per-partner counter file,
// flocked so concurrent invocations never reuse a number.
std::string next_control(const ClientConfig& cfg) {
  fs::create_directories(cfg.cache_dir);
  fs::path path = cfg.cache_dir / ("controls-" + cfg.partner_id + ".json");
  int fd = ::open(path.c_str(), O_CREAT | O_RDWR, 0600);
  if (fd < 0) bail(kLocal, "cannot open counter file " + path.string());
  ::flock(fd, LOCK_EX);
  std::string content;
  char buf[256];
  ssize_t n;
  while ((n = ::read(fd, buf, sizeof buf)) > 0) content.append(buf, static_cast<std::size_t>(n));
  ic::ControlCounter counter;
  if (!content.empty()) {
    try {
      counter.last_issued = json::parse(content).value("isa", std::uint64_t{0});
    } catch (const std::exception&) {
    }
  }
  std::string control;
  try {
    control = ic::next_control_number(counter);
  } catch (const ic::CounterExhausted& e) {
    ::close(fd);
    bail(kLocal, e.what());
  }
  std::string updated = json{{"isa", counter.last_issued}}.dump();
  ::lseek(fd, 0, SEEK_SET);
  if (::ftruncate(fd, 0) != 0 ||
      ::write(fd, updated.data(), updated.size()) != static_cast<ssize_t>(updated.size())) {
    ::close(fd);
    bail(kLocal, "cannot update counter file " + path.string());
  }
  ::close(fd);  // releases the lock
  return control;
}

tr::MappingSpec resolve_map(const ClientConfig& cfg, const std::string& map_arg,
                            const std::string& doc_type) {
  fs::path path;
  if (!map_arg.empty()) {
    path = map_arg;
  } else {
    std::string lower = doc_type;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    path = cfg.maps_dir / (lower + ".map.json");
  }
  if (!fs::exists(path)) bail(kLocal, "no mapping file " + path.string());
  return tr::load_map_file(path);
}

std::string csv(const std::set<std::string>& values) {
  std::string out;
  for (const std::string& v : values) {
    if (!out.empty()) out += ",";
    out += v;
  }
  return out;
}

// ---- commands -----------------------------------------------------------------

int cmd_keygen(const ClientConfig& cfg, bool pair, bool psk, const std::string& id) {
  if (pair == psk) bail(kLocal, "choose exactly one of --pair or --psk");
  se::Keystore ks = se::Keystore::open(cfg.keystore);
  if (pair) {
    ks.generate_pair(id);
    std::cout << id << "\n";
    std::cerr << "wrote " << (cfg.keystore / (id + ".pub")).string() << " and "
              << (cfg.keystore / (id + ".priv")).string() << "\n";
  } else {
    ks.generate_psk(id);
    std::cout << id << "\n";
    std::cerr << "wrote " << (cfg.keystore / (id + ".psk")).string() << "\n";
  }
  return kOk;
}

int cmd_send(const ClientConfig& cfg, const std::string& doc_path, const std::string& map_arg,
             const std::string& recipient, const std::string& suite, bool ack,
             const std::string& forced_control) {
  tr::InternalDocument doc;
  try {
    doc = tr::document_from_json(read_file(doc_path));
  } catch (const tr::DocumentParseError& e) {
    bail(kLocal, e.what());
  }
  tr::MappingSpec map = resolve_map(cfg, map_arg, doc.doc_type);

  tr::OutboundStamp stamp;
  stamp.control_number = forced_control.empty() ? next_control(cfg) : forced_control;
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char date[16], time_buf[8];
  std::strftime(date, sizeof date, "%Y%m%d", &tm);
  std::strftime(time_buf, sizeof time_buf, "%H%M", &tm);
  stamp.date = date;
  stamp.time = time_buf;
  stamp.ack_requested = ack;

  std::string wire;
  try {
    ic::Interchange interchange =
        tr::translate_outbound(doc, map, cfg.partner_id, recipient, stamp);
    wire = ic::serialize_interchange(interchange);
  } catch (const tr::TranslateError& e) {
    bail(kLocal, e.what());
  } catch (const ic::InvariantViolation& e) {
    bail(kLocal, e.what());
  }

  se::Keystore ks = se::Keystore::open(cfg.keystore);
  std::string payload;
  try {
    se::SecureEnvelope env = se::wrap(
        {reinterpret_cast<const std::uint8_t*>(wire.data()), wire.size()}, cfg.partner_id,
        recipient, suite, ks);
    se::Bytes raw = se::encode_envelope(env);
    payload.assign(raw.begin(), raw.end());
  } catch (const std::exception& e) {
    bail(kLocal, e.what());
  }

  VanClient van(cfg);
  httplib::Result res = van.request([&](httplib::Client& cli, const std::string& token) {
    httplib::Headers headers = {
        {"X-EDI-Session", token},
        {"X-EDI-Sender", cfg.partner_id},
        {"X-EDI-Recipient", recipient},
        {"X-EDI-Control", stamp.control_number},
        {"X-EDI-DocTypes", doc.doc_type},
        {"X-EDI-Ack", ack ? "1" : "0"},
    };
    return cli.Post("/v1/deposit", headers, payload, "application/octet-stream");
  });
  if (res->status != 200) bail_http(res, "deposit");
  json j = json::parse(res->body);
  std::cout << j.at("messageId").get<std::uint64_t>() << "\n";
  std::cerr << "control " << stamp.control_number << " " << j.at("status").get<std::string>()
            << "\n";
  return kOk;
}

int cmd_fetch(const ClientConfig& cfg, const std::string& out_dir, const std::string& doc_type,
              std::int64_t since, bool redeliver, bool no_ack, bool no_translate) {
  VanClient van(cfg);
  std::string query;
  if (!doc_type.empty()) query += (query.empty() ? "?" : "&") + std::string("docType=") + doc_type;
  if (since >= 0) query += (query.empty() ? "?" : "&") + std::string("since=") + std::to_string(since);
  if (redeliver) query += (query.empty() ? "?" : "&") + std::string("redeliver=1");

  httplib::Result res = van.request([&](httplib::Client& cli, const std::string& token) {
    return cli.Get(("/v1/mailbox" + query).c_str(), {{"X-EDI-Session", token}});
  });
  if (res->status != 200) bail_http(res, "mailbox");
  auto boundary = edi::service::boundary_from_content_type(res->get_header_value("Content-Type"));
  if (!boundary) bail(kLocal, "mailbox response is not multipart");
  std::vector<edi::service::MultipartPart> parts =
      edi::service::parse_multipart(res->body, *boundary);

  se::Keystore ks = se::Keystore::open(cfg.keystore);
  fs::path out(out_dir);
  fs::create_directories(out);
  fs::path quarantine = out / "quarantine";

  int failures = 0;
  for (const edi::service::MultipartPart& part : parts) {
    const std::string& id = part.headers.at("X-EDI-Message-Id");
    se::Bytes payload(part.body.begin(), part.body.end());

    std::optional<se::Bytes> plaintext;
    std::string failure;
    try {
      se::UnwrapResult result = se::unwrap(se::decode_envelope(payload), ks);
      if (result.plaintext)
        plaintext = std::move(result.plaintext);
      else
        failure = result.report.detail;
    } catch (const se::MalformedEnvelope& e) {
      failure = e.what();
    }

    if (!plaintext) {
      write_file(quarantine / (id + ".sec"), part.body);
      std::cerr << "message " << id << " quarantined: " << failure << "\n";
      ++failures;
      continue;
    }

    std::string wire(plaintext->begin(), plaintext->end());
    write_file(out / (id + ".edi"), wire);

    if (!no_translate) {
      try {
        ic::Interchange doc = ic::parse_interchange(wire);
        if (!doc.groups.empty()) {
          std::string dt = doc.groups[0].doc_type;
          std::string lower = dt;
          for (char& c : lower)
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
          fs::path map_path = cfg.maps_dir / (lower + ".map.json");
          if (fs::exists(map_path)) {
            std::vector<tr::InternalDocument> docs =
                tr::translate_inbound(doc, tr::load_map_file(map_path));
            for (std::size_t i = 0; i < docs.size(); ++i)
              write_file(out / (id + "." + std::to_string(i) + ".json"),
                         tr::document_to_json(docs[i]));
          }
        }
      } catch (const std::exception& e) {
        std::cerr << "message " << id << " translated with errors: " << e.what() << "\n";
      }
    }

    if (!no_ack && cfg.ack_on_fetch) {
      httplib::Result ack = van.request([&](httplib::Client& cli, const std::string& token) {
        return cli.Post(("/v1/messages/" + id + "/ack").c_str(),
                        {{"X-EDI-Session", token}}, "", "text/plain");
      });
      // 409 covers both already-acknowledged and no-expectation cases.
      if (ack->status != 200 && ack->status != 409)
        std::cerr << "message " << id << " ack failed with status " << ack->status << "\n";
    }
  }

  std::cout << parts.size() << " messages\n";
  return failures > 0 ? kVerification : kOk;
}

int cmd_unwrap(const ClientConfig& cfg, const std::string& file, const std::string& out_path) {
  std::string raw = read_file(file);
  se::Keystore ks = se::Keystore::open(cfg.keystore);
  try {
    se::UnwrapResult result = se::unwrap(
        se::decode_envelope({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()}),
        ks);
    const se::VerificationReport& r = result.report;
    std::cerr << "decrypted: " << (r.decrypted_ok ? "ok" : "FAILED")
              << "\ndigest: " << (r.digest_ok ? "ok" : "FAILED")
              << "\nsignature: " << (r.signature_ok ? "ok" : "FAILED");
    if (r.signer) std::cerr << " (signer " << *r.signer << ")";
    std::cerr << "\n";
    if (!result.plaintext) {
      std::cerr << "verification failed: " << r.detail << "; nothing released\n";
      return kVerification;
    }
    std::string text(result.plaintext->begin(), result.plaintext->end());
    if (out_path.empty())
      std::cout << text;
    else
      write_file(out_path, text);
    return kOk;
  } catch (const se::MalformedEnvelope& e) {
    std::cerr << "malformed envelope: " << e.what() << "\n";
    return kVerification;
  }
}

int cmd_status(const ClientConfig& cfg, std::uint64_t message_id) {
  VanClient van(cfg);
  httplib::Result res = van.request([&](httplib::Client& cli, const std::string& token) {
    return cli.Get(("/v1/audit?messageId=" + std::to_string(message_id)).c_str(),
                   {{"X-EDI-Session", token}});
  });
  if (res->status != 200) bail_http(res, "status");
  static const std::map<std::string, std::string> kStatusOf = {
      {"DEPOSIT", "RECEIVED"},      {"SCREEN_ACCEPT", "QUEUED"},
      {"SCREEN_REJECT", "REJECTED"}, {"RETRIEVE", "DELIVERED"},
      {"PUSH_OK", "DELIVERED"},     {"RELAY_OK", "FORWARDED_REMOTE"},
      {"ACK", "ACKNOWLEDGED"},
  };
  json body = json::parse(res->body);
  for (const json& e : body.at("events")) {
    std::string action = e.at("action").get<std::string>();
    auto it = kStatusOf.find(action);
    std::cout << e.at("ts").get<std::int64_t>() << "  "
              << (it != kStatusOf.end() ? it->second : action);
    std::string detail = e.at("detail").get<std::string>();
    if (!detail.empty()) std::cout << "  " << detail;
    std::cout << "\n";
  }
  return kOk;
}

int cmd_audit(const ClientConfig& cfg, std::uint64_t message_id, const std::string& partner,
              std::int64_t from, std::int64_t to) {
  VanClient van(cfg);
  std::string query;
  auto add = [&](const std::string& k, const std::string& v) {
    query += (query.empty() ? "?" : "&") + k + "=" + v;
  };
  if (message_id != 0) add("messageId", std::to_string(message_id));
  if (!partner.empty()) add("partnerId", partner);
  if (from >= 0) add("from", std::to_string(from));
  if (to >= 0) add("to", std::to_string(to));
  httplib::Result res = van.request([&](httplib::Client& cli, const std::string& token) {
    return cli.Get(("/v1/audit" + query).c_str(), {{"X-EDI-Session", token}});
  });
  if (res->status != 200) bail_http(res, "audit");
  json body = json::parse(res->body);
  for (const json& e : body.at("events")) {
    std::cout << e.at("seq").get<std::uint64_t>() << "  " << e.at("ts").get<std::int64_t>()
              << "  ";
    if (e.at("msg").get<std::uint64_t>() != 0) std::cout << "msg=" << e.at("msg") << "  ";
    std::cout << e.at("actor").get<std::string>() << "  " << e.at("action").get<std::string>();
    std::string detail = e.at("detail").get<std::string>();
    if (!detail.empty()) std::cout << "  " << detail;
    std::cout << "\n";
  }
  return kOk;
}

int cmd_partner(const ClientConfig& cfg, bool update, const json& profile) {
  VanClient van(cfg);
  httplib::Result res = van.request([&](httplib::Client& cli, const std::string& token) {
    httplib::Headers headers = {{"X-EDI-Session", token}};
    if (update)
      return cli.Put(("/v1/partners/" + profile.at("partnerId").get<std::string>()).c_str(),
                     headers, profile.dump(), "application/json");
    return cli.Post("/v1/partners", headers, profile.dump(), "application/json");
  });
  if (res->status != 200) bail_http(res, "partner");
  std::cout << "ok\n";
  return kOk;
}

int cmd_route(const ClientConfig& cfg, const json& route) {
  VanClient van(cfg);
  httplib::Result res = van.request([&](httplib::Client& cli, const std::string& token) {
    return cli.Post("/v1/routes", {{"X-EDI-Session", token}}, route.dump(),
                    "application/json");
  });
  if (res->status != 200) bail_http(res, "route");
  std::cout << "ok\n";
  return kOk;
}

std::atomic<bool> g_shutdown{false};

int cmd_serve(const std::string& service_config) {
  edi::service::ServiceConfig cfg;
  try {
    cfg = edi::service::ServiceConfig::from_json_file(service_config);
  } catch (const std::exception& e) {
    bail(kLocal, e.what());
  }
  try {
    edi::service::VanService service(cfg);
    service.start();
    std::cerr << "listening on " << service.base_url() << " (data "
              << cfg.data_dir.string() << ")\n";
    struct sigaction sa {};
    sa.sa_handler = [](int) { g_shutdown = true; };
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
    while (!g_shutdown) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    service.stop();
    return kOk;
  } catch (const edi::service::DataDirLocked& e) {
    bail(kLocal, e.what());
  } catch (const edi::service::BindFailure& e) {
    bail(kLocal, e.what());
  } catch (const edi::service::CorruptJournal& e) {
    bail(kLocal, e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edi - secure EDI trading over a value-added network"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "client config file (default ./edi.json)");

  auto* send = app.add_subcommand("send", "translate, wrap and deposit a document");
  std::string doc_path, map_arg, recipient, suite = "PUB-1", forced_control;
  bool ack = false;
  send->add_option("--doc", doc_path, "internal document (JSON)")->required();
  send->add_option("--map", map_arg, "mapping file (default maps/<doctype>.map.json)");
  send->add_option("--recipient", recipient, "receiving partner id")->required();
  send->add_option("--suite", suite, "cipher suite: PUB-1 or PSK-1");
  send->add_flag("--ack", ack, "request a delivery acknowledgment");
  send->add_option("--control", forced_control, "force an interchange control number");

  auto* fetch = app.add_subcommand("fetch", "retrieve, verify and translate the mailbox");
  std::string out_dir = "inbox", fetch_doc_type;
  std::int64_t since = -1;
  bool redeliver = false, no_ack = false, no_translate = false;
  fetch->add_option("--out", out_dir, "output directory");
  fetch->add_option("--doc-type", fetch_doc_type, "only this document type");
  fetch->add_option("--since", since, "only messages queued at/after this timestamp (ms)");
  fetch->add_flag("--redeliver", redeliver, "include already-delivered messages");
  fetch->add_flag("--no-ack", no_ack, "do not acknowledge fetched messages");
  fetch->add_flag("--no-translate", no_translate, "skip inbound translation");

  auto* unwrap = app.add_subcommand("unwrap", "decrypt and verify one envelope file");
  std::string unwrap_file, unwrap_out;
  unwrap->add_option("file", unwrap_file, "envelope (.sec) file")->required();
  unwrap->add_option("--out", unwrap_out, "write plaintext here instead of stdout");

  auto* status = app.add_subcommand("status", "print a message's audit chain");
  std::uint64_t status_id = 0;
  status->add_option("message_id", status_id, "message id")->required();

  auto* audit = app.add_subcommand("audit", "query the audit trail");
  std::uint64_t audit_msg = 0;
  std::string audit_partner;
  std::int64_t audit_from = -1, audit_to = -1;
  audit->add_option("--message-id", audit_msg, "one message's events");
  audit->add_option("--partner", audit_partner, "one partner's traffic (admin or self)");
  audit->add_option("--from", audit_from, "period start (ms)");
  audit->add_option("--to", audit_to, "period end (ms)");

  auto* keygen = app.add_subcommand("keygen", "create keys in the local keystore");
  bool gen_pair = false, gen_psk = false;
  std::string key_id;
  keygen->add_flag("--pair", gen_pair, "signing/exchange keypair");
  keygen->add_flag("--psk", gen_psk, "32-byte pre-shared key");
  keygen->add_option("--id", key_id, "key id")->required();

  auto* partner = app.add_subcommand("partner", "add or update a partner profile (admin)");
  std::string p_action, p_id, p_password, p_role = "user", p_mode = "retrieve";
  std::string p_endpoint, p_notify, p_pubkey;
  std::vector<std::string> p_senders, p_docs, p_notify_types;
  bool p_auto_ack = false;
  partner->add_option("action", p_action, "add | update")->required();
  partner->add_option("--id", p_id, "partner id")->required();
  partner->add_option("--password", p_password, "initial password (add) or new password");
  partner->add_option("--role", p_role, "user | admin | peer");
  partner->add_option("--authorize", p_senders, "authorized sending partners")->delimiter(',');
  partner->add_option("--allow", p_docs, "allowed document types")->delimiter(',');
  partner->add_option("--mode", p_mode, "retrieve | forward");
  partner->add_option("--endpoint", p_endpoint, "forward endpoint URL");
  partner->add_option("--notify", p_notify, "notification webhook URL");
  partner->add_option("--notify-types", p_notify_types, "notification doc-type filter")
      ->delimiter(',');
  partner->add_flag("--auto-ack", p_auto_ack, "acknowledge deliveries automatically");
  partner->add_option("--pubkey", p_pubkey, "partner public key file (.pub)");

  auto* route = app.add_subcommand("route", "add an interconnect route (admin)");
  std::string r_action, r_pattern, r_endpoint, r_peer_id, r_peer_password;
  route->add_option("action", r_action, "add")->required();
  route->add_option("--pattern", r_pattern, "partner id or prefix ending in *")->required();
  route->add_option("--endpoint", r_endpoint, "peer VAN base URL")->required();
  route->add_option("--peer-id", r_peer_id, "our account at the peer")->required();
  route->add_option("--peer-password", r_peer_password, "peer account password")->required();

  auto* serve = app.add_subcommand("serve", "run the VAN service");
  std::string service_config;
  serve->add_option("--service-config", service_config, "service config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kLocal;
  }

  try {
    ClientConfig cfg = load_config(config_path);
    if (*send) return cmd_send(cfg, doc_path, map_arg, recipient, suite, ack, forced_control);
    if (*fetch)
      return cmd_fetch(cfg, out_dir, fetch_doc_type, since, redeliver, no_ack, no_translate);
    if (*unwrap) return cmd_unwrap(cfg, unwrap_file, unwrap_out);
    if (*status) return cmd_status(cfg, status_id);
    if (*audit) return cmd_audit(cfg, audit_msg, audit_partner, audit_from, audit_to);
    if (*keygen) return cmd_keygen(cfg, gen_pair, gen_psk, key_id);
    if (*partner) {
      if (p_action != "add" && p_action != "update")
        bail(kLocal, "partner action must be add or update");
      json profile;
      profile["partnerId"] = p_id;
      if (!p_password.empty()) profile["password"] = p_password;
      profile["role"] = p_role;
      profile["authorizedSenders"] = p_senders;
      profile["allowedDocTypes"] = p_docs;
      profile["deliveryMode"] = p_mode;
      if (!p_endpoint.empty()) profile["forwardEndpoint"] = p_endpoint;
      if (!p_notify.empty()) {
        profile["notifyEndpoint"] = p_notify;
        profile["notifyDocTypes"] = p_notify_types;
      }
      profile["autoAck"] = p_auto_ack;
      if (!p_pubkey.empty()) {
        std::string raw = read_file(p_pubkey);
        profile["publicKeyHex"] =
            se::to_hex({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
      }
      return cmd_partner(cfg, p_action == "update", profile);
    }
    if (*route) {
      if (r_action != "add") bail(kLocal, "route action must be add");
      return cmd_route(cfg, json{{"pattern", r_pattern},
                                 {"endpoint", r_endpoint},
                                 {"peerId", r_peer_id},
                                 {"peerPassword", r_peer_password}});
    }
    if (*serve) return cmd_serve(service_config);
    return kLocal;
  } catch (const ExitWith& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kLocal;
  }
}
