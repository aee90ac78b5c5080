#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <fstream>
#include <thread>

#include "edi/interchange.hpp"
#include "edi/multipart.hpp"
#include "edi/secenv.hpp"
#include "edi/vanservice.hpp"
#include "httplib.h"
#include "json.hpp"
#include "support/testutil.hpp"

using namespace edi::service;
namespace vc = edi::van;
namespace se = edi::secenv;
using nlohmann::json;

TEST_CASE("journal round trips records and flags torn tails") {
  testutil::TempDir dir;
  std::filesystem::path path = dir.path() / "test.journal";

  CHECK(replay_journal(path).records.empty());  // missing file
  {
    JournalWriter w(path);
    w.append("one");
    w.append(R"({"t":"msg","id":1})");
  }
  ReplayResult r = replay_journal(path);
  REQUIRE(r.records.size() == 2);
  CHECK(r.records[0] == "one");
  CHECK_FALSE(r.torn_tail);

  // A torn trailing record is discarded, earlier records survive.
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    const char partial[] = {0x20, 0x00, 0x00, 0x00, 0x11};  // claims 32 bytes, has none
    out.write(partial, sizeof partial);
  }
  r = replay_journal(path);
  CHECK(r.records.size() == 2);
  CHECK(r.torn_tail);
}

TEST_CASE("a corrupt record refuses to load") {
  testutil::TempDir dir;
  std::filesystem::path path = dir.path() / "test.journal";
  {
    JournalWriter w(path);
    w.append("first-record");
    w.append("second-record");
  }
  // Flip a payload byte of the first (non-trailing) record.
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(8);
  f.put('X');
  f.close();
  CHECK_THROWS_AS(replay_journal(path), CorruptJournal);
}

TEST_CASE("a complete final record with a bad checksum is corruption, not tearing") {
  testutil::TempDir dir;
  std::filesystem::path path = dir.path() / "test.journal";
  {
    JournalWriter w(path);
    w.append("only-record");
  }
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(8);
  f.put('X');
  f.close();
  CHECK_THROWS_AS(replay_journal(path), CorruptJournal);
}

TEST_CASE("multipart bodies survive building and parsing") {
  std::mt19937 rng(5);
  std::string boundary = make_boundary();
  std::vector<MultipartPart> parts;
  for (int i = 0; i < 4; ++i) {
    MultipartPart p;
    p.headers["X-EDI-Message-Id"] = std::to_string(i);
    p.headers["Content-Type"] = "application/octet-stream";
    p.body = testutil::random_element(rng, 64) + "\r\n--tricky\r\n" +
             testutil::random_element(rng, 64);
    parts.push_back(p);
  }
  std::vector<MultipartPart> parsed = parse_multipart(build_multipart(parts, boundary), boundary);
  REQUIRE(parsed.size() == parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    CHECK(parsed[i].body == parts[i].body);
    CHECK(parsed[i].headers.at("X-EDI-Message-Id") == std::to_string(i));
  }
  CHECK(parse_multipart(build_multipart({}, boundary), boundary).empty());
}

namespace {

struct StubEndpoint {
  httplib::Server svr;
  int port = 0;
  std::thread thread;
  std::atomic<int> hits{0};
  std::atomic<int> status{200};
  std::mutex mutex;
  std::vector<std::string> bodies;

  StubEndpoint() {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex);
        bodies.push_back(req.body);
      }
      hits += 1;
      res.status = status.load();
      res.set_content("{}", "application/json");
    };
    svr.Post("/inbox", handler);
    svr.Post("/hook", handler);
    port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { svr.listen_after_bind(); });
    while (!svr.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  ~StubEndpoint() {
    svr.stop();
    thread.join();
  }
  std::string url(const std::string& path) {
    return "http://127.0.0.1:" + std::to_string(port) + path;
  }
};

struct ServiceFixture {
  testutil::TempDir root;
  se::Keystore client_ks = se::Keystore::open(root.path() / "client-keys");
  ServiceConfig cfg;
  std::unique_ptr<VanService> service;
  std::string admin_token;

  ServiceFixture() {
    cfg.data_dir = root.path() / "van";
    cfg.delivery_interval_ms = 50;
    cfg.admin_id = "admin";
    cfg.admin_password = "root-pw";
    cfg.session_ttl_s = 600;
    start_service();
    client_ks.generate_pair("A");
    client_ks.generate_pair("B");
    admin_token = login("admin", "root-pw");
  }

  void start_service() {
    service = std::make_unique<VanService>(cfg);
    service->start();
  }

  httplib::Client client() {
    httplib::Client c(service->base_url());
    c.set_connection_timeout(5, 0);
    c.set_read_timeout(10, 0);
    return c;
  }

  std::string login(const std::string& id, const std::string& pw) {
    auto res = client().Post("/v1/session",
                             json{{"partnerId", id}, {"password", pw}}.dump(),
                             "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    return json::parse(res->body).at("token").get<std::string>();
  }

  void add_partner(json profile, const std::string& key_id = "") {
    if (!key_id.empty()) {
      se::Bytes pub = client_ks.get(key_id, se::KeyKind::public_key).material;
      profile["publicKeyHex"] = se::to_hex(pub);
    }
    auto res = client().Post("/v1/partners", {{"X-EDI-Session", admin_token}},
                             profile.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
  }

  std::string envelope(const std::string& from, const std::string& to,
                       const std::string& text) {
    se::SecureEnvelope env = se::wrap(
        {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}, from, to,
        se::kSuitePub1, client_ks);
    se::Bytes raw = se::encode_envelope(env);
    return std::string(raw.begin(), raw.end());
  }

  httplib::Result deposit(const std::string& token, const std::string& from,
                          const std::string& to, const std::string& control,
                          const std::string& doc_types, const std::string& body,
                          bool ack = false) {
    httplib::Headers headers = {
        {"X-EDI-Session", token},   {"X-EDI-Sender", from},
        {"X-EDI-Recipient", to},    {"X-EDI-Control", control},
        {"X-EDI-DocTypes", doc_types}, {"X-EDI-Ack", ack ? "1" : "0"},
    };
    return client().Post("/v1/deposit", headers, body, "application/octet-stream");
  }

  std::vector<MultipartPart> fetch(const std::string& token, const std::string& query = "") {
    auto res = client().Get(("/v1/mailbox" + query).c_str(),
                            {{"X-EDI-Session", token}});
    REQUIRE(res);
    REQUIRE(res->status == 200);
    auto boundary = boundary_from_content_type(res->get_header_value("Content-Type"));
    REQUIRE(boundary.has_value());
    return parse_multipart(res->body, *boundary);
  }

  json audit_for_message(std::uint64_t id) {
    auto res = client().Get(("/v1/audit?messageId=" + std::to_string(id)).c_str(),
                            {{"X-EDI-Session", admin_token}});
    REQUIRE(res);
    REQUIRE(res->status == 200);
    return json::parse(res->body).at("events");
  }

  bool wait_for_action(std::uint64_t id, const std::string& action, int count = 1,
                       int timeout_ms = 3000) {
    for (int waited = 0; waited < timeout_ms; waited += 20) {
      int seen = 0;
      for (const json& e : audit_for_message(id))
        if (e.at("action").get<std::string>() == action) ++seen;
      if (seen >= count) return true;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    return false;
  }
};

}  // namespace

TEST_CASE("the HTTP surface runs the whole trading cycle") {
  ServiceFixture fx;
  fx.add_partner(json{{"partnerId", "A"},
                      {"password", "pw-a"},
                      {"authorizedSenders", {"B"}},
                      {"allowedDocTypes", {"PO", "FA"}}},
                 "A");
  fx.add_partner(json{{"partnerId", "B"},
                      {"password", "pw-b"},
                      {"authorizedSenders", {"A"}},
                      {"allowedDocTypes", {"PO"}},
                      {"autoAck", true}},
                 "B");

  // Session failures map to 401.
  auto bad = fx.client().Post("/v1/session",
                              json{{"partnerId", "A"}, {"password", "nope"}}.dump(),
                              "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 401);
  auto stale = fx.deposit("bogus-token", "A", "B", "000000001", "PO", "x");
  REQUIRE(stale);
  CHECK(stale->status == 401);

  std::string a = fx.login("A", "pw-a");
  std::string b = fx.login("B", "pw-b");

  // Non-admin partner mutation is forbidden.
  auto forbidden = fx.client().Post("/v1/partners", {{"X-EDI-Session", a}},
                                    json{{"partnerId", "Z"}, {"password", "z"}}.dump(),
                                    "application/json");
  REQUIRE(forbidden);
  CHECK(forbidden->status == 403);

  // Deposit, with ack requested; B auto-acks on retrieve.
  std::string payload = fx.envelope("A", "B", "ISA...demo");
  auto dep = fx.deposit(a, "A", "B", "000000001", "PO", payload, true);
  REQUIRE(dep);
  REQUIRE(dep->status == 200);
  std::uint64_t msg_id = json::parse(dep->body).at("messageId").get<std::uint64_t>();
  CHECK(json::parse(dep->body).at("status") == "QUEUED");

  // Duplicate control: 409.
  auto dup = fx.deposit(a, "A", "B", "000000001", "PO", payload);
  REQUIRE(dup);
  CHECK(dup->status == 409);

  // Screening rejection: 422 with the reason in the body.
  auto rejected = fx.deposit(a, "A", "B", "000000002", "INV", payload);
  REQUIRE(rejected);
  CHECK(rejected->status == 422);
  CHECK(json::parse(rejected->body).at("reason") == "DOC_TYPE_NOT_ALLOWED");

  // B fetches the PO; the part headers describe the message.
  std::vector<MultipartPart> inbox = fx.fetch(b);
  REQUIRE(inbox.size() == 1);
  CHECK(inbox[0].headers.at("X-EDI-Sender") == "A");
  CHECK(inbox[0].headers.at("X-EDI-DocTypes") == "PO");
  CHECK(inbox[0].body == payload);
  CHECK(fx.fetch(b).empty());

  // Auto-ack delivered an FA into A's mailbox, exactly once.
  std::vector<MultipartPart> acks = fx.fetch(a);
  REQUIRE(acks.size() == 1);
  CHECK(acks[0].headers.at("X-EDI-DocTypes") == "FA");

  // Explicit ack of an acknowledged message: 409.
  auto again = fx.client().Post(("/v1/messages/" + std::to_string(msg_id) + "/ack").c_str(),
                                {{"X-EDI-Session", b}}, "", "text/plain");
  REQUIRE(again);
  CHECK(again->status == 409);

  // Audit chain is contiguous and complete.
  json events = fx.audit_for_message(msg_id);
  std::vector<std::string> actions;
  for (const json& e : events) actions.push_back(e.at("action").get<std::string>());
  CAPTURE(events.dump());
  CHECK(actions == std::vector<std::string>{"DEPOSIT", "SCREEN_ACCEPT", "RETRIEVE", "ACK"});

  // Accounting: A sent one payload, B received it.
  auto acct = fx.client().Get(("/v1/accounting?partnerId=B&from=0&to=" +
                               std::to_string(now_ms()))
                                  .c_str(),
                              {{"X-EDI-Session", fx.admin_token}});
  REQUIRE(acct);
  REQUIRE(acct->status == 200);
  json report = json::parse(acct->body);
  CHECK(report.at("messagesIn").get<int>() == 1);
  CHECK(report.at("bytesIn").get<std::uint64_t>() == payload.size());
}

TEST_CASE("a second instance on the same data directory is refused") {
  ServiceFixture fx;
  CHECK_THROWS_AS(VanService(fx.cfg), DataDirLocked);
}

TEST_CASE("store-and-forward pushes to a live endpoint within the loop interval") {
  ServiceFixture fx;
  StubEndpoint stub;
  fx.add_partner(json{{"partnerId", "A"},
                      {"password", "pw-a"},
                      {"authorizedSenders", json::array()},
                      {"allowedDocTypes", json::array()}},
                 "A");
  fx.add_partner(json{{"partnerId", "F"},
                      {"password", "pw-f"},
                      {"authorizedSenders", {"A"}},
                      {"allowedDocTypes", {"PO"}},
                      {"deliveryMode", "forward"},
                      {"forwardEndpoint", stub.url("/inbox")}},
                 "B");

  std::string a = fx.login("A", "pw-a");
  std::string payload = fx.envelope("A", "B", "forwarded");
  auto dep = fx.deposit(a, "A", "F", "000000010", "PO", payload);
  REQUIRE(dep);
  REQUIRE(dep->status == 200);
  std::uint64_t id = json::parse(dep->body).at("messageId").get<std::uint64_t>();

  CHECK(fx.wait_for_action(id, "PUSH_OK"));
  CHECK(stub.hits.load() >= 1);
  {
    std::lock_guard lock(stub.mutex);
    REQUIRE(!stub.bodies.empty());
    CHECK(stub.bodies[0] == payload);
  }
}

TEST_CASE("webhook notification fires on filter match and parks after one retry") {
  ServiceFixture fx;
  StubEndpoint stub;
  stub.status = 500;  // notification endpoint is broken
  fx.add_partner(json{{"partnerId", "A"},
                      {"password", "pw-a"},
                      {"authorizedSenders", json::array()},
                      {"allowedDocTypes", json::array()}},
                 "A");
  fx.add_partner(json{{"partnerId", "R"},
                      {"password", "pw-r"},
                      {"authorizedSenders", {"A"}},
                      {"allowedDocTypes", {"PO", "INV"}},
                      {"notifyEndpoint", stub.url("/hook")},
                      {"notifyDocTypes", {"PO"}}},
                 "B");
  std::string a = fx.login("A", "pw-a");

  // INV does not match the filter: no notification traffic at all.
  auto inv = fx.deposit(a, "A", "R", "000000030", "INV", fx.envelope("A", "B", "inv"));
  REQUIRE(inv);
  REQUIRE(inv->status == 200);
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  CHECK(stub.hits.load() == 0);

  // PO matches; the broken endpoint earns exactly one retry, then parks.
  auto po = fx.deposit(a, "A", "R", "000000031", "PO", fx.envelope("A", "B", "po"));
  REQUIRE(po);
  REQUIRE(po->status == 200);
  std::uint64_t id = json::parse(po->body).at("messageId").get<std::uint64_t>();
  CHECK(fx.wait_for_action(id, "NOTIFY_FAILED", 2));
  int after_park = stub.hits.load();
  CHECK(after_park == 2);
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  CHECK(stub.hits.load() == after_park);  // no retry storm

  // A healthy endpoint gets exactly one notice, and the message stays queued.
  stub.status = 200;
  auto po2 = fx.deposit(a, "A", "R", "000000032", "PO", fx.envelope("A", "B", "po2"));
  REQUIRE(po2);
  std::uint64_t id2 = json::parse(po2->body).at("messageId").get<std::uint64_t>();
  CHECK(fx.wait_for_action(id2, "NOTIFY_OK"));
  json notice;
  {
    std::lock_guard lock(stub.mutex);
    notice = json::parse(stub.bodies.back());
  }
  CHECK(notice.at("message_id").get<std::uint64_t>() == id2);
  CHECK(notice.at("sender") == "A");
  CHECK(notice.at("doc_types") == json::array({"PO"}));
  json chain = fx.audit_for_message(id2);
  CHECK(chain.back().at("action") == "NOTIFY_OK");
}

TEST_CASE("state survives restart and replays deterministically") {
  ServiceFixture fx;
  fx.add_partner(json{{"partnerId", "A"},
                      {"password", "pw-a"},
                      {"authorizedSenders", {"B"}},
                      {"allowedDocTypes", {"PO"}}},
                 "A");
  fx.add_partner(json{{"partnerId", "B"},
                      {"password", "pw-b"},
                      {"authorizedSenders", {"A"}},
                      {"allowedDocTypes", {"PO"}}},
                 "B");
  std::string a = fx.login("A", "pw-a");
  std::string payload = fx.envelope("A", "B", "durable");
  for (int i = 0; i < 5; ++i) {
    auto res = fx.deposit(a, "A", "B", edi::interchange::format_control(100 + i), "PO",
                          payload);
    REQUIRE(res);
    REQUIRE(res->status == 200);
  }

  fx.service->stop();
  fx.service.reset();

  std::string fp1 = VanService::replay_fingerprint(fx.cfg);
  std::string fp2 = VanService::replay_fingerprint(fx.cfg);
  CHECK(fp1 == fp2);
  CHECK(fp1.find("\"control\":\"000000104\"") != std::string::npos);

  // Restart: the queued messages are still retrievable.
  fx.start_service();
  std::string b = fx.login("B", "pw-b");
  CHECK(fx.fetch(b).size() == 5);
}
