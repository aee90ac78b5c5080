#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "edi/keystore.hpp"

namespace edi::van {

using Bytes = secenv::Bytes;
using Millis = std::int64_t;  // wall-clock milliseconds since the unix epoch

enum class Role { user, admin, peer };
enum class DeliveryMode { retrieve, forward };

std::string_view to_string(Role role);
Role role_from_string(std::string_view s);

struct Notification {
  std::string endpoint;
  std::set<std::string> doc_type_filter;  // empty matches every doc type
  bool operator==(const Notification&) const = default;
};

struct PartnerProfile {
  std::string partner_id;
  std::string password_hash;  // argon2id string; the plaintext is never stored
  Role role = Role::user;
  std::set<std::string> authorized_senders;
  std::set<std::string> allowed_doc_types;
  DeliveryMode delivery_mode = DeliveryMode::retrieve;
  std::string forward_endpoint;  // required when delivery_mode is forward
  std::optional<Notification> notification;
  bool auto_ack = false;
  bool operator==(const PartnerProfile&) const = default;
};

enum class MessageStatus { received, rejected, queued, forwarded_remote, delivered, acknowledged };

std::string_view to_string(MessageStatus s);
MessageStatus status_from_string(std::string_view s);
bool valid_transition(MessageStatus from, MessageStatus to);

struct MessageHeader {
  std::string sender_id;
  std::string recipient_id;
  std::string control;  // 9-digit interchange control
  std::set<std::string> doc_types;
  bool ack_requested = false;
  int hop_count = 0;
};

struct VanMessage {
  std::uint64_t id = 0;
  MessageHeader header;
  std::uint64_t payload_size = 0;
  MessageStatus status = MessageStatus::received;
  std::string reject_reason;
  bool relay = false;  // queued for VAN-to-VAN relay, not a local mailbox
  Millis received_at = 0;
  Millis queued_at = 0;
  Millis delivered_at = 0;  // also the forwarded-remote timestamp
  Millis acknowledged_at = 0;

  // Transient delivery-loop state; rebuilt empty after recovery, which is
  // what retries parked messages on restart.
  int push_failures = 0;
  Millis retry_after = 0;
  bool parked = false;
  bool in_flight = false;
  bool notified = false;
  bool notify_in_flight = false;
  int notify_failures = 0;
};

struct AuditEvent {
  std::uint64_t seq = 0;
  Millis ts = 0;
  std::uint64_t message_id = 0;  // 0 when the event is not about a message
  std::string actor;
  std::string action;  // transition or action code, e.g. DEPOSIT, SCREEN_ACCEPT
  std::string detail;
  // Accounting source data, present on DEPOSIT and SCREEN_ACCEPT events.
  std::string sender;
  std::string recipient;
  std::uint64_t bytes = 0;
};

struct InterconnectRoute {
  std::string pattern;  // exact partner id, or a prefix ending in '*'
  std::string endpoint;
  std::string peer_id;        // our account at the peer VAN
  std::string peer_password;
  bool operator==(const InterconnectRoute&) const = default;
};

struct SessionToken {
  std::string token;  // 32 random bytes, hex
  std::string partner_id;
  Millis expires = 0;
};

// ---- errors ----------------------------------------------------------------

class VanError : public std::runtime_error {
 public:
  VanError(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Unknown partner and wrong password are indistinguishable outside; the
// audit trail records which it was.
struct AuthFailed : VanError {
  AuthFailed() : VanError("AUTH_FAILED", "authentication failed") {}
};
struct SessionInvalid : VanError {
  SessionInvalid() : VanError("SESSION_INVALID", "missing, unknown or expired session") {}
};
struct SenderMismatch : VanError {
  SenderMismatch(const std::string& session_partner, const std::string& claimed)
      : VanError("SENDER_MISMATCH", "session for " + session_partner +
                                        " cannot deposit as " + claimed) {}
};
struct DuplicateControl : VanError {
  DuplicateControl(const std::string& sender, const std::string& control)
      : VanError("DUPLICATE_CONTROL",
                 "control " + control + " already deposited by " + sender) {}
};
struct Forbidden : VanError {
  explicit Forbidden(const std::string& what) : VanError("FORBIDDEN", what) {}
};
struct UnknownPartner : VanError {
  explicit UnknownPartner(const std::string& id)
      : VanError("UNKNOWN_PARTNER", "no partner " + id) {}
};
struct UnknownMessage : VanError {
  explicit UnknownMessage(std::uint64_t id)
      : VanError("UNKNOWN_MESSAGE", "no message " + std::to_string(id)) {}
};
struct WrongState : VanError {
  WrongState(std::uint64_t id, MessageStatus status)
      : VanError("WRONG_STATE", "message " + std::to_string(id) + " is " +
                                    std::string(to_string(status)) +
                                    ", not DELIVERED") {}
};
struct AlreadyAcknowledged : VanError {
  explicit AlreadyAcknowledged(std::uint64_t id)
      : VanError("ALREADY_ACKNOWLEDGED",
                 "message " + std::to_string(id) + " is already acknowledged") {}
};
struct AckFailed : VanError {
  explicit AckFailed(const std::string& what) : VanError("ACK_FAILED", what) {}
};

// ---- operation payloads -----------------------------------------------------

struct DepositOutcome {
  std::uint64_t message_id = 0;
  MessageStatus status = MessageStatus::received;
  std::string reject_reason;  // set when status is rejected
};

struct RetrieveFilter {
  std::optional<Millis> since;          // queued_at >= since
  std::optional<std::string> doc_type;  // message carries this doc type
  bool redeliver = false;               // include already-delivered messages
};

struct RetrievedMessage {
  std::uint64_t id = 0;
  MessageHeader header;
  Millis queued_at = 0;
  Bytes payload;
};

struct PushAction {
  std::uint64_t message_id = 0;
  std::string endpoint;
  MessageHeader header;
  Bytes payload;
};

struct NotifyAction {
  std::uint64_t message_id = 0;
  std::string endpoint;
  std::string sender;
  std::set<std::string> doc_types;
  Millis queued_at = 0;
};

struct RelayAction {
  std::uint64_t message_id = 0;
  std::string endpoint;
  std::string peer_id;
  std::string peer_password;
  MessageHeader header;  // hop_count already incremented
  Bytes payload;
};

struct DeliveryActions {
  std::vector<PushAction> pushes;
  std::vector<NotifyAction> notifications;
  std::vector<RelayAction> relays;
};

struct AuditQuery {
  std::optional<std::uint64_t> message_id;
  std::optional<std::string> partner_id;
  std::optional<Millis> from;
  std::optional<Millis> to;
};

struct AccountingReport {
  std::string partner_id;
  Millis from = 0;
  Millis to = 0;
  std::uint64_t messages_in = 0;
  std::uint64_t messages_out = 0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
};

// Persistence hook. The service journals everything it receives here; replay
// feeds it back through the restore_* entry points.
class StateSink {
 public:
  virtual ~StateSink() = default;
  virtual void deposit_stored(const VanMessage& msg, const Bytes& payload,
                              std::span<const AuditEvent> events) = 0;
  virtual void transition_recorded(const VanMessage& msg, const AuditEvent& event) = 0;
  virtual void audit_recorded(const AuditEvent& event) = 0;
  virtual void partners_changed(const std::vector<PartnerProfile>& partners,
                                const std::vector<InterconnectRoute>& routes) = 0;
  virtual void counter_advanced(const std::string& scope, std::uint64_t last) = 0;
};

struct VanConfig {
  Millis session_ttl_ms = 3600 * 1000;
  int max_hops = 3;
  std::string van_key_id = "van";  // signing identity for VAN-built acks
  std::vector<Millis> retry_backoff_ms = {5000, 25000, 125000};
};

// Transport-agnostic VAN: authentication, screening, mailboxes, delivery
// planning, acknowledgment, interconnect routing, audit and accounting. All
// clock inputs are explicit so delivery timing is testable. Thread-safe;
// queries run concurrently, mutations serialize.
class Van {
 public:
  Van(VanConfig config, const secenv::Keystore* keystore, StateSink* sink);

  // -- partners & routes
  void bootstrap_admin(const std::string& partner_id, const std::string& password,
                       Millis now);
  void upsert_partner(const std::string& token, PartnerProfile profile,
                      const std::optional<std::string>& password, Millis now);
  void add_route(const std::string& token, InterconnectRoute route, Millis now);
  std::optional<PartnerProfile> partner(const std::string& partner_id) const;
  std::vector<InterconnectRoute> routes() const;

  // -- sessions
  SessionToken authenticate(const std::string& partner_id, const std::string& password,
                            Millis now);
  // Partner id behind a live session, or SessionInvalid.
  std::string session_partner(const std::string& token, Millis now) const;

  // -- the trading cycle
  DepositOutcome deposit(const std::string& token, MessageHeader header, Bytes payload,
                         Millis now);
  std::vector<RetrievedMessage> retrieve(const std::string& token,
                                         const RetrieveFilter& filter, Millis now);
  void acknowledge(const std::string& token, std::uint64_t message_id, Millis now);

  // -- delivery loop (service executes the actions and reports back)
  DeliveryActions collect_delivery_actions(Millis now);
  void record_push_result(std::uint64_t message_id, bool delivered, Millis now);
  void record_relay_result(std::uint64_t message_id, bool completed,
                           const std::string& peer_outcome, Millis now);
  void record_notify_result(std::uint64_t message_id, bool notified, Millis now);

  // -- audit & accounting
  std::vector<AuditEvent> audit_trail(const std::string& token, const AuditQuery& query,
                                      Millis now) const;
  AccountingReport accounting(const std::string& token, const std::string& partner_id,
                              Millis from, Millis to, Millis now) const;

  std::optional<VanMessage> message(std::uint64_t id) const;
  // Canonical JSON of durable state; equal snapshots mean equal replays.
  std::string snapshot() const;

  // -- recovery (no sink emission, no screening; records are already final)
  void restore_partner(PartnerProfile profile);
  void restore_route(InterconnectRoute route);
  void restore_deposit(VanMessage msg, Bytes payload);
  void restore_transition(std::uint64_t message_id, MessageStatus to, Millis ts,
                          const std::string& detail);
  void restore_audit(AuditEvent event);
  void restore_counter(const std::string& scope, std::uint64_t last);

 private:
  struct Session {
    std::string partner_id;
    Millis expires = 0;
  };

  const PartnerProfile& require_session_locked(const std::string& token, Millis now) const;
  const PartnerProfile& require_admin_locked(const std::string& token, Millis now) const;
  AuditEvent make_event_locked(Millis ts, std::uint64_t message_id, std::string actor,
                               std::string action, std::string detail);
  void transition_locked(VanMessage& msg, MessageStatus to, Millis now,
                         const std::string& actor, const std::string& action,
                         const std::string& detail);
  void screen_locked(VanMessage& msg, std::vector<AuditEvent>& events, Millis now,
                     const std::string& actor);
  void maybe_auto_ack_locked(VanMessage& msg, Millis now);
  void acknowledge_locked(VanMessage& msg, const std::string& actor, Millis now);
  std::uint64_t internal_deposit_locked(MessageHeader header, Bytes payload, Millis now,
                                        const std::string& actor);
  const InterconnectRoute* match_route_locked(const std::string& recipient) const;
  std::string next_fa_control_locked(const std::string& sender);
  void emit_partners_locked();

  VanConfig config_;
  const secenv::Keystore* keystore_;
  StateSink* sink_;

  mutable std::shared_mutex mutex_;
  std::map<std::string, PartnerProfile> partners_;
  std::vector<InterconnectRoute> routes_;
  std::map<std::string, Session> sessions_;
  std::map<std::uint64_t, VanMessage> messages_;
  std::map<std::uint64_t, Bytes> payloads_;
  std::map<std::pair<std::string, std::string>, std::uint64_t> control_index_;
  std::vector<AuditEvent> audit_log_;
  std::map<std::string, std::uint64_t> counters_;  // scope -> last issued
  std::uint64_t next_message_id_ = 1;
  std::uint64_t next_seq_ = 1;
};

// Screening reason codes.
inline constexpr std::string_view kRejectUnauthorizedPartner = "UNAUTHORIZED_PARTNER";
inline constexpr std::string_view kRejectDocTypeNotAllowed = "DOC_TYPE_NOT_ALLOWED";
inline constexpr std::string_view kRejectMalformedEnvelope = "MALFORMED_ENVELOPE";
inline constexpr std::string_view kRejectNoSuchMailbox = "NO_SUCH_MAILBOX";
inline constexpr std::string_view kRejectHopLimit = "HOP_LIMIT";

}  // namespace edi::van
