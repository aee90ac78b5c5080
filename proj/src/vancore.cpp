#include "edi/vancore.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>
#include <ctime>
#include <mutex>

#include "edi/interchange.hpp"
#include "edi/secenv.hpp"
#include "json.hpp"

namespace edi::van {

namespace {

std::string hash_password(const std::string& password) {
  secenv::crypto_init();
  std::string out(crypto_pwhash_STRBYTES, '\0');
  if (crypto_pwhash_str(out.data(), password.c_str(), password.size(),
                        crypto_pwhash_OPSLIMIT_INTERACTIVE,
                        crypto_pwhash_MEMLIMIT_INTERACTIVE) != 0)
    throw std::runtime_error("password hashing failed");
  out.resize(std::strlen(out.c_str()));
  return out;
}

bool verify_password(const std::string& hash, const std::string& password) {
  return crypto_pwhash_str_verify(hash.c_str(), password.c_str(), password.size()) == 0;
}

// Unknown partners still burn one verification so the caller cannot tell
// them from a wrong password by timing.
void burn_verification(const std::string& password) {
  static const std::string dummy = hash_password("edikit-dummy");
  verify_password(dummy, password);
}

std::string fresh_token() {
  secenv::crypto_init();
  std::uint8_t raw[32];
  randombytes_buf(raw, sizeof raw);
  return secenv::to_hex({raw, sizeof raw});
}

std::pair<std::string, std::string> utc_date_time(Millis ms) {
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char date[16], time[8];
  std::strftime(date, sizeof date, "%Y%m%d", &tm);
  std::strftime(time, sizeof time, "%H%M", &tm);
  return {date, time};
}

std::string join(const std::set<std::string>& values) {
  std::string out;
  for (const std::string& v : values) {
    if (!out.empty()) out += ",";
    out += v;
  }
  return out;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::user: return "user";
    case Role::admin: return "admin";
    case Role::peer: return "peer";
  }
  return "user";
}

Role role_from_string(std::string_view s) {
  if (s == "admin") return Role::admin;
  if (s == "peer") return Role::peer;
  if (s == "user") return Role::user;
  throw std::runtime_error("unknown role '" + std::string(s) + "'");
}

std::string_view to_string(MessageStatus s) {
  switch (s) {
    case MessageStatus::received: return "RECEIVED";
    case MessageStatus::rejected: return "REJECTED";
    case MessageStatus::queued: return "QUEUED";
    case MessageStatus::forwarded_remote: return "FORWARDED_REMOTE";
    case MessageStatus::delivered: return "DELIVERED";
    case MessageStatus::acknowledged: return "ACKNOWLEDGED";
  }
  return "RECEIVED";
}

MessageStatus status_from_string(std::string_view s) {
  if (s == "RECEIVED") return MessageStatus::received;
  if (s == "REJECTED") return MessageStatus::rejected;
  if (s == "QUEUED") return MessageStatus::queued;
  if (s == "FORWARDED_REMOTE") return MessageStatus::forwarded_remote;
  if (s == "DELIVERED") return MessageStatus::delivered;
  if (s == "ACKNOWLEDGED") return MessageStatus::acknowledged;
  throw std::runtime_error("unknown message status '" + std::string(s) + "'");
}

bool valid_transition(MessageStatus from, MessageStatus to) {
  switch (from) {
    case MessageStatus::received:
      return to == MessageStatus::rejected || to == MessageStatus::queued;
    case MessageStatus::queued:
      return to == MessageStatus::delivered || to == MessageStatus::forwarded_remote;
    case MessageStatus::delivered:
    case MessageStatus::forwarded_remote:
      return to == MessageStatus::acknowledged;
    case MessageStatus::rejected:
    case MessageStatus::acknowledged:
      return false;
  }
  return false;
}

Van::Van(VanConfig config, const secenv::Keystore* keystore, StateSink* sink)
    : config_(std::move(config)), keystore_(keystore), sink_(sink) {
  secenv::crypto_init();
}

// ---- audit plumbing ---------------------------------------------------------

AuditEvent Van::make_event_locked(Millis ts, std::uint64_t message_id, std::string actor,
                                  std::string action, std::string detail) {
  AuditEvent e;
  e.seq = next_seq_++;
  e.ts = ts;
  e.message_id = message_id;
  e.actor = std::move(actor);
  e.action = std::move(action);
  e.detail = std::move(detail);
  audit_log_.push_back(e);
  return e;
}

void Van::transition_locked(VanMessage& msg, MessageStatus to, Millis now,
                            const std::string& actor, const std::string& action,
                            const std::string& detail) {
  if (!valid_transition(msg.status, to))
    throw std::logic_error("invalid transition " + std::string(to_string(msg.status)) +
                           " -> " + std::string(to_string(to)));
  msg.status = to;
  switch (to) {
    case MessageStatus::queued: msg.queued_at = now; break;
    case MessageStatus::delivered:
    case MessageStatus::forwarded_remote: msg.delivered_at = now; break;
    case MessageStatus::acknowledged: msg.acknowledged_at = now; break;
    default: break;
  }
  AuditEvent e = make_event_locked(now, msg.id, actor, action, detail);
  if (sink_) sink_->transition_recorded(msg, e);
}

// ---- partners & routes ------------------------------------------------------

void Van::emit_partners_locked() {
  if (!sink_) return;
  std::vector<PartnerProfile> partners;
  partners.reserve(partners_.size());
  for (const auto& [_, p] : partners_) partners.push_back(p);
  sink_->partners_changed(partners, routes_);
}

void Van::bootstrap_admin(const std::string& partner_id, const std::string& password,
                          Millis now) {
  std::string hash = hash_password(password);
  std::unique_lock lock(mutex_);
  if (partners_.contains(partner_id)) return;
  PartnerProfile admin;
  admin.partner_id = partner_id;
  admin.password_hash = hash;
  admin.role = Role::admin;
  partners_[partner_id] = admin;
  AuditEvent e = make_event_locked(now, 0, "system", "PARTNER_ADDED", partner_id);
  if (sink_) sink_->audit_recorded(e);
  emit_partners_locked();
}

void Van::upsert_partner(const std::string& token, PartnerProfile profile,
                         const std::optional<std::string>& password, Millis now) {
  if (profile.partner_id.empty()) throw VanError("BAD_PROFILE", "partner id is empty");
  if (profile.delivery_mode == DeliveryMode::forward && profile.forward_endpoint.empty())
    throw VanError("BAD_PROFILE", "forward delivery mode requires an endpoint");
  std::string hash;
  if (password) hash = hash_password(*password);

  std::unique_lock lock(mutex_);
  const PartnerProfile& admin = require_admin_locked(token, now);
  auto it = partners_.find(profile.partner_id);
  bool existed = it != partners_.end();
  if (!existed && !password)
    throw VanError("BAD_PROFILE", "new partner needs a password");
  profile.password_hash = password ? hash : it->second.password_hash;
  partners_[profile.partner_id] = profile;
  AuditEvent e = make_event_locked(now, 0, admin.partner_id,
                                   existed ? "PARTNER_UPDATED" : "PARTNER_ADDED",
                                   profile.partner_id);
  if (sink_) sink_->audit_recorded(e);
  emit_partners_locked();
}

void Van::add_route(const std::string& token, InterconnectRoute route, Millis now) {
  if (route.pattern.empty() || route.endpoint.empty())
    throw VanError("BAD_ROUTE", "route needs a pattern and an endpoint");
  std::unique_lock lock(mutex_);
  const PartnerProfile& admin = require_admin_locked(token, now);
  routes_.push_back(route);
  AuditEvent e = make_event_locked(now, 0, admin.partner_id, "ROUTE_ADDED",
                                   route.pattern + " -> " + route.endpoint);
  if (sink_) sink_->audit_recorded(e);
  emit_partners_locked();
}

std::optional<PartnerProfile> Van::partner(const std::string& partner_id) const {
  std::shared_lock lock(mutex_);
  auto it = partners_.find(partner_id);
  if (it == partners_.end()) return std::nullopt;
  return it->second;
}

std::vector<InterconnectRoute> Van::routes() const {
  std::shared_lock lock(mutex_);
  return routes_;
}

// ---- sessions ---------------------------------------------------------------

SessionToken Van::authenticate(const std::string& partner_id, const std::string& password,
                               Millis now) {
  std::optional<std::string> hash;
  {
    std::shared_lock lock(mutex_);
    auto it = partners_.find(partner_id);
    if (it != partners_.end()) hash = it->second.password_hash;
  }
  // Verification runs outside the lock; argon2id is deliberately slow.
  bool ok = hash ? verify_password(*hash, password) : (burn_verification(password), false);

  std::unique_lock lock(mutex_);
  if (!ok) {
    AuditEvent e = make_event_locked(now, 0, partner_id, "LOGIN_FAIL",
                                     hash ? "bad password" : "unknown partner");
    if (sink_) sink_->audit_recorded(e);
    throw AuthFailed();
  }
  // Opportunistic prune of expired sessions.
  std::erase_if(sessions_, [&](const auto& kv) { return kv.second.expires <= now; });

  SessionToken token;
  token.token = fresh_token();
  token.partner_id = partner_id;
  token.expires = now + config_.session_ttl_ms;
  sessions_[token.token] = {partner_id, token.expires};
  AuditEvent e = make_event_locked(now, 0, partner_id, "LOGIN_OK", "");
  if (sink_) sink_->audit_recorded(e);
  return token;
}

const PartnerProfile& Van::require_session_locked(const std::string& token,
                                                  Millis now) const {
  auto it = sessions_.find(token);
  if (it == sessions_.end() || it->second.expires <= now) throw SessionInvalid();
  auto p = partners_.find(it->second.partner_id);
  if (p == partners_.end()) throw SessionInvalid();
  return p->second;
}

const PartnerProfile& Van::require_admin_locked(const std::string& token, Millis now) const {
  const PartnerProfile& p = require_session_locked(token, now);
  if (p.role != Role::admin) throw Forbidden("administrator role required");
  return p;
}

std::string Van::session_partner(const std::string& token, Millis now) const {
  std::shared_lock lock(mutex_);
  return require_session_locked(token, now).partner_id;
}

// ---- deposit & screening ----------------------------------------------------

void Van::screen_locked(VanMessage& msg, std::vector<AuditEvent>& events, Millis now,
                        const std::string& actor) {
  auto reject = [&](std::string_view reason) {
    msg.status = MessageStatus::rejected;
    msg.reject_reason = std::string(reason);
    events.push_back(make_event_locked(now, msg.id, actor, "SCREEN_REJECT",
                                       std::string(reason)));
  };
  auto accept = [&](const std::string& detail) {
    msg.status = MessageStatus::queued;
    msg.queued_at = now;
    AuditEvent e = make_event_locked(now, msg.id, actor, "SCREEN_ACCEPT", detail);
    // Accounting reads arrivals off this event.
    e.sender = msg.header.sender_id;
    e.recipient = msg.header.recipient_id;
    e.bytes = msg.payload_size;
    audit_log_.back() = e;
    events.push_back(e);
  };

  bool envelope_ok = false;
  {
    auto it = payloads_.find(msg.id);
    if (it != payloads_.end()) {
      try {
        secenv::decode_envelope(it->second);
        envelope_ok = true;
      } catch (const secenv::MalformedEnvelope&) {
      }
    }
  }
  if (!envelope_ok) return reject(kRejectMalformedEnvelope);

  auto recipient = partners_.find(msg.header.recipient_id);
  if (recipient != partners_.end()) {
    const PartnerProfile& p = recipient->second;
    if (!p.authorized_senders.contains(msg.header.sender_id))
      return reject(kRejectUnauthorizedPartner);
    for (const std::string& dt : msg.header.doc_types)
      if (!p.allowed_doc_types.contains(dt)) return reject(kRejectDocTypeNotAllowed);
    return accept("queued for " + msg.header.recipient_id);
  }

  // No local mailbox: try the interconnect.
  if (msg.header.hop_count >= config_.max_hops) return reject(kRejectHopLimit);
  const InterconnectRoute* route = match_route_locked(msg.header.recipient_id);
  if (!route) return reject(kRejectNoSuchMailbox);
  msg.relay = true;
  accept("relay via " + route->endpoint);
}

std::uint64_t Van::internal_deposit_locked(MessageHeader header, Bytes payload, Millis now,
                                           const std::string& actor) {
  auto key = std::make_pair(header.sender_id, header.control);
  // A transit message that already exhausted its hops must be rejected as
  // HOP_LIMIT by screening, even when it loops back to a VAN that relayed it
  // earlier and so would otherwise trip duplicate detection.
  bool hop_limited = header.hop_count >= config_.max_hops &&
                     !partners_.contains(header.recipient_id);
  if (!hop_limited && control_index_.contains(key)) {
    AuditEvent e = make_event_locked(now, 0, actor, "DUPLICATE_DEPOSIT",
                                     "control " + header.control + " from " +
                                         header.sender_id + " rejected; original message " +
                                         std::to_string(control_index_[key]));
    if (sink_) sink_->audit_recorded(e);
    throw DuplicateControl(header.sender_id, header.control);
  }

  VanMessage msg;
  msg.id = next_message_id_++;
  msg.header = std::move(header);
  msg.payload_size = payload.size();
  msg.status = MessageStatus::received;
  msg.received_at = now;

  payloads_[msg.id] = std::move(payload);

  std::vector<AuditEvent> events;
  {
    AuditEvent e = make_event_locked(now, msg.id, actor, "DEPOSIT",
                                     msg.header.sender_id + " -> " +
                                         msg.header.recipient_id + " control " +
                                         msg.header.control);
    e.sender = msg.header.sender_id;
    e.recipient = msg.header.recipient_id;
    e.bytes = msg.payload_size;
    audit_log_.back() = e;
    events.push_back(e);
  }
  screen_locked(msg, events, now, actor);

  if (msg.status != MessageStatus::rejected) control_index_[key] = msg.id;
  messages_[msg.id] = msg;
  if (sink_) sink_->deposit_stored(msg, payloads_[msg.id], events);
  return msg.id;
}

DepositOutcome Van::deposit(const std::string& token, MessageHeader header, Bytes payload,
                            Millis now) {
  std::unique_lock lock(mutex_);
  const PartnerProfile& depositor = require_session_locked(token, now);
  if (depositor.partner_id != header.sender_id && depositor.role != Role::peer) {
    AuditEvent e = make_event_locked(now, 0, depositor.partner_id, "DEPOSIT_DENIED",
                                     "claimed sender " + header.sender_id);
    if (sink_) sink_->audit_recorded(e);
    throw SenderMismatch(depositor.partner_id, header.sender_id);
  }
  if (depositor.role != Role::peer) header.hop_count = 0;

  std::uint64_t id = internal_deposit_locked(std::move(header), std::move(payload), now,
                                             depositor.partner_id);
  const VanMessage& msg = messages_.at(id);
  return {id, msg.status, msg.reject_reason};
}

// ---- retrieve ----------------------------------------------------------------

std::vector<RetrievedMessage> Van::retrieve(const std::string& token,
                                            const RetrieveFilter& filter, Millis now) {
  std::unique_lock lock(mutex_);
  std::string partner = require_session_locked(token, now).partner_id;

  std::vector<RetrievedMessage> out;
  for (auto& [id, msg] : messages_) {
    if (msg.header.recipient_id != partner) continue;
    if (filter.doc_type && !msg.header.doc_types.contains(*filter.doc_type)) continue;
    if (filter.since && msg.queued_at < *filter.since) continue;

    if (msg.status == MessageStatus::queued) {
      out.push_back({id, msg.header, msg.queued_at, payloads_.at(id)});
      transition_locked(msg, MessageStatus::delivered, now, partner, "RETRIEVE", "");
      maybe_auto_ack_locked(msg, now);
    } else if (filter.redeliver && (msg.status == MessageStatus::delivered ||
                                    msg.status == MessageStatus::acknowledged)) {
      out.push_back({id, msg.header, msg.queued_at, payloads_.at(id)});
      AuditEvent e = make_event_locked(now, id, partner, "REDELIVER", "");
      if (sink_) sink_->audit_recorded(e);
    }
  }
  return out;
}

// ---- acknowledgment -----------------------------------------------------------

void Van::maybe_auto_ack_locked(VanMessage& msg, Millis now) {
  if (!msg.header.ack_requested) return;
  auto recipient = partners_.find(msg.header.recipient_id);
  if (recipient == partners_.end() || !recipient->second.auto_ack) return;
  try {
    acknowledge_locked(msg, "van-auto", now);
  } catch (const VanError& e) {
    AuditEvent ev = make_event_locked(now, msg.id, "van-auto", "ACK_FAILED", e.what());
    if (sink_) sink_->audit_recorded(ev);
  }
}

void Van::acknowledge_locked(VanMessage& msg, const std::string& actor, Millis now) {
  if (msg.status == MessageStatus::acknowledged) throw AlreadyAcknowledged(msg.id);
  if (msg.status != MessageStatus::delivered) throw WrongState(msg.id, msg.status);

  std::string detail = "no-fa";
  if (msg.header.ack_requested) {
    // Payloads are opaque to the VAN, so the delivery ack is built from the
    // header alone: an FA whose body references the original control.
    interchange::Interchange original_ref;
    original_ref.sender_id = msg.header.sender_id;
    original_ref.receiver_id = msg.header.recipient_id;
    auto [date, time] = utc_date_time(msg.received_at);
    original_ref.date = date;
    original_ref.time = time;
    original_ref.control_number = msg.header.control;

    std::string fa_control = next_fa_control_locked(msg.header.recipient_id);
    interchange::Interchange fa =
        interchange::build_functional_ack(original_ref, {}, fa_control);
    std::string fa_text = interchange::serialize_interchange(fa);

    if (!keystore_) throw AckFailed("no keystore configured for ack signing");
    Bytes fa_payload;
    try {
      secenv::SecureEnvelope env = secenv::wrap(
          {reinterpret_cast<const std::uint8_t*>(fa_text.data()), fa_text.size()},
          config_.van_key_id, msg.header.sender_id, secenv::kSuitePub1, *keystore_);
      fa_payload = secenv::encode_envelope(env);
    } catch (const std::exception& e) {
      throw AckFailed(std::string("cannot wrap functional ack: ") + e.what());
    }

    MessageHeader fa_header;
    fa_header.sender_id = msg.header.recipient_id;
    fa_header.recipient_id = msg.header.sender_id;
    fa_header.control = fa_control;
    fa_header.doc_types = {"FA"};
    fa_header.ack_requested = false;  // acks are never themselves acked

    std::uint64_t fa_id;
    try {
      fa_id = internal_deposit_locked(std::move(fa_header), std::move(fa_payload), now,
                                      actor);
    } catch (const DuplicateControl& e) {
      throw AckFailed(std::string("functional ack deposit collided: ") + e.what());
    }
    detail = "fa=" + std::to_string(fa_id) + " fa_status=" +
             std::string(to_string(messages_.at(fa_id).status));
  }

  transition_locked(msg, MessageStatus::acknowledged, now, actor, "ACK", detail);
}

void Van::acknowledge(const std::string& token, std::uint64_t message_id, Millis now) {
  std::unique_lock lock(mutex_);
  const PartnerProfile& caller = require_session_locked(token, now);
  auto it = messages_.find(message_id);
  if (it == messages_.end()) throw UnknownMessage(message_id);
  VanMessage& msg = it->second;
  if (caller.role != Role::admin && msg.header.recipient_id != caller.partner_id)
    throw Forbidden("only the recipient may acknowledge a message");
  acknowledge_locked(msg, caller.partner_id, now);
}

std::string Van::next_fa_control_locked(const std::string& sender) {
  // VAN-issued controls live in the high range so they cannot collide with
  // client-issued ones, which count up from 000000001.
  std::string scope = "fa:" + sender;
  auto [it, inserted] = counters_.try_emplace(scope, 500000000);
  if (it->second >= 999999999) throw AckFailed("functional ack control space exhausted");
  ++it->second;
  if (sink_) sink_->counter_advanced(scope, it->second);
  return interchange::format_control(it->second);
}

// ---- delivery loop ------------------------------------------------------------

const InterconnectRoute* Van::match_route_locked(const std::string& recipient) const {
  for (const InterconnectRoute& r : routes_) {
    if (!r.pattern.empty() && r.pattern.back() == '*') {
      std::string_view prefix(r.pattern.data(), r.pattern.size() - 1);
      if (std::string_view(recipient).substr(0, prefix.size()) == prefix) return &r;
    } else if (r.pattern == recipient) {
      return &r;
    }
  }
  return nullptr;
}

DeliveryActions Van::collect_delivery_actions(Millis now) {
  std::unique_lock lock(mutex_);
  DeliveryActions actions;
  for (auto& [id, msg] : messages_) {
    if (msg.status != MessageStatus::queued) continue;

    if (msg.relay) {
      if (msg.parked || msg.in_flight || msg.retry_after > now) continue;
      const InterconnectRoute* route = match_route_locked(msg.header.recipient_id);
      if (!route) {
        msg.parked = true;
        AuditEvent e = make_event_locked(now, id, "van", "RELAY_PARKED", "route vanished");
        if (sink_) sink_->audit_recorded(e);
        continue;
      }
      msg.in_flight = true;
      MessageHeader header = msg.header;
      header.hop_count += 1;
      actions.relays.push_back(
          {id, route->endpoint, route->peer_id, route->peer_password, header,
           payloads_.at(id)});
      continue;
    }

    auto recipient = partners_.find(msg.header.recipient_id);
    if (recipient == partners_.end()) continue;
    const PartnerProfile& p = recipient->second;

    if (p.delivery_mode == DeliveryMode::forward && !msg.parked && !msg.in_flight &&
        msg.retry_after <= now) {
      msg.in_flight = true;
      actions.pushes.push_back({id, p.forward_endpoint, msg.header, payloads_.at(id)});
    }

    if (p.notification && !msg.notified && !msg.notify_in_flight &&
        msg.notify_failures < 2) {
      const std::set<std::string>& filter = p.notification->doc_type_filter;
      bool matches = filter.empty();
      for (const std::string& dt : msg.header.doc_types)
        if (filter.contains(dt)) matches = true;
      if (matches) {
        msg.notify_in_flight = true;
        actions.notifications.push_back({id, p.notification->endpoint,
                                         msg.header.sender_id, msg.header.doc_types,
                                         msg.queued_at});
      }
    }
  }
  return actions;
}

void Van::record_push_result(std::uint64_t message_id, bool delivered, Millis now) {
  std::unique_lock lock(mutex_);
  auto it = messages_.find(message_id);
  if (it == messages_.end()) throw UnknownMessage(message_id);
  VanMessage& msg = it->second;
  msg.in_flight = false;
  if (msg.status != MessageStatus::queued) return;  // retrieved while in flight

  if (delivered) {
    transition_locked(msg, MessageStatus::delivered, now, "van", "PUSH_OK", "");
    maybe_auto_ack_locked(msg, now);
    return;
  }
  msg.push_failures += 1;
  AuditEvent e = make_event_locked(now, message_id, "van", "PUSH_FAILED",
                                   "failure " + std::to_string(msg.push_failures));
  if (sink_) sink_->audit_recorded(e);
  if (msg.push_failures <= static_cast<int>(config_.retry_backoff_ms.size())) {
    msg.retry_after = now + config_.retry_backoff_ms[msg.push_failures - 1];
  } else {
    msg.parked = true;
    AuditEvent parked = make_event_locked(now, message_id, "van", "PUSH_PARKED",
                                          "retry schedule exhausted");
    if (sink_) sink_->audit_recorded(parked);
  }
}

void Van::record_relay_result(std::uint64_t message_id, bool completed,
                              const std::string& peer_outcome, Millis now) {
  std::unique_lock lock(mutex_);
  auto it = messages_.find(message_id);
  if (it == messages_.end()) throw UnknownMessage(message_id);
  VanMessage& msg = it->second;
  msg.in_flight = false;
  if (msg.status != MessageStatus::queued) return;

  if (completed) {
    transition_locked(msg, MessageStatus::forwarded_remote, now, "van", "RELAY_OK",
                      peer_outcome);
    return;
  }
  msg.push_failures += 1;
  AuditEvent e = make_event_locked(now, message_id, "van", "RELAY_FAILED", peer_outcome);
  if (sink_) sink_->audit_recorded(e);
  if (msg.push_failures <= static_cast<int>(config_.retry_backoff_ms.size())) {
    msg.retry_after = now + config_.retry_backoff_ms[msg.push_failures - 1];
  } else {
    msg.parked = true;
    AuditEvent parked = make_event_locked(now, message_id, "van", "RELAY_PARKED",
                                          "retry schedule exhausted");
    if (sink_) sink_->audit_recorded(parked);
  }
}

void Van::record_notify_result(std::uint64_t message_id, bool notified, Millis now) {
  std::unique_lock lock(mutex_);
  auto it = messages_.find(message_id);
  if (it == messages_.end()) throw UnknownMessage(message_id);
  VanMessage& msg = it->second;
  msg.notify_in_flight = false;
  if (notified) {
    msg.notified = true;
    AuditEvent e = make_event_locked(now, message_id, "van", "NOTIFY_OK", "");
    if (sink_) sink_->audit_recorded(e);
    return;
  }
  msg.notify_failures += 1;
  AuditEvent e = make_event_locked(now, message_id, "van", "NOTIFY_FAILED",
                                   "failure " + std::to_string(msg.notify_failures));
  if (sink_) sink_->audit_recorded(e);
  // One retry, then park; notification is advisory and must not storm.
}

// ---- audit & accounting --------------------------------------------------------

std::vector<AuditEvent> Van::audit_trail(const std::string& token, const AuditQuery& query,
                                         Millis now) const {
  std::shared_lock lock(mutex_);
  const PartnerProfile& caller = require_session_locked(token, now);

  AuditQuery q = query;
  if (caller.role != Role::admin) {
    if (q.message_id) {
      auto it = messages_.find(*q.message_id);
      if (it == messages_.end()) throw UnknownMessage(*q.message_id);
      const MessageHeader& h = it->second.header;
      if (h.sender_id != caller.partner_id && h.recipient_id != caller.partner_id)
        throw Forbidden("audit is limited to a partner's own traffic");
    } else if (q.partner_id) {
      if (*q.partner_id != caller.partner_id)
        throw Forbidden("audit is limited to a partner's own traffic");
    } else {
      q.partner_id = caller.partner_id;
    }
  }

  std::vector<AuditEvent> out;
  for (const AuditEvent& e : audit_log_) {
    if (q.from && e.ts < *q.from) continue;
    if (q.to && e.ts > *q.to) continue;
    if (q.message_id) {
      if (e.message_id != *q.message_id) continue;
    } else if (q.partner_id) {
      bool mine = e.actor == *q.partner_id || e.sender == *q.partner_id ||
                  e.recipient == *q.partner_id;
      if (!mine && e.message_id != 0) {
        auto it = messages_.find(e.message_id);
        if (it != messages_.end())
          mine = it->second.header.sender_id == *q.partner_id ||
                 it->second.header.recipient_id == *q.partner_id;
      }
      if (!mine) continue;
    }
    out.push_back(e);
  }
  return out;
}

AccountingReport Van::accounting(const std::string& token, const std::string& partner_id,
                                 Millis from, Millis to, Millis now) const {
  std::shared_lock lock(mutex_);
  const PartnerProfile& caller = require_session_locked(token, now);
  if (from > to) throw VanError("BAD_PERIOD", "period start is after its end");
  if (!partners_.contains(partner_id)) throw UnknownPartner(partner_id);
  if (caller.role != Role::admin && caller.partner_id != partner_id)
    throw Forbidden("accounting is limited to a partner's own traffic");

  AccountingReport report;
  report.partner_id = partner_id;
  report.from = from;
  report.to = to;
  for (const AuditEvent& e : audit_log_) {
    if (e.ts < from || e.ts > to) continue;
    if (e.action == "DEPOSIT" && e.sender == partner_id) {
      report.messages_out += 1;
      report.bytes_out += e.bytes;
    }
    if (e.action == "SCREEN_ACCEPT" && e.recipient == partner_id) {
      report.messages_in += 1;
      report.bytes_in += e.bytes;
    }
  }
  return report;
}

std::optional<VanMessage> Van::message(std::uint64_t id) const {
  std::shared_lock lock(mutex_);
  auto it = messages_.find(id);
  if (it == messages_.end()) return std::nullopt;
  return it->second;
}

std::string Van::snapshot() const {
  std::shared_lock lock(mutex_);
  nlohmann::json j;
  j["nextMessageId"] = next_message_id_;
  j["nextSeq"] = next_seq_;
  for (const auto& [id, p] : partners_) {
    nlohmann::json jp;
    jp["id"] = p.partner_id;
    jp["role"] = std::string(to_string(p.role));
    jp["passwordHash"] = p.password_hash;
    jp["authorizedSenders"] = p.authorized_senders;
    jp["allowedDocTypes"] = p.allowed_doc_types;
    jp["deliveryMode"] = p.delivery_mode == DeliveryMode::forward ? "forward" : "retrieve";
    jp["forwardEndpoint"] = p.forward_endpoint;
    jp["autoAck"] = p.auto_ack;
    if (p.notification) {
      jp["notifyEndpoint"] = p.notification->endpoint;
      jp["notifyDocTypes"] = p.notification->doc_type_filter;
    }
    j["partners"].push_back(jp);
  }
  for (const auto& r : routes_)
    j["routes"].push_back({{"pattern", r.pattern}, {"endpoint", r.endpoint}});
  for (const auto& [id, m] : messages_) {
    nlohmann::json jm;
    jm["id"] = id;
    jm["sender"] = m.header.sender_id;
    jm["recipient"] = m.header.recipient_id;
    jm["control"] = m.header.control;
    jm["docTypes"] = m.header.doc_types;
    jm["ack"] = m.header.ack_requested;
    jm["hops"] = m.header.hop_count;
    jm["bytes"] = m.payload_size;
    jm["status"] = std::string(to_string(m.status));
    jm["reason"] = m.reject_reason;
    jm["relay"] = m.relay;
    jm["receivedAt"] = m.received_at;
    jm["queuedAt"] = m.queued_at;
    jm["deliveredAt"] = m.delivered_at;
    jm["acknowledgedAt"] = m.acknowledged_at;
    j["messages"].push_back(jm);
  }
  for (const auto& [scope, last] : counters_) j["counters"][scope] = last;
  for (const AuditEvent& e : audit_log_) {
    nlohmann::json je;
    je["seq"] = e.seq;
    je["ts"] = e.ts;
    je["msg"] = e.message_id;
    je["actor"] = e.actor;
    je["action"] = e.action;
    je["detail"] = e.detail;
    je["sender"] = e.sender;
    je["recipient"] = e.recipient;
    je["bytes"] = e.bytes;
    j["audit"].push_back(je);
  }
  return j.dump();
}

// ---- recovery -------------------------------------------------------------------

void Van::restore_partner(PartnerProfile profile) {
  std::unique_lock lock(mutex_);
  partners_[profile.partner_id] = std::move(profile);
}

void Van::restore_route(InterconnectRoute route) {
  std::unique_lock lock(mutex_);
  routes_.push_back(std::move(route));
}

void Van::restore_deposit(VanMessage msg, Bytes payload) {
  std::unique_lock lock(mutex_);
  if (msg.status != MessageStatus::rejected)
    control_index_[{msg.header.sender_id, msg.header.control}] = msg.id;
  next_message_id_ = std::max(next_message_id_, msg.id + 1);
  payloads_[msg.id] = std::move(payload);
  messages_[msg.id] = std::move(msg);
}

void Van::restore_transition(std::uint64_t message_id, MessageStatus to, Millis ts,
                             const std::string& detail) {
  std::unique_lock lock(mutex_);
  auto it = messages_.find(message_id);
  if (it == messages_.end())
    throw std::runtime_error("journal transition for unknown message " +
                             std::to_string(message_id));
  VanMessage& msg = it->second;
  if (!valid_transition(msg.status, to))
    throw std::runtime_error("journal holds invalid transition " +
                             std::string(to_string(msg.status)) + " -> " +
                             std::string(to_string(to)) + " for message " +
                             std::to_string(message_id));
  (void)detail;
  msg.status = to;
  switch (to) {
    case MessageStatus::queued: msg.queued_at = ts; break;
    case MessageStatus::delivered:
    case MessageStatus::forwarded_remote: msg.delivered_at = ts; break;
    case MessageStatus::acknowledged: msg.acknowledged_at = ts; break;
    default: break;
  }
}

void Van::restore_audit(AuditEvent event) {
  std::unique_lock lock(mutex_);
  next_seq_ = std::max(next_seq_, event.seq + 1);
  audit_log_.push_back(std::move(event));
}

void Van::restore_counter(const std::string& scope, std::uint64_t last) {
  std::unique_lock lock(mutex_);
  std::uint64_t& cur = counters_[scope];
  cur = std::max(cur, last);
}

}  // namespace edi::van
