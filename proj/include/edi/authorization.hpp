#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "edi/secenv.hpp"

namespace edi::secenv {

class PolicyError : public std::runtime_error {
 public:
  explicit PolicyError(const std::string& what) : std::runtime_error(what) {}
};

class UnknownSigner : public std::runtime_error {
 public:
  explicit UnknownSigner(const std::string& signer)
      : std::runtime_error("signer " + signer + " is not covered by the policy") {}
};

class InvalidCountersignature : public std::runtime_error {
 public:
  explicit InvalidCountersignature(const std::string& what) : std::runtime_error(what) {}
};

// Per-signer spending limits (integer cents, inclusive comparison) and the
// supervisor escalation chain.
struct AuthorizationPolicy {
  std::map<std::string, std::int64_t> limit_cents;
  std::map<std::string, std::string> supervisor;

  // Throws PolicyError on negative limits or a supervisor cycle.
  void validate() const;
  static AuthorizationPolicy from_json(std::string_view json_bytes);
};

struct Countersignature {
  std::string signer_key_id;
  Bytes signature;  // over the same canonical signing input as the order
};

struct AuthzDecision {
  bool authorized = false;
  std::string reason;    // LIMIT_EXCEEDED when refused
  std::string approver;  // key id whose limit covered the amount
};

// Authorized iff amount <= the signer's limit, or a verifying
// countersignature from someone up the signer's supervisor chain whose own
// limit covers the amount.
AuthzDecision check_authorization(std::int64_t amount_cents, const std::string& signer,
                                  std::span<const Countersignature> countersigs,
                                  const AuthorizationPolicy& policy,
                                  std::span<const std::uint8_t> signing_input,
                                  const Keystore& keystore);

}  // namespace edi::secenv
