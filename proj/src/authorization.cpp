#include "edi/authorization.hpp"

#include <set>

#include "json.hpp"

namespace edi::secenv {

void AuthorizationPolicy::validate() const {
  for (const auto& [signer, limit] : limit_cents)
    if (limit < 0) throw PolicyError("negative limit for " + signer);
  for (const auto& [signer, _] : supervisor) {
    std::set<std::string> seen{signer};
    std::string cur = signer;
    while (true) {
      auto it = supervisor.find(cur);
      if (it == supervisor.end()) break;
      cur = it->second;
      if (!seen.insert(cur).second)
        throw PolicyError("supervisor chain cycle through " + cur);
    }
  }
}

AuthorizationPolicy AuthorizationPolicy::from_json(std::string_view json_bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw PolicyError(std::string("policy is not valid JSON: ") + e.what());
  }
  AuthorizationPolicy policy;
  try {
    for (const auto& [signer, limit] : j.at("limits").items())
      policy.limit_cents[signer] = limit.get<std::int64_t>();
    if (j.contains("supervisors"))
      for (const auto& [signer, super] : j.at("supervisors").items())
        policy.supervisor[signer] = super.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw PolicyError(std::string("policy is missing required keys: ") + e.what());
  }
  policy.validate();
  return policy;
}

AuthzDecision check_authorization(std::int64_t amount_cents, const std::string& signer,
                                  std::span<const Countersignature> countersigs,
                                  const AuthorizationPolicy& policy,
                                  std::span<const std::uint8_t> signing_input,
                                  const Keystore& keystore) {
  auto limit = policy.limit_cents.find(signer);
  if (limit == policy.limit_cents.end()) throw UnknownSigner(signer);
  if (amount_cents <= limit->second) return {true, "", signer};

  // Limit exceeded: a countersignature from up the chain can still carry it.
  std::set<std::string> chain;
  {
    std::string cur = signer;
    while (true) {
      auto it = policy.supervisor.find(cur);
      if (it == policy.supervisor.end()) break;
      cur = it->second;
      if (!chain.insert(cur).second) break;  // validate() rejects cycles; belt and braces
    }
  }

  for (const Countersignature& cs : countersigs) {
    std::optional<KeyRecord> pub = keystore.find(cs.signer_key_id, KeyKind::public_key);
    if (!pub || !verify_detached(signing_input, cs.signature, pub->material))
      throw InvalidCountersignature("countersignature by " + cs.signer_key_id +
                                    " does not verify");
    if (!chain.contains(cs.signer_key_id)) continue;
    auto cs_limit = policy.limit_cents.find(cs.signer_key_id);
    if (cs_limit != policy.limit_cents.end() && amount_cents <= cs_limit->second)
      return {true, "", cs.signer_key_id};
  }
  return {false, "LIMIT_EXCEEDED", ""};
}

}  // namespace edi::secenv
