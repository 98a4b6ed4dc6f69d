#include "sentinel/ingest/event.hpp"

#include <json.hpp>

namespace sentinel::ingest {

std::string_view to_string(Provider p) {
  switch (p) {
    case Provider::aws_cloudtrail: return "aws_cloudtrail";
    case Provider::azure_ad: return "azure_ad";
    case Provider::gcp_iam: return "gcp_iam";
    case Provider::generic: return "generic";
  }
  return "generic";
}

std::optional<Provider> provider_from_string(std::string_view s) {
  if (s == "aws_cloudtrail" || s == "aws" || s == "cloudtrail") return Provider::aws_cloudtrail;
  if (s == "azure_ad" || s == "azure") return Provider::azure_ad;
  if (s == "gcp_iam" || s == "gcp") return Provider::gcp_iam;
  if (s == "generic") return Provider::generic;
  return std::nullopt;
}

std::string_view to_string(Result r) {
  switch (r) {
    case Result::success: return "success";
    case Result::failure: return "failure";
    case Result::denied: return "denied";
  }
  return "success";
}

std::optional<Result> result_from_string(std::string_view s) {
  if (s == "success") return Result::success;
  if (s == "failure") return Result::failure;
  if (s == "denied") return Result::denied;
  return std::nullopt;
}

std::strong_ordering compare_events(const NormalizedEvent& a, const NormalizedEvent& b) {
  if (auto c = a.timestamp <=> b.timestamp; c != 0) return c;
  if (auto c = a.user_id <=> b.user_id; c != 0) return c;
  if (auto c = a.resource <=> b.resource; c != 0) return c;
  if (auto c = a.action <=> b.action; c != 0) return c;
  if (auto c = a.role <=> b.role; c != 0) return c;
  if (auto c = a.result <=> b.result; c != 0) return c;
  if (auto c = a.session_id <=> b.session_id; c != 0) return c;
  if (auto c = a.privilege_level <=> b.privilege_level; c != 0) return c;
  // Durations are finite and non-negative after parsing, so the partial
  // order on doubles is total here.
  if (a.session_duration != b.session_duration) {
    if (!a.session_duration) return std::strong_ordering::less;
    if (!b.session_duration) return std::strong_ordering::greater;
    return *a.session_duration < *b.session_duration ? std::strong_ordering::less
                                                     : std::strong_ordering::greater;
  }
  return std::strong_ordering::equal;
}

std::string to_generic_json(const NormalizedEvent& e) {
  nlohmann::ordered_json j;
  j["ts"] = e.timestamp;
  j["user"] = e.user_id;
  j["role"] = e.role;
  j["resource"] = e.resource;
  j["action"] = e.action;
  j["result"] = std::string(to_string(e.result));
  if (e.session_id) j["session"] = *e.session_id;
  j["priv"] = e.privilege_level;
  if (e.session_duration) j["dur_s"] = *e.session_duration;
  return j.dump();
}

}  // namespace sentinel::ingest
