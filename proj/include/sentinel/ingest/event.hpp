#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "sentinel/common/time.hpp"

namespace sentinel::ingest {

enum class Provider { aws_cloudtrail, azure_ad, gcp_iam, generic };

enum class Result { success, failure, denied };

std::string_view to_string(Provider p);
std::optional<Provider> provider_from_string(std::string_view s);
std::string_view to_string(Result r);
std::optional<Result> result_from_string(std::string_view s);

// One provider record, unparsed. payload holds a single JSON object.
struct RawEvent {
  Provider provider = Provider::generic;
  std::string payload;
};

// One IAM audit record in the unified schema.
struct NormalizedEvent {
  TimeMs timestamp = 0;
  std::string user_id;
  std::string role;
  std::string resource;
  std::string action;
  Result result = Result::success;
  std::optional<std::string> session_id;
  int privilege_level = 0;                  // 0 = read-only .. 4 = admin
  std::optional<double> session_duration;   // seconds

  friend bool operator==(const NormalizedEvent&, const NormalizedEvent&) = default;
};

// Total order used by normalize_batch: (timestamp, user, resource, action)
// first, then every remaining field so that distinct events never tie.
std::strong_ordering compare_events(const NormalizedEvent& a, const NormalizedEvent& b);

struct EventOrder {
  bool operator()(const NormalizedEvent& a, const NormalizedEvent& b) const {
    return compare_events(a, b) < 0;
  }
};

// Serializes to one line of the generic JSONL flavor (no trailing newline).
// Timestamps are written as epoch-ms integers so re-parsing is exact.
std::string to_generic_json(const NormalizedEvent& e);

}  // namespace sentinel::ingest
