#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sentinel/common/rng.hpp"
#include "sentinel/ingest/parser.hpp"

using namespace sentinel;
using namespace sentinel::ingest;

namespace {

RawEvent generic(std::string payload) { return RawEvent{Provider::generic, std::move(payload)}; }

std::string event_json(TimeMs ts, const std::string& user = "u1", const std::string& action = "read") {
  return R"({"ts":)" + std::to_string(ts) + R"(,"user":")" + user +
         R"(","role":"dev","resource":"s3://b1","action":")" + action + R"(","result":"success"})";
}

ParseErrorKind error_kind(const RawEvent& raw) {
  try {
    parse_event(raw);
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("expected ParseError");
  return ParseErrorKind::malformed_json;
}

}  // namespace

TEST_CASE("parse_event maps the generic flavor") {
  const auto e = parse_event(generic(
      R"({"ts":"2024-01-01T00:00:00Z","user":"u1","role":"dev","resource":"s3://b1","action":"read","result":"success"})"));
  CHECK(e.timestamp == 1704067200000);
  CHECK(e.user_id == "u1");
  CHECK(e.role == "dev");
  CHECK(e.resource == "s3://b1");
  CHECK(e.action == "read");
  CHECK(e.result == Result::success);
  CHECK_FALSE(e.session_id.has_value());
  CHECK(e.privilege_level == 0);
  CHECK_FALSE(e.session_duration.has_value());
}

TEST_CASE("parse_event error contract") {
  SUBCASE("missing action") {
    try {
      parse_event(generic(R"({"ts":5,"user":"u1","role":"dev","resource":"r","result":"success"})"));
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.kind() == ParseErrorKind::missing_field);
      CHECK(e.field() == "action");
    }
  }
  SUBCASE("malformed json") { CHECK(error_kind(generic("{not json")) == ParseErrorKind::malformed_json); }
  SUBCASE("non-object json") { CHECK(error_kind(generic("[1,2]")) == ParseErrorKind::malformed_json); }
  SUBCASE("bad timestamps") {
    CHECK(error_kind(generic(R"({"ts":"yesterday","user":"u","role":"r","resource":"x","action":"a","result":"success"})")) ==
          ParseErrorKind::invalid_timestamp);
    CHECK(error_kind(generic(R"({"ts":0,"user":"u","role":"r","resource":"x","action":"a","result":"success"})")) ==
          ParseErrorKind::invalid_timestamp);
    CHECK(error_kind(generic(R"({"ts":-4,"user":"u","role":"r","resource":"x","action":"a","result":"success"})")) ==
          ParseErrorKind::invalid_timestamp);
  }
  SUBCASE("privilege out of range") {
    CHECK(error_kind(generic(R"({"ts":1,"user":"u","role":"r","resource":"x","action":"a","result":"success","priv":5})")) ==
          ParseErrorKind::invalid_field);
  }
  SUBCASE("negative duration") {
    CHECK(error_kind(generic(R"({"ts":1,"user":"u","role":"r","resource":"x","action":"a","result":"success","dur_s":-1})")) ==
          ParseErrorKind::invalid_field);
  }
  SUBCASE("empty user") {
    CHECK(error_kind(generic(R"({"ts":1,"user":"","role":"r","resource":"x","action":"a","result":"success"})")) ==
          ParseErrorKind::missing_field);
  }
}

TEST_CASE("optional fields and extras") {
  const auto e = parse_event(generic(
      R"({"ts":10,"user":"u","role":"r","resource":"x","action":"a","result":"denied","session":"s1","priv":4,"dur_s":12.5,"extra":{"x":1}})"));
  CHECK(e.result == Result::denied);
  CHECK(e.session_id == "s1");
  CHECK(e.privilege_level == 4);
  CHECK(e.session_duration == 12.5);
}

TEST_CASE("cloudtrail mapping") {
  const std::string ok = R"({
    "eventTime": "2024-03-05T10:00:00Z", "eventName": "GetObject",
    "userIdentity": {"type": "AssumedRole", "userName": "alice", "accessKeyId": "AKIA1",
      "sessionContext": {"sessionIssuer": {"userName": "DataReader"}}},
    "resources": [{"ARN": "arn:aws:s3:::bucket/key"}]})";
  const auto e = parse_event(RawEvent{Provider::aws_cloudtrail, ok});
  CHECK(e.timestamp == *parse_rfc3339("2024-03-05T10:00:00Z"));
  CHECK(e.user_id == "alice");
  CHECK(e.role == "DataReader");
  CHECK(e.resource == "arn:aws:s3:::bucket/key");
  CHECK(e.action == "GetObject");
  CHECK(e.result == Result::success);
  CHECK(e.session_id == "AKIA1");

  auto denied = nlohmann::json::parse(ok);
  denied["errorCode"] = "AccessDenied";
  CHECK(parse_event(RawEvent{Provider::aws_cloudtrail, denied.dump()}).result == Result::denied);

  auto arn_only = nlohmann::json::parse(ok);
  arn_only["userIdentity"].erase("userName");
  arn_only["userIdentity"]["arn"] = "arn:aws:sts::1:assumed-role/DataReader/alice";
  CHECK(parse_event(RawEvent{Provider::aws_cloudtrail, arn_only.dump()}).user_id ==
        "arn:aws:sts::1:assumed-role/DataReader/alice");

  auto no_resource = nlohmann::json::parse(ok);
  no_resource.erase("resources");
  try {
    parse_event(RawEvent{Provider::aws_cloudtrail, no_resource.dump()});
    FAIL("expected ParseError");
  } catch (const ParseError& err) {
    CHECK(err.field() == "resource");
  }
}

TEST_CASE("azure and gcp mappings") {
  const auto az = parse_event(RawEvent{Provider::azure_ad, R"({
    "activityDateTime": "2024-03-05T10:00:00Z", "activityDisplayName": "Update user",
    "initiatedBy": {"user": {"userPrincipalName": "bob@contoso.com", "roleName": "UserAdmin"}},
    "targetResources": [{"id": "user-42"}], "result": "Failure"})"});
  CHECK(az.user_id == "bob@contoso.com");
  CHECK(az.role == "UserAdmin");
  CHECK(az.result == Result::failure);

  const auto gcp = parse_event(RawEvent{Provider::gcp_iam, R"({
    "timestamp": "2024-03-05T10:00:00.5Z",
    "protoPayload": {"authenticationInfo": {"principalEmail": "svc@p.iam.gserviceaccount.com"},
      "requestMetadata": {"callerRole": "roles/storage.admin"},
      "resourceName": "projects/p/buckets/b", "methodName": "storage.buckets.delete",
      "status": {"code": 7}}})"});
  CHECK(gcp.timestamp % 1000 == 500);
  CHECK(gcp.result == Result::denied);
  CHECK(gcp.role == "roles/storage.admin");
}

TEST_CASE("shipped mapping file matches the compiled-in table") {
  const auto path = std::filesystem::path(SENTINEL_SOURCE_DIR) / "data" / "provider_mappings.json";
  const auto table = MappingTable::from_file(path);
  CHECK(table.status() == "provisional");
  const std::string payload = R"({"ts":1,"user":"u","role":"r","resource":"x","action":"a","result":"failure"})";
  CHECK(parse_event(generic(payload), table) == parse_event(generic(payload)));
}

TEST_CASE("normalize_batch contracts") {
  SUBCASE("sorts") {
    std::vector<RawEvent> raws{generic(event_json(2)), generic(event_json(1))};
    const auto out = normalize_batch(raws);
    REQUIRE(out.events.size() == 2);
    CHECK(out.events[0].timestamp == 1);
    CHECK(out.events[1].timestamp == 2);
  }
  SUBCASE("dedups exact duplicates") {
    std::vector<RawEvent> raws{generic(event_json(5)), generic(event_json(5))};
    const auto out = normalize_batch(raws);
    CHECK(out.events.size() == 1);
    CHECK(out.rejected == 0);
    CHECK(out.duplicates == 1);
  }
  SUBCASE("drops and counts failures") {
    std::vector<RawEvent> raws{generic(event_json(5)), generic("{not json")};
    const auto out = normalize_batch(raws);
    CHECK(out.events.size() == 1);
    CHECK(out.rejected == 1);
  }
}

TEST_CASE("normalize_batch properties over random batches") {
  Rng rng(11);
  const std::vector<std::string> users{"u1", "u2", "u3"};
  const std::vector<std::string> actions{"read", "write"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RawEvent> raws;
    const auto n = rng.uniform_index(40);
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto roll = rng.uniform_index(10);
      if (roll == 0) {
        raws.push_back(generic("{broken"));
      } else if (roll == 1 && !raws.empty()) {
        raws.push_back(raws[rng.uniform_index(raws.size())]);
      } else {
        raws.push_back(generic(event_json(static_cast<TimeMs>(1 + rng.uniform_index(20)),
                                          users[rng.uniform_index(users.size())],
                                          actions[rng.uniform_index(actions.size())])));
      }
    }
    const auto out = normalize_batch(raws);
    // Total order.
    CHECK(std::is_sorted(out.events.begin(), out.events.end(), EventOrder{}));
    CHECK(std::adjacent_find(out.events.begin(), out.events.end()) == out.events.end());
    // Conservation: every input is either emitted, rejected or a collapsed duplicate.
    CHECK(out.events.size() + out.rejected + out.duplicates == raws.size());
    // Idempotence through the generic flavor.
    std::vector<RawEvent> again;
    for (const auto& e : out.events) again.push_back(generic(to_generic_json(e)));
    const auto twice = normalize_batch(again);
    CHECK(twice.events == out.events);
    CHECK(twice.rejected == 0);
    CHECK(twice.duplicates == 0);
  }
}

TEST_CASE("generic round trip preserves every field") {
  Rng rng(19);
  for (int i = 0; i < 100; ++i) {
    NormalizedEvent e;
    e.timestamp = 1 + static_cast<TimeMs>(rng.uniform_index(4'000'000'000'000ULL));
    e.user_id = "user-" + std::to_string(rng.uniform_index(100)) + "\"quoted\"";
    e.role = "role/" + std::to_string(rng.uniform_index(5));
    e.resource = "arn:aws:s3:::b" + std::to_string(rng.uniform_index(50));
    e.action = rng.bernoulli(0.5) ? "read" : "assume_role";
    e.result = static_cast<Result>(rng.uniform_index(3));
    if (rng.bernoulli(0.5)) e.session_id = "s" + std::to_string(i);
    e.privilege_level = static_cast<int>(rng.uniform_index(5));
    if (rng.bernoulli(0.5)) e.session_duration = rng.uniform(0.0, 7200.0);
    CHECK(parse_event(generic(to_generic_json(e))) == e);
  }
}

TEST_CASE("jsonl reader") {
  SUBCASE("valid lines in file order") {
    std::stringstream ss(event_json(3) + "\n" + event_json(1) + "\n" + event_json(2) + "\n");
    JsonlReader reader(ss, Provider::generic);
    std::vector<TimeMs> ts;
    while (auto e = reader.next()) ts.push_back(e->timestamp);
    CHECK(ts == std::vector<TimeMs>{3, 1, 2});
    CHECK(reader.rejected() == 0);
  }
  SUBCASE("empty stream") {
    std::stringstream ss;
    JsonlReader reader(ss, Provider::generic);
    CHECK_FALSE(reader.next().has_value());
  }
  SUBCASE("malformed line counted") {
    std::stringstream ss(event_json(1) + "\n{oops\n\n" + event_json(2));
    JsonlReader reader(ss, Provider::generic);
    int count = 0;
    while (reader.next()) ++count;
    CHECK(count == 2);
    CHECK(reader.rejected() == 1);
  }
  SUBCASE("unreadable file") {
    CHECK_THROWS_AS(JsonlReader(std::filesystem::path("/nonexistent/events.jsonl"), Provider::generic), IoError);
  }
}
