#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sentinel/common/rng.hpp"
#include "sentinel/graph/snapshot.hpp"
#include "sentinel/ingest/parser.hpp"

using namespace sentinel;
using namespace sentinel::graph;
using ingest::NormalizedEvent;

namespace {

constexpr TimeMs kT0 = 1704067200000;
constexpr DurationMs kWindow = 15 * kMinuteMs;
constexpr DurationMs kHalfLife = 6 * kHourMs;

NormalizedEvent ev(TimeMs ts, std::string user, std::string role, std::string res, std::string action,
                   int priv = 0) {
  NormalizedEvent e;
  e.timestamp = ts;
  e.user_id = std::move(user);
  e.role = std::move(role);
  e.resource = std::move(res);
  e.action = std::move(action);
  e.privilege_level = priv;
  return e;
}

GraphSnapshot build(const std::vector<NormalizedEvent>& events, const History* history = nullptr,
                    FeatureSpec spec = FeatureSpec{}) {
  return build_snapshot(events, kT0, kT0 + kWindow, spec, history, kHalfLife).snapshot;
}

}  // namespace

TEST_CASE("compute_edge_weight examples") {
  CHECK(compute_edge_weight(5, 100, 100, kHalfLife) == 5.0);
  CHECK(compute_edge_weight(4, 0, kHalfLife, kHalfLife) == doctest::Approx(2.0).epsilon(1e-15));
  // 3 * 2^-2.5 = 3 / 5.656854249... = 0.530330085889911
  CHECK(compute_edge_weight(3, 0, 5 * kHalfLife / 2, kHalfLife) == doctest::Approx(0.530330085889911).epsilon(1e-12));
  CHECK_THROWS_AS(compute_edge_weight(0, 0, 0, kHalfLife), GraphError);
  CHECK_THROWS_AS(compute_edge_weight(1, 10, 5, kHalfLife), GraphError);
  CHECK_THROWS_AS(compute_edge_weight(1, 0, 5, 0), GraphError);
}

TEST_CASE("edge weight monotonicity") {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto count = static_cast<std::int64_t>(1 + rng.uniform_index(100));
    const auto age = static_cast<TimeMs>(rng.uniform_index(10 * kHalfLife));
    CHECK(compute_edge_weight(count + 1, 0, age, kHalfLife) > compute_edge_weight(count, 0, age, kHalfLife));
    CHECK(compute_edge_weight(count, 0, age + 1 + static_cast<TimeMs>(rng.uniform_index(kHalfLife)), kHalfLife) <
          compute_edge_weight(count, 0, age, kHalfLife));
  }
}

TEST_CASE("compute_access_entropy examples") {
  CHECK(compute_access_entropy({{"read", 1}}) == 0.0);
  CHECK(compute_access_entropy({{"read", 1}, {"write", 1}, {"delete", 1}, {"list", 1}}) == doctest::Approx(2.0).epsilon(1e-15));
  // -(3/4 log2 3/4 + 1/4 log2 1/4) = 0.311278124459133 + 0.5
  CHECK(compute_access_entropy({{"read", 3}, {"write", 1}}) == doctest::Approx(0.811278124459133).epsilon(1e-12));
  CHECK(compute_access_entropy({{"read", 2}, {"write", 0}}) == 0.0);
  try {
    compute_access_entropy({{"read", 0}});
    FAIL("expected EmptyHistogram");
  } catch (const GraphError& e) {
    CHECK(e.kind() == GraphErrorKind::empty_histogram);
  }
  CHECK_THROWS_AS(compute_access_entropy({}), GraphError);
}

TEST_CASE("entropy bounds") {
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    std::map<std::string, double> h;
    const auto k = 1 + rng.uniform_index(8);
    for (std::uint64_t a = 0; a < k; ++a) h["a" + std::to_string(a)] = 1.0 + static_cast<double>(rng.uniform_index(20));
    const double e = compute_access_entropy(h);
    CHECK(e >= 0.0);
    CHECK(e <= std::log2(static_cast<double>(k)) + 1e-12);
  }
  std::map<std::string, double> uniform;
  for (int a = 0; a < 8; ++a) uniform["a" + std::to_string(a)] = 3.0;
  CHECK(compute_access_entropy(uniform) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("single event snapshot") {
  const auto s = build({ev(kT0 + 1, "u1", "dev", "r1", "read")});
  REQUIRE(s.nodes.size() == 3);
  CHECK(s.nodes[0] == EntityId{NodeKind::user, "u1"});
  CHECK(s.nodes[1] == EntityId{NodeKind::role, "dev"});
  CHECK(s.nodes[2] == EntityId{NodeKind::resource, "r1"});
  REQUIRE(s.edges.size() == 2);
  CHECK(s.edges[0].src == 0);
  CHECK(s.edges[0].dst == 1);
  CHECK(s.edges[0].action == kAssumeAction);
  CHECK(s.edges[1].dst == 2);
  CHECK(s.edges[1].action == "read");
  FeatureSpec spec;
  const auto built = build_snapshot(std::vector{ev(kT0 + 1, "u1", "dev", "r1", "read")}, kT0, kT0 + kWindow, spec,
                                    nullptr, kHalfLife);
  CHECK(built.added_roles == std::vector<std::string>{"dev"});
  CHECK(s.features(0, built.spec.entropy_offset()) == 0.0);
  CHECK(s.features(0, built.spec.role_offset()) == 1.0);
}

TEST_CASE("repeated event aggregates into counts") {
  const auto e = ev(kT0 + 10, "u1", "dev", "r1", "read");
  const auto s = build({e, e});
  REQUIRE(s.edges.size() == 2);
  CHECK(s.edges[0].count == 2);
  CHECK(s.edges[1].count == 2);
  CHECK(s.nodes.size() == 3);
}

TEST_CASE("window and vocabulary errors") {
  const auto outside = ev(kT0 + kWindow, "u1", "dev", "r1", "read");
  try {
    build({outside});
    FAIL("expected WindowMismatch");
  } catch (const GraphError& e) {
    CHECK(e.kind() == GraphErrorKind::window_mismatch);
  }
  auto frozen = FeatureSpec::make({"dev"}, {"read"}, VocabMode::frozen);
  try {
    build({ev(kT0, "u1", "ops", "r1", "read")}, nullptr, frozen);
    FAIL("expected UnknownRole");
  } catch (const GraphError& e) {
    CHECK(e.kind() == GraphErrorKind::unknown_role);
  }
  try {
    build({ev(kT0, "u1", "dev", "r1", "write")}, nullptr, frozen);
    FAIL("expected UnknownAction");
  } catch (const GraphError& e) {
    CHECK(e.kind() == GraphErrorKind::unknown_action);
  }
  auto lenient = FeatureSpec::make({"dev"}, {"read"}, VocabMode::frozen_ignore);
  const auto r = build_snapshot(std::vector{ev(kT0, "u1", "ops", "r1", "write")}, kT0, kT0 + kWindow, lenient,
                                nullptr, kHalfLife);
  CHECK(r.ignored_roles == std::vector<std::string>{"ops"});
  CHECK(r.spec.dim() == lenient.dim());
  // Unknown roles get no slot, so the user's role block is all zero.
  CHECK(r.snapshot.features(0, r.spec.role_offset()) == 0.0);
}

TEST_CASE("role context all_nodes fills role and resource rows") {
  auto spec = FeatureSpec::make({"dev", "ops"}, {}, VocabMode::extend, RoleContext::all_nodes);
  const auto r = build_snapshot(std::vector{ev(kT0, "u1", "dev", "r1", "read"), ev(kT0 + 1, "u2", "ops", "r1", "read")},
                                kT0, kT0 + kWindow, spec, nullptr, kHalfLife);
  const auto& s = r.snapshot;
  const auto dev = *s.find({NodeKind::role, "dev"});
  const auto res = *s.find({NodeKind::resource, "r1"});
  CHECK(s.features(dev, r.spec.role_offset()) == 1.0);
  CHECK(s.features(dev, r.spec.role_offset() + 1) == 0.0);
  CHECK(s.features(res, r.spec.role_offset()) == 0.5);
  CHECK(s.features(res, r.spec.role_offset() + 1) == 0.5);
  // Users-only default leaves them zero.
  const auto plain = build({ev(kT0, "u1", "dev", "r1", "read")});
  CHECK(plain.features(2, 3) == 0.0);
}

TEST_CASE("golden snapshot fixture") {
  const auto root = std::filesystem::path(SENTINEL_SOURCE_DIR) / "fixtures";
  const auto events = ingest::read_jsonl_file(root / "snapshot_small.jsonl");
  REQUIRE(events.size() == 10);
  const auto built = build_snapshot(events, kT0, kT0 + kWindow, FeatureSpec{}, nullptr, kHalfLife);
  const auto& s = built.snapshot;

  std::ifstream in(root / "snapshot_small.golden.json");
  const auto golden = nlohmann::json::parse(in);
  CHECK(built.spec.role_vocab == golden.at("role_vocab").get<std::vector<std::string>>());
  REQUIRE(s.nodes.size() == golden.at("nodes").size());
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    CHECK(std::string(to_string(s.nodes[i].kind)) == golden["nodes"][i]["kind"].get<std::string>());
    CHECK(s.nodes[i].name == golden["nodes"][i]["name"].get<std::string>());
  }
  REQUIRE(s.edges.size() == golden.at("edges").size());
  for (std::size_t k = 0; k < s.edges.size(); ++k) {
    const auto& g = golden["edges"][k];
    CHECK(s.edges[k].src == g["src"].get<std::uint32_t>());
    CHECK(s.edges[k].dst == g["dst"].get<std::uint32_t>());
    CHECK(s.edges[k].action == g["action"].get<std::string>());
    CHECK(s.edges[k].count == g["count"].get<std::uint32_t>());
    CHECK(s.edges[k].last_seen == g["last_seen"].get<TimeMs>());
    CHECK(s.edges[k].weight == doctest::Approx(g["weight"].get<double>()).epsilon(1e-12));
  }
  REQUIRE(s.features.cols() == golden["feature_dim"].get<std::size_t>());
  for (std::size_t i = 0; i < s.features.rows(); ++i) {
    for (std::size_t c = 0; c < s.features.cols(); ++c) {
      CHECK(s.features(i, c) == doctest::Approx(golden["features"][i][c].get<double>()).epsilon(1e-12));
    }
  }
}

TEST_CASE("snapshot json round trip") {
  const auto root = std::filesystem::path(SENTINEL_SOURCE_DIR) / "fixtures";
  const auto events = ingest::read_jsonl_file(root / "snapshot_small.jsonl");
  std::vector<std::uint8_t> labels(events.size(), 0);
  labels[3] = 1;
  const auto s = build_snapshot(events, kT0, kT0 + kWindow, FeatureSpec{}, nullptr, kHalfLife, labels).snapshot;
  REQUIRE(s.malicious.has_value());
  CHECK(snapshot_from_json(snapshot_to_json(s)) == s);
}

TEST_CASE("merge_history") {
  const DurationMs hl = kWindow;
  const auto w1 = build_snapshot(std::vector{ev(kT0, "u1", "dev", "r1", "read")}, kT0, kT0 + kWindow, FeatureSpec{},
                                 nullptr, hl).snapshot;
  SUBCASE("empty history takes the window counts") {
    const auto h = merge_history(History{}, w1, hl);
    CHECK(h.as_of == kT0 + kWindow);
    CHECK(h.nodes.at({NodeKind::user, "u1"}) == w1.window_tally[0]);
  }
  SUBCASE("empty window decays by one window") {
    const auto h1 = merge_history(History{}, w1, hl);
    GraphSnapshot empty;
    empty.window_start = kT0 + kWindow;
    empty.window_end = kT0 + 2 * kWindow;
    const auto h2 = merge_history(h1, empty, hl);
    CHECK(h2.nodes.at({NodeKind::user, "u1"}).count == doctest::Approx(0.5));
    CHECK(h2.nodes.at({NodeKind::user, "u1"}).actions.at("read") == doctest::Approx(0.5));
  }
  SUBCASE("disjoint actions over two windows") {
    const auto h1 = merge_history(History{}, w1, hl);
    const auto w2 = build_snapshot(std::vector{ev(kT0 + kWindow + 5, "u1", "dev", "r1", "write")}, kT0 + kWindow,
                                   kT0 + 2 * kWindow, FeatureSpec{}, &h1, hl);
    const auto h2 = merge_history(h1, w2.snapshot, hl);
    const auto& t = h2.nodes.at({NodeKind::user, "u1"});
    // read: 1 * 2^-1 from window 1, write: 1 from window 2.
    CHECK(t.actions.at("read") == doctest::Approx(0.5));
    CHECK(t.actions.at("write") == doctest::Approx(1.0));
    CHECK(t.count == doctest::Approx(1.5));
    // Features of window 2 already reflect the merged history: H(1/3, 2/3).
    const auto u = *w2.snapshot.find({NodeKind::user, "u1"});
    CHECK(w2.snapshot.features(u, w2.spec.entropy_offset()) == doctest::Approx(0.918295834054490));
  }
}

TEST_CASE("randomized snapshots: determinism, finiteness, conservation") {
  Rng rng(4);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<NormalizedEvent> events;
    const auto n = rng.uniform_index(60);
    for (std::uint64_t i = 0; i < n; ++i) {
      events.push_back(ev(kT0 + static_cast<TimeMs>(rng.uniform_index(kWindow)),
                          "u" + std::to_string(rng.uniform_index(6)), "role" + std::to_string(rng.uniform_index(3)),
                          "res" + std::to_string(rng.uniform_index(8)), rng.bernoulli(0.5) ? "read" : "write",
                          static_cast<int>(rng.uniform_index(5))));
    }
    events = ingest::normalize_events(events).events;
    History history;
    if (rng.bernoulli(0.5)) {
      history.as_of = kT0 - kWindow;
      history.nodes[{NodeKind::user, "u0"}].actions["delete"] = 3.0;
      history.nodes[{NodeKind::user, "u0"}].roles["role9"] = 3.0;
      history.nodes[{NodeKind::user, "u0"}].count = 3.0;
    }
    const auto a = build_snapshot(events, kT0, kT0 + kWindow, FeatureSpec{}, &history, kHalfLife);
    const auto b = build_snapshot(events, kT0, kT0 + kWindow, FeatureSpec{}, &history, kHalfLife);
    CHECK(a.snapshot == b.snapshot);
    CHECK(snapshot_to_json(a.snapshot) == snapshot_to_json(b.snapshot));
    for (double v : a.snapshot.features.flat()) CHECK(std::isfinite(v));
    std::uint64_t total = 0;
    for (const auto& e : a.snapshot.edges) {
      total += e.count;
      CHECK(e.weight > 0.0);
      CHECK(e.src != e.dst);
      CHECK(e.dst < a.snapshot.nodes.size());
    }
    CHECK(total == 2 * events.size());
    CHECK(std::is_sorted(a.snapshot.nodes.begin(), a.snapshot.nodes.end()));
  }
}
