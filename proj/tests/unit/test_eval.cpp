#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sentinel/common/rng.hpp"
#include "sentinel/eval/harness.hpp"
#include "sentinel/eval/metrics.hpp"
#include "sentinel/gnn/model.hpp"

using namespace sentinel;
using namespace sentinel::eval;
using graph::EntityId;
using graph::NodeKind;

namespace {

constexpr TimeMs kT0 = 1704067200000;
constexpr DurationMs kW = 15 * kMinuteMs;

TruthEvent bad(std::string user, TimeMs ts, std::string resource = "res-x") {
  TruthEvent t;
  t.code = 1;
  t.user = std::move(user);
  t.role = "dev";
  t.resource = std::move(resource);
  t.ts = ts;
  return t;
}

AlertEntry alert(std::string user, TimeMs window_end, std::string resource = "res-x") {
  AlertEntry a;
  a.id = user + "-" + resource + "-" + std::to_string(window_end);
  a.src = {NodeKind::user, std::move(user)};
  a.dst = {NodeKind::resource, std::move(resource)};
  a.window_end = window_end;
  a.score = 0.9;
  return a;
}

ScoreEntry score(std::string user, TimeMs window_end, bool flagged, std::string resource = "res-x") {
  ScoreEntry s;
  s.window_end = window_end;
  s.src = {NodeKind::user, std::move(user)};
  s.dst = {NodeKind::resource, std::move(resource)};
  s.score = flagged ? 0.9 : 0.1;
  s.flagged = flagged;
  return s;
}

std::vector<PrPoint> curve(const std::vector<double>& s, const std::vector<bool>& labels, std::size_t n) {
  auto flags = std::make_unique<bool[]>(labels.size());
  std::copy(labels.begin(), labels.end(), flags.get());
  return pr_curve(s, std::span<const bool>(flags.get(), labels.size()), n);
}

synth::WorkloadConfig small_workload() {
  synth::WorkloadConfig c;
  c.n_users = 15;
  c.n_roles = 6;
  c.n_resources = 15;
  c.duration_days = 5;
  c.n_service_accounts = 2;
  c.attacks.first_day = 3;
  c.attacks.privilege_escalation = 2;
  c.attacks.lateral_movement = 1;
  c.attacks.service_account_compromise = 1;
  return c;
}

detect::DetectorConfig small_detector() {
  detect::DetectorConfig c;
  c.window = 150 * kMinuteMs;
  c.hidden = {8, 8};
  c.pretrain_epochs = 4;
  return c;
}

}  // namespace

TEST_CASE("perfect detector") {
  const std::vector<TruthEvent> truth{bad("a", kT0 + 100), bad("b", kT0 + kW + 5), bad("c", kT0 + 2 * kW + 7)};
  const std::vector<AlertEntry> alerts{alert("a", kT0 + kW), alert("b", kT0 + 2 * kW), alert("c", kT0 + 3 * kW)};
  const std::vector<ScoreEntry> scores{score("a", kT0 + kW, true), score("b", kT0 + 2 * kW, true),
                                       score("c", kT0 + 3 * kW, true), score("d", kT0 + kW, false),
                                       score("e", kT0 + kW, false)};
  const auto m = compute_metrics(alerts, truth, scores, kW);
  CHECK(m.tp == 3);
  CHECK(m.fp == 0);
  CHECK(m.fn == 0);
  CHECK(m.tn == 2);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.fpr == 0.0);
}

TEST_CASE("no alerts on a stream with anomalies") {
  const std::vector<TruthEvent> truth{bad("a", kT0 + 100), bad("b", kT0 + 200)};
  const auto m = compute_metrics({}, truth, {}, kW);
  CHECK(m.tp == 0);
  CHECK(m.fn == 2);
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
  CHECK(m.fpr == 0.0);
}

TEST_CASE("three malicious, two caught plus one false alarm") {
  // hand count: TP 2 (a, b), FP 1 (z), FN 1 (c)
  const std::vector<TruthEvent> truth{bad("a", kT0 + 100), bad("b", kT0 + 200), bad("c", kT0 + 300)};
  const std::vector<AlertEntry> alerts{alert("a", kT0 + kW), alert("b", kT0 + kW), alert("z", kT0 + kW)};
  const auto m = compute_metrics(alerts, truth, {}, kW);
  CHECK(m.tp == 2);
  CHECK(m.fp == 1);
  CHECK(m.fn == 1);
  CHECK(m.precision == 2.0 / 3.0);
  CHECK(m.recall == 2.0 / 3.0);
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("matching is one-to-one, time bounded and uses either edge end") {
  SUBCASE("two alerts, one event") {
    const std::vector<TruthEvent> truth{bad("a", kT0 + 100)};
    const std::vector<AlertEntry> alerts{alert("a", kT0 + kW), alert("a", kT0 + kW, "res-y")};
    const auto m = compute_metrics(alerts, truth, {}, kW);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.fn == 0);
  }
  SUBCASE("outside the window") {
    const std::vector<TruthEvent> truth{bad("a", kT0)};
    const std::vector<AlertEntry> alerts{alert("a", kT0 + kW + 1)};
    const auto m = compute_metrics(alerts, truth, {}, kW);
    CHECK(m.tp == 0);
    CHECK(m.fp == 1);
    CHECK(m.fn == 1);
  }
  SUBCASE("boundary is inclusive") {
    const std::vector<TruthEvent> truth{bad("a", kT0)};
    const auto m = compute_metrics(std::vector<AlertEntry>{alert("a", kT0 + kW)}, truth, {}, kW);
    CHECK(m.tp == 1);
  }
  SUBCASE("actor on the destination end") {
    const std::vector<TruthEvent> truth{bad("a", kT0 + 10)};
    AlertEntry a = alert("x", kT0 + kW);
    a.dst = {NodeKind::user, "a"};
    const auto m = compute_metrics(std::vector<AlertEntry>{a}, truth, {}, kW);
    CHECK(m.tp == 1);
  }
  SUBCASE("earliest eligible event first") {
    const std::vector<TruthEvent> truth{bad("a", kT0 + 10), bad("a", kT0 + kW + 10)};
    const std::vector<AlertEntry> alerts{alert("a", kT0 + kW)};
    const auto m = compute_metrics(alerts, truth, {}, kW);
    CHECK(m.tp == 1);
    CHECK(m.fn == 1);
  }
}

TEST_CASE("fingerprint mismatch is refused") {
  try {
    compute_metrics({}, {}, {}, kW, std::string("aaa"), std::string("bbb"));
    FAIL("accepted mismatched fingerprints");
  } catch (const EvalError& e) {
    CHECK(e.kind() == EvalErrorKind::mismatched_run);
  }
  CHECK_NOTHROW(compute_metrics({}, {}, {}, kW, std::string("aaa"), std::string("aaa")));
  CHECK_NOTHROW(compute_metrics({}, {}, {}, kW, std::string("aaa"), std::nullopt));
}

TEST_CASE("confusion identities and purity on random inputs") {
  Rng rng(11);
  for (int round = 0; round < 200; ++round) {
    std::vector<TruthEvent> truth;
    std::vector<AlertEntry> alerts;
    std::vector<ScoreEntry> scores;
    const auto users = 1 + rng.uniform_index(5);
    for (std::size_t i = rng.uniform_index(8); i > 0; --i) {
      truth.push_back(bad("u" + std::to_string(rng.uniform_index(users)), kT0 + static_cast<TimeMs>(rng.uniform_index(4 * kW))));
    }
    std::sort(truth.begin(), truth.end(), [](const auto& a, const auto& b) { return a.ts < b.ts; });
    for (std::size_t i = rng.uniform_index(8); i > 0; --i) {
      const auto u = "u" + std::to_string(rng.uniform_index(users));
      const TimeMs end = kT0 + static_cast<TimeMs>(1 + rng.uniform_index(4)) * kW;
      alerts.push_back(alert(u, end, "res-" + std::to_string(i)));
      scores.push_back(score(u, end, true, "res-" + std::to_string(i)));
    }
    for (std::size_t i = rng.uniform_index(10); i > 0; --i) {
      scores.push_back(score("u" + std::to_string(rng.uniform_index(users)),
                             kT0 + static_cast<TimeMs>(1 + rng.uniform_index(4)) * kW, false, "quiet"));
    }
    const auto m = compute_metrics(alerts, truth, scores, kW);
    CHECK(m.tp + m.fp == alerts.size());
    CHECK(m.tp + m.fn == truth.size());
    CHECK(m.precision == (m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0));
    CHECK(m.recall == (m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0));
    CHECK(m.fpr == (m.fp + m.tn ? static_cast<double>(m.fp) / static_cast<double>(m.fp + m.tn) : 0.0));
    const double pr = m.precision + m.recall;
    CHECK(m.f1 == doctest::Approx(pr > 0 ? 2 * m.precision * m.recall / pr : 0.0).epsilon(1e-15));
    for (double v : {m.precision, m.recall, m.f1, m.fpr}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const auto again = compute_metrics(alerts, truth, scores, kW);
    CHECK(again.to_json() == m.to_json());
  }
}

TEST_CASE("pr curve on perfectly separated scores") {
  std::vector<double> s;
  std::vector<bool> y;
  for (int i = 0; i < 10; ++i) {
    s.push_back(0.9 + i * 0.001);
    y.push_back(true);
    s.push_back(0.1 + i * 0.001);
    y.push_back(false);
  }
  const auto points = curve(s, y, 20);
  REQUIRE(points.size() == 20);
  for (const auto& p : points) {
    if (p.recall < 1.0) CHECK(p.precision == 1.0);
  }
  const auto reach = std::find_if(points.begin(), points.end(), [](const PrPoint& p) { return p.recall == 1.0; });
  REQUIRE(reach != points.end());
  CHECK(reach->precision == 1.0);
}

TEST_CASE("pr curve endpoints, monotone recall and single point") {
  Rng rng(5);
  std::vector<double> s;
  std::vector<bool> y;
  for (int i = 0; i < 500; ++i) {
    s.push_back(rng.uniform01());
    y.push_back(rng.bernoulli(0.3));
  }
  y[0] = true;
  y[1] = false;
  const auto points = curve(s, y, 25);
  REQUIRE(points.size() == 25);
  for (std::size_t i = 1; i < points.size(); ++i) CHECK(points[i].recall >= points[i - 1].recall);
  CHECK(points.back().recall == 1.0);
  CHECK(points.back().threshold == *std::min_element(s.begin(), s.end()));
  const auto top = std::max_element(s.begin(), s.end()) - s.begin();
  CHECK(points.front().precision == (y[static_cast<std::size_t>(top)] ? 1.0 : 0.0));

  const auto one = curve(s, y, 1);
  REQUIRE(one.size() == 1);
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  CHECK(one.front().threshold == sorted[(sorted.size() - 1) / 2]);
}

TEST_CASE("random scores: precision near the positive rate at high recall") {
  Rng rng(2024);
  std::vector<double> s;
  std::vector<bool> y;
  for (int i = 0; i < 4000; ++i) {
    s.push_back(rng.uniform01());
    y.push_back(i % 2 == 0);
  }
  const auto points = curve(s, y, 20);
  for (const auto& p : points) {
    if (p.recall >= 0.8) CHECK(std::abs(p.precision - 0.5) <= 0.1);
  }
}

TEST_CASE("pr curve rejects degenerate labels") {
  const std::vector<double> s{0.1, 0.2, 0.3};
  for (const auto& y : {std::vector<bool>{true, true, true}, std::vector<bool>{false, false, false}}) {
    try {
      curve(s, y, 3);
      FAIL("accepted one-class labels");
    } catch (const EvalError& e) {
      CHECK(e.kind() == EvalErrorKind::degenerate_labels);
    }
  }
  CHECK_THROWS_AS(curve(s, {true, false}, 3), EvalError);
}

TEST_CASE("attention is vacuous with one neighbor per node") {
  using namespace gnn;
  Rng rng(3);
  for (int round = 0; round < 20; ++round) {
    const std::size_t n = 3 + rng.uniform_index(8);
    Matrix x(n, 6);
    for (double& v : x.flat()) v = rng.uniform(-1.0, 1.0);
    // a path: each node has at most one in-neighbor
    std::vector<DirectedEdge> edges;
    for (std::uint32_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, 1.0});
    const auto params = init_params(std::vector<std::size_t>{6, 8, 8}, 100 + round);
    ModelOptions learned;
    ModelOptions uniform;
    uniform.attention = AttentionMode::uniform;
    const auto adj = make_adjacency(n, edges, false);
    CHECK(encode(x, adj, params, learned).embeddings() == encode(x, adj, params, uniform).embeddings());

    // a node with two in-neighbors makes the variants differ
    edges.push_back({0, 2, 1.0});
    const auto fan_in = make_adjacency(n, edges, false);
    CHECK(encode(x, fan_in, params, learned).embeddings() != encode(x, fan_in, params, uniform).embeddings());
  }
}

TEST_CASE("ablation variants consume identical input") {
  const auto ds = synth::generate(small_workload());
  detect::ReplayOptions opt;
  opt.config = small_detector();
  opt.train_days = 3;
  const auto report = run_ablation(ds.stream.events, ds.stream.labels, opt);
  REQUIRE(report.variants.size() == 3);
  CHECK(report.same_input);
  std::set<std::string> names;
  for (const auto& v : report.variants) {
    names.insert(v.name);
    CHECK(v.events_fingerprint == report.variants.front().events_fingerprint);
    CHECK(v.metrics.tp + v.metrics.fn == report.variants.front().metrics.tp + report.variants.front().metrics.fn);
  }
  CHECK(names == std::set<std::string>{"full", "no_attention", "no_retraining"});
  CHECK(report.variant("no_retraining").retrains == 0);
  CHECK(report.variant("full").retrains > 0);
  CHECK(report.variant("no_attention").config.model.attention == gnn::AttentionMode::uniform);
  CHECK_THROWS_AS(report.variant("nope"), EvalError);
  CHECK(report.to_csv().find("no_attention,") != std::string::npos);

  const auto again = run_ablation(ds.stream.events, ds.stream.labels, opt);
  CHECK(again.to_json() == report.to_json());
}

TEST_CASE("load: rate zero yields no rows") {
  LoadOptions opt;
  opt.rates = {0.0};
  CHECK(measure_load(opt).rows.empty());
  opt.duration = 0;
  opt.rates = {100.0};
  CHECK_THROWS_AS(measure_load(opt), EvalError);
}

TEST_CASE("load: throughput never exceeds the offered rate") {
  LoadOptions opt;
  opt.config = small_detector();
  opt.workload = small_workload();
  opt.train_days = 3;
  opt.rates = {200.0, 400.0};
  opt.duration = kSecondMs;
  const auto report = measure_load(opt);
  REQUIRE(report.rows.size() == 2);
  for (const auto& r : report.rows) {
    CHECK(r.throughput <= r.offered);
    CHECK(r.throughput > 0.0);
    CHECK(r.mean_latency_ms > 0.0);
    CHECK(r.max_latency_ms >= r.mean_latency_ms);
    CHECK(r.events == static_cast<std::uint64_t>(r.offered));
  }
  const auto table = report.to_table();
  CHECK(table.find("Workload (Events/s)") != std::string::npos);
  CHECK(table.find("Avg. Latency (ms)") != std::string::npos);
  CHECK(table.find("Throughput (Events/s)") != std::string::npos);
}
