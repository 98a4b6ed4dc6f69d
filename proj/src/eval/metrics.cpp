#include "sentinel/eval/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "sentinel/common/labels.hpp"

namespace sentinel::eval {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

[[noreturn]] void format_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw EvalError(EvalErrorKind::format_error, path.string() + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EvalError(EvalErrorKind::io_error, "cannot open " + path.string());
  return in;
}

}  // namespace

std::string MetricsReport::to_table() const {
  std::string s;
  s += fmt::format("{:<10} {:>8}\n", "metric", "value");
  s += fmt::format("{:<10} {:>8.4f}\n", "precision", precision);
  s += fmt::format("{:<10} {:>8.4f}\n", "recall", recall);
  s += fmt::format("{:<10} {:>8.4f}\n", "f1", f1);
  s += fmt::format("{:<10} {:>8.4f}\n", "fpr", fpr);
  s += fmt::format("{:<10} {:>8}\n", "tp", tp);
  s += fmt::format("{:<10} {:>8}\n", "fp", fp);
  s += fmt::format("{:<10} {:>8}\n", "tn", tn);
  s += fmt::format("{:<10} {:>8}\n", "fn", fn);
  return s;
}

std::string MetricsReport::to_csv() const {
  return fmt::format("precision,recall,f1,fpr,tp,fp,tn,fn,fingerprint\n{},{},{},{},{},{},{},{},{}\n", precision,
                     recall, f1, fpr, tp, fp, tn, fn, fingerprint);
}

std::string MetricsReport::to_json() const {
  ordered_json j;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["fpr"] = fpr;
  j["tp"] = tp;
  j["fp"] = fp;
  j["tn"] = tn;
  j["fn"] = fn;
  j["alerts"] = alerts;
  j["malicious_events"] = malicious_events;
  j["fingerprint"] = fingerprint;
  return j.dump(2);
}

std::vector<TruthEvent> truth_events(std::span<const ingest::NormalizedEvent> events,
                                     std::span<const std::uint8_t> labels) {
  if (labels.size() != events.size()) {
    throw EvalError(EvalErrorKind::invalid_argument, "label count differs from event count");
  }
  std::vector<TruthEvent> out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (labels[i] == 0) continue;
    out.push_back({i, labels[i], events[i].user_id, events[i].role, events[i].resource, events[i].timestamp});
  }
  return out;
}

std::vector<TruthEvent> read_truth_sidecar(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<TruthEvent> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      format_error(path, n, "not JSON");
    }
    if (!j.is_object() || !j.contains("index") || !j.contains("user") || !j.contains("ts")) {
      format_error(path, n, "label line needs index, user and ts");
    }
    TruthEvent t;
    t.index = j["index"].get<std::size_t>();
    const auto kind = scenario_from_string(j.value("scenario", std::string()));
    t.code = kind ? static_cast<std::uint8_t>(*kind) : std::uint8_t{255};
    t.user = j["user"].get<std::string>();
    t.ts = j["ts"].get<TimeMs>();
    t.role = j.value("role", std::string());
    t.resource = j.value("resource", std::string());
    out.push_back(std::move(t));
  }
  return out;
}

graph::EntityId parse_entity(std::string_view text) {
  const std::size_t colon = text.find(':');
  if (colon == std::string_view::npos) throw EvalError(EvalErrorKind::format_error, "bad entity " + std::string(text));
  const auto kind = graph::node_kind_from_string(text.substr(0, colon));
  if (!kind) throw EvalError(EvalErrorKind::format_error, "bad entity kind in " + std::string(text));
  return {*kind, std::string(text.substr(colon + 1))};
}

AlertEntry to_entry(const detect::Alert& a) {
  return {a.id, a.record.src, a.record.dst, a.record.window_end, a.record.score};
}

ScoreEntry to_entry(const detect::ScoredRow& r) {
  return {r.record.window_end, r.record.src, r.record.dst, std::string(detect::to_string(r.record.origin)),
          r.record.score, r.flagged};
}

std::vector<AlertEntry> read_alert_log(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<AlertEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("id").get<std::string>(), parse_entity(j.at("src").get<std::string>()),
                     parse_entity(j.at("dst").get<std::string>()), j.at("window_end").get<TimeMs>(),
                     j.at("score").get<double>()});
    } catch (const json::exception& e) {
      format_error(path, n, e.what());
    }
  }
  return out;
}

ScoresFile read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  ScoresFile f;
  std::string line;
  std::size_t n = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    if (line.rfind("# fingerprint=", 0) == 0) {
      f.fingerprint = line.substr(14);
      continue;
    }
    if (line.rfind("# window_ms=", 0) == 0) {
      f.window = std::stoll(line.substr(12));
      continue;
    }
    if (line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 9) format_error(path, n, "expected 9 columns");
    try {
      ScoreEntry e;
      e.window_end = std::stoll(cells[0]);
      e.src = parse_entity(cells[1]);
      e.dst = parse_entity(cells[2]);
      e.origin = cells[4];
      e.score = std::stod(cells[5]);
      e.flagged = cells[8] == "1";
      f.rows.push_back(std::move(e));
    } catch (const std::logic_error&) {
      format_error(path, n, "bad number");
    }
  }
  return f;
}

TruthIndex::TruthIndex(std::span<const TruthEvent> truth, DurationMs window) : window_(window) {
  for (const auto& t : truth) by_user_[t.user].push_back(&t);
}

bool TruthIndex::malicious_edge(const graph::EntityId& src, const graph::EntityId& dst, TimeMs window_end) const {
  if (src.kind != graph::NodeKind::user) return false;
  auto it = by_user_.find(src.name);
  if (it == by_user_.end()) return false;
  for (const TruthEvent* t : it->second) {
    if (t->ts < window_end - window_ || t->ts >= window_end) continue;
    if (dst.kind == graph::NodeKind::role && dst.name == t->role) return true;
    if (dst.kind == graph::NodeKind::resource && dst.name == t->resource) return true;
  }
  return false;
}

MetricsReport compute_metrics(std::span<const AlertEntry> alerts, std::span<const TruthEvent> truth,
                              std::span<const ScoreEntry> scores, DurationMs match_window,
                              std::optional<std::string> run_fingerprint,
                              std::optional<std::string> truth_fingerprint) {
  if (run_fingerprint && truth_fingerprint && *run_fingerprint != *truth_fingerprint) {
    throw EvalError(EvalErrorKind::mismatched_run,
                    "alert log fingerprint " + *run_fingerprint + " differs from labels " + *truth_fingerprint);
  }
  if (match_window <= 0) throw EvalError(EvalErrorKind::invalid_argument, "matching window must be positive");
  MetricsReport m;
  m.fingerprint = run_fingerprint.value_or(truth_fingerprint.value_or(""));
  m.alerts = alerts.size();
  m.malicious_events = truth.size();

  std::map<std::string, std::vector<std::size_t>> by_actor;
  for (std::size_t i = 0; i < truth.size(); ++i) by_actor[truth[i].user].push_back(i);
  for (auto& [user, idx] : by_actor) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return truth[a].ts < truth[b].ts; });
  }
  std::vector<bool> used(truth.size(), false);

  std::vector<std::size_t> order(alerts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (alerts[a].window_end != alerts[b].window_end) return alerts[a].window_end < alerts[b].window_end;
    return alerts[a].id < alerts[b].id;
  });
  for (std::size_t k : order) {
    const AlertEntry& a = alerts[k];
    std::optional<std::size_t> best;
    for (const graph::EntityId* end : {&a.src, &a.dst}) {
      if (end->kind != graph::NodeKind::user) continue;
      auto it = by_actor.find(end->name);
      if (it == by_actor.end()) continue;
      for (std::size_t i : it->second) {
        if (used[i]) continue;
        const TimeMs gap = truth[i].ts > a.window_end ? truth[i].ts - a.window_end : a.window_end - truth[i].ts;
        if (gap > match_window) continue;
        if (!best || truth[i].ts < truth[*best].ts) best = i;
        break;
      }
    }
    if (best) {
      used[*best] = true;
      ++m.tp;
    } else {
      ++m.fp;
    }
  }
  m.fn = truth.size() - m.tp;

  if (!scores.empty()) {
    const TruthIndex index(truth, match_window);
    for (const auto& s : scores) {
      if (!s.flagged && !index.malicious_edge(s.src, s.dst, s.window_end)) ++m.tn;
    }
  }
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.fpr = ratio(m.fp, m.fp + m.tn);
  return m;
}

std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const bool> positive, std::size_t n_points) {
  if (scores.size() != positive.size()) {
    throw EvalError(EvalErrorKind::invalid_argument, "score and label counts differ");
  }
  const auto pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  if (pos == 0 || pos == scores.size()) {
    throw EvalError(EvalErrorKind::degenerate_labels, "need at least one positive and one negative");
  }
  if (n_points == 0) return {};
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = sorted.size();
  std::vector<PrPoint> out;
  for (std::size_t i = 0; i < n_points; ++i) {
    const std::size_t rank = n_points == 1 ? (n - 1) / 2 : (i * (n - 1) + (n_points - 1) / 2) / (n_points - 1);
    const double t = sorted[rank];
    std::size_t tp = 0;
    std::size_t flagged = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (scores[k] >= t) {
        ++flagged;
        if (positive[k]) ++tp;
      }
    }
    out.push_back({t, ratio(tp, pos), ratio(tp, flagged)});
  }
  return out;
}

std::string pr_csv(std::span<const PrPoint> points) {
  std::string s = "threshold,recall,precision\n";
  for (const auto& p : points) s += fmt::format("{},{},{}\n", p.threshold, p.recall, p.precision);
  return s;
}

}  // namespace sentinel::eval
