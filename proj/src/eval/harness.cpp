#include "sentinel/eval/harness.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <json.hpp>
#include <thread>

#include "sentinel/detect/engine.hpp"

namespace sentinel::eval {

using detect::Detector;
using detect::SteadyClock;
using nlohmann::ordered_json;

std::string LoadReport::to_table() const {
  std::string s = fmt::format("{:<18} {:>18} {:>24}\n", "Workload (Events/s)", "Avg. Latency (ms)", "Throughput (Events/s)");
  for (const auto& r : rows) {
    s += fmt::format("{:<18.0f} {:>18.1f} {:>24.1f}{}\n", r.offered, r.mean_latency_ms, r.throughput,
                     r.saturated ? "  (saturated)" : "");
  }
  return s;
}

std::string LoadReport::to_csv() const {
  std::string s = "workload_events_per_s,avg_latency_ms,throughput_events_per_s,max_latency_ms,events,saturated\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{},{},{},{}\n", r.offered, r.mean_latency_ms, r.throughput, r.max_latency_ms, r.events,
                     r.saturated ? 1 : 0);
  }
  return s;
}

std::string LoadReport::to_json() const {
  ordered_json j;
  j["duration_ms"] = duration;
  j["batch_window_ms"] = batch_window;
  j["latency_monotone"] = latency_monotone;
  j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"workload_events_per_s", r.offered},
                         {"avg_latency_ms", r.mean_latency_ms},
                         {"throughput_events_per_s", r.throughput},
                         {"max_latency_ms", r.max_latency_ms},
                         {"events", r.events},
                         {"saturated", r.saturated}});
  }
  return j.dump(2);
}

namespace {

LoadRow run_level(const std::string& checkpoint, std::span<const ingest::NormalizedEvent> tail, TimeMs origin,
                  double rate, const LoadOptions& opt) {
  detect::EngineOptions eo;
  eo.clock = detect::ClockMode::wall;
  eo.window = opt.batch_window;
  eo.time_origin = origin;
  eo.wall_origin = SteadyClock::now();
  const auto start = eo.wall_origin;
  detect::Engine engine(Detector::restore(checkpoint), eo);
  engine.start();

  const auto total = static_cast<std::size_t>(std::llround(rate * static_cast<double>(opt.duration) / 1000.0));
  const auto due = [&](std::size_t i) {
    return start + std::chrono::duration_cast<SteadyClock::duration>(std::chrono::duration<double>(i / rate));
  };
  std::size_t sent = 0;
  while (sent < total) {
    std::this_thread::sleep_until(due(sent));
    const auto now = SteadyClock::now();
    const TimeMs ts = origin + std::chrono::duration_cast<std::chrono::milliseconds>(now - start).count();
    std::vector<detect::QueuedEvent> batch;
    while (sent < total && due(sent) <= now) {
      detect::QueuedEvent q;
      q.event = tail[sent % tail.size()];
      q.event.timestamp = ts;
      q.receipt = now;
      batch.push_back(std::move(q));
      ++sent;
    }
    if (engine.submit(std::move(batch)) != detect::SubmitStatus::accepted) {
      spdlog::warn("load generator: engine refused a batch");
    }
  }
  engine.stop();
  const auto st = engine.stats();

  LoadRow row;
  row.offered = rate;
  row.events = st.events_processed;
  const double elapsed =
      st.last_emit ? std::chrono::duration<double>(*st.last_emit - start).count() : 0.0;
  const double span = std::max(static_cast<double>(opt.duration) / 1000.0, elapsed);
  row.throughput = span > 0.0 ? static_cast<double>(st.events_processed) / span : 0.0;
  row.mean_latency_ms = st.events_processed ? st.latency_sum_ms / static_cast<double>(st.events_processed) : 0.0;
  row.max_latency_ms = st.latency_max_ms;
  row.saturated = row.throughput < 0.5 * rate;
  return row;
}

}  // namespace

LoadReport measure_load(const LoadOptions& opt) {
  LoadReport report;
  report.duration = opt.duration;
  report.batch_window = opt.batch_window;
  if (opt.duration <= 0 || opt.batch_window <= 0) {
    throw EvalError(EvalErrorKind::invalid_argument, "load duration and batch window must be positive");
  }
  std::vector<double> rates;
  for (double r : opt.rates) {
    if (r > 0.0) rates.push_back(r);
  }
  if (rates.empty()) return report;

  const synth::Dataset ds = synth::generate(opt.workload);
  const auto& events = ds.stream.events;
  const TimeMs cutoff = detect::align_down(opt.workload.start + opt.train_days * kDayMs, opt.config.window);
  std::vector<ingest::NormalizedEvent> head;
  std::vector<ingest::NormalizedEvent> tail;
  for (const auto& e : events) (e.timestamp < cutoff ? head : tail).push_back(e);
  if (head.empty() || tail.empty()) throw EvalError(EvalErrorKind::invalid_argument, "workload too short to split");

  Detector det(opt.config);
  det.pretrain(head, {}, detect::align_down(head.front().timestamp, opt.config.window), cutoff);
  const std::string checkpoint = det.checkpoint();

  for (double rate : rates) {
    report.rows.push_back(run_level(checkpoint, tail, cutoff, rate, opt));
    spdlog::info("load {:.0f}/s: {:.2f} ms, {:.1f} events/s", rate, report.rows.back().mean_latency_ms,
                 report.rows.back().throughput);
  }
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    if (report.rows[i].offered >= report.rows[i - 1].offered &&
        report.rows[i].mean_latency_ms < report.rows[i - 1].mean_latency_ms) {
      report.latency_monotone = false;
    }
  }
  return report;
}

MetricsReport evaluate_outcome(const detect::ReplayOutcome& outcome, std::span<const ingest::NormalizedEvent> events,
                               std::span<const std::uint8_t> labels, DurationMs match_window) {
  std::vector<TruthEvent> truth;
  for (auto& t : truth_events(events, labels)) {
    if (t.ts >= outcome.train_until) truth.push_back(std::move(t));
  }
  std::vector<AlertEntry> alerts;
  for (const auto& a : outcome.alerts) alerts.push_back(to_entry(a));
  std::vector<ScoreEntry> scores;
  for (const auto& r : outcome.rows) scores.push_back(to_entry(r));
  MetricsReport m = compute_metrics(alerts, truth, scores, match_window);
  m.fingerprint = outcome.events_fingerprint;
  return m;
}

const AblationVariant& AblationReport::variant(std::string_view name) const {
  for (const auto& v : variants) {
    if (v.name == name) return v;
  }
  throw EvalError(EvalErrorKind::invalid_argument, "no ablation variant " + std::string(name));
}

std::string AblationReport::to_table() const {
  std::string s = fmt::format("{:<14} {:>9} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}\n", "variant", "precision", "recall",
                              "f1", "fpr", "tp", "fp", "fn");
  for (const auto& v : variants) {
    const auto& m = v.metrics;
    s += fmt::format("{:<14} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f} {:>6} {:>6} {:>6}\n", v.name, m.precision, m.recall,
                     m.f1, m.fpr, m.tp, m.fp, m.fn);
  }
  return s;
}

std::string AblationReport::to_csv() const {
  std::string s = "variant,precision,recall,f1,fpr,tp,fp,tn,fn,events_fingerprint,config_fingerprint\n";
  for (const auto& v : variants) {
    const auto& m = v.metrics;
    s += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", v.name, m.precision, m.recall, m.f1, m.fpr, m.tp, m.fp,
                     m.tn, m.fn, v.events_fingerprint, v.config.fingerprint());
  }
  return s;
}

std::string AblationReport::to_json() const {
  ordered_json j;
  j["same_input"] = same_input;
  j["variants"] = ordered_json::array();
  for (const auto& v : variants) {
    ordered_json x;
    x["name"] = v.name;
    x["metrics"] = ordered_json::parse(v.metrics.to_json());
    x["events_fingerprint"] = v.events_fingerprint;
    x["config_fingerprint"] = v.config.fingerprint();
    x["tau"] = v.tau;
    x["retrains"] = v.retrains;
    j["variants"].push_back(std::move(x));
  }
  return j.dump(2);
}

AblationReport run_ablation(std::span<const ingest::NormalizedEvent> events, std::span<const std::uint8_t> labels,
                            const detect::ReplayOptions& base) {
  if (labels.size() != events.size()) {
    throw EvalError(EvalErrorKind::invalid_argument, "ablation needs one label per event");
  }
  AblationReport report;
  auto add = [&](std::string name, detect::DetectorConfig config) {
    detect::ReplayOptions opt = base;
    opt.config = std::move(config);
    opt.out_dir.clear();
    opt.crash_after_windows.reset();
    opt.resume = false;
    const auto outcome = detect::run_replay(events, labels, opt);
    AblationVariant v;
    v.name = std::move(name);
    v.config = opt.config;
    v.metrics = evaluate_outcome(outcome, events, labels, opt.config.window);
    v.events_fingerprint = outcome.events_fingerprint;
    v.tau = outcome.tau;
    v.retrains = outcome.retrains;
    spdlog::info("ablation {}: f1 {:.4f} recall {:.4f} fp {}", v.name, v.metrics.f1, v.metrics.recall, v.metrics.fp);
    report.variants.push_back(std::move(v));
  };
  add("full", base.config);
  auto uniform = base.config;
  uniform.model.attention = gnn::AttentionMode::uniform;
  add("no_attention", uniform);
  auto frozen = base.config;
  frozen.adaptive = false;
  add("no_retraining", frozen);
  for (const auto& v : report.variants) {
    report.same_input = report.same_input && v.events_fingerprint == report.variants.front().events_fingerprint;
  }
  return report;
}

}  // namespace sentinel::eval
