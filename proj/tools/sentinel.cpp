#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "sentinel/common/fs.hpp"
#include "sentinel/common/time.hpp"
#include "sentinel/detect/replay.hpp"
#include "sentinel/eval/harness.hpp"
#include "sentinel/eval/metrics.hpp"
#include "sentinel/ingest/parser.hpp"
#include "sentinel/service/service.hpp"
#include "sentinel/synth/synth.hpp"

extern char** environ;

namespace {

namespace fs = std::filesystem;
using namespace sentinel;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

DurationMs duration_arg(const std::string& text, const char* what) {
  const auto d = parse_duration(text);
  if (!d || *d <= 0) throw UsageError(fmt::format("{}: not a positive duration: {}", what, text));
  return *d;
}

void apply_sets(detect::DetectorConfig& config, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + kv);
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_file_atomic(out, text);
  }
}

std::string render(const std::string& format, const auto& report) {
  if (format == "csv") return report.to_csv();
  if (format == "json") return report.to_json() + "\n";
  return report.to_table();
}

std::optional<std::string> json_string(const fs::path& path, const char* key) {
  if (!fs::exists(path)) return std::nullopt;
  const auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains(key) || !j[key].is_string()) return std::nullopt;
  return j[key].get<std::string>();
}

std::optional<TimeMs> time_arg(const std::string& text) {
  if (text.empty()) return std::nullopt;
  if (auto t = parse_rfc3339(text)) return t;
  try {
    std::size_t used = 0;
    const TimeMs t = std::stoll(text, &used);
    if (used == text.size()) return t;
  } catch (const std::exception&) {
  }
  throw UsageError("not an RFC 3339 instant or epoch milliseconds: " + text);
}

synth::WorkloadConfig workload_from(const std::string& path) {
  if (path.empty()) return synth::WorkloadConfig::desk_scale();
  return synth::WorkloadConfig::from_json(read_file(path));
}

// ---- serve

struct ServeArgs {
  std::string config;
  std::vector<std::string> sets;
};

int run_serve(const ServeArgs& a) {
  service::ServiceConfig cfg;
  if (!a.config.empty()) cfg.load_file(a.config);
  cfg.apply_env(environ);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return service::serve(std::move(cfg));
}

// ---- replay

struct ReplayArgs {
  std::string events;
  std::string labels;
  std::string out;
  std::uint64_t seed = 42;
  std::string window;
  std::string mode = "strict";
  int train_days = 5;
  std::size_t checkpoint_every = 0;
  bool no_feedback = false;
  bool resume = false;
  std::string provider = "generic";
  std::vector<std::string> sets;
};

int run_replay(const ReplayArgs& a) {
  const auto provider = ingest::provider_from_string(a.provider);
  if (!provider) throw UsageError("unknown provider " + a.provider);
  std::size_t rejected = 0;
  const auto events = ingest::read_jsonl_file(a.events, *provider, &rejected);
  if (rejected > 0) spdlog::warn("{} event lines rejected", rejected);
  std::vector<std::uint8_t> labels;
  if (!a.labels.empty()) labels = synth::read_labels_file(a.labels, events.size());

  detect::ReplayOptions opt;
  opt.config.apply_mode(a.mode);
  opt.config.seed = a.seed;
  if (!a.window.empty()) opt.config.window = duration_arg(a.window, "--window");
  apply_sets(opt.config, a.sets);
  opt.train_days = a.train_days;
  opt.oracle_feedback = !a.no_feedback && !labels.empty();
  opt.out_dir = a.out;
  opt.checkpoint_every = a.checkpoint_every;
  opt.resume = a.resume;

  const auto outcome = detect::run_replay(events, labels, opt);
  fmt::print("windows {}  alerts {}  retrains {}  tau {:.6f}  model_version {}\ncheckpoint sha256 {}\n",
             outcome.windows, outcome.alerts.size(), outcome.retrains, outcome.tau, outcome.model_version,
             outcome.checkpoint_sha256);
  if (!labels.empty()) {
    const auto m = eval::evaluate_outcome(outcome, events, labels, opt.config.window);
    write_file_atomic(fs::path(a.out) / "metrics.json", m.to_json() + "\n");
    fmt::print("{}", m.to_table());
  }
  return 0;
}

// ---- eval

struct MetricsArgs {
  std::string alerts;
  std::string labels;
  std::string scores;
  std::string match_window;
  std::string since;
  std::string format = "table";
  std::string out;
};

int run_eval_metrics(const MetricsArgs& a) {
  const fs::path run_dir = fs::path(a.alerts).parent_path();
  const auto alerts = eval::read_alert_log(a.alerts);
  auto truth = eval::read_truth_sidecar(a.labels);

  std::vector<eval::ScoreEntry> scores;
  std::optional<std::string> run_fp;
  DurationMs window = detect::DetectorConfig{}.window;
  fs::path scores_path = a.scores.empty() ? run_dir / detect::kScoresCsv : fs::path(a.scores);
  if (fs::exists(scores_path)) {
    auto sf = eval::read_scores_csv(scores_path);
    scores = std::move(sf.rows);
    if (!sf.fingerprint.empty()) run_fp = sf.fingerprint;
    if (sf.window > 0) window = sf.window;
  } else if (!a.scores.empty()) {
    throw UsageError("cannot open " + a.scores);
  }
  if (!run_fp) run_fp = json_string(run_dir / detect::kRunJson, "events_fingerprint");
  const auto truth_fp = json_string(fs::path(a.labels).parent_path() / synth::kMetaFile, "events_sha256");

  std::optional<TimeMs> since = time_arg(a.since);
  if (!since) {
    const fs::path run_json = run_dir / detect::kRunJson;
    if (fs::exists(run_json)) {
      const auto j = json::parse(read_file(run_json), nullptr, false);
      if (!j.is_discarded() && j.contains("train_until")) since = j["train_until"].get<TimeMs>();
    }
  }
  if (since) {
    std::erase_if(truth, [&](const eval::TruthEvent& t) { return t.ts < *since; });
  }
  const DurationMs match = a.match_window.empty() ? window : duration_arg(a.match_window, "--match-window");
  const auto m = eval::compute_metrics(alerts, truth, scores, match, run_fp, truth_fp);
  emit(render(a.format, m), a.out);
  return 0;
}

struct PrArgs {
  std::string scores;
  std::string labels;
  std::string out;
  std::size_t points = 50;
};

int run_eval_pr(const PrArgs& a) {
  const auto sf = eval::read_scores_csv(a.scores);
  const auto truth = eval::read_truth_sidecar(a.labels);
  const eval::TruthIndex index(truth, sf.window > 0 ? sf.window : detect::DetectorConfig{}.window);
  std::vector<double> s;
  auto positive = std::make_unique<bool[]>(sf.rows.size());
  for (std::size_t i = 0; i < sf.rows.size(); ++i) {
    const auto& r = sf.rows[i];
    s.push_back(r.score);
    positive[i] = index.malicious_edge(r.src, r.dst, r.window_end);
  }
  const auto curve = eval::pr_curve(s, std::span<const bool>(positive.get(), sf.rows.size()), a.points);
  emit(eval::pr_csv(curve), a.out);
  return 0;
}

struct LoadArgs {
  std::vector<double> rates{1000.0, 5000.0};
  std::string duration = "30s";
  std::string batch_window = "10ms";
  std::string workload;
  std::string format = "table";
  std::string out;
  std::vector<std::string> sets;
};

int run_eval_load(const LoadArgs& a) {
  eval::LoadOptions opt;
  apply_sets(opt.config, a.sets);
  opt.workload = workload_from(a.workload);
  opt.rates = a.rates;
  opt.duration = duration_arg(a.duration, "--duration");
  opt.batch_window = duration_arg(a.batch_window, "--batch-window");
  const auto report = eval::measure_load(opt);
  emit(render(a.format, report), a.out);
  for (const auto& r : report.rows) {
    if (r.saturated) spdlog::warn("engine saturated at {:.0f} events/s", r.offered);
  }
  if (!report.latency_monotone) spdlog::warn("mean latency decreased with load on this host");
  return 0;
}

struct AblationArgs {
  std::string data;
  std::uint64_t seed = 42;
  std::string window;
  int drift_day = -1;
  double drift_fraction = 0.2;
  std::uint64_t data_seed = 42;
  int train_days = 5;
  std::string format = "table";
  std::string out;
  std::vector<std::string> sets;
};

int run_eval_ablation(const AblationArgs& a) {
  synth::LabeledStream stream;
  if (!a.data.empty()) {
    stream = synth::read_labeled_jsonl(a.data);
  } else {
    auto wc = synth::WorkloadConfig::desk_scale();
    wc.seed = a.data_seed;
    wc.drift.day = a.drift_day;
    wc.drift.fraction = a.drift_fraction;
    stream = synth::generate(wc).stream;
  }
  detect::ReplayOptions opt;
  opt.config.seed = a.seed;
  if (!a.window.empty()) opt.config.window = duration_arg(a.window, "--window");
  apply_sets(opt.config, a.sets);
  opt.train_days = a.train_days;
  const auto report = eval::run_ablation(stream.events, stream.labels, opt);
  emit(render(a.format, report), a.out);
  return report.same_input ? 0 : 1;
}

// ---- synth

struct GenerateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_synth_generate(const GenerateArgs& a) {
  auto wc = workload_from(a.config);
  if (a.seed) wc.seed = *a.seed;
  const auto ds = synth::generate(wc);
  synth::write_labeled_jsonl(ds.stream, a.out, &wc);
  fmt::print("{} events, {} malicious, {} scenarios -> {}\n", ds.stream.events.size(), ds.stream.malicious_count(),
             ds.scenarios.size(), a.out);
  return 0;
}

struct InjectArgs {
  std::string data;
  std::string out;
  std::string scenario;
  std::string actor;
  std::string start;
  std::size_t intensity = 0;
  std::string span;
  std::uint64_t seed = 0;
};

int run_synth_inject(const InjectArgs& a) {
  const auto stream = synth::read_labeled_jsonl(a.data);
  const auto meta = json::parse(read_file(fs::path(a.data) / synth::kMetaFile), nullptr, false);
  if (meta.is_discarded() || !meta.contains("workload") || meta["workload"].is_null()) {
    throw UsageError(a.data + ": meta.json carries no workload configuration");
  }
  const auto wc = synth::WorkloadConfig::from_json(meta["workload"].dump());
  const auto assignment = synth::make_assignment(wc);

  const auto kind = scenario_from_string(a.scenario);
  if (!kind) throw UsageError("unknown scenario " + a.scenario);
  synth::ScenarioSpec spec;
  spec.kind = *kind;
  spec.actor = a.actor;
  spec.start = time_arg(a.start).value_or(wc.start + static_cast<TimeMs>(wc.attacks.first_day) * kDayMs);
  spec.intensity = a.intensity;
  if (spec.intensity == 0) {
    spec.intensity = *kind == ScenarioKind::privilege_escalation ? wc.attacks.escalation_intensity
                     : *kind == ScenarioKind::lateral_movement   ? wc.attacks.lateral_hops
                                                                 : wc.attacks.service_intensity;
  }
  if (!a.span.empty()) spec.span = duration_arg(a.span, "--span");
  spec.seed = a.seed;

  std::vector<std::size_t> inserted;
  const auto out = synth::inject(stream, assignment, wc, spec, &inserted);
  synth::write_labeled_jsonl(out, a.out, &wc);
  fmt::print("{} events inserted -> {}\n", inserted.size(), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IAM audit-log anomaly detection"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service until SIGINT/SIGTERM");
  serve_cmd->add_option("--config", serve.config, "key = value file");
  serve_cmd->add_option("--set", serve.sets, "override one key (repeatable)");

  ReplayArgs replay;
  auto* replay_cmd = app.add_subcommand("replay", "offline deterministic run over an event file");
  replay_cmd->add_option("--events", replay.events, "JSONL events")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--labels", replay.labels, "labels sidecar")->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", replay.out, "output directory")->required();
  replay_cmd->add_option("--seed", replay.seed, "model seed");
  replay_cmd->add_option("--window", replay.window, "window width, e.g. 15m");
  replay_cmd->add_option("--mode", replay.mode, "strict or extended");
  replay_cmd->add_option("--train-days", replay.train_days, "days used for pretraining");
  replay_cmd->add_option("--checkpoint-every", replay.checkpoint_every, "windows between checkpoints");
  replay_cmd->add_flag("--no-feedback", replay.no_feedback, "do not label alerts from the ground truth");
  replay_cmd->add_flag("--resume", replay.resume, "continue from the checkpoint in --out");
  replay_cmd->add_option("--provider", replay.provider, "aws_cloudtrail, azure_ad, gcp_iam or generic");
  replay_cmd->add_option("--set", replay.sets, "detector key=value (repeatable)");

  auto* eval_cmd = app.add_subcommand("eval", "metrics, PR curves, load and ablation");
  eval_cmd->require_subcommand(1);

  MetricsArgs metrics;
  auto* metrics_cmd = eval_cmd->add_subcommand("metrics", "precision, recall, F1 and FPR of an alert log");
  metrics_cmd->add_option("--alerts", metrics.alerts, "alerts.jsonl")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--labels", metrics.labels, "labels sidecar")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--scores", metrics.scores, "scores.csv (default: next to the alert log)");
  metrics_cmd->add_option("--match-window", metrics.match_window, "default: the run's window");
  metrics_cmd->add_option("--since", metrics.since, "ignore truth before this instant (default: run.json)");
  metrics_cmd->add_option("--format", metrics.format)->check(CLI::IsMember({"table", "csv", "json"}));
  metrics_cmd->add_option("--out", metrics.out);

  PrArgs pr;
  auto* pr_cmd = eval_cmd->add_subcommand("pr", "record-level precision/recall curve as CSV");
  pr_cmd->add_option("--scores", pr.scores, "scores.csv")->required()->check(CLI::ExistingFile);
  pr_cmd->add_option("--labels", pr.labels, "labels sidecar")->required()->check(CLI::ExistingFile);
  pr_cmd->add_option("--out", pr.out)->required();
  pr_cmd->add_option("--points", pr.points)->check(CLI::PositiveNumber);

  LoadArgs load;
  auto* load_cmd = eval_cmd->add_subcommand("load", "latency and throughput at offered rates");
  load_cmd->add_option("--rates", load.rates, "events/s")->delimiter(',');
  load_cmd->add_option("--duration", load.duration, "per rate, e.g. 30s");
  load_cmd->add_option("--batch-window", load.batch_window, "wall-clock window width");
  load_cmd->add_option("--workload", load.workload, "workload JSON (default: desk scale)");
  load_cmd->add_option("--format", load.format)->check(CLI::IsMember({"table", "csv", "json"}));
  load_cmd->add_option("--out", load.out);
  load_cmd->add_option("--set", load.sets, "detector key=value (repeatable)");

  AblationArgs ablation;
  auto* ablation_cmd = eval_cmd->add_subcommand("ablation", "full vs no_attention vs no_retraining");
  ablation_cmd->add_option("--data", ablation.data, "directory from synth generate (default: desk scale)");
  ablation_cmd->add_option("--seed", ablation.seed, "model seed");
  ablation_cmd->add_option("--window", ablation.window);
  ablation_cmd->add_option("--drift-day", ablation.drift_day, "without --data: day of the role drift");
  ablation_cmd->add_option("--drift-fraction", ablation.drift_fraction);
  ablation_cmd->add_option("--data-seed", ablation.data_seed, "without --data: workload seed");
  ablation_cmd->add_option("--train-days", ablation.train_days);
  ablation_cmd->add_option("--format", ablation.format)->check(CLI::IsMember({"table", "csv", "json"}));
  ablation_cmd->add_option("--out", ablation.out);
  ablation_cmd->add_option("--set", ablation.sets, "detector key=value (repeatable)");

  auto* synth_cmd = app.add_subcommand("synth", "synthetic labeled workloads");
  synth_cmd->require_subcommand(1);

  GenerateArgs generate;
  auto* generate_cmd = synth_cmd->add_subcommand("generate", "baseline plus planned attacks");
  generate_cmd->add_option("--config", generate.config, "workload JSON (default: desk scale)");
  generate_cmd->add_option("--out", generate.out)->required();
  generate_cmd->add_option("--seed", generate.seed);

  InjectArgs inject;
  auto* inject_cmd = synth_cmd->add_subcommand("inject", "add one scenario to a generated dataset");
  inject_cmd->add_option("--data", inject.data, "directory from synth generate")->required();
  inject_cmd->add_option("--out", inject.out)->required();
  inject_cmd->add_option("--scenario", inject.scenario)
      ->required()
      ->check(CLI::IsMember({"privilege_escalation", "lateral_movement", "service_account_compromise"}));
  inject_cmd->add_option("--actor", inject.actor)->required();
  inject_cmd->add_option("--start", inject.start, "RFC 3339 or epoch ms (default: first attack day)");
  inject_cmd->add_option("--intensity", inject.intensity, "events, or hops for lateral movement");
  inject_cmd->add_option("--span", inject.span, "burst or spread duration");
  inject_cmd->add_option("--seed", inject.seed);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_default_logger(spdlog::stderr_color_mt("sentinel"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*serve_cmd) return run_serve(serve);
    if (*replay_cmd) return run_replay(replay);
    if (*metrics_cmd) return run_eval_metrics(metrics);
    if (*pr_cmd) return run_eval_pr(pr);
    if (*load_cmd) return run_eval_load(load);
    if (*ablation_cmd) return run_eval_ablation(ablation);
    if (*generate_cmd) return run_synth_generate(generate);
    if (*inject_cmd) return run_synth_inject(inject);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
