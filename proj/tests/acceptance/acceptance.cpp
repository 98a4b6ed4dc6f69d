// Runs every headline acceptance check and prints one PASS/FAIL line each.
// Usage: acceptance <path to the sentinel executable>

#include <fmt/core.h>
#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "sentinel/common/fs.hpp"
#include "sentinel/common/hash.hpp"
#include "sentinel/common/rng.hpp"
#include "sentinel/detect/detector.hpp"
#include "sentinel/detect/replay.hpp"
#include "sentinel/eval/harness.hpp"
#include "sentinel/eval/metrics.hpp"
#include "sentinel/synth/synth.hpp"
#include "support/dense_reference.hpp"

using namespace sentinel;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

fs::path work_dir() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / fmt::format("sentinel-acceptance-{}", ::getpid());
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

const synth::Dataset& desk() {
  static const synth::Dataset ds = synth::generate(synth::WorkloadConfig::desk_scale());
  return ds;
}

detect::ReplayOptions desk_options() {
  detect::ReplayOptions o;
  o.config.apply_mode("strict");
  o.config.window = 150 * kMinuteMs;
  o.config.seed = 42;
  o.train_days = 5;
  o.oracle_feedback = true;
  return o;
}

// ---- gradients

Verdict gradient_check() {
  const auto t0 = Clock::now();
  const double eps = 1e-4;
  const std::vector<std::size_t> dims{8, 8, 8};
  const std::size_t n = 10;
  std::size_t entries = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(1000 + seed);
    Matrix x(n, dims.front());
    for (double& v : x.flat()) v = rng.uniform(-1.0, 1.0);
    std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
    while (pairs.size() < 12) {
      const auto s = static_cast<std::uint32_t>(rng.uniform_index(n));
      const auto d = static_cast<std::uint32_t>(rng.uniform_index(n));
      if (s != d) pairs.emplace(s, d);
    }
    std::vector<gnn::DirectedEdge> edges;
    for (auto [s, d] : pairs) edges.push_back({s, d, rng.uniform(0.1, 3.0)});
    gnn::EdgeBatch batch;
    for (auto [s, d] : pairs) {
      batch.add(s, d, 1.0, 1.0);
      std::uint32_t neg = 0;
      do {
        neg = static_cast<std::uint32_t>(rng.uniform_index(n));
      } while (neg == s || pairs.count({s, neg}));
      batch.add(s, neg, 0.0, 1.0);
    }
    const gnn::ModelOptions opt;
    const auto adj = gnn::make_adjacency(n, edges, false);
    const auto params = gnn::init_params(dims, seed * 7 + 1);
    const auto enc = gnn::encode(x, adj, params, opt);
    const auto lg = gnn::backward(adj, params, batch, enc, opt);
    gnn::ParamSet probe = params;
    auto pt = probe.tensors();
    const auto gt = lg.grads.tensors();
    for (std::size_t t = 0; t < pt.size(); ++t) {
      for (std::size_t k = 0; k < pt[t].size(); ++k) {
        const double orig = pt[t][k];
        pt[t][k] = orig + eps;
        const long double up = testing::dense_loss<long double>(x, edges, probe, batch, opt);
        pt[t][k] = orig - eps;
        const long double down = testing::dense_loss<long double>(x, edges, probe, batch, opt);
        pt[t][k] = orig;
        worst = std::max(worst, rel_err(gt[t][k], static_cast<double>((up - down) / (2 * eps))));
        ++entries;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 30.0,
          fmt::format("20 instances, {} entries, max rel err {:.3g} (<= 1e-4), {:.2f} s (< 30 s)", entries, worst, secs)};
}

// ---- attention and the dense reference

Verdict attention_check() {
  Rng rng(4242);
  double worst_sum = 0.0;
  double worst_diff = 0.0;
  std::size_t nodes_checked = 0;
  for (int g = 0; g < 100; ++g) {
    const std::size_t n = 1 + rng.uniform_index(20);
    const double density = rng.uniform(0.05, 0.6);
    std::vector<gnn::DirectedEdge> edges;
    for (std::uint32_t s = 0; s < n; ++s) {
      for (std::uint32_t d = 0; d < n; ++d) {
        if (s != d && rng.bernoulli(density)) edges.push_back({s, d, rng.uniform(0.1, 3.0)});
      }
    }
    std::vector<std::size_t> dims{2 + rng.uniform_index(6)};
    for (std::size_t l = 0, layers = 1 + rng.uniform_index(3); l < layers; ++l) dims.push_back(2 + rng.uniform_index(6));
    gnn::ModelOptions opt;
    opt.edge_weight_logits = g % 3 == 1;
    opt.bidirectional = g % 4 == 2;
    Matrix x(n, dims.front());
    for (double& v : x.flat()) v = rng.uniform(-2.0, 2.0);
    const auto adj = gnn::make_adjacency(n, edges, opt.bidirectional);
    const auto params = gnn::init_params(dims, 500 + static_cast<std::uint64_t>(g));
    const auto enc = gnn::encode(x, adj, params, opt);
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
      const Matrix& h_prev = l == 0 ? enc.input : enc.layers[l - 1].out;
      const auto alpha = gnn::attention_coefficients(h_prev, adj, params.layers[l], opt);
      for (std::size_t i = 0; i < n; ++i) {
        if (adj.degree(i) == 0) continue;
        double sum = 0.0;
        for (std::size_t k = adj.offsets[i]; k < adj.offsets[i + 1]; ++k) sum += alpha[k];
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        ++nodes_checked;
      }
    }
    const auto ref = testing::dense_forward<long double>(x, edges, params, opt);
    const Matrix& z = enc.embeddings();
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t c = 0; c < z.cols(); ++c) {
        worst_diff = std::max(worst_diff, static_cast<double>(std::abs(z(i, c) - ref[i][c])));
      }
    }
  }
  return {worst_sum <= 1e-9 && worst_diff <= 1e-10,
          fmt::format("100 graphs, {} node-layers, max |sum alpha - 1| {:.3g} (<= 1e-9), max |sparse - dense| {:.3g} "
                      "(<= 1e-10)",
                      nodes_checked, worst_sum, worst_diff)};
}

// ---- scores and flagging

Verdict score_check(const detect::ReplayOutcome& run) {
  std::size_t observed = 0;
  std::size_t bad_score = 0;
  std::size_t bad_flag = 0;
  for (const auto& r : run.rows) {
    if (r.flagged != (r.record.score > r.tau)) ++bad_flag;
    if (r.record.origin != detect::Origin::observed) continue;
    ++observed;
    if (r.record.y_observed != 1 || r.record.score != 1.0 - r.record.y_hat) ++bad_score;
  }

  // boundary: S == tau stays unflagged, the next representable score above is flagged
  detect::ThresholdState th;
  th.tau = 0.37;
  detect::AnomalyScoreRecord at, above;
  at.y_hat = 0.63;
  at.score = th.tau;
  at.dst = {graph::NodeKind::role, "r"};
  above = at;
  above.dst = {graph::NodeKind::resource, "x"};
  above.score = std::nextafter(th.tau, 1.0);
  const auto alerts = detect::flag({at, above}, th);
  const bool boundary = alerts.size() == 1 && alerts[0].record.score == above.score && th.window.size() == 1 &&
                        th.window.front() == th.tau;

  return {observed > 0 && bad_score == 0 && bad_flag == 0 && boundary,
          fmt::format("{} observed records, {} with S != 1 - y_hat, {} rows with flagged != (S > tau), boundary {}",
                      observed, bad_score, bad_flag, boundary ? "strict" : "violated")};
}

// ---- desk-scale detection

Verdict desk_check(const eval::MetricsReport& m, double secs) {
  return {m.f1 >= 0.80 && m.fpr <= 0.10 && secs < 600.0,
          fmt::format("F1 {:.4f} (>= 0.80), FPR {:.4f} (<= 0.10), precision {:.4f}, recall {:.4f}, {:.1f} s (< 600 s)",
                      m.f1, m.fpr, m.precision, m.recall, secs)};
}

// ---- ablations

Verdict attention_ablation_check() {
  const auto& ds = desk();
  const auto report = eval::run_ablation(ds.stream.events, ds.stream.labels, desk_options());
  const auto& full = report.variant("full").metrics;
  const auto& uni = report.variant("no_attention").metrics;
  return {report.same_input && full.recall >= uni.recall,
          fmt::format("recall full {:.4f} >= no_attention {:.4f}", full.recall, uni.recall)};
}

Verdict retraining_ablation_check() {
  auto wc = synth::WorkloadConfig::desk_scale();
  wc.drift.day = 5;
  const auto ds = synth::generate(wc);
  const auto report = eval::run_ablation(ds.stream.events, ds.stream.labels, desk_options());
  const auto& full = report.variant("full").metrics;
  const auto& frozen = report.variant("no_retraining").metrics;
  return {report.same_input && full.fp <= frozen.fp,
          fmt::format("drift at day 5: FP full {} <= no_retraining {}", full.fp, frozen.fp)};
}

// ---- load

Verdict load_check() {
  eval::LoadOptions opt;
  opt.rates = {1000.0, 5000.0};
  opt.duration = 5 * kSecondMs;
  const auto report = eval::measure_load(opt);
  const std::string table = report.to_table();
  const bool schema = table.rfind("Workload (Events/s)", 0) == 0 && table.find("Avg. Latency (ms)") != std::string::npos &&
                      table.find("Throughput (Events/s)") != std::string::npos && report.rows.size() == 2;
  std::string detail = schema ? "schema ok" : "schema mismatch";
  bool ok = schema;
  for (const auto& r : report.rows) {
    detail += fmt::format("; {:.0f}/s -> {:.1f}/s, mean latency {:.2f} ms", r.offered, r.throughput, r.mean_latency_ms);
    if (r.offered == 1000.0) ok = ok && r.throughput >= 0.95 * r.offered;
  }
  return {ok, detail + " (>= 950/s at 1000/s)"};
}

// ---- the CLI

int run_cli(const fs::path& binary, const std::vector<std::string>& args, const fs::path& log) {
  std::string cmd = "'" + binary.string() + "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " > '" + log.string() + "' 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<std::string> replay_args(const fs::path& data, const fs::path& out) {
  return {"replay",  "--events", (data / synth::kEventsFile).string(), "--labels", (data / synth::kLabelsFile).string(),
          "--out",   out.string(), "--seed", "42", "--window", "150m", "--mode", "strict", "--checkpoint-every", "1"};
}

const char* const kLogs[] = {detect::kAlertsLog, detect::kAlertLabelsLog, detect::kTauTrace, detect::kCheckpointFile};

bool same_logs(const fs::path& a, const fs::path& b, std::string* first_diff) {
  for (const char* f : kLogs) {
    if (read_file(a / f) != read_file(b / f)) {
      *first_diff = f;
      return false;
    }
  }
  return true;
}

fs::path desk_data() {
  static const fs::path dir = [] {
    const auto d = work_dir() / "desk";
    auto wc = synth::WorkloadConfig::desk_scale();
    synth::write_labeled_jsonl(desk().stream, d, &wc);
    return d;
  }();
  return dir;
}

Verdict determinism_check(const fs::path& binary) {
  const auto a = work_dir() / "run-a";
  const auto b = work_dir() / "run-b";
  const int ra = run_cli(binary, replay_args(desk_data(), a), work_dir() / "run-a.log");
  const int rb = run_cli(binary, replay_args(desk_data(), b), work_dir() / "run-b.log");
  if (ra != 0 || rb != 0) return {false, fmt::format("replay exited with {} and {}", ra, rb)};
  std::string diff;
  const bool same = same_logs(a, b, &diff);
  const auto ha = sha256_file(a / detect::kCheckpointFile);
  return {same && ha == sha256_file(b / detect::kCheckpointFile),
          same ? fmt::format("alerts, labels, tau trace identical; checkpoint sha256 {}", ha.substr(0, 16))
               : "differs in " + diff};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  return static_cast<std::size_t>(std::count(std::istreambuf_iterator<char>(in), {}, '\n'));
}

bool same_state(const std::string& ckpt_a, const std::string& ckpt_b) {
  const auto a = detect::Detector::restore(ckpt_a);
  const auto b = detect::Detector::restore(ckpt_b);
  return a.alerts() == b.alerts() && a.threshold() == b.threshold() && a.params().same_values(b.params()) &&
         a.optimizer() == b.optimizer();
}

Verdict restart_check(const fs::path& binary) {
  const auto& ds = desk();
  std::string detail;
  bool ok = true;

  // in-process crashes at fixed windows
  auto opt = desk_options();
  opt.checkpoint_every = 3;
  opt.out_dir = work_dir() / "whole";
  const auto whole = detect::run_replay(ds.stream.events, ds.stream.labels, opt);
  const std::string whole_ckpt = read_file(opt.out_dir / detect::kCheckpointFile);
  std::vector<std::size_t> crash_points{1, whole.windows / 2, whole.windows - 1};
  for (std::size_t at : crash_points) {
    auto c = desk_options();
    c.checkpoint_every = 3;
    c.out_dir = work_dir() / fmt::format("crash-{}", at);
    c.crash_after_windows = at;
    try {
      detect::run_replay(ds.stream.events, ds.stream.labels, c);
      ok = false;
      detail += fmt::format("no crash at {}; ", at);
      continue;
    } catch (const detect::SimulatedCrash&) {
    }
    c.crash_after_windows.reset();
    c.resume = true;
    const auto resumed = detect::run_replay(ds.stream.events, ds.stream.labels, c);
    std::string diff;
    const bool same = same_logs(opt.out_dir, c.out_dir, &diff) && resumed.alerts == whole.alerts &&
                      resumed.tau == whole.tau &&
                      same_state(read_file(c.out_dir / detect::kCheckpointFile), whole_ckpt);
    ok = ok && same;
    detail += fmt::format("crash after window {} {}; ", at, same ? "restored" : "diverged in " + diff);
  }

  // a real SIGKILL of the CLI mid-stream, then --resume
  const auto ref = work_dir() / "run-a";
  const auto killed = work_dir() / "killed";
  const auto args = replay_args(desk_data(), killed);
  const pid_t pid = ::fork();
  if (pid == 0) {
    const int null = ::open("/dev/null", O_WRONLY);
    ::dup2(null, STDOUT_FILENO);
    ::dup2(null, STDERR_FILENO);
    std::vector<char*> argv{const_cast<char*>(binary.c_str())};
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(binary.c_str(), argv.data());
    ::_exit(127);
  }
  const auto deadline = Clock::now() + std::chrono::seconds(120);
  int status = 0;
  bool exited = false;
  while (Clock::now() < deadline) {
    if (::waitpid(pid, &status, WNOHANG) == pid) {
      exited = true;
      break;
    }
    if (line_count(killed / detect::kTauTrace) >= 8) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  if (!exited) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
  }
  const std::size_t at_kill = line_count(killed / detect::kTauTrace);
  auto resume = args;
  resume.push_back("--resume");
  const int rc = run_cli(binary, resume, work_dir() / "resume.log");
  std::string diff;
  const bool same = rc == 0 && same_logs(ref, killed, &diff) &&
                    same_state(read_file(killed / detect::kCheckpointFile), read_file(ref / detect::kCheckpointFile));
  ok = ok && same && !exited;
  detail += exited ? "CLI finished before the kill"
                   : fmt::format("SIGKILL with {} tau rows written {}", at_kill > 0 ? at_kill - 1 : 0,
                                 same ? "restored" : "diverged in " + (rc == 0 ? diff : "resume exit status"));
  return {ok, detail};
}

// ---- synthetic data

std::size_t index_of(const std::vector<std::string>& names, const std::string& name) {
  return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

Verdict synth_check() {
  Rng rng(31337);
  std::size_t unsound = 0;
  std::size_t destructive = 0;
  std::size_t nondeterministic = 0;
  std::size_t malicious = 0;
  for (int trial = 0; trial < 50; ++trial) {
    synth::WorkloadConfig c;
    c.n_users = 5 + rng.uniform_index(30);
    c.n_roles = 5 + rng.uniform_index(8);
    c.n_resources = c.n_roles * (2 + rng.uniform_index(3));
    c.duration_days = 3 + static_cast<int>(rng.uniform_index(5));
    c.events_per_user_day = rng.uniform(5, 40);
    c.second_role_probability = rng.uniform(0.0, 0.6);
    c.territory_overlap = rng.uniform(0.0, 0.3);
    c.n_service_accounts = 1 + rng.uniform_index(3);
    c.seed = rng.next_u64();
    if (rng.bernoulli(0.3)) c.drift.day = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(c.duration_days - 1)));
    // service account compromise needs a day of room after first_day
    c.attacks.first_day = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(c.duration_days - 2)));
    c.attacks.privilege_escalation = rng.uniform_index(4);
    c.attacks.lateral_movement = rng.uniform_index(3);
    c.attacks.service_account_compromise = rng.uniform_index(3);

    const auto base = synth::generate_baseline(c);
    const auto ds = synth::generate(c);
    if (synth::events_jsonl(synth::generate(c).stream) != synth::events_jsonl(ds.stream) ||
        synth::generate(c).stream.labels != ds.stream.labels) {
      ++nondeterministic;
    }

    const auto positions = ds.stream.malicious_positions();
    const std::set<std::size_t> drop(positions.begin(), positions.end());
    synth::LabeledStream rest;
    for (std::size_t i = 0; i < ds.stream.events.size(); ++i) {
      if (drop.count(i)) continue;
      rest.events.push_back(ds.stream.events[i]);
      rest.labels.push_back(ds.stream.labels[i]);
    }
    if (!(rest == base.stream)) ++destructive;

    const auto& a = base.assignment;
    for (std::size_t p : positions) {
      ++malicious;
      const auto& e = ds.stream.events[p];
      const auto roles = a.baseline_roles(e.user_id);
      const auto res = a.baseline_resources(e.user_id);
      if (!roles || !res) {
        ++unsound;
        continue;
      }
      const bool foreign_role = std::count(roles->begin(), roles->end(), index_of(a.roles, e.role)) == 0;
      const bool foreign_resource = !std::binary_search(res->begin(), res->end(), index_of(a.resources, e.resource));
      if (!foreign_role && !foreign_resource) ++unsound;
    }
  }
  return {unsound == 0 && destructive == 0 && nondeterministic == 0 && malicious > 0,
          fmt::format("50 configs, {} malicious events; unsound {}, destructive {}, nondeterministic {}", malicious,
                      unsound, destructive, nondeterministic)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    fmt::print(stderr, "usage: acceptance <sentinel executable>\n");
    return 2;
  }
  const fs::path binary = fs::absolute(argv[1]);
  int failures = 0;
  auto report = [&](const char* name, const std::function<Verdict()>& check) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    fmt::print("{} {}: {}\n", v.pass ? "PASS" : "FAIL", name, v.detail);
    std::fflush(stdout);
  };

  report("gradient check", gradient_check);
  report("attention normalization and dense equivalence", attention_check);

  detect::ReplayOutcome desk_run;
  eval::MetricsReport desk_metrics;
  double desk_secs = 0.0;
  try {
    const auto t0 = Clock::now();
    desk_run = detect::run_replay(desk().stream.events, desk().stream.labels, desk_options());
    desk_secs = seconds_since(t0);
    desk_metrics = eval::evaluate_outcome(desk_run, desk().stream.events, desk().stream.labels,
                                          desk_options().config.window);
  } catch (const std::exception& e) {
    fmt::print(stderr, "desk replay failed: {}\n", e.what());
  }
  report("score exactness and strict flagging", [&] { return score_check(desk_run); });
  report("desk-scale detection", [&] { return desk_check(desk_metrics, desk_secs); });
  report("ablation: attention recall", attention_ablation_check);
  report("ablation: retraining under drift", retraining_ablation_check);
  report("load harness", load_check);
  report("replay determinism", [&] { return determinism_check(binary); });
  report("crash and restart", [&] { return restart_check(binary); });
  report("synthetic generator soundness", synth_check);

  std::error_code ec;
  fs::remove_all(work_dir(), ec);
  fmt::print("{} of 10 checks failed\n", failures);
  return failures == 0 ? 0 : 1;
}
