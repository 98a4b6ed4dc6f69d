#include "sentinel/detect/replay.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "sentinel/common/fs.hpp"
#include "sentinel/common/hash.hpp"
#include "sentinel/detect/stream.hpp"

namespace sentinel::detect {

namespace fs = std::filesystem;
using ingest::NormalizedEvent;
using nlohmann::ordered_json;

namespace {

constexpr const char* kKeyEvents = "replay.events_fingerprint";
constexpr const char* kKeyNext = "replay.next_index";
constexpr const char* kKeyWindows = "replay.windows";
constexpr const char* kKeyLate = "replay.late";
constexpr const char* kKeyTrainUntil = "replay.train_until";

// Merged actions are comma-joined.
std::string csv_field(const std::string& s) {
  return s.find(',') == std::string::npos ? s : "\"" + s + "\"";
}

class Sink {
 public:
  Sink() = default;
  void open(const fs::path& path, bool append) {
    path_ = path;
    out_.open(path, append ? std::ios::binary | std::ios::app : std::ios::binary | std::ios::trunc);
    if (!out_) throw FileError("cannot open " + path.string());
  }
  bool active() const { return out_.is_open(); }
  void write(std::string_view s) {
    if (active()) out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void flush() {
    if (!active()) return;
    out_.flush();
    if (!out_) throw FileError("write failed on " + path_.string());
  }
  std::uint64_t size() { return active() ? static_cast<std::uint64_t>(out_.tellp()) : 0; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::ofstream out_;
};

struct Sinks {
  Sink alerts, labels, tau, scores;
  std::array<std::pair<const char*, Sink*>, 4> all() {
    return {{{kAlertsLog, &alerts}, {kAlertLabelsLog, &labels}, {kTauTrace, &tau}, {kScoresCsv, &scores}}};
  }
};

std::string label_json(const Alert& a) {
  ordered_json j;
  j["id"] = a.id;
  j["label"] = std::string(to_string(a.status));
  j["labeled_at"] = a.labeled_at.value_or(0);
  return j.dump();
}

std::uint64_t annotation_u64(const Detector& d, const char* key) {
  auto it = d.annotations().find(key);
  if (it == d.annotations().end()) {
    throw DetectError(DetectErrorKind::invalid_config, std::string("checkpoint lacks ") + key);
  }
  return std::stoull(it->second);
}

}  // namespace

std::string entity_text(const graph::EntityId& e) {
  return std::string(graph::to_string(e.kind)) + ":" + e.name;
}

std::string alert_json(const Alert& a) {
  ordered_json j;
  j["id"] = a.id;
  j["src"] = entity_text(a.record.src);
  j["dst"] = entity_text(a.record.dst);
  j["action"] = a.record.action;
  j["origin"] = std::string(to_string(a.record.origin));
  j["score"] = a.record.score;
  j["tau"] = a.tau;
  j["window_end"] = a.record.window_end;
  j["created_at"] = a.created_at;
  j["status"] = std::string(to_string(a.status));
  return j.dump();
}

std::string stream_fingerprint(std::span<const NormalizedEvent> events) {
  std::string text;
  for (const auto& e : events) {
    text += ingest::to_generic_json(e);
    text += '\n';
  }
  return sha256_hex(text);
}

ReplayOutcome run_replay(std::span<const NormalizedEvent> events, std::span<const std::uint8_t> truth,
                         const ReplayOptions& opt) {
  if (!truth.empty() && truth.size() != events.size()) {
    throw DetectError(DetectErrorKind::invalid_config, "label count differs from event count");
  }
  const DurationMs w = opt.config.window;
  ReplayOutcome outcome;
  outcome.events_fingerprint = stream_fingerprint(events);
  outcome.config_fingerprint = opt.config.fingerprint();
  const bool to_disk = !opt.out_dir.empty();
  if (to_disk) fs::create_directories(opt.out_dir);
  const fs::path ckpt_path = to_disk ? opt.out_dir / kCheckpointFile : fs::path();
  auto truth_at = [&](std::size_t i) -> std::uint8_t { return truth.empty() ? 0 : truth[i]; };

  std::optional<Detector> det;
  Sinks sinks;
  std::size_t next_index = 0;
  std::size_t windows_total = 0;
  std::uint64_t late_before = 0;
  TimeMs train_until = 0;

  if (opt.resume && !to_disk) throw DetectError(DetectErrorKind::invalid_config, "resume needs an output directory");
  // A run that died before its first checkpoint starts over.
  const bool resuming = opt.resume && fs::exists(ckpt_path);
  if (resuming) {
    det.emplace(Detector::restore(read_file(ckpt_path)));
    if (det->annotations()[kKeyEvents] != outcome.events_fingerprint) {
      throw DetectError(DetectErrorKind::invalid_config, "checkpoint belongs to a different event stream");
    }
    if (det->config().fingerprint() != outcome.config_fingerprint) {
      throw DetectError(DetectErrorKind::invalid_config, "checkpoint belongs to a different configuration");
    }
    next_index = annotation_u64(*det, kKeyNext);
    windows_total = annotation_u64(*det, kKeyWindows);
    late_before = annotation_u64(*det, kKeyLate);
    train_until = static_cast<TimeMs>(annotation_u64(*det, kKeyTrainUntil));
    for (auto [name, sink] : sinks.all()) {
      const auto key = std::string("replay.bytes.") + name;
      truncate_file(opt.out_dir / name, annotation_u64(*det, key.c_str()));
      sink->open(opt.out_dir / name, true);
    }
  } else {
    det.emplace(opt.config);
    TimeMs first = 0;
    if (!events.empty()) {
      first = std::min_element(events.begin(), events.end(), [](const auto& a, const auto& b) {
                return a.timestamp < b.timestamp;
              })->timestamp;
    }
    train_until = align_down(opt.train_until.value_or(align_down(first, kDayMs) + opt.train_days * kDayMs), w);

    std::vector<std::size_t> head;
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (events[i].timestamp < train_until) head.push_back(i);
    }
    std::stable_sort(head.begin(), head.end(),
                     [&](std::size_t a, std::size_t b) { return compare_events(events[a], events[b]) < 0; });
    std::vector<NormalizedEvent> train_events;
    std::vector<std::uint8_t> train_truth;
    for (std::size_t i : head) {
      train_events.push_back(events[i]);
      train_truth.push_back(truth_at(i));
    }
    if (train_events.empty()) {
      throw DetectError(DetectErrorKind::nothing_to_train_on, "no events before the training cutoff");
    }
    outcome.pretrain = det->pretrain(train_events, train_truth, align_down(train_events.front().timestamp, w),
                                     train_until);
    if (to_disk) {
      for (auto [name, sink] : sinks.all()) sink->open(opt.out_dir / name, false);
      sinks.tau.write("window_end,tau,benign_window_size\n");
      sinks.scores.write(fmt::format("# fingerprint={}\n# config={}\n# window_ms={}\n", outcome.events_fingerprint,
                                     outcome.config_fingerprint, w));
      sinks.scores.write("window_end,src,dst,action,origin,score,y_hat,tau,flagged\n");
    }
  }
  outcome.train_until = train_until;

  WindowAssembler assembler(w, std::max(det->clock(), train_until));

  auto save_checkpoint = [&](std::size_t next) {
    if (!to_disk) return;
    for (auto [name, sink] : sinks.all()) {
      sink->flush();
      det->annotations()[std::string("replay.bytes.") + name] = std::to_string(sink->size());
    }
    det->annotations()[kKeyEvents] = outcome.events_fingerprint;
    det->annotations()[kKeyNext] = std::to_string(next);
    det->annotations()[kKeyWindows] = std::to_string(windows_total);
    det->annotations()[kKeyLate] = std::to_string(late_before + assembler.late());
    det->annotations()[kKeyTrainUntil] = std::to_string(train_until);
    const std::string bytes = det->checkpoint();
    write_file_atomic(ckpt_path, bytes);
    outcome.checkpoint_sha256 = sha256_hex(bytes);
  };
  if (!resuming && opt.checkpoint_every > 0) save_checkpoint(0);

  auto process = [&](const ClosedWindow& win, std::size_t next) {
    const double tau_before = det->threshold().tau;
    WindowResult r = det->process_window(win.events, win.truth, win.start, win.end);
    for (const auto& rec : r.records) {
      ScoredRow row{rec, tau_before, rec.score > tau_before};
      sinks.scores.write(fmt::format("{},{},{},{},{},{},{},{},{}\n", rec.window_end, entity_text(rec.src),
                                     entity_text(rec.dst), csv_field(rec.action), to_string(rec.origin), rec.score, rec.y_hat,
                                     tau_before, row.flagged ? 1 : 0));
      outcome.rows.push_back(std::move(row));
    }
    for (const Alert& a : r.alerts) sinks.alerts.write(alert_json(a) + "\n");
    if (opt.oracle_feedback) {
      for (const Alert& a : r.alerts) {
        const Alert& labeled = det->label_alert(a.id, a.record.truth != 0 ? Label::malicious : Label::benign);
        sinks.labels.write(label_json(labeled) + "\n");
      }
    }
    // tau as it stands after this window's update and feedback
    const TauPoint p{win.end, det->threshold().tau, det->threshold().window.size()};
    sinks.tau.write(fmt::format("{},{},{}\n", p.window_end, p.tau, p.benign_window_size));
    outcome.tau_trace.push_back(p);
    ++outcome.windows;
    ++windows_total;
    for (auto [name, sink] : sinks.all()) sink->flush();
    if (opt.checkpoint_every > 0 && windows_total % opt.checkpoint_every == 0) save_checkpoint(next);
    if (opt.crash_after_windows && outcome.windows >= *opt.crash_after_windows) {
      throw SimulatedCrash("simulated crash after " + std::to_string(outcome.windows) + " windows");
    }
  };

  for (std::size_t i = next_index; i < events.size(); ++i) {
    if (events[i].timestamp < train_until) continue;
    for (const auto& win : assembler.push(events[i], truth_at(i))) process(win, i);
  }
  if (auto last = assembler.flush()) process(*last, events.size());

  save_checkpoint(events.size());
  outcome.late_dropped = late_before + assembler.late();
  outcome.retrains = det->retrain_count();
  outcome.tau = det->threshold().tau;
  outcome.model_version = det->model_version();
  outcome.alerts = det->alerts();

  if (to_disk) {
    ordered_json run;
    run["events_fingerprint"] = outcome.events_fingerprint;
    run["config_fingerprint"] = outcome.config_fingerprint;
    run["config"] = ordered_json::parse(det->config().to_json());
    run["train_until"] = train_until;
    run["windows"] = windows_total;
    run["alerts"] = outcome.alerts.size();
    run["alerts_malicious"] = std::count_if(outcome.alerts.begin(), outcome.alerts.end(),
                                            [](const Alert& a) { return a.status == AlertStatus::malicious; });
    run["late_dropped"] = outcome.late_dropped;
    run["retrains"] = outcome.retrains;
    run["tau"] = outcome.tau;
    run["model_version"] = outcome.model_version;
    run["checkpoint_sha256"] = outcome.checkpoint_sha256;
    write_file_atomic(opt.out_dir / kRunJson, run.dump(2) + "\n");
  }
  return outcome;
}

}  // namespace sentinel::detect
