#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentinel/common/time.hpp"
#include "sentinel/detect/replay.hpp"
#include "sentinel/graph/snapshot.hpp"
#include "sentinel/ingest/event.hpp"

namespace sentinel::eval {

enum class EvalErrorKind { mismatched_run, degenerate_labels, io_error, format_error, invalid_argument };

class EvalError : public std::runtime_error {
 public:
  EvalError(EvalErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  EvalErrorKind kind() const { return kind_; }

 private:
  EvalErrorKind kind_;
};

// One malicious event of the ground truth.
struct TruthEvent {
  std::size_t index = 0;
  std::uint8_t code = 0;
  std::string user;
  std::string role;
  std::string resource;
  TimeMs ts = 0;
};

struct AlertEntry {
  std::string id;
  graph::EntityId src;
  graph::EntityId dst;
  TimeMs window_end = 0;
  double score = 0.0;
};

struct ScoreEntry {
  TimeMs window_end = 0;
  graph::EntityId src;
  graph::EntityId dst;
  std::string origin = "observed";
  double score = 0.0;
  bool flagged = false;
};

struct ScoresFile {
  std::string fingerprint;
  DurationMs window = 0;
  std::vector<ScoreEntry> rows;
};

struct MetricsReport {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;
  std::uint64_t alerts = 0;
  std::uint64_t malicious_events = 0;
  std::string fingerprint;

  std::string to_table() const;
  std::string to_csv() const;
  std::string to_json() const;
};

std::vector<TruthEvent> truth_events(std::span<const ingest::NormalizedEvent> events,
                                     std::span<const std::uint8_t> labels);
// The labels sidecar with the optional actor fields it carries.
std::vector<TruthEvent> read_truth_sidecar(const std::filesystem::path& path);

AlertEntry to_entry(const detect::Alert& a);
std::vector<AlertEntry> read_alert_log(const std::filesystem::path& path);

ScoreEntry to_entry(const detect::ScoredRow& r);
ScoresFile read_scores_csv(const std::filesystem::path& path);
graph::EntityId parse_entity(std::string_view text);

// Whether an edge scored in the window ending at `window_end` carries a
// malicious event: same actor, the event's role or resource as target, and the
// event inside [window_end - window, window_end).
class TruthIndex {
 public:
  TruthIndex(std::span<const TruthEvent> truth, DurationMs window);
  bool malicious_edge(const graph::EntityId& src, const graph::EntityId& dst, TimeMs window_end) const;

 private:
  std::map<std::string, std::vector<const TruthEvent*>> by_user_;
  DurationMs window_;
};

// Alerts match malicious events of an actor on either end of their edge with
// |event ts - window_end| <= match_window, greedily in alert time order, each
// side at most once; the earliest eligible event wins. TN counts unflagged
// scored records that carry no malicious event. Fingerprints, when both are
// given, must agree.
MetricsReport compute_metrics(std::span<const AlertEntry> alerts, std::span<const TruthEvent> truth,
                              std::span<const ScoreEntry> scores, DurationMs match_window,
                              std::optional<std::string> run_fingerprint = std::nullopt,
                              std::optional<std::string> truth_fingerprint = std::nullopt);

struct PrPoint {
  double threshold = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

// Record-level curve over `n_points` thresholds taken at evenly spaced ranks
// of the descending score order (the median for one point); a record counts as
// flagged when score >= threshold.
std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const bool> positive, std::size_t n_points);
std::string pr_csv(std::span<const PrPoint> points);

}  // namespace sentinel::eval
