#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sentinel/common/rng.hpp"
#include "sentinel/common/time.hpp"
#include "sentinel/gnn/model.hpp"
#include "sentinel/graph/snapshot.hpp"

namespace sentinel::detect {

enum class DetectErrorKind {
  dimension_mismatch,
  already_labeled,
  unknown_alert,
  nothing_to_train_on,
  invalid_config,
  not_initialized,
  out_of_order,
};

class DetectError : public std::runtime_error {
 public:
  DetectError(DetectErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  DetectErrorKind kind() const { return kind_; }

 private:
  DetectErrorKind kind_;
};

enum class Origin : std::uint8_t { observed = 0, probe = 1 };

std::string_view to_string(Origin o);

struct AnomalyScoreRecord {
  graph::EntityId src;
  graph::EntityId dst;
  std::string action;  // actions of the merged parallel edges, comma-joined; empty for probes
  double score = 0.0;  // |y_hat - y_observed|
  double y_hat = 0.0;
  std::uint8_t y_observed = 1;
  TimeMs window_end = 0;
  Origin origin = Origin::observed;
  std::uint32_t src_index = 0;  // node indices within the scored snapshot
  std::uint32_t dst_index = 0;
  std::uint8_t truth = 0;  // ground-truth code when the snapshot carried labels

  friend bool operator==(const AnomalyScoreRecord&, const AnomalyScoreRecord&) = default;
};

// One record per unique observed (src, dst) pair, in pair order, followed by
// `probes_per_node` probe pairs for every user node: a uniformly drawn node of
// another kind that the user has no edge to (y_observed = 0, S = y_hat).
std::vector<AnomalyScoreRecord> score_snapshot(const graph::GraphSnapshot& snapshot, const gnn::ParamSet& params,
                                               const gnn::ModelOptions& options, std::size_t probes_per_node = 0,
                                               Rng* rng = nullptr);

struct ThresholdState {
  double tau = 0.5;
  double quantile = 0.99;
  std::size_t capacity = 10000;
  std::deque<double> window;  // recent scores labeled or presumed benign

  void push(double score);
  friend bool operator==(const ThresholdState&, const ThresholdState&) = default;
};

inline constexpr double kTauMin = 0.05;
inline constexpr double kTauMax = 0.999;

// Linear interpolation between order statistics (h = (n-1) q). `values` need
// not be sorted. Requires a non-empty input.
double empirical_quantile(std::vector<double> values, double q);

// tau = clamp(quantile(window, q), kTauMin, kTauMax). Returns false (tau
// unchanged) when the window is empty.
bool update_threshold(ThresholdState& state);

enum class AlertStatus : std::uint8_t { pending = 0, benign = 1, malicious = 2 };
enum class Label : std::uint8_t { benign = 1, malicious = 2 };

std::string_view to_string(AlertStatus s);
std::optional<AlertStatus> alert_status_from_string(std::string_view s);
std::optional<Label> label_from_string(std::string_view s);

struct Alert {
  std::string id;
  AnomalyScoreRecord record;
  double tau = 0.0;  // threshold at flag time
  AlertStatus status = AlertStatus::pending;
  TimeMs created_at = 0;
  std::optional<TimeMs> labeled_at;
  std::optional<std::string> scenario_tag;

  friend bool operator==(const Alert&, const Alert&) = default;
};

// Stable id: first 20 hex chars of sha256 over (src, dst, origin, window_end).
std::string alert_id(const AnomalyScoreRecord& r);

// One pending alert per record with S > tau (strict). Records with S <= tau
// (observed or probe) are appended to the benign window.
std::vector<Alert> flag(const std::vector<AnomalyScoreRecord>& records, ThresholdState& threshold);

struct FeedbackPolicy {
  double lambda_malicious = 4.0;
  double lambda_benign = 0.0;
  DurationMs recency_half_life = 24 * kHourMs;

  friend bool operator==(const FeedbackPolicy&, const FeedbackPolicy&) = default;
};

// 1 + lambda * 2^(-(now - confirmed_at) / half_life); ages below zero count as 0.
double feedback_weight(double lambda, TimeMs confirmed_at, TimeMs now, DurationMs half_life);

struct FeedbackSample {
  std::shared_ptr<const graph::GraphSnapshot> context;  // snapshot the pair was scored in
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  double y = 1.0;
  double lambda = 0.0;
  TimeMs confirmed_at = 0;
  double weight = 1.0;
  std::string alert_id;
};

struct FeedbackBuffer {
  std::size_t capacity = 5000;
  std::deque<FeedbackSample> samples;  // oldest first

  std::size_t size() const { return samples.size(); }
  void push(FeedbackSample s);
  // Recomputes every weight for the given time.
  void refresh_weights(TimeMs now, DurationMs half_life);
};

// Transitions `alert` out of pending and appends the training sample. A
// benign label keeps the observation as target (y = y_observed); a malicious
// label inverts it. Throws DetectError(already_labeled). `context` may be
// null when the scoring snapshot is no longer held; the label is then
// recorded without a training sample.
void record_feedback(FeedbackBuffer& buffer, Alert& alert, Label label, TimeMs confirmed_at, TimeMs now,
                     std::shared_ptr<const graph::GraphSnapshot> context, const FeedbackPolicy& policy);

struct RetrainResult {
  gnn::ParamSet params;
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
};

struct RetrainInputs {
  const FeedbackBuffer* buffer = nullptr;
  std::vector<std::shared_ptr<const graph::GraphSnapshot>> recent;
  // Pairs (by entity) confirmed malicious; never used as fresh positives.
  const std::set<std::pair<graph::EntityId, graph::EntityId>>* excluded = nullptr;
  std::size_t negatives_per_positive = 1;
  // As in gnn::make_training_view; supervised observed pairs leave the
  // message-passing graph when > 0.
  double target_fraction = 0.0;
};

// Runs `epochs` passes; each pass takes one Adam step per context snapshot
// (recent snapshots first, then buffer contexts in order of first use) on the
// union of its fresh pairs (weight 1) and its buffer samples (their weight).
// Throws DetectError(nothing_to_train_on) when there is neither buffer nor
// snapshot.
RetrainResult retrain(const gnn::ParamSet& params, gnn::AdamState& adam, const RetrainInputs& inputs,
                      std::size_t epochs, double lr, Rng& rng, const gnn::ModelOptions& options);

}  // namespace sentinel::detect
