#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sentinel/common/binary_io.hpp"
#include "sentinel/common/rng.hpp"
#include "sentinel/detect/config.hpp"
#include "sentinel/detect/scoring.hpp"
#include "sentinel/gnn/model.hpp"
#include "sentinel/graph/snapshot.hpp"
#include "sentinel/ingest/event.hpp"

namespace sentinel::detect {

// Checkpoint with a foreign magic or format version.
class CheckpointVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct RetrainSummary {
  std::uint64_t version_before = 0;
  std::uint64_t version_after = 0;
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
  std::size_t buffer_size = 0;
  TimeMs at = 0;
};

struct PretrainReport {
  std::size_t snapshots = 0;
  std::size_t held_out = 0;  // calibration windows, not trained on
  std::size_t steps = 0;
  std::vector<double> epoch_losses;
  std::size_t calibration_scores = 0;
  double tau = 0.0;
};

struct WindowResult {
  TimeMs window_start = 0;
  TimeMs window_end = 0;
  std::size_t events = 0;
  bool empty = true;
  std::vector<AnomalyScoreRecord> records;
  std::vector<Alert> alerts;  // new alerts in creation order
  double tau = 0.0;           // after this window's update
  std::size_t benign_window_size = 0;
  std::optional<RetrainSummary> retrain;
  std::vector<std::string> ignored_roles;
};

// The stateful detection loop for one tenant: windowed snapshots, scoring,
// alerting, threshold adaptation, feedback and retraining. Not thread-safe;
// callers serialize access.
class Detector {
 public:
  explicit Detector(DetectorConfig config);

  const DetectorConfig& config() const { return config_; }

  // Fixes the role vocabulary (feature dimension) and initializes the model.
  void initialize(std::vector<std::string> roles);
  bool initialized() const { return initialized_; }
  const graph::FeatureSpec& spec() const { return spec_; }

  // Builds snapshots for every window in [start, end), trains on them and
  // calibrates tau from their scores. Initializes from the events' roles when
  // needed. Events outside [start, end) are ignored; `truth` may be empty.
  PretrainReport pretrain(std::span<const ingest::NormalizedEvent> events, std::span<const std::uint8_t> truth,
                          TimeMs start, TimeMs end);

  // One pass of the detection loop over the window [start, end). Events must
  // lie in the window; windows must not go back in time.
  WindowResult process_window(std::span<const ingest::NormalizedEvent> events, std::span<const std::uint8_t> truth,
                              TimeMs start, TimeMs end);

  // Analyst verdict; confirmation time is the detector clock. Throws
  // DetectError(unknown_alert / already_labeled).
  const Alert& label_alert(std::string_view id, Label label);

  TimeMs clock() const { return clock_; }
  const ThresholdState& threshold() const { return threshold_; }
  const gnn::ParamSet& params() const { return params_; }
  const gnn::AdamState& optimizer() const { return adam_; }
  // Completed training rounds (pretraining and each retrain).
  std::uint64_t model_version() const { return model_version_; }
  const FeedbackBuffer& buffer() const { return buffer_; }
  const graph::History& history() const { return history_; }
  const Rng& rng() const { return rng_; }
  std::size_t windows_processed() const { return windows_processed_; }
  std::size_t windows_since_retrain() const { return windows_since_retrain_; }
  std::size_t feedback_since_retrain() const { return feedback_since_retrain_; }
  std::size_t retrain_count() const { return retrain_count_; }
  std::optional<TimeMs> last_retrain_at() const { return last_retrain_at_; }
  std::size_t pending_count() const;

  const std::vector<Alert>& alerts() const { return alerts_; }
  const Alert* find_alert(std::string_view id) const;
  std::shared_ptr<const graph::GraphSnapshot> last_snapshot() const { return last_snapshot_; }
  const std::vector<AnomalyScoreRecord>& last_records() const { return last_records_; }

  // Opaque caller metadata stored with the checkpoint.
  std::map<std::string, std::string>& annotations() { return annotations_; }
  const std::map<std::string, std::string>& annotations() const { return annotations_; }

  // Full state as bytes; restore(checkpoint()) continues bit-identically.
  std::string checkpoint() const;
  static Detector restore(std::string_view bytes);

 private:
  void require_initialized() const;
  std::optional<RetrainSummary> maybe_retrain();
  void remember_context(const std::string& id, std::shared_ptr<const graph::GraphSnapshot> snap);

  DetectorConfig config_;
  bool initialized_ = false;
  graph::FeatureSpec spec_;
  graph::History history_;
  gnn::ParamSet params_;
  gnn::AdamState adam_;
  ThresholdState threshold_;
  FeedbackBuffer buffer_;
  Rng rng_;
  TimeMs clock_ = 0;

  std::size_t windows_processed_ = 0;
  std::size_t windows_since_retrain_ = 0;
  std::size_t feedback_since_retrain_ = 0;
  std::size_t retrain_count_ = 0;
  std::uint64_t model_version_ = 0;
  std::optional<TimeMs> last_retrain_at_;

  std::deque<std::shared_ptr<const graph::GraphSnapshot>> recent_;
  std::set<std::pair<graph::EntityId, graph::EntityId>> excluded_;

  std::vector<Alert> alerts_;
  std::unordered_map<std::string, std::size_t> alert_index_;
  // Scoring context of unlabeled alerts, oldest first.
  std::deque<std::pair<std::string, std::shared_ptr<const graph::GraphSnapshot>>> pending_contexts_;
  std::unordered_map<std::string, std::shared_ptr<const graph::GraphSnapshot>> pending_lookup_;

  std::shared_ptr<const graph::GraphSnapshot> last_snapshot_;
  std::vector<AnomalyScoreRecord> last_records_;
  std::map<std::string, std::string> annotations_;
};

}  // namespace sentinel::detect
