#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sentinel/common/time.hpp"
#include "sentinel/detect/scoring.hpp"
#include "sentinel/gnn/model.hpp"
#include "sentinel/graph/snapshot.hpp"

namespace sentinel::detect {

struct DetectorConfig {
  DurationMs window = 15 * kMinuteMs;
  // Decay of edge weights and of the per-entity history behind the features.
  DurationMs half_life = 24 * kHourMs;
  std::vector<std::size_t> hidden{32, 32};
  gnn::ModelOptions model;          // strict: plain attention, in-neighbors
  std::size_t probes_per_node = 0;  // strict: no probes
  graph::RoleContext role_context = graph::RoleContext::all_nodes;

  double quantile = 0.99;
  std::size_t benign_capacity = 10000;
  double tau_initial = 0.5;

  std::size_t buffer_capacity = 5000;
  FeedbackPolicy feedback;

  bool adaptive = true;                  // false: parameters frozen after pretraining, feedback ignored
  std::size_t retrain_every = 4;         // windows
  std::size_t retrain_on_feedback = 20;  // new labels
  std::size_t retrain_epochs = 2;
  double retrain_lr = 2e-3;
  std::size_t recent_snapshots = 8;

  std::size_t pretrain_epochs = 30;
  double pretrain_lr = 5e-3;
  // Trailing share of pretraining windows held out of training; tau starts
  // at the quantile of their scores.
  double calibration_fraction = 0.2;
  // Share of pairs per training step supervised and hidden from message
  // passing; 0 trains on every pair with the full graph.
  double target_fraction = 0.5;
  std::size_t negatives = 1;

  std::size_t max_pending_contexts = 10000;
  std::uint64_t seed = 42;

  // "strict" (the default) or "extended": extended turns on edge-weight
  // attention logits and one probe per user node.
  void apply_mode(std::string_view mode);

  // Sets one option from its textual form ("window" = "15m", "hidden" =
  // "32,32", ...). Throws DetectError(invalid_config).
  void set(std::string_view key, std::string_view value);
  void validate() const;

  std::string to_json() const;  // canonical, all keys
  static DetectorConfig from_json(std::string_view text);
  std::string fingerprint() const;  // sha256 of to_json()

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

}  // namespace sentinel::detect
