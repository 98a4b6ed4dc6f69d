#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sentinel/detect/replay.hpp"
#include "sentinel/eval/metrics.hpp"
#include "sentinel/synth/synth.hpp"

namespace sentinel::eval {

struct LoadRow {
  double offered = 0.0;          // events/s
  double mean_latency_ms = 0.0;  // receipt to scores emitted
  double max_latency_ms = 0.0;
  double throughput = 0.0;       // events/s actually processed
  std::uint64_t events = 0;
  bool saturated = false;        // throughput below half the offered load
};

struct LoadReport {
  std::vector<LoadRow> rows;
  DurationMs duration = 0;  // per level
  DurationMs batch_window = 0;
  // Latency did not decrease with load; a hint, never a failure.
  bool latency_monotone = true;

  std::string to_table() const;
  std::string to_csv() const;
  std::string to_json() const;
};

struct LoadOptions {
  detect::DetectorConfig config;
  synth::WorkloadConfig workload = synth::WorkloadConfig::desk_scale();
  int train_days = 5;
  std::vector<double> rates{1000.0, 5000.0};
  DurationMs duration = 30 * kSecondMs;
  // Windows are cut on the wall clock at this width during the run.
  DurationMs batch_window = 10;
};

// Pretrains once on the head of the synthetic stream, then for every rate
// replays the tail (cycled) through a fresh copy of the detector inside the
// streaming engine, paced at that rate for `duration`. Rates <= 0 yield no row.
LoadReport measure_load(const LoadOptions& options);

struct AblationVariant {
  std::string name;
  detect::DetectorConfig config;
  MetricsReport metrics;
  std::string events_fingerprint;
  double tau = 0.0;
  std::size_t retrains = 0;
};

struct AblationReport {
  std::vector<AblationVariant> variants;  // full, no_attention, no_retraining
  bool same_input = true;                 // every variant saw the same event bytes

  const AblationVariant& variant(std::string_view name) const;
  std::string to_table() const;
  std::string to_csv() const;
  std::string to_json() const;
};

// Offline replays with oracle feedback of three variants on the same data:
// full, uniform attention, frozen parameters. Metrics count only the
// streamed part (events at or after the training cutoff).
AblationReport run_ablation(std::span<const ingest::NormalizedEvent> events, std::span<const std::uint8_t> labels,
                            const detect::ReplayOptions& base);

// Metrics of an in-memory replay outcome against per-event labels.
MetricsReport evaluate_outcome(const detect::ReplayOutcome& outcome, std::span<const ingest::NormalizedEvent> events,
                               std::span<const std::uint8_t> labels, DurationMs match_window);

}  // namespace sentinel::eval
