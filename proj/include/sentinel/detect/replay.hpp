#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentinel/detect/detector.hpp"

namespace sentinel::detect {

// Thrown by the crash hook of run_replay.
class SimulatedCrash : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReplayOptions {
  DetectorConfig config;
  // Events before this instant train the model; the rest are streamed. Unset:
  // midnight of the first event's day plus train_days.
  std::optional<TimeMs> train_until;
  int train_days = 5;
  // Label every flagged alert from the ground truth right after its window.
  bool oracle_feedback = true;
  // Output directory; empty keeps everything in memory.
  std::filesystem::path out_dir;
  std::size_t checkpoint_every = 0;  // streamed windows; 0 = only at the end
  // Throw SimulatedCrash once this many windows have been streamed.
  std::optional<std::size_t> crash_after_windows;
  // Continue from out_dir/checkpoint.bin instead of starting over.
  bool resume = false;
};

struct ScoredRow {
  AnomalyScoreRecord record;
  double tau = 0.0;  // threshold the record was compared against
  bool flagged = false;
};

struct TauPoint {
  TimeMs window_end = 0;
  double tau = 0.0;
  std::size_t benign_window_size = 0;
};

struct ReplayOutcome {
  std::string events_fingerprint;
  std::string config_fingerprint;
  PretrainReport pretrain;
  TimeMs train_until = 0;
  std::size_t windows = 0;  // streamed in this call
  std::uint64_t late_dropped = 0;
  std::size_t retrains = 0;
  double tau = 0.0;
  std::uint64_t model_version = 0;
  std::vector<Alert> alerts;  // final state of every alert
  std::vector<ScoredRow> rows;  // records scored in this call
  std::vector<TauPoint> tau_trace;
  std::string checkpoint_sha256;
};

inline constexpr const char* kAlertsLog = "alerts.jsonl";
inline constexpr const char* kAlertLabelsLog = "alert_labels.jsonl";
inline constexpr const char* kTauTrace = "tau_trace.csv";
inline constexpr const char* kScoresCsv = "scores.csv";
inline constexpr const char* kRunJson = "run.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";

// Digest identifying an event sequence: sha256 over the generic JSONL lines.
std::string stream_fingerprint(std::span<const ingest::NormalizedEvent> events);

// Offline run: pretrain on the head of the stream, then stream the tail window
// by window in file order. `truth` is per event (0 benign) or empty.
ReplayOutcome run_replay(std::span<const ingest::NormalizedEvent> events, std::span<const std::uint8_t> truth,
                         const ReplayOptions& options);

std::string alert_json(const Alert& a);
std::string entity_text(const graph::EntityId& e);

}  // namespace sentinel::detect
