#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sentinel/common/labels.hpp"
#include "sentinel/common/time.hpp"
#include "sentinel/ingest/event.hpp"

namespace sentinel::synth {

enum class SynthErrorKind { invalid_config, unknown_actor, out_of_range, io_error, format_error };

class SynthError : public std::runtime_error {
 public:
  SynthError(SynthErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  SynthErrorKind kind() const { return kind_; }

 private:
  SynthErrorKind kind_;
};

struct DriftConfig {
  int day = -1;           // < 0 disables
  double fraction = 0.2;  // share of human users whose primary role changes
};

struct AttackPlan {
  std::size_t privilege_escalation = 0;
  std::size_t lateral_movement = 0;
  std::size_t service_account_compromise = 0;
  int first_day = 5;  // attacks start on or after this day
  std::size_t escalation_intensity = 5;
  std::size_t lateral_hops = 6;
  DurationMs lateral_burst = 10 * kMinuteMs;
  std::size_t service_intensity = 25;
  DurationMs service_spread = 12 * kHourMs;
};

struct WorkloadConfig {
  std::size_t n_users = 50;
  std::size_t n_roles = 10;
  std::size_t n_resources = 30;
  int duration_days = 7;
  double events_per_user_day = 30.0;
  double diurnal_amplitude = 0.6;
  double second_role_probability = 0.3;
  double territory_overlap = 0.1;
  double failure_rate = 0.02;
  std::size_t n_service_accounts = 2;
  DurationMs service_period = kHourMs;
  TimeMs start = 1704067200000;  // 2024-01-01T00:00:00Z
  std::uint64_t seed = 42;
  DriftConfig drift;
  AttackPlan attacks;

  TimeMs end() const { return start + static_cast<TimeMs>(duration_days) * kDayMs; }
  void validate() const;
  std::string to_json() const;
  static WorkloadConfig from_json(std::string_view text);
  // The frozen 50/10/30/7-day configuration with ~2% malicious events.
  static WorkloadConfig desk_scale();
};

struct LabeledStream {
  std::vector<ingest::NormalizedEvent> events;
  std::vector<std::uint8_t> labels;  // per position; 0 benign, else a ScenarioKind code

  std::size_t malicious_count() const;
  std::vector<std::size_t> malicious_positions() const;
  std::map<std::size_t, ScenarioKind> scenario_tags() const;
  friend bool operator==(const LabeledStream&, const LabeledStream&) = default;
};

struct ServiceAccount {
  std::string name;
  std::size_t role = 0;
  std::vector<std::size_t> resources;
};

// Who may touch what. Indices refer to the name tables.
struct Assignment {
  std::vector<std::string> users;      // humans
  std::vector<std::string> roles;
  std::vector<std::string> resources;
  std::vector<std::vector<std::size_t>> user_roles;      // before drift
  std::vector<std::vector<std::size_t>> drifted_roles;   // after drift (equal when unaffected)
  std::vector<std::vector<std::size_t>> territories;     // per role, sorted
  std::vector<ServiceAccount> service_accounts;

  // Every role the actor ever held in the baseline, human or service account.
  std::optional<std::vector<std::size_t>> baseline_roles(std::string_view actor) const;
  // Union of the resources reachable through those roles.
  std::optional<std::vector<std::size_t>> baseline_resources(std::string_view actor) const;
  const ServiceAccount* service_account(std::string_view name) const;
};

struct Baseline {
  Assignment assignment;
  LabeledStream stream;
};

Assignment make_assignment(const WorkloadConfig& config);
Baseline generate_baseline(const WorkloadConfig& config);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::privilege_escalation;
  std::string actor;
  TimeMs start = 0;
  std::size_t intensity = 1;  // events; hop count for lateral movement
  DurationMs span = 0;        // burst or spread; 0 picks the kind's default
  std::uint64_t seed = 0;
};

// Each returns the merged stream; original events keep their relative order.
// `inserted` receives the positions of the new events in the result.
LabeledStream inject_privilege_escalation(const LabeledStream& stream, const Assignment& a, const WorkloadConfig& c,
                                          const ScenarioSpec& spec, std::vector<std::size_t>* inserted = nullptr);
LabeledStream inject_lateral_movement(const LabeledStream& stream, const Assignment& a, const WorkloadConfig& c,
                                      const ScenarioSpec& spec, std::vector<std::size_t>* inserted = nullptr);
LabeledStream inject_service_account_compromise(const LabeledStream& stream, const Assignment& a,
                                                const WorkloadConfig& c, const ScenarioSpec& spec,
                                                std::vector<std::size_t>* inserted = nullptr);
LabeledStream inject(const LabeledStream& stream, const Assignment& a, const WorkloadConfig& c,
                     const ScenarioSpec& spec, std::vector<std::size_t>* inserted = nullptr);

// Draws the attack schedule of config.attacks.
std::vector<ScenarioSpec> plan_attacks(const Assignment& a, const WorkloadConfig& c);

struct Dataset {
  WorkloadConfig config;
  Assignment assignment;
  LabeledStream stream;
  std::vector<ScenarioSpec> scenarios;
};

// Baseline plus every planned attack.
Dataset generate(const WorkloadConfig& config);

inline constexpr std::string_view kEventsFile = "events.jsonl";
inline constexpr std::string_view kLabelsFile = "labels.jsonl";
inline constexpr std::string_view kMetaFile = "meta.json";

// events.jsonl (generic flavor), labels.jsonl ({index, scenario, user, role, resource, ts} per
// malicious position) and meta.json (counts, events digest, optional config).
void write_labeled_jsonl(const LabeledStream& stream, const std::filesystem::path& dir,
                         const WorkloadConfig* config = nullptr);
LabeledStream read_labeled_jsonl(const std::filesystem::path& dir);

// Labels only, for tools that take an events file and a labels file.
std::vector<std::uint8_t> read_labels_file(const std::filesystem::path& path, std::size_t event_count);

// sha256 of the events file bytes as written.
std::string events_fingerprint(const LabeledStream& stream);
std::string events_jsonl(const LabeledStream& stream);

// Coefficient of variation of inter-arrival gaps; 0 with fewer than 3 times.
double interarrival_cv(const std::vector<TimeMs>& times);

}  // namespace sentinel::synth
