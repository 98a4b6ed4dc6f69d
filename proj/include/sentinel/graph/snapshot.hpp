#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentinel/common/matrix.hpp"
#include "sentinel/common/time.hpp"
#include "sentinel/ingest/event.hpp"

namespace sentinel::graph {

enum class NodeKind : std::uint8_t { user = 0, role = 1, resource = 2 };

std::string_view to_string(NodeKind k);
std::optional<NodeKind> node_kind_from_string(std::string_view s);

struct EntityId {
  NodeKind kind = NodeKind::user;
  std::string name;

  friend auto operator<=>(const EntityId&, const EntityId&) = default;
  friend bool operator==(const EntityId&, const EntityId&) = default;
};

// Action label on the User->Role edge that every event induces.
inline constexpr const char* kAssumeAction = "assume";

// Directed actor->target edge; endpoints are node indices into the snapshot.
struct AccessEdge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  std::string action;
  TimeMs last_seen = 0;
  std::uint32_t count = 0;
  double weight = 0.0;

  friend bool operator==(const AccessEdge&, const AccessEdge&) = default;
};

// Which node kinds receive the role block of the feature vector.
enum class RoleContext : std::uint8_t {
  // Users carry their role-usage distribution; roles and resources are zero.
  users_only = 0,
  // Additionally roles carry their own one-hot and resources the
  // distribution of roles they were accessed under.
  all_nodes = 1,
};

enum class VocabMode : std::uint8_t {
  extend = 0,         // unseen roles/actions are appended (and reported)
  frozen = 1,         // unseen roles/actions are errors
  frozen_ignore = 2,  // unseen roles/actions get no slot (and are reported)
};

// Node feature layout, offsets in order:
//   [0, 3)          node-type one-hot (user, role, resource)
//   [3, 3+R)        role block (see RoleContext)
//   3+R             access entropy in bits over the node's action histogram
//   4+R             log(1 + access count)
//   5+R             mean privilege level / 4 (users only)
struct FeatureSpec {
  std::vector<std::string> role_vocab;    // sorted, unique
  std::vector<std::string> action_vocab;  // sorted, unique
  VocabMode vocab_mode = VocabMode::extend;
  RoleContext role_context = RoleContext::users_only;

  static FeatureSpec make(std::vector<std::string> roles, std::vector<std::string> actions,
                          VocabMode mode = VocabMode::extend,
                          RoleContext context = RoleContext::users_only);

  std::size_t dim() const { return 3 + role_vocab.size() + 3; }
  std::size_t role_offset() const { return 3; }
  std::size_t entropy_offset() const { return 3 + role_vocab.size(); }
  std::size_t frequency_offset() const { return 4 + role_vocab.size(); }
  std::size_t privilege_offset() const { return 5 + role_vocab.size(); }
  std::optional<std::size_t> role_index(std::string_view role) const;

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

// Decayed behavioral counts for one entity.
struct NodeTally {
  std::map<std::string, double> actions;
  std::map<std::string, double> roles;  // role the access happened under
  double count = 0.0;
  double privilege_sum = 0.0;

  friend bool operator==(const NodeTally&, const NodeTally&) = default;
};

// Rolling per-entity state carried between windows.
struct History {
  TimeMs as_of = 0;  // window end of the last merge; 0 when empty
  std::map<EntityId, NodeTally> nodes;

  friend bool operator==(const History&, const History&) = default;
};

// G_t = (V_t, E_t, X_t) for one window. Immutable once built.
struct GraphSnapshot {
  TimeMs window_start = 0;
  TimeMs window_end = 0;
  std::vector<EntityId> nodes;         // sorted by (kind, name)
  Matrix features;                     // |nodes| x spec.dim()
  std::vector<AccessEdge> edges;       // sorted by (src, dst, action), unique
  std::vector<NodeTally> window_tally; // this window's raw counts, per node
  // Ground truth per edge: the largest label code among the events that
  // induced it (0 = benign). Only present when the events carried labels.
  std::optional<std::vector<std::uint8_t>> malicious;

  std::optional<std::uint32_t> find(const EntityId& id) const;
  std::size_t size() const { return nodes.size(); }

  friend bool operator==(const GraphSnapshot&, const GraphSnapshot&) = default;
};

enum class GraphErrorKind { invalid_argument, empty_histogram, window_mismatch, unknown_role, unknown_action };

class GraphError : public std::runtime_error {
 public:
  GraphError(GraphErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  GraphErrorKind kind() const { return kind_; }

 private:
  GraphErrorKind kind_;
};

// count * 2^(-(now - last_seen) / half_life). Throws GraphError(invalid_argument).
double compute_edge_weight(std::int64_t count, TimeMs last_seen, TimeMs now, DurationMs half_life);

// Shannon entropy in bits with 0 log 0 = 0. Throws GraphError(empty_histogram)
// when the total is zero, GraphError(invalid_argument) on negative counts.
double compute_access_entropy(const std::map<std::string, double>& histogram);

struct BuildResult {
  GraphSnapshot snapshot;
  FeatureSpec spec;                      // the spec actually used (extended if allowed)
  std::vector<std::string> added_roles;    // extend mode
  std::vector<std::string> added_actions;  // extend mode
  std::vector<std::string> ignored_roles;  // frozen_ignore mode
  std::vector<std::string> ignored_actions;
};

// Builds the snapshot for [window_start, window_end). Features are computed
// from the window's counts merged with `history` (decayed to window_end).
// `malicious`, when given, is parallel to `events` (0 = benign, otherwise a
// caller-defined label code).
BuildResult build_snapshot(std::span<const ingest::NormalizedEvent> events, TimeMs window_start,
                           TimeMs window_end, const FeatureSpec& spec, const History* history,
                           DurationMs half_life,
                           std::span<const std::uint8_t> malicious = {});

// Decays `history` to snapshot.window_end and adds the window's counts.
History merge_history(const History& history, const GraphSnapshot& snapshot, DurationMs half_life);

// Debug/golden dump: {"window_start","window_end","nodes","edges","features",...}.
std::string snapshot_to_json(const GraphSnapshot& snapshot, int indent = -1);
GraphSnapshot snapshot_from_json(std::string_view text);

}  // namespace sentinel::graph
