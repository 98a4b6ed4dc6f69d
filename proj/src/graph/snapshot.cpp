#include "sentinel/graph/snapshot.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include <json.hpp>

namespace sentinel::graph {

using ingest::NormalizedEvent;

std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::user: return "user";
    case NodeKind::role: return "role";
    case NodeKind::resource: return "resource";
  }
  return "user";
}

std::optional<NodeKind> node_kind_from_string(std::string_view s) {
  if (s == "user") return NodeKind::user;
  if (s == "role") return NodeKind::role;
  if (s == "resource") return NodeKind::resource;
  return std::nullopt;
}

namespace {

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

double decay_factor(DurationMs age, DurationMs half_life) {
  return std::exp2(-static_cast<double>(age) / static_cast<double>(half_life));
}

NodeTally scaled(const NodeTally& t, double factor) {
  NodeTally out;
  for (const auto& [k, v] : t.actions) out.actions[k] = v * factor;
  for (const auto& [k, v] : t.roles) out.roles[k] = v * factor;
  out.count = t.count * factor;
  out.privilege_sum = t.privilege_sum * factor;
  return out;
}

void accumulate(NodeTally& into, const NodeTally& add) {
  for (const auto& [k, v] : add.actions) into.actions[k] += v;
  for (const auto& [k, v] : add.roles) into.roles[k] += v;
  into.count += add.count;
  into.privilege_sum += add.privilege_sum;
}

double history_decay(const History* history, TimeMs window_end, DurationMs half_life) {
  if (history == nullptr || history->as_of == 0) return 1.0;
  if (window_end < history->as_of) {
    throw GraphError(GraphErrorKind::invalid_argument, "history is newer than the window");
  }
  return decay_factor(window_end - history->as_of, half_life);
}

}  // namespace

FeatureSpec FeatureSpec::make(std::vector<std::string> roles, std::vector<std::string> actions,
                              VocabMode mode, RoleContext context) {
  FeatureSpec s;
  s.role_vocab = sorted_unique(std::move(roles));
  s.action_vocab = sorted_unique(std::move(actions));
  s.vocab_mode = mode;
  s.role_context = context;
  return s;
}

std::optional<std::size_t> FeatureSpec::role_index(std::string_view role) const {
  auto it = std::lower_bound(role_vocab.begin(), role_vocab.end(), role);
  if (it == role_vocab.end() || *it != role) return std::nullopt;
  return static_cast<std::size_t>(it - role_vocab.begin());
}

std::optional<std::uint32_t> GraphSnapshot::find(const EntityId& id) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), id);
  if (it == nodes.end() || *it != id) return std::nullopt;
  return static_cast<std::uint32_t>(it - nodes.begin());
}

double compute_edge_weight(std::int64_t count, TimeMs last_seen, TimeMs now, DurationMs half_life) {
  if (count < 1) throw GraphError(GraphErrorKind::invalid_argument, "edge count must be >= 1");
  if (now < last_seen) throw GraphError(GraphErrorKind::invalid_argument, "now precedes last_seen");
  if (half_life <= 0) throw GraphError(GraphErrorKind::invalid_argument, "half_life must be positive");
  return static_cast<double>(count) * decay_factor(now - last_seen, half_life);
}

double compute_access_entropy(const std::map<std::string, double>& histogram) {
  double total = 0.0;
  for (const auto& [_, c] : histogram) {
    if (c < 0.0 || !std::isfinite(c)) {
      throw GraphError(GraphErrorKind::invalid_argument, "histogram counts must be finite and >= 0");
    }
    total += c;
  }
  if (!(total > 0.0)) throw GraphError(GraphErrorKind::empty_histogram, "empty action histogram");
  double h = 0.0;
  for (const auto& [_, c] : histogram) {
    if (c <= 0.0) continue;
    const double p = c / total;
    h -= p * std::log2(p);
  }
  // Guard against -0.0 and rounding just below zero for single-action nodes.
  return h > 0.0 ? h : 0.0;
}

BuildResult build_snapshot(std::span<const NormalizedEvent> events, TimeMs window_start,
                           TimeMs window_end, const FeatureSpec& spec_in, const History* history,
                           DurationMs half_life, std::span<const std::uint8_t> malicious) {
  if (window_start >= window_end) {
    throw GraphError(GraphErrorKind::invalid_argument, "window_start must precede window_end");
  }
  if (half_life <= 0) throw GraphError(GraphErrorKind::invalid_argument, "half_life must be positive");
  if (!malicious.empty() && malicious.size() != events.size()) {
    throw GraphError(GraphErrorKind::invalid_argument, "label count differs from event count");
  }

  BuildResult result;
  result.spec = spec_in;
  FeatureSpec& spec = result.spec;

  // Vocabulary handling.
  {
    std::set<std::string> roles, actions;
    for (const auto& e : events) {
      if (e.timestamp < window_start || e.timestamp >= window_end) {
        throw GraphError(GraphErrorKind::window_mismatch,
                         "event at " + std::to_string(e.timestamp) + " outside window");
      }
      roles.insert(e.role);
      actions.insert(e.action);
    }
    std::vector<std::string> new_roles, new_actions;
    for (const auto& r : roles) {
      if (!std::binary_search(spec.role_vocab.begin(), spec.role_vocab.end(), r)) new_roles.push_back(r);
    }
    for (const auto& a : actions) {
      if (!std::binary_search(spec.action_vocab.begin(), spec.action_vocab.end(), a)) new_actions.push_back(a);
    }
    switch (spec.vocab_mode) {
      case VocabMode::frozen:
        if (!new_roles.empty()) throw GraphError(GraphErrorKind::unknown_role, "unknown role " + new_roles.front());
        if (!new_actions.empty()) {
          throw GraphError(GraphErrorKind::unknown_action, "unknown action " + new_actions.front());
        }
        break;
      case VocabMode::frozen_ignore:
        result.ignored_roles = std::move(new_roles);
        result.ignored_actions = std::move(new_actions);
        break;
      case VocabMode::extend:
        for (const auto& r : new_roles) spec.role_vocab.push_back(r);
        for (const auto& a : new_actions) spec.action_vocab.push_back(a);
        spec.role_vocab = sorted_unique(std::move(spec.role_vocab));
        spec.action_vocab = sorted_unique(std::move(spec.action_vocab));
        result.added_roles = std::move(new_roles);
        result.added_actions = std::move(new_actions);
        break;
    }
  }

  GraphSnapshot& snap = result.snapshot;
  snap.window_start = window_start;
  snap.window_end = window_end;

  // Nodes: one per distinct entity, sorted by (kind, name).
  std::map<EntityId, NodeTally> window_counts;
  for (const auto& e : events) {
    const EntityId user{NodeKind::user, e.user_id};
    const EntityId role{NodeKind::role, e.role};
    const EntityId res{NodeKind::resource, e.resource};
    for (const EntityId* id : {&user, &role, &res}) {
      NodeTally& t = window_counts[*id];
      t.actions[e.action] += 1.0;
      t.roles[e.role] += 1.0;
      t.count += 1.0;
      t.privilege_sum += e.privilege_level;
    }
  }
  snap.nodes.reserve(window_counts.size());
  snap.window_tally.reserve(window_counts.size());
  for (auto& [id, tally] : window_counts) {
    snap.nodes.push_back(id);
    snap.window_tally.push_back(std::move(tally));
  }

  // Edges: User->Role ("assume") and User->Resource (event action).
  struct Agg {
    TimeMs last_seen = 0;
    std::uint32_t count = 0;
    std::uint8_t malicious = 0;
  };
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::string>, Agg> edge_map;
  for (std::size_t k = 0; k < events.size(); ++k) {
    const auto& e = events[k];
    const auto u = *snap.find({NodeKind::user, e.user_id});
    const auto r = *snap.find({NodeKind::role, e.role});
    const auto x = *snap.find({NodeKind::resource, e.resource});
    const std::uint8_t bad = malicious.empty() ? 0 : malicious[k];
    for (auto key : {std::tuple{u, r, std::string(kAssumeAction)}, std::tuple{u, x, e.action}}) {
      Agg& a = edge_map[key];
      a.last_seen = std::max(a.last_seen, e.timestamp);
      a.count += 1;
      a.malicious = std::max(a.malicious, bad);
    }
  }
  snap.edges.reserve(edge_map.size());
  if (!malicious.empty()) snap.malicious.emplace();
  for (const auto& [key, agg] : edge_map) {
    AccessEdge edge;
    edge.src = std::get<0>(key);
    edge.dst = std::get<1>(key);
    edge.action = std::get<2>(key);
    edge.last_seen = agg.last_seen;
    edge.count = agg.count;
    edge.weight = compute_edge_weight(agg.count, agg.last_seen, window_end, half_life);
    snap.edges.push_back(std::move(edge));
    if (snap.malicious) snap.malicious->push_back(agg.malicious);
  }

  // Features from the window merged with decayed history.
  const double hist_factor = history_decay(history, window_end, half_life);
  snap.features = Matrix(snap.nodes.size(), spec.dim());
  for (std::size_t i = 0; i < snap.nodes.size(); ++i) {
    const EntityId& id = snap.nodes[i];
    NodeTally merged;
    if (history != nullptr) {
      if (auto it = history->nodes.find(id); it != history->nodes.end()) merged = scaled(it->second, hist_factor);
    }
    accumulate(merged, snap.window_tally[i]);

    auto row = snap.features.row(i);
    row[static_cast<std::size_t>(id.kind)] = 1.0;

    const bool role_block = id.kind == NodeKind::user || spec.role_context == RoleContext::all_nodes;
    if (role_block && id.kind == NodeKind::role) {
      if (auto idx = spec.role_index(id.name)) row[spec.role_offset() + *idx] = 1.0;
    } else if (role_block) {
      double known = 0.0;
      for (const auto& [role, c] : merged.roles) {
        if (spec.role_index(role)) known += c;
      }
      if (known > 0.0) {
        for (const auto& [role, c] : merged.roles) {
          if (auto idx = spec.role_index(role)) row[spec.role_offset() + *idx] = c / known;
        }
      }
    }
    row[spec.entropy_offset()] = compute_access_entropy(merged.actions);
    row[spec.frequency_offset()] = std::log1p(merged.count);
    if (id.kind == NodeKind::user && merged.count > 0.0) {
      row[spec.privilege_offset()] = merged.privilege_sum / merged.count / 4.0;
    }
  }
  return result;
}

History merge_history(const History& history, const GraphSnapshot& snapshot, DurationMs half_life) {
  if (half_life <= 0) throw GraphError(GraphErrorKind::invalid_argument, "half_life must be positive");
  History out;
  const double factor = history_decay(&history, snapshot.window_end, half_life);
  for (const auto& [id, tally] : history.nodes) out.nodes.emplace(id, scaled(tally, factor));
  for (std::size_t i = 0; i < snapshot.nodes.size(); ++i) {
    accumulate(out.nodes[snapshot.nodes[i]], snapshot.window_tally[i]);
  }
  out.as_of = std::max(history.as_of, snapshot.window_end);
  return out;
}

namespace {

nlohmann::ordered_json tally_json(const NodeTally& t) {
  nlohmann::ordered_json j;
  j["actions"] = t.actions;
  j["roles"] = t.roles;
  j["count"] = t.count;
  j["privilege_sum"] = t.privilege_sum;
  return j;
}

NodeTally tally_from_json(const nlohmann::json& j) {
  NodeTally t;
  t.actions = j.at("actions").get<std::map<std::string, double>>();
  t.roles = j.at("roles").get<std::map<std::string, double>>();
  t.count = j.at("count").get<double>();
  t.privilege_sum = j.at("privilege_sum").get<double>();
  return t;
}

}  // namespace

std::string snapshot_to_json(const GraphSnapshot& s, int indent) {
  nlohmann::ordered_json j;
  j["window_start"] = s.window_start;
  j["window_end"] = s.window_end;
  j["feature_dim"] = s.features.cols();
  auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    nodes.push_back({{"index", i}, {"kind", std::string(to_string(s.nodes[i].kind))}, {"name", s.nodes[i].name}});
  }
  auto& edges = j["edges"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < s.edges.size(); ++k) {
    const auto& e = s.edges[k];
    nlohmann::ordered_json ej{{"src", e.src},       {"dst", e.dst},     {"action", e.action},
                              {"last_seen", e.last_seen}, {"count", e.count}, {"weight", e.weight}};
    if (s.malicious) ej["malicious"] = (*s.malicious)[k];
    edges.push_back(std::move(ej));
  }
  auto& feats = j["features"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.features.rows(); ++i) {
    const auto row = s.features.row(i);
    feats.push_back(std::vector<double>(row.begin(), row.end()));
  }
  auto& tallies = j["window_tally"] = nlohmann::ordered_json::array();
  for (const auto& t : s.window_tally) tallies.push_back(tally_json(t));
  return j.dump(indent);
}

GraphSnapshot snapshot_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  GraphSnapshot s;
  s.window_start = j.at("window_start").get<TimeMs>();
  s.window_end = j.at("window_end").get<TimeMs>();
  for (const auto& n : j.at("nodes")) {
    auto kind = node_kind_from_string(n.at("kind").get<std::string>());
    if (!kind) throw GraphError(GraphErrorKind::invalid_argument, "bad node kind");
    s.nodes.push_back({*kind, n.at("name").get<std::string>()});
  }
  bool has_labels = false;
  for (const auto& e : j.at("edges")) {
    AccessEdge edge;
    edge.src = e.at("src").get<std::uint32_t>();
    edge.dst = e.at("dst").get<std::uint32_t>();
    edge.action = e.at("action").get<std::string>();
    edge.last_seen = e.at("last_seen").get<TimeMs>();
    edge.count = e.at("count").get<std::uint32_t>();
    edge.weight = e.at("weight").get<double>();
    s.edges.push_back(std::move(edge));
    if (e.contains("malicious")) {
      if (!has_labels) s.malicious.emplace();
      has_labels = true;
      s.malicious->push_back(e.at("malicious").get<std::uint8_t>());
    }
  }
  const auto dim = j.at("feature_dim").get<std::size_t>();
  const auto& feats = j.at("features");
  s.features = Matrix(feats.size(), dim);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (std::size_t c = 0; c < dim; ++c) s.features(i, c) = feats[i].at(c).get<double>();
  }
  if (j.contains("window_tally")) {
    for (const auto& t : j.at("window_tally")) s.window_tally.push_back(tally_from_json(t));
  }
  return s;
}

}  // namespace sentinel::graph
