#include "sentinel/synth/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <set>

#include "sentinel/common/fs.hpp"
#include "sentinel/common/hash.hpp"
#include "sentinel/common/rng.hpp"
#include "sentinel/ingest/parser.hpp"

namespace sentinel::synth {

using ingest::NormalizedEvent;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct ActionDef {
  const char* name;
  int privilege;
};

constexpr std::array<ActionDef, 6> kBaselineActions{{
    {"read", 0}, {"list", 0}, {"describe", 0}, {"write", 1}, {"update", 2}, {"delete", 3}}};
constexpr std::array<double, 6> kBaselineWeights{4.0, 2.0, 2.0, 2.0, 1.0, 0.3};

constexpr std::array<ActionDef, 4> kAdminActions{{
    {"create_access_key", 4}, {"attach_policy", 4}, {"update_policy", 4}, {"assume_admin", 4}}};

constexpr std::array<ActionDef, 2> kServiceActions{{{"read", 0}, {"write", 1}}};
constexpr std::array<double, 2> kServiceWeights{0.7, 0.3};

constexpr std::array<ActionDef, 5> kCompromiseActions{{
    {"read", 0}, {"list", 0}, {"write", 1}, {"delete", 3}, {"create_access_key", 4}}};

constexpr std::array<ActionDef, 4> kLateralActions{{{"read", 0}, {"list", 0}, {"describe", 0}, {"write", 1}}};
constexpr std::array<double, 4> kLateralWeights{3.0, 2.0, 1.0, 1.0};

constexpr std::uint64_t kPlanSalt = 0x5eed'a77a'c4ed'0001ULL;

std::string padded(std::string_view prefix, std::size_t i, std::size_t n) {
  const int width = std::max(2, static_cast<int>(std::to_string(n > 0 ? n - 1 : 0).size()));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, i);
  return std::string(prefix) + buf;
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
  return v;
}

void sorted_unique(std::vector<std::size_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

[[noreturn]] void invalid(const std::string& what) { throw SynthError(SynthErrorKind::invalid_config, what); }

void check_spec(const ScenarioSpec& spec, const WorkloadConfig& c) {
  if (spec.start < c.start || spec.start >= c.end()) {
    throw SynthError(SynthErrorKind::out_of_range, "scenario start " + format_rfc3339(spec.start) +
                                                       " lies outside the workload");
  }
}

void check_end(TimeMs last, const WorkloadConfig& c) {
  if (last >= c.end()) {
    throw SynthError(SynthErrorKind::out_of_range, "scenario runs past the end of the workload");
  }
}

LabeledStream merge(const LabeledStream& base, std::vector<NormalizedEvent> added, std::uint8_t code,
                    std::vector<std::size_t>* inserted) {
  std::sort(added.begin(), added.end(), ingest::EventOrder{});
  LabeledStream out;
  out.events.reserve(base.events.size() + added.size());
  out.labels.reserve(base.events.size() + added.size());
  if (inserted) inserted->clear();
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < base.events.size() || j < added.size()) {
    const bool take_added =
        j < added.size() && (i == base.events.size() || compare_events(added[j], base.events[i]) < 0);
    if (take_added) {
      if (inserted) inserted->push_back(out.events.size());
      out.events.push_back(std::move(added[j++]));
      out.labels.push_back(code);
    } else {
      out.events.push_back(base.events[i]);
      out.labels.push_back(base.labels[i]);
      ++i;
    }
  }
  return out;
}

NormalizedEvent make_event(TimeMs t, const std::string& user, const std::string& role, const std::string& resource,
                           const ActionDef& action, std::string session) {
  NormalizedEvent e;
  e.timestamp = t;
  e.user_id = user;
  e.role = role;
  e.resource = resource;
  e.action = action.name;
  e.privilege_level = action.privilege;
  e.session_id = std::move(session);
  return e;
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
    invalid(std::string(key) + " must be a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

std::int64_t get_i64(const json& j, const char* key, std::int64_t fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_integer()) invalid(std::string(key) + " must be an integer");
  return it->get<std::int64_t>();
}

double get_f64(const json& j, const char* key, double fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) invalid(std::string(key) + " must be a number");
  return it->get<double>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; })) {
      invalid(std::string("unknown ") + where + " key " + k);
    }
  }
}

}  // namespace

void WorkloadConfig::validate() const {
  if (n_users < 1 || n_roles < 1 || n_resources < 1 || duration_days < 1) invalid("all counts must be at least 1");
  if (!(events_per_user_day >= 0.0) || !std::isfinite(events_per_user_day)) invalid("events_per_user_day");
  if (!(diurnal_amplitude >= 0.0 && diurnal_amplitude <= 1.0)) invalid("diurnal_amplitude must lie in [0, 1]");
  if (!(second_role_probability >= 0.0 && second_role_probability <= 1.0)) invalid("second_role_probability");
  if (!(territory_overlap >= 0.0 && territory_overlap <= 1.0)) invalid("territory_overlap");
  if (!(failure_rate >= 0.0 && failure_rate <= 1.0)) invalid("failure_rate");
  if (n_service_accounts > 0 && service_period <= 0) invalid("service_period must be positive");
  if (drift.day >= 0 && !(drift.fraction >= 0.0 && drift.fraction <= 1.0)) invalid("drift fraction");
  if (attacks.service_account_compromise > 0 && n_service_accounts == 0) {
    invalid("service account attacks need service accounts");
  }
  const bool attacking =
      attacks.privilege_escalation + attacks.lateral_movement + attacks.service_account_compromise > 0;
  if (attacking && (attacks.first_day < 0 || attacks.first_day >= duration_days)) {
    invalid("attack first_day outside the workload");
  }
  if (attacks.lateral_burst <= 0 || attacks.service_spread <= 0) invalid("attack spans must be positive");
}

std::string WorkloadConfig::to_json() const {
  ordered_json j;
  j["n_users"] = n_users;
  j["n_roles"] = n_roles;
  j["n_resources"] = n_resources;
  j["duration_days"] = duration_days;
  j["events_per_user_day"] = events_per_user_day;
  j["diurnal_amplitude"] = diurnal_amplitude;
  j["second_role_probability"] = second_role_probability;
  j["territory_overlap"] = territory_overlap;
  j["failure_rate"] = failure_rate;
  j["n_service_accounts"] = n_service_accounts;
  j["service_period_ms"] = service_period;
  j["start"] = start;
  j["seed"] = seed;
  j["drift"] = {{"day", drift.day}, {"fraction", drift.fraction}};
  ordered_json a;
  a["privilege_escalation"] = attacks.privilege_escalation;
  a["lateral_movement"] = attacks.lateral_movement;
  a["service_account_compromise"] = attacks.service_account_compromise;
  a["first_day"] = attacks.first_day;
  a["escalation_intensity"] = attacks.escalation_intensity;
  a["lateral_hops"] = attacks.lateral_hops;
  a["lateral_burst_ms"] = attacks.lateral_burst;
  a["service_intensity"] = attacks.service_intensity;
  a["service_spread_ms"] = attacks.service_spread;
  j["attacks"] = a;
  return j.dump(2);
}

WorkloadConfig WorkloadConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    invalid(std::string("workload config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) invalid("workload config must be a JSON object");
  reject_unknown(j,
                 {"n_users", "n_roles", "n_resources", "duration_days", "events_per_user_day", "diurnal_amplitude",
                  "second_role_probability", "territory_overlap", "failure_rate", "n_service_accounts",
                  "service_period_ms", "start", "seed", "drift", "attacks"},
                 "workload");
  WorkloadConfig c;
  c.n_users = get_u64(j, "n_users", c.n_users);
  c.n_roles = get_u64(j, "n_roles", c.n_roles);
  c.n_resources = get_u64(j, "n_resources", c.n_resources);
  c.duration_days = static_cast<int>(get_i64(j, "duration_days", c.duration_days));
  c.events_per_user_day = get_f64(j, "events_per_user_day", c.events_per_user_day);
  c.diurnal_amplitude = get_f64(j, "diurnal_amplitude", c.diurnal_amplitude);
  c.second_role_probability = get_f64(j, "second_role_probability", c.second_role_probability);
  c.territory_overlap = get_f64(j, "territory_overlap", c.territory_overlap);
  c.failure_rate = get_f64(j, "failure_rate", c.failure_rate);
  c.n_service_accounts = get_u64(j, "n_service_accounts", c.n_service_accounts);
  c.service_period = get_i64(j, "service_period_ms", c.service_period);
  c.start = get_i64(j, "start", c.start);
  c.seed = get_u64(j, "seed", c.seed);
  if (auto it = j.find("drift"); it != j.end()) {
    if (!it->is_object()) invalid("drift must be an object");
    reject_unknown(*it, {"day", "fraction"}, "drift");
    c.drift.day = static_cast<int>(get_i64(*it, "day", c.drift.day));
    c.drift.fraction = get_f64(*it, "fraction", c.drift.fraction);
  }
  if (auto it = j.find("attacks"); it != j.end()) {
    if (!it->is_object()) invalid("attacks must be an object");
    const json& a = *it;
    reject_unknown(a,
                   {"privilege_escalation", "lateral_movement", "service_account_compromise", "first_day",
                    "escalation_intensity", "lateral_hops", "lateral_burst_ms", "service_intensity",
                    "service_spread_ms"},
                   "attacks");
    c.attacks.privilege_escalation = get_u64(a, "privilege_escalation", c.attacks.privilege_escalation);
    c.attacks.lateral_movement = get_u64(a, "lateral_movement", c.attacks.lateral_movement);
    c.attacks.service_account_compromise =
        get_u64(a, "service_account_compromise", c.attacks.service_account_compromise);
    c.attacks.first_day = static_cast<int>(get_i64(a, "first_day", c.attacks.first_day));
    c.attacks.escalation_intensity = get_u64(a, "escalation_intensity", c.attacks.escalation_intensity);
    c.attacks.lateral_hops = get_u64(a, "lateral_hops", c.attacks.lateral_hops);
    c.attacks.lateral_burst = get_i64(a, "lateral_burst_ms", c.attacks.lateral_burst);
    c.attacks.service_intensity = get_u64(a, "service_intensity", c.attacks.service_intensity);
    c.attacks.service_spread = get_i64(a, "service_spread_ms", c.attacks.service_spread);
  }
  c.validate();
  return c;
}

WorkloadConfig WorkloadConfig::desk_scale() {
  WorkloadConfig c;
  c.attacks.privilege_escalation = 14;
  c.attacks.lateral_movement = 14;
  c.attacks.service_account_compromise = 2;
  return c;
}

std::size_t LabeledStream::malicious_count() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](std::uint8_t l) { return l != 0; }));
}

std::vector<std::size_t> LabeledStream::malicious_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0) out.push_back(i);
  }
  return out;
}

std::map<std::size_t, ScenarioKind> LabeledStream::scenario_tags() const {
  std::map<std::size_t, ScenarioKind> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 1 && labels[i] <= 3) out.emplace(i, static_cast<ScenarioKind>(labels[i]));
  }
  return out;
}

const ServiceAccount* Assignment::service_account(std::string_view name) const {
  for (const auto& s : service_accounts) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::optional<std::vector<std::size_t>> Assignment::baseline_roles(std::string_view actor) const {
  if (const ServiceAccount* s = service_account(actor)) return std::vector<std::size_t>{s->role};
  auto it = std::find(users.begin(), users.end(), actor);
  if (it == users.end()) return std::nullopt;
  const auto u = static_cast<std::size_t>(it - users.begin());
  std::vector<std::size_t> out = user_roles[u];
  out.insert(out.end(), drifted_roles[u].begin(), drifted_roles[u].end());
  sorted_unique(out);
  return out;
}

std::optional<std::vector<std::size_t>> Assignment::baseline_resources(std::string_view actor) const {
  if (const ServiceAccount* s = service_account(actor)) return s->resources;
  auto roles = baseline_roles(actor);
  if (!roles) return std::nullopt;
  std::vector<std::size_t> out;
  for (std::size_t r : *roles) out.insert(out.end(), territories[r].begin(), territories[r].end());
  sorted_unique(out);
  return out;
}

Assignment make_assignment(const WorkloadConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Assignment a;
  for (std::size_t i = 0; i < config.n_users; ++i) a.users.push_back(padded("user-", i, config.n_users));
  for (std::size_t i = 0; i < config.n_roles; ++i) a.roles.push_back(padded("role-", i, config.n_roles));
  for (std::size_t i = 0; i < config.n_resources; ++i) a.resources.push_back(padded("res-", i, config.n_resources));

  // Contiguous blocks, every role non-empty, plus random cross-assignments.
  a.territories.assign(config.n_roles, {});
  for (std::size_t res = 0; res < config.n_resources; ++res) {
    a.territories[res * config.n_roles / config.n_resources].push_back(res);
  }
  for (std::size_t r = 0; r < config.n_roles; ++r) {
    if (a.territories[r].empty()) a.territories[r].push_back(r % config.n_resources);
  }
  if (config.n_roles > 1) {
    for (std::size_t res = 0; res < config.n_resources; ++res) {
      if (!rng.bernoulli(config.territory_overlap)) continue;
      const std::size_t home = res * config.n_roles / config.n_resources;
      std::size_t other = rng.uniform_index(config.n_roles - 1);
      if (other >= home) ++other;
      a.territories[other].push_back(res);
    }
  }
  for (auto& t : a.territories) sorted_unique(t);

  // Primary roles dealt round-robin over a shuffled order so every role is used.
  std::vector<std::size_t> order(config.n_users);
  std::iota(order.begin(), order.end(), std::size_t{0});
  order = shuffled(std::move(order), rng);
  a.user_roles.assign(config.n_users, {});
  for (std::size_t k = 0; k < order.size(); ++k) a.user_roles[order[k]].push_back(k % config.n_roles);
  for (std::size_t u = 0; u < config.n_users; ++u) {
    if (config.n_roles > 1 && rng.bernoulli(config.second_role_probability)) {
      std::size_t second = rng.uniform_index(config.n_roles - 1);
      if (second >= a.user_roles[u][0]) ++second;
      a.user_roles[u].push_back(second);
    }
  }

  a.drifted_roles = a.user_roles;
  if (config.drift.day >= 0 && config.n_roles > 1) {
    const auto moved = static_cast<std::size_t>(std::llround(config.drift.fraction * config.n_users));
    std::vector<std::size_t> pick(config.n_users);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    pick = shuffled(std::move(pick), rng);
    for (std::size_t k = 0; k < moved && k < pick.size(); ++k) {
      auto& roles = a.drifted_roles[pick[k]];
      std::vector<std::size_t> candidates;
      for (std::size_t r = 0; r < config.n_roles; ++r) {
        if (std::find(roles.begin(), roles.end(), r) == roles.end()) candidates.push_back(r);
      }
      if (!candidates.empty()) roles[0] = candidates[rng.uniform_index(candidates.size())];
    }
  }

  for (std::size_t s = 0; s < config.n_service_accounts; ++s) {
    ServiceAccount acct;
    acct.name = padded("svc-", s, config.n_service_accounts);
    acct.role = rng.uniform_index(config.n_roles);
    std::vector<std::size_t> pool = shuffled(a.territories[acct.role], rng);
    pool.resize(std::min<std::size_t>(3, pool.size()));
    std::sort(pool.begin(), pool.end());
    acct.resources = std::move(pool);
    a.service_accounts.push_back(std::move(acct));
  }
  return a;
}

Baseline generate_baseline(const WorkloadConfig& config) {
  Baseline out;
  out.assignment = make_assignment(config);
  const Assignment& a = out.assignment;
  // Generation streams are independent of the assignment draws.
  Rng master(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<NormalizedEvent> events;

  const TimeMs drift_at =
      config.drift.day >= 0 ? config.start + static_cast<TimeMs>(config.drift.day) * kDayMs : config.end();
  std::vector<std::vector<double>> role_mix(config.n_roles);
  for (auto& mix : role_mix) {
    mix.resize(kBaselineActions.size());
    for (std::size_t k = 0; k < mix.size(); ++k) mix[k] = kBaselineWeights[k] * master.uniform(0.5, 1.5);
  }

  const double pi = std::acos(-1.0);
  for (std::size_t u = 0; u < config.n_users; ++u) {
    Rng rng = master.fork();
    std::vector<double> pref(config.n_resources);
    for (double& p : pref) p = rng.uniform(0.5, 1.5);
    for (int day = 0; day < config.duration_days; ++day) {
      const std::string session = a.users[u] + "-d" + std::to_string(day);
      for (int hour = 0; hour < 24; ++hour) {
        // Peak at 12:00 UTC, trough at midnight.
        const double shape = 1.0 + config.diurnal_amplitude * std::sin(2.0 * pi * (hour - 6) / 24.0);
        const std::uint64_t n = rng.poisson(config.events_per_user_day / 24.0 * shape);
        const TimeMs hour_start = config.start + static_cast<TimeMs>(day) * kDayMs + hour * kHourMs;
        for (std::uint64_t k = 0; k < n; ++k) {
          const TimeMs t = hour_start + static_cast<TimeMs>(rng.uniform_index(kHourMs));
          const auto& roles = t >= drift_at ? a.drifted_roles[u] : a.user_roles[u];
          const std::size_t role = roles.size() > 1 && rng.bernoulli(0.3) ? roles[1] : roles[0];
          const auto& territory = a.territories[role];
          std::vector<double> w(territory.size());
          for (std::size_t i = 0; i < territory.size(); ++i) w[i] = pref[territory[i]];
          const std::size_t res = territory[rng.categorical(w)];
          const ActionDef& act = kBaselineActions[rng.categorical(role_mix[role])];
          NormalizedEvent e = make_event(t, a.users[u], a.roles[role], a.resources[res], act, session);
          if (rng.bernoulli(config.failure_rate)) e.result = rng.bernoulli(0.5) ? ingest::Result::failure
                                                                                 : ingest::Result::denied;
          events.push_back(std::move(e));
        }
      }
    }
  }

  for (const ServiceAccount& s : a.service_accounts) {
    Rng rng = master.fork();
    TimeMs t = config.start + static_cast<TimeMs>(rng.uniform_index(static_cast<std::uint64_t>(config.service_period)));
    std::size_t k = 0;
    const auto jitter = static_cast<double>(config.service_period) * 0.01;
    for (; t < config.end(); t += config.service_period, ++k) {
      const TimeMs at = t + static_cast<TimeMs>(std::llround(rng.uniform(-jitter, jitter)));
      if (at < config.start || at >= config.end()) continue;
      const ActionDef& act = kServiceActions[rng.categorical(kServiceWeights)];
      events.push_back(make_event(at, s.name, a.roles[s.role], a.resources[s.resources[k % s.resources.size()]], act,
                                  s.name + "-daemon"));
    }
  }

  auto normalized = ingest::normalize_events(std::move(events));
  out.stream.events = std::move(normalized.events);
  out.stream.labels.assign(out.stream.events.size(), 0);
  return out;
}

LabeledStream inject_privilege_escalation(const LabeledStream& stream, const Assignment& a, const WorkloadConfig& c,
                                          const ScenarioSpec& spec, std::vector<std::size_t>* inserted) {
  const auto held = a.baseline_roles(spec.actor);
  if (!held) throw SynthError(SynthErrorKind::unknown_actor, "unknown actor " + spec.actor);
  check_spec(spec, c);
  if (spec.intensity == 0) {
    if (inserted) inserted->clear();
    return stream;
  }
  Rng rng(spec.seed);
  std::vector<std::size_t> foreign;
  for (std::size_t r = 0; r < a.roles.size(); ++r) {
    if (!std::binary_search(held->begin(), held->end(), r)) foreign.push_back(r);
  }
  if (foreign.empty()) invalid(spec.actor + " already holds every role");
  const std::size_t role = foreign[rng.uniform_index(foreign.size())];
  const auto own = *a.baseline_resources(spec.actor);
  std::vector<std::size_t> targets;
  for (std::size_t res : a.territories[role]) {
    if (!std::binary_search(own.begin(), own.end(), res)) targets.push_back(res);
  }
  if (targets.empty()) targets = a.territories[role];
  targets = shuffled(std::move(targets), rng);

  std::vector<NormalizedEvent> added;
  TimeMs t = spec.start;
  const std::string session = spec.actor + "-esc-" + std::to_string(spec.start);
  for (std::size_t k = 0; k < spec.intensity; ++k) {
    if (k > 0) t += 30 * kSecondMs + static_cast<TimeMs>(rng.uniform_index(60 * kSecondMs));
    const ActionDef& act = kAdminActions[rng.uniform_index(kAdminActions.size())];
    added.push_back(make_event(t, spec.actor, a.roles[role], a.resources[targets[k % targets.size()]], act, session));
  }
  check_end(t, c);
  return merge(stream, std::move(added), static_cast<std::uint8_t>(ScenarioKind::privilege_escalation), inserted);
}

LabeledStream inject_lateral_movement(const LabeledStream& stream, const Assignment& a, const WorkloadConfig& c,
                                      const ScenarioSpec& spec, std::vector<std::size_t>* inserted) {
  const auto held = a.baseline_roles(spec.actor);
  if (!held) throw SynthError(SynthErrorKind::unknown_actor, "unknown actor " + spec.actor);
  check_spec(spec, c);
  if (spec.intensity == 0) {
    if (inserted) inserted->clear();
    return stream;
  }
  Rng rng(spec.seed);
  const DurationMs burst = spec.span > 0 ? spec.span : c.attacks.lateral_burst;
  if (static_cast<std::uint64_t>(burst) < spec.intensity) invalid("burst too short for the hop count");
  const auto own = *a.baseline_resources(spec.actor);

  // Territories the actor has no business in, each with an unseen resource.
  std::vector<std::vector<std::size_t>> pools;
  for (std::size_t r = 0; r < a.roles.size(); ++r) {
    if (std::binary_search(held->begin(), held->end(), r)) continue;
    std::vector<std::size_t> pool;
    for (std::size_t res : a.territories[r]) {
      if (!std::binary_search(own.begin(), own.end(), res)) pool.push_back(res);
    }
    if (!pool.empty()) pools.push_back(shuffled(std::move(pool), rng));
  }
  const std::size_t want = std::min<std::size_t>(3, spec.intensity);
  if (pools.size() < want) invalid(spec.actor + " has too few foreign territories for a lateral chain");
  std::vector<std::size_t> pool_order(pools.size());
  std::iota(pool_order.begin(), pool_order.end(), std::size_t{0});
  pool_order = shuffled(std::move(pool_order), rng);

  std::vector<std::size_t> chain;
  std::set<std::size_t> used;
  auto take_from = [&](std::size_t p) -> bool {
    for (std::size_t res : pools[p]) {
      if (used.insert(res).second) {
        chain.push_back(res);
        return true;
      }
    }
    return false;
  };
  // First hops cover `want` distinct territories, then round-robin with
  // repeats allowed once every foreign resource is used.
  for (std::size_t k = 0; k < want; ++k) {
    bool ok = false;
    for (std::size_t p = k; p < pool_order.size() && !ok; ++p) {
      if (take_from(pool_order[p])) {
        std::swap(pool_order[k], pool_order[p]);
        ok = true;
      }
    }
    if (!ok) invalid(spec.actor + " has too few foreign resources for a lateral chain");
  }
  for (std::size_t k = want; k < spec.intensity; ++k) {
    bool ok = false;
    for (std::size_t step = 0; step < pool_order.size() && !ok; ++step) {
      ok = take_from(pool_order[(k + step) % pool_order.size()]);
    }
    if (!ok) chain.push_back(chain[k % want]);
  }

  std::set<TimeMs> offsets;
  while (offsets.size() < spec.intensity) offsets.insert(static_cast<TimeMs>(rng.uniform_index(burst)));
  const std::size_t role = (*held)[0];
  const std::string session = spec.actor + "-lat-" + std::to_string(spec.start);
  std::vector<NormalizedEvent> added;
  std::size_t k = 0;
  TimeMs last = spec.start;
  for (TimeMs off : offsets) {
    last = spec.start + off;
    const ActionDef& act = kLateralActions[rng.categorical(kLateralWeights)];
    added.push_back(make_event(last, spec.actor, a.roles[role], a.resources[chain[k++]], act, session));
  }
  check_end(last, c);
  return merge(stream, std::move(added), static_cast<std::uint8_t>(ScenarioKind::lateral_movement), inserted);
}

LabeledStream inject_service_account_compromise(const LabeledStream& stream, const Assignment& a,
                                                const WorkloadConfig& c, const ScenarioSpec& spec,
                                                std::vector<std::size_t>* inserted) {
  const ServiceAccount* acct = a.service_account(spec.actor);
  if (!acct) {
    throw SynthError(SynthErrorKind::unknown_actor, spec.actor + " is not a service account");
  }
  check_spec(spec, c);
  if (spec.intensity == 0) {
    if (inserted) inserted->clear();
    return stream;
  }
  Rng rng(spec.seed);
  std::vector<std::size_t> outside;
  for (std::size_t res = 0; res < a.resources.size(); ++res) {
    if (!std::binary_search(acct->resources.begin(), acct->resources.end(), res)) outside.push_back(res);
  }
  if (outside.empty()) invalid(spec.actor + " can already reach every resource");
  const DurationMs spread = spec.span > 0 ? spec.span : c.attacks.service_spread;
  const double mean_gap = static_cast<double>(spread) / static_cast<double>(spec.intensity);

  std::vector<NormalizedEvent> added;
  TimeMs t = spec.start;
  const std::string session = spec.actor + "-x-" + std::to_string(spec.start);
  for (std::size_t k = 0; k < spec.intensity; ++k) {
    if (k > 0) t += 1 + static_cast<TimeMs>(std::llround(rng.exponential(mean_gap)));
    const ActionDef& act = kCompromiseActions[rng.uniform_index(kCompromiseActions.size())];
    added.push_back(make_event(t, spec.actor, a.roles[acct->role], a.resources[outside[rng.uniform_index(outside.size())]],
                               act, session));
  }
  check_end(t, c);
  return merge(stream, std::move(added), static_cast<std::uint8_t>(ScenarioKind::service_account_compromise),
               inserted);
}

LabeledStream inject(const LabeledStream& stream, const Assignment& a, const WorkloadConfig& c,
                     const ScenarioSpec& spec, std::vector<std::size_t>* inserted) {
  switch (spec.kind) {
    case ScenarioKind::privilege_escalation: return inject_privilege_escalation(stream, a, c, spec, inserted);
    case ScenarioKind::lateral_movement: return inject_lateral_movement(stream, a, c, spec, inserted);
    case ScenarioKind::service_account_compromise:
      return inject_service_account_compromise(stream, a, c, spec, inserted);
  }
  invalid("unknown scenario kind");
}

std::vector<ScenarioSpec> plan_attacks(const Assignment& a, const WorkloadConfig& c) {
  Rng rng(c.seed ^ kPlanSalt);
  const AttackPlan& p = c.attacks;
  const TimeMs from = c.start + static_cast<TimeMs>(p.first_day) * kDayMs;
  std::vector<ScenarioSpec> plan;
  std::vector<std::size_t> humans;
  auto next_human = [&]() -> const std::string& {
    if (humans.empty()) {
      humans.resize(a.users.size());
      std::iota(humans.begin(), humans.end(), std::size_t{0});
      humans = shuffled(std::move(humans), rng);
    }
    const std::size_t u = humans.back();
    humans.pop_back();
    return a.users[u];
  };
  auto start_before = [&](DurationMs room) {
    const TimeMs last = c.end() - room;
    if (last <= from) invalid("attack window too short");
    return from + static_cast<TimeMs>(rng.uniform_index(static_cast<std::uint64_t>(last - from)));
  };
  for (std::size_t i = 0; i < p.privilege_escalation; ++i) {
    ScenarioSpec s;
    s.kind = ScenarioKind::privilege_escalation;
    s.actor = next_human();
    s.intensity = p.escalation_intensity;
    s.start = start_before(kHourMs);
    s.seed = rng.next_u64();
    plan.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < p.lateral_movement; ++i) {
    ScenarioSpec s;
    s.kind = ScenarioKind::lateral_movement;
    s.actor = next_human();
    s.intensity = p.lateral_hops;
    s.span = p.lateral_burst;
    s.start = start_before(p.lateral_burst + kMinuteMs);
    s.seed = rng.next_u64();
    plan.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < p.service_account_compromise; ++i) {
    ScenarioSpec s;
    s.kind = ScenarioKind::service_account_compromise;
    s.actor = a.service_accounts[i % a.service_accounts.size()].name;
    s.intensity = p.service_intensity;
    s.span = p.service_spread;
    // Exponential gaps can overrun the nominal spread; leave twice the room.
    s.start = start_before(2 * p.service_spread);
    s.seed = rng.next_u64();
    plan.push_back(std::move(s));
  }
  return plan;
}

Dataset generate(const WorkloadConfig& config) {
  Baseline base = generate_baseline(config);
  Dataset d;
  d.config = config;
  d.assignment = std::move(base.assignment);
  d.stream = std::move(base.stream);
  d.scenarios = plan_attacks(d.assignment, config);
  for (const auto& s : d.scenarios) d.stream = inject(d.stream, d.assignment, config, s);
  return d;
}

std::string events_jsonl(const LabeledStream& stream) {
  std::string out;
  for (const auto& e : stream.events) {
    out += ingest::to_generic_json(e);
    out += '\n';
  }
  return out;
}

std::string events_fingerprint(const LabeledStream& stream) { return sha256_hex(events_jsonl(stream)); }

void write_labeled_jsonl(const LabeledStream& stream, const std::filesystem::path& dir,
                         const WorkloadConfig* config) {
  if (stream.labels.size() != stream.events.size()) invalid("label count differs from event count");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw SynthError(SynthErrorKind::io_error, "cannot create " + dir.string() + ": " + ec.message());
  const std::string events = events_jsonl(stream);
  std::string labels;
  for (std::size_t i = 0; i < stream.labels.size(); ++i) {
    if (stream.labels[i] == 0) continue;
    ordered_json j;
    j["index"] = i;
    j["scenario"] = std::string(label_code_name(stream.labels[i]));
    j["user"] = stream.events[i].user_id;
    j["role"] = stream.events[i].role;
    j["resource"] = stream.events[i].resource;
    j["ts"] = stream.events[i].timestamp;
    labels += j.dump();
    labels += '\n';
  }
  ordered_json meta;
  meta["format_version"] = 1;
  meta["events"] = stream.events.size();
  meta["malicious"] = stream.malicious_count();
  meta["events_sha256"] = sha256_hex(events);
  meta["workload"] = config ? ordered_json::parse(config->to_json()) : ordered_json(nullptr);
  try {
    write_file_atomic(dir / kEventsFile, events);
    write_file_atomic(dir / kLabelsFile, labels);
    write_file_atomic(dir / kMetaFile, meta.dump(2) + "\n");
  } catch (const FileError& e) {
    throw SynthError(SynthErrorKind::io_error, e.what());
  }
}

std::vector<std::uint8_t> read_labels_file(const std::filesystem::path& path, std::size_t event_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SynthError(SynthErrorKind::io_error, "cannot open " + path.string());
  std::vector<std::uint8_t> labels(event_count, 0);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw SynthError(SynthErrorKind::format_error, path.string() + ":" + std::to_string(n) + ": not JSON");
    }
    if (!j.is_object() || !j.contains("index") || !j["index"].is_number_unsigned() || !j.contains("scenario") ||
        !j["scenario"].is_string()) {
      throw SynthError(SynthErrorKind::format_error, path.string() + ":" + std::to_string(n) + ": bad label line");
    }
    const auto index = j["index"].get<std::size_t>();
    if (index >= event_count) {
      throw SynthError(SynthErrorKind::format_error, path.string() + ":" + std::to_string(n) + ": index out of range");
    }
    const auto name = j["scenario"].get<std::string>();
    const auto kind = scenario_from_string(name);
    labels[index] = kind ? static_cast<std::uint8_t>(*kind) : std::uint8_t{255};
  }
  return labels;
}

LabeledStream read_labeled_jsonl(const std::filesystem::path& dir) {
  LabeledStream s;
  std::size_t rejected = 0;
  try {
    s.events = ingest::read_jsonl_file(dir / kEventsFile, ingest::Provider::generic, &rejected);
  } catch (const ingest::IoError& e) {
    throw SynthError(SynthErrorKind::io_error, e.what());
  }
  if (rejected > 0) {
    throw SynthError(SynthErrorKind::format_error, std::to_string(rejected) + " unreadable event lines");
  }
  s.labels = read_labels_file(dir / kLabelsFile, s.events.size());
  const auto meta_path = dir / kMetaFile;
  if (std::filesystem::exists(meta_path)) {
    json meta;
    try {
      meta = json::parse(read_file(meta_path));
    } catch (const json::parse_error&) {
      throw SynthError(SynthErrorKind::format_error, "meta.json is not JSON");
    }
    if (meta.value("events", std::size_t{0}) != s.events.size()) {
      throw SynthError(SynthErrorKind::format_error, "meta.json event count does not match");
    }
  }
  return s;
}

double interarrival_cv(const std::vector<TimeMs>& times) {
  if (times.size() < 3) return 0.0;
  std::vector<double> gaps;
  for (std::size_t i = 1; i < times.size(); ++i) gaps.push_back(static_cast<double>(times[i] - times[i - 1]));
  const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (double g : gaps) var += (g - mean) * (g - mean);
  var /= static_cast<double>(gaps.size());
  return std::sqrt(var) / mean;
}

}  // namespace sentinel::synth
