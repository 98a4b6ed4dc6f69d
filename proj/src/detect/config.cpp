#include "sentinel/detect/config.hpp"

#include <charconv>
#include <cmath>
#include <json.hpp>

#include "sentinel/common/hash.hpp"

namespace sentinel::detect {

namespace {

[[noreturn]] void bad(std::string_view key, std::string_view value) {
  throw DetectError(DetectErrorKind::invalid_config,
                    "invalid value '" + std::string(value) + "' for " + std::string(key));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v);
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v);
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(std::string(v), &used);
    if (used != v.size() || !std::isfinite(d)) bad(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad(key, v);
  }
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, v);
}

DurationMs to_duration(std::string_view key, std::string_view v) {
  const auto d = parse_duration(v);
  if (!d) bad(key, v);
  return *d;
}

std::string duration_text(DurationMs d) { return std::to_string(d) + "ms"; }

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t x : v) {
    if (!s.empty()) s += ',';
    s += std::to_string(x);
  }
  return s;
}

}  // namespace

void DetectorConfig::apply_mode(std::string_view mode) {
  if (mode == "strict") {
    model.edge_weight_logits = false;
    probes_per_node = 0;
  } else if (mode == "extended") {
    model.edge_weight_logits = true;
    probes_per_node = 1;
  } else {
    bad("mode", mode);
  }
}

void DetectorConfig::set(std::string_view key, std::string_view value) {
  if (key == "mode") {
    apply_mode(value);
  } else if (key == "window") {
    window = to_duration(key, value);
  } else if (key == "half_life") {
    half_life = to_duration(key, value);
  } else if (key == "hidden") {
    hidden.clear();
    std::size_t start = 0;
    while (start <= value.size()) {
      const std::size_t comma = std::min(value.find(',', start), value.size());
      hidden.push_back(to_size(key, value.substr(start, comma - start)));
      start = comma + 1;
    }
  } else if (key == "attention") {
    if (value == "learned") {
      model.attention = gnn::AttentionMode::learned;
    } else if (value == "uniform") {
      model.attention = gnn::AttentionMode::uniform;
    } else {
      bad(key, value);
    }
  } else if (key == "edge_weight_logits") {
    model.edge_weight_logits = to_bool(key, value);
  } else if (key == "bidirectional") {
    model.bidirectional = to_bool(key, value);
  } else if (key == "leaky_slope") {
    model.leaky_slope = to_double(key, value);
  } else if (key == "probes_per_node") {
    probes_per_node = to_size(key, value);
  } else if (key == "role_context") {
    if (value == "users_only") {
      role_context = graph::RoleContext::users_only;
    } else if (value == "all_nodes") {
      role_context = graph::RoleContext::all_nodes;
    } else {
      bad(key, value);
    }
  } else if (key == "quantile") {
    quantile = to_double(key, value);
  } else if (key == "benign_capacity") {
    benign_capacity = to_size(key, value);
  } else if (key == "tau_initial") {
    tau_initial = to_double(key, value);
  } else if (key == "buffer_capacity") {
    buffer_capacity = to_size(key, value);
  } else if (key == "lambda_malicious") {
    feedback.lambda_malicious = to_double(key, value);
  } else if (key == "lambda_benign") {
    feedback.lambda_benign = to_double(key, value);
  } else if (key == "recency_half_life") {
    feedback.recency_half_life = to_duration(key, value);
  } else if (key == "adaptive") {
    adaptive = to_bool(key, value);
  } else if (key == "retrain_every") {
    retrain_every = to_size(key, value);
  } else if (key == "retrain_on_feedback") {
    retrain_on_feedback = to_size(key, value);
  } else if (key == "retrain_epochs") {
    retrain_epochs = to_size(key, value);
  } else if (key == "retrain_lr") {
    retrain_lr = to_double(key, value);
  } else if (key == "recent_snapshots") {
    recent_snapshots = to_size(key, value);
  } else if (key == "pretrain_epochs") {
    pretrain_epochs = to_size(key, value);
  } else if (key == "pretrain_lr") {
    pretrain_lr = to_double(key, value);
  } else if (key == "calibration_fraction") {
    calibration_fraction = to_double(key, value);
  } else if (key == "target_fraction") {
    target_fraction = to_double(key, value);
  } else if (key == "negatives") {
    negatives = to_size(key, value);
  } else if (key == "max_pending_contexts") {
    max_pending_contexts = to_size(key, value);
  } else if (key == "seed") {
    seed = to_u64(key, value);
  } else {
    throw DetectError(DetectErrorKind::invalid_config, "unknown detector option " + std::string(key));
  }
}

void DetectorConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw DetectError(DetectErrorKind::invalid_config, what);
  };
  require(window > 0, "window must be positive");
  require(half_life > 0, "half_life must be positive");
  require(feedback.recency_half_life > 0, "recency_half_life must be positive");
  require(!hidden.empty(), "hidden needs at least one layer");
  for (std::size_t h : hidden) require(h > 0, "hidden sizes must be positive");
  require(quantile > 0.0 && quantile < 1.0, "quantile must lie in (0, 1)");
  require(tau_initial > 0.0 && tau_initial < 1.0, "tau_initial must lie in (0, 1)");
  require(benign_capacity > 0, "benign_capacity must be positive");
  require(buffer_capacity > 0, "buffer_capacity must be positive");
  require(feedback.lambda_malicious >= 0.0 && feedback.lambda_benign >= 0.0, "lambda must be non-negative");
  require(retrain_every > 0 && retrain_on_feedback > 0, "retrain triggers must be positive");
  require(retrain_lr > 0.0 && pretrain_lr > 0.0, "learning rates must be positive");
  require(calibration_fraction >= 0.0 && calibration_fraction < 1.0, "calibration_fraction must lie in [0, 1)");
  require(target_fraction >= 0.0 && target_fraction <= 1.0, "target_fraction must lie in [0, 1]");
  require(model.leaky_slope >= 0.0 && model.leaky_slope < 1.0, "leaky_slope must lie in [0, 1)");
}

std::string DetectorConfig::to_json() const {
  nlohmann::ordered_json j;
  j["window"] = duration_text(window);
  j["half_life"] = duration_text(half_life);
  j["hidden"] = join(hidden);
  j["attention"] = model.attention == gnn::AttentionMode::learned ? "learned" : "uniform";
  j["edge_weight_logits"] = model.edge_weight_logits;
  j["bidirectional"] = model.bidirectional;
  j["leaky_slope"] = model.leaky_slope;
  j["probes_per_node"] = probes_per_node;
  j["role_context"] = role_context == graph::RoleContext::all_nodes ? "all_nodes" : "users_only";
  j["quantile"] = quantile;
  j["benign_capacity"] = benign_capacity;
  j["tau_initial"] = tau_initial;
  j["buffer_capacity"] = buffer_capacity;
  j["lambda_malicious"] = feedback.lambda_malicious;
  j["lambda_benign"] = feedback.lambda_benign;
  j["recency_half_life"] = duration_text(feedback.recency_half_life);
  j["adaptive"] = adaptive;
  j["retrain_every"] = retrain_every;
  j["retrain_on_feedback"] = retrain_on_feedback;
  j["retrain_epochs"] = retrain_epochs;
  j["retrain_lr"] = retrain_lr;
  j["recent_snapshots"] = recent_snapshots;
  j["pretrain_epochs"] = pretrain_epochs;
  j["pretrain_lr"] = pretrain_lr;
  j["calibration_fraction"] = calibration_fraction;
  j["target_fraction"] = target_fraction;
  j["negatives"] = negatives;
  j["max_pending_contexts"] = max_pending_contexts;
  j["seed"] = seed;
  return j.dump(2);
}

DetectorConfig DetectorConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DetectError(DetectErrorKind::invalid_config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DetectError(DetectErrorKind::invalid_config, "config must be a JSON object");
  DetectorConfig c;
  // mode first so explicit keys override it
  if (auto it = j.find("mode"); it != j.end()) c.set("mode", it->get<std::string>());
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") continue;
    if (value.is_string()) {
      c.set(key, value.get<std::string>());
    } else if (value.is_boolean()) {
      c.set(key, value.get<bool>() ? "true" : "false");
    } else if (value.is_number_unsigned() || value.is_number_integer()) {
      c.set(key, std::to_string(value.get<std::int64_t>()));
    } else if (value.is_number_float()) {
      nlohmann::json tmp = value;
      c.set(key, tmp.dump());
    } else if (value.is_array() && key == "hidden") {
      std::vector<std::size_t> h = value.get<std::vector<std::size_t>>();
      c.hidden = h;
    } else {
      throw DetectError(DetectErrorKind::invalid_config, "unsupported value for " + key);
    }
  }
  c.validate();
  return c;
}

std::string DetectorConfig::fingerprint() const { return sha256_hex(to_json()); }

}  // namespace sentinel::detect
