#include "sentinel/detect/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sentinel/common/hash.hpp"
#include "sentinel/common/labels.hpp"

namespace sentinel::detect {

using graph::GraphSnapshot;
using graph::NodeKind;

std::string_view to_string(Origin o) { return o == Origin::observed ? "observed" : "probe"; }

std::string_view to_string(AlertStatus s) {
  switch (s) {
    case AlertStatus::pending: return "pending";
    case AlertStatus::benign: return "benign";
    case AlertStatus::malicious: return "malicious";
  }
  return "pending";
}

std::optional<AlertStatus> alert_status_from_string(std::string_view s) {
  if (s == "pending") return AlertStatus::pending;
  if (s == "benign") return AlertStatus::benign;
  if (s == "malicious") return AlertStatus::malicious;
  return std::nullopt;
}

std::optional<Label> label_from_string(std::string_view s) {
  if (s == "benign") return Label::benign;
  if (s == "malicious") return Label::malicious;
  return std::nullopt;
}

std::vector<AnomalyScoreRecord> score_snapshot(const GraphSnapshot& snapshot, const gnn::ParamSet& params,
                                               const gnn::ModelOptions& options, std::size_t probes_per_node,
                                               Rng* rng) {
  if (snapshot.features.cols() != params.input_dim() || snapshot.features.rows() != snapshot.size()) {
    throw DetectError(DetectErrorKind::dimension_mismatch,
                      "snapshot features have " + std::to_string(snapshot.features.cols()) +
                          " columns, model expects " + std::to_string(params.input_dim()));
  }
  if (probes_per_node > 0 && rng == nullptr) {
    throw DetectError(DetectErrorKind::invalid_config, "probe scoring needs a generator");
  }
  std::vector<AnomalyScoreRecord> out;
  if (snapshot.size() == 0) return out;

  const gnn::Adjacency adj = gnn::make_adjacency(snapshot, options);
  const gnn::Encoding enc = gnn::encode(snapshot.features, adj, params, options);
  const Matrix& z = enc.embeddings();

  const auto& edges = snapshot.edges;
  for (std::size_t k = 0; k < edges.size();) {
    const std::uint32_t s = edges[k].src;
    const std::uint32_t d = edges[k].dst;
    AnomalyScoreRecord r;
    r.src = snapshot.nodes[s];
    r.dst = snapshot.nodes[d];
    r.src_index = s;
    r.dst_index = d;
    r.window_end = snapshot.window_end;
    for (; k < edges.size() && edges[k].src == s && edges[k].dst == d; ++k) {
      if (!r.action.empty()) r.action += ',';
      r.action += edges[k].action;
      if (snapshot.malicious) r.truth = std::max(r.truth, (*snapshot.malicious)[k]);
    }
    r.y_hat = gnn::decode_edge(z, s, d, params.w_out);
    r.y_observed = 1;
    r.score = 1.0 - r.y_hat;
    out.push_back(std::move(r));
  }

  if (probes_per_node == 0) return out;
  std::set<std::pair<std::uint32_t, std::uint32_t>> linked;
  for (const auto& e : edges) linked.emplace(e.src, e.dst);
  std::vector<std::uint32_t> targets;
  for (std::uint32_t i = 0; i < snapshot.size(); ++i) {
    if (snapshot.nodes[i].kind != NodeKind::user) targets.push_back(i);
  }
  if (targets.empty()) return out;
  for (std::uint32_t i = 0; i < snapshot.size(); ++i) {
    if (snapshot.nodes[i].kind != NodeKind::user) continue;
    for (std::size_t p = 0; p < probes_per_node; ++p) {
      for (int attempt = 0; attempt < 10; ++attempt) {
        const std::uint32_t j = targets[rng->uniform_index(targets.size())];
        if (linked.count({i, j})) continue;
        AnomalyScoreRecord r;
        r.src = snapshot.nodes[i];
        r.dst = snapshot.nodes[j];
        r.src_index = i;
        r.dst_index = j;
        r.window_end = snapshot.window_end;
        r.origin = Origin::probe;
        r.y_hat = gnn::decode_edge(z, i, j, params.w_out);
        r.y_observed = 0;
        r.score = r.y_hat;
        out.push_back(std::move(r));
        break;
      }
    }
  }
  return out;
}

void ThresholdState::push(double score) {
  if (capacity == 0) return;
  while (window.size() >= capacity) window.pop_front();
  window.push_back(score);
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

bool update_threshold(ThresholdState& state) {
  if (state.window.empty()) return false;
  const double q = empirical_quantile(std::vector<double>(state.window.begin(), state.window.end()), state.quantile);
  state.tau = std::clamp(q, kTauMin, kTauMax);
  return true;
}

std::string alert_id(const AnomalyScoreRecord& r) {
  std::string key;
  key += graph::to_string(r.src.kind);
  key += ':';
  key += r.src.name;
  key += '\n';
  key += graph::to_string(r.dst.kind);
  key += ':';
  key += r.dst.name;
  key += '\n';
  key += to_string(r.origin);
  key += '\n';
  key += std::to_string(r.window_end);
  return sha256_hex(key).substr(0, 20);
}

std::vector<Alert> flag(const std::vector<AnomalyScoreRecord>& records, ThresholdState& threshold) {
  std::vector<Alert> alerts;
  for (const auto& r : records) {
    if (r.score > threshold.tau) {
      Alert a;
      a.id = alert_id(r);
      a.record = r;
      a.tau = threshold.tau;
      a.created_at = r.window_end;
      if (r.truth != 0) a.scenario_tag = std::string(label_code_name(r.truth));
      alerts.push_back(std::move(a));
    } else {
      threshold.push(r.score);
    }
  }
  return alerts;
}

double feedback_weight(double lambda, TimeMs confirmed_at, TimeMs now, DurationMs half_life) {
  if (half_life <= 0) throw DetectError(DetectErrorKind::invalid_config, "recency half-life must be positive");
  const double age = static_cast<double>(std::max<TimeMs>(0, now - confirmed_at));
  return 1.0 + lambda * std::exp2(-age / static_cast<double>(half_life));
}

void FeedbackBuffer::push(FeedbackSample s) {
  if (capacity == 0) return;
  while (samples.size() >= capacity) samples.pop_front();
  samples.push_back(std::move(s));
}

void FeedbackBuffer::refresh_weights(TimeMs now, DurationMs half_life) {
  for (auto& s : samples) s.weight = feedback_weight(s.lambda, s.confirmed_at, now, half_life);
}

void record_feedback(FeedbackBuffer& buffer, Alert& alert, Label label, TimeMs confirmed_at, TimeMs now,
                     std::shared_ptr<const GraphSnapshot> context, const FeedbackPolicy& policy) {
  if (alert.status != AlertStatus::pending) {
    throw DetectError(DetectErrorKind::already_labeled, "alert " + alert.id + " is already " +
                                                            std::string(to_string(alert.status)));
  }
  alert.status = label == Label::malicious ? AlertStatus::malicious : AlertStatus::benign;
  alert.labeled_at = confirmed_at;
  if (!context) return;
  FeedbackSample s;
  s.context = std::move(context);
  s.src = alert.record.src_index;
  s.dst = alert.record.dst_index;
  const double observed = alert.record.y_observed;
  s.y = label == Label::benign ? observed : 1.0 - observed;
  s.lambda = label == Label::malicious ? policy.lambda_malicious : policy.lambda_benign;
  s.confirmed_at = confirmed_at;
  s.weight = feedback_weight(s.lambda, confirmed_at, now, policy.recency_half_life);
  s.alert_id = alert.id;
  buffer.push(std::move(s));
}

RetrainResult retrain(const gnn::ParamSet& params, gnn::AdamState& adam, const RetrainInputs& inputs,
                      std::size_t epochs, double lr, Rng& rng, const gnn::ModelOptions& options) {
  const bool has_buffer = inputs.buffer != nullptr && inputs.buffer->size() > 0;
  if (!has_buffer && inputs.recent.empty()) {
    throw DetectError(DetectErrorKind::nothing_to_train_on, "feedback buffer and snapshot history are empty");
  }
  // Context order: recent snapshots, then buffer contexts by first use.
  std::vector<const GraphSnapshot*> contexts;
  std::map<const GraphSnapshot*, std::size_t> slot;
  std::vector<bool> fresh;
  for (const auto& s : inputs.recent) {
    if (slot.emplace(s.get(), contexts.size()).second) {
      contexts.push_back(s.get());
      fresh.push_back(true);
    }
  }
  std::vector<std::vector<const FeedbackSample*>> samples(contexts.size());
  if (has_buffer) {
    for (const auto& s : inputs.buffer->samples) {
      if (!s.context) continue;
      auto [it, added] = slot.emplace(s.context.get(), contexts.size());
      if (added) {
        contexts.push_back(s.context.get());
        fresh.push_back(false);
        samples.emplace_back();
      }
      samples[it->second].push_back(&s);
    }
  }

  RetrainResult result;
  result.params = params;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t c = 0; c < contexts.size(); ++c) {
      const GraphSnapshot& snap = *contexts[c];
      gnn::EdgeBatch batch;
      if (fresh[c]) {
        const gnn::TrainingView view = gnn::make_training_view(snap, rng, inputs.negatives_per_positive,
                                                               inputs.target_fraction, options);
        const gnn::EdgeBatch& drawn = view.batch;
        for (std::size_t k = 0; k < drawn.size(); ++k) {
          const auto [i, j] = drawn.pairs[k];
          if (drawn.labels[k] == 1.0 && inputs.excluded != nullptr &&
              inputs.excluded->count({snap.nodes[i], snap.nodes[j]})) {
            continue;
          }
          batch.add(i, j, drawn.labels[k], drawn.weights[k]);
        }
      }
      for (const FeedbackSample* s : samples[c]) batch.add(s->src, s->dst, s->y, s->weight);
      if (batch.size() == 0) continue;
      std::set<std::pair<std::uint32_t, std::uint32_t>> hidden;
      if (inputs.target_fraction > 0.0) {
        std::set<std::pair<std::uint32_t, std::uint32_t>> linked;
        for (const auto& e : snap.edges) linked.emplace(e.src, e.dst);
        for (const auto& p : batch.pairs) {
          if (linked.count(p)) hidden.insert(p);
        }
      }
      const gnn::Adjacency adj = gnn::make_adjacency(snap, options, hidden);
      const gnn::Encoding enc = gnn::encode(snap.features, adj, result.params, options);
      const gnn::LossAndGrad lg = gnn::backward(adj, result.params, batch, enc, options);
      result.params = gnn::optimizer_step(result.params, lg.grads, adam, lr);
      epoch_loss += lg.loss;
      ++result.steps;
    }
    result.epoch_losses.push_back(epoch_loss);
  }
  return result;
}

}  // namespace sentinel::detect
