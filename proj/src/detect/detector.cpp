#include "sentinel/detect/detector.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sentinel::detect {

using graph::GraphSnapshot;
using ingest::NormalizedEvent;

namespace {

TimeMs window_floor(TimeMs t, DurationMs w) { return t - ((t % w) + w) % w; }

std::vector<std::size_t> model_dims(std::size_t input, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> dims{input};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  return dims;
}

}  // namespace

Detector::Detector(DetectorConfig config) : config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  threshold_.tau = config_.tau_initial;
  threshold_.quantile = config_.quantile;
  threshold_.capacity = config_.benign_capacity;
  buffer_.capacity = config_.buffer_capacity;
}

void Detector::initialize(std::vector<std::string> roles) {
  spec_ = graph::FeatureSpec::make(std::move(roles), {}, graph::VocabMode::frozen_ignore, config_.role_context);
  params_ = gnn::init_params(model_dims(spec_.dim(), config_.hidden), config_.seed);
  adam_ = gnn::AdamState::for_params(params_);
  initialized_ = true;
}

void Detector::require_initialized() const {
  if (!initialized_) throw DetectError(DetectErrorKind::not_initialized, "detector has no role vocabulary yet");
}

std::size_t Detector::pending_count() const {
  return static_cast<std::size_t>(std::count_if(alerts_.begin(), alerts_.end(),
                                                [](const Alert& a) { return a.status == AlertStatus::pending; }));
}

const Alert* Detector::find_alert(std::string_view id) const {
  auto it = alert_index_.find(std::string(id));
  return it == alert_index_.end() ? nullptr : &alerts_[it->second];
}

PretrainReport Detector::pretrain(std::span<const NormalizedEvent> events, std::span<const std::uint8_t> truth,
                                  TimeMs start, TimeMs end) {
  if (!truth.empty() && truth.size() != events.size()) {
    throw DetectError(DetectErrorKind::invalid_config, "label count differs from event count");
  }
  if (!initialized_) {
    std::set<std::string> roles;
    for (const auto& e : events) {
      if (e.timestamp >= start && e.timestamp < end) roles.insert(e.role);
    }
    initialize({roles.begin(), roles.end()});
  }
  const DurationMs w = config_.window;
  std::vector<std::shared_ptr<const GraphSnapshot>> snaps;
  std::size_t k = 0;
  while (k < events.size() && events[k].timestamp < start) ++k;
  while (k < events.size() && events[k].timestamp < end) {
    const TimeMs ws = std::max(window_floor(events[k].timestamp, w), window_floor(start, w));
    const TimeMs we = ws + w;
    std::size_t j = k;
    while (j < events.size() && events[j].timestamp < std::min(we, end)) ++j;
    if (events[k].timestamp < ws) throw DetectError(DetectErrorKind::out_of_order, "training events are not sorted");
    auto built = graph::build_snapshot(events.subspan(k, j - k), ws, we, spec_, &history_, config_.half_life,
                                       truth.empty() ? truth : truth.subspan(k, j - k));
    auto snap = std::make_shared<const GraphSnapshot>(std::move(built.snapshot));
    history_ = graph::merge_history(history_, *snap, config_.half_life);
    snaps.push_back(std::move(snap));
    k = j;
  }

  PretrainReport report;
  report.snapshots = snaps.size();
  std::size_t held_out = 0;
  if (snaps.size() >= 2) {
    held_out = static_cast<std::size_t>(std::llround(config_.calibration_fraction * static_cast<double>(snaps.size())));
    held_out = std::min(held_out, snaps.size() - 1);
  }
  const std::size_t fitted = snaps.size() - held_out;
  report.held_out = held_out;
  std::vector<std::size_t> order(fitted);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config_.pretrain_epochs && !snaps.empty(); ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.uniform_index(i)]);
    double loss = 0.0;
    for (std::size_t idx : order) {
      const GraphSnapshot& s = *snaps[idx];
      const gnn::TrainingView view =
          gnn::make_training_view(s, rng_, config_.negatives, config_.target_fraction, config_.model);
      if (view.batch.size() == 0) continue;
      const gnn::Encoding enc = gnn::encode(s.features, view.adjacency, params_, config_.model);
      const gnn::LossAndGrad lg = gnn::backward(view.adjacency, params_, view.batch, enc, config_.model);
      params_ = gnn::optimizer_step(params_, lg.grads, adam_, config_.pretrain_lr);
      loss += lg.loss;
      ++report.steps;
    }
    report.epoch_losses.push_back(loss);
    spdlog::debug("pretrain epoch {} loss {:.6f}", epoch, loss);
  }

  // Without a hold-out the fitted windows calibrate (scores run optimistic).
  for (std::size_t i = held_out > 0 ? fitted : 0; i < snaps.size(); ++i) {
    for (const auto& r : score_snapshot(*snaps[i], params_, config_.model, config_.probes_per_node, &rng_)) {
      threshold_.push(r.score);
      ++report.calibration_scores;
    }
  }
  update_threshold(threshold_);
  report.tau = threshold_.tau;
  if (report.steps > 0) ++model_version_;

  for (const auto& s : snaps) {
    recent_.push_back(s);
    while (recent_.size() > config_.recent_snapshots) recent_.pop_front();
  }
  clock_ = std::max(clock_, end);
  return report;
}

void Detector::remember_context(const std::string& id, std::shared_ptr<const GraphSnapshot> snap) {
  pending_contexts_.emplace_back(id, snap);
  pending_lookup_[id] = std::move(snap);
  while (pending_contexts_.size() > config_.max_pending_contexts) {
    pending_lookup_.erase(pending_contexts_.front().first);
    pending_contexts_.pop_front();
  }
}

WindowResult Detector::process_window(std::span<const NormalizedEvent> events, std::span<const std::uint8_t> truth,
                                      TimeMs start, TimeMs end) {
  require_initialized();
  if (end <= start) throw DetectError(DetectErrorKind::out_of_order, "window end must follow its start");
  if (start < clock_) {
    throw DetectError(DetectErrorKind::out_of_order,
                      "window starting " + std::to_string(start) + " precedes detector clock " + std::to_string(clock_));
  }
  WindowResult out;
  out.window_start = start;
  out.window_end = end;
  out.events = events.size();
  out.empty = events.empty();
  if (events.empty()) {
    clock_ = end;
    out.tau = threshold_.tau;
    out.benign_window_size = threshold_.window.size();
    return out;
  }

  auto built = graph::build_snapshot(events, start, end, spec_, &history_, config_.half_life, truth);
  out.ignored_roles = std::move(built.ignored_roles);
  auto snap = std::make_shared<const GraphSnapshot>(std::move(built.snapshot));
  history_ = graph::merge_history(history_, *snap, config_.half_life);

  out.records = score_snapshot(*snap, params_, config_.model, config_.probes_per_node, &rng_);
  out.alerts = flag(out.records, threshold_);
  for (const Alert& a : out.alerts) {
    if (alert_index_.count(a.id)) continue;
    alert_index_.emplace(a.id, alerts_.size());
    alerts_.push_back(a);
    remember_context(a.id, snap);
  }
  update_threshold(threshold_);

  recent_.push_back(snap);
  while (recent_.size() > config_.recent_snapshots) recent_.pop_front();
  last_snapshot_ = snap;
  last_records_ = out.records;
  ++windows_processed_;
  ++windows_since_retrain_;
  clock_ = end;

  out.retrain = maybe_retrain();
  out.tau = threshold_.tau;
  out.benign_window_size = threshold_.window.size();
  return out;
}

std::optional<RetrainSummary> Detector::maybe_retrain() {
  if (!config_.adaptive) return std::nullopt;
  if (windows_since_retrain_ < config_.retrain_every && feedback_since_retrain_ < config_.retrain_on_feedback) {
    return std::nullopt;
  }
  if (buffer_.size() == 0 && recent_.empty()) return std::nullopt;
  buffer_.refresh_weights(clock_, config_.feedback.recency_half_life);
  RetrainInputs inputs;
  inputs.buffer = &buffer_;
  inputs.recent.assign(recent_.begin(), recent_.end());
  inputs.excluded = &excluded_;
  inputs.negatives_per_positive = config_.negatives;
  inputs.target_fraction = config_.target_fraction;
  RetrainSummary summary;
  summary.version_before = model_version_;
  RetrainResult r = retrain(params_, adam_, inputs, config_.retrain_epochs, config_.retrain_lr, rng_, config_.model);
  params_ = std::move(r.params);
  summary.version_after = ++model_version_;
  summary.epoch_losses = std::move(r.epoch_losses);
  summary.steps = r.steps;
  summary.buffer_size = buffer_.size();
  summary.at = clock_;
  windows_since_retrain_ = 0;
  feedback_since_retrain_ = 0;
  ++retrain_count_;
  last_retrain_at_ = clock_;
  spdlog::debug("retrain at {}: version {} -> {}, {} steps", clock_, summary.version_before, summary.version_after,
                summary.steps);
  return summary;
}

const Alert& Detector::label_alert(std::string_view id, Label label) {
  auto it = alert_index_.find(std::string(id));
  if (it == alert_index_.end()) throw DetectError(DetectErrorKind::unknown_alert, "no alert " + std::string(id));
  Alert& alert = alerts_[it->second];
  if (alert.status != AlertStatus::pending) {
    throw DetectError(DetectErrorKind::already_labeled,
                      "alert " + alert.id + " is already " + std::string(to_string(alert.status)));
  }
  std::shared_ptr<const GraphSnapshot> context;
  if (auto c = pending_lookup_.find(alert.id); c != pending_lookup_.end()) {
    context = c->second;
    pending_lookup_.erase(c);
    auto pos = std::find_if(pending_contexts_.begin(), pending_contexts_.end(),
                            [&](const auto& p) { return p.first == alert.id; });
    if (pos != pending_contexts_.end()) pending_contexts_.erase(pos);
  }
  if (!config_.adaptive) {
    // Verdict is kept for the record; the model and threshold never see it.
    FeedbackBuffer discard;
    record_feedback(discard, alert, label, clock_, clock_, nullptr, config_.feedback);
    return alert;
  }
  record_feedback(buffer_, alert, label, clock_, clock_, std::move(context), config_.feedback);
  if (label == Label::benign) {
    threshold_.push(alert.record.score);
  } else {
    excluded_.emplace(alert.record.src, alert.record.dst);
  }
  ++feedback_since_retrain_;
  return alert;
}

}  // namespace sentinel::detect
