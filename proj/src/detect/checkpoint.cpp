#include <map>

#include "sentinel/common/binary_io.hpp"
#include "sentinel/common/hash.hpp"
#include "sentinel/detect/detector.hpp"
#include "sentinel/gnn/serialize.hpp"
#include "sentinel/graph/serialize.hpp"

namespace sentinel::detect {

namespace {

constexpr std::string_view kMagic = "SNTLCKPT";
constexpr std::uint32_t kFormatVersion = 2;
constexpr std::uint32_t kNoSnapshot = 0xFFFFFFFFu;
constexpr std::size_t kDigestHex = 64;

void write_opt_time(ByteWriter& w, const std::optional<TimeMs>& t) {
  w.u8(t ? 1 : 0);
  if (t) w.i64(*t);
}

std::optional<TimeMs> read_opt_time(ByteReader& r) {
  if (r.u8() == 0) return std::nullopt;
  return r.i64();
}

void write_record(ByteWriter& w, const AnomalyScoreRecord& rec) {
  graph::write_entity(w, rec.src);
  graph::write_entity(w, rec.dst);
  w.str(rec.action);
  w.f64(rec.score);
  w.f64(rec.y_hat);
  w.u8(rec.y_observed);
  w.i64(rec.window_end);
  w.u8(static_cast<std::uint8_t>(rec.origin));
  w.u32(rec.src_index);
  w.u32(rec.dst_index);
  w.u8(rec.truth);
}

AnomalyScoreRecord read_record(ByteReader& r) {
  AnomalyScoreRecord rec;
  rec.src = graph::read_entity(r);
  rec.dst = graph::read_entity(r);
  rec.action = r.str();
  rec.score = r.f64();
  rec.y_hat = r.f64();
  rec.y_observed = r.u8();
  rec.window_end = r.i64();
  const std::uint8_t origin = r.u8();
  if (origin > 1) throw FormatError("bad record origin");
  rec.origin = static_cast<Origin>(origin);
  rec.src_index = r.u32();
  rec.dst_index = r.u32();
  rec.truth = r.u8();
  return rec;
}

void write_alert(ByteWriter& w, const Alert& a) {
  w.str(a.id);
  write_record(w, a.record);
  w.f64(a.tau);
  w.u8(static_cast<std::uint8_t>(a.status));
  w.i64(a.created_at);
  write_opt_time(w, a.labeled_at);
  w.u8(a.scenario_tag ? 1 : 0);
  if (a.scenario_tag) w.str(*a.scenario_tag);
}

Alert read_alert(ByteReader& r) {
  Alert a;
  a.id = r.str();
  a.record = read_record(r);
  a.tau = r.f64();
  const std::uint8_t status = r.u8();
  if (status > 2) throw FormatError("bad alert status");
  a.status = static_cast<AlertStatus>(status);
  a.created_at = r.i64();
  a.labeled_at = read_opt_time(r);
  if (r.u8() != 0) a.scenario_tag = r.str();
  return a;
}

}  // namespace

std::string Detector::checkpoint() const {
  // Every snapshot referenced by the state is written once and referred to by
  // position.
  std::vector<const graph::GraphSnapshot*> table;
  std::map<const graph::GraphSnapshot*, std::uint32_t> slot;
  auto ref = [&](const std::shared_ptr<const graph::GraphSnapshot>& s) -> std::uint32_t {
    if (!s) return kNoSnapshot;
    auto [it, added] = slot.emplace(s.get(), static_cast<std::uint32_t>(table.size()));
    if (added) table.push_back(s.get());
    return it->second;
  };
  std::vector<std::uint32_t> recent_refs, buffer_refs, pending_refs;
  for (const auto& s : recent_) recent_refs.push_back(ref(s));
  for (const auto& s : buffer_.samples) buffer_refs.push_back(ref(s.context));
  for (const auto& [id, s] : pending_contexts_) pending_refs.push_back(ref(s));
  const std::uint32_t last_ref = ref(last_snapshot_);

  ByteWriter w;
  w.raw(kMagic);
  w.u32(kFormatVersion);
  w.str(config_.to_json());
  w.u8(initialized_ ? 1 : 0);
  graph::write_spec(w, spec_);
  w.i64(clock_);
  w.u64(windows_processed_);
  w.u64(windows_since_retrain_);
  w.u64(feedback_since_retrain_);
  w.u64(retrain_count_);
  w.u64(model_version_);
  write_opt_time(w, last_retrain_at_);
  for (std::uint64_t s : rng_.state()) w.u64(s);

  w.u8(initialized_ ? 1 : 0);
  if (initialized_) {
    gnn::write_params(w, params_);
    gnn::write_adam(w, adam_);
  }

  w.f64(threshold_.tau);
  w.f64(threshold_.quantile);
  w.u64(threshold_.capacity);
  w.u64(threshold_.window.size());
  for (double x : threshold_.window) w.f64(x);

  graph::write_history(w, history_);

  w.u64(table.size());
  for (const auto* s : table) graph::write_snapshot(w, *s);

  w.u64(recent_refs.size());
  for (auto r : recent_refs) w.u32(r);

  w.u64(buffer_.capacity);
  w.u64(buffer_.samples.size());
  for (std::size_t i = 0; i < buffer_.samples.size(); ++i) {
    const auto& s = buffer_.samples[i];
    w.u32(buffer_refs[i]);
    w.u32(s.src);
    w.u32(s.dst);
    w.f64(s.y);
    w.f64(s.lambda);
    w.i64(s.confirmed_at);
    w.f64(s.weight);
    w.str(s.alert_id);
  }

  w.u64(excluded_.size());
  for (const auto& [a, b] : excluded_) {
    graph::write_entity(w, a);
    graph::write_entity(w, b);
  }

  w.u64(alerts_.size());
  for (const auto& a : alerts_) write_alert(w, a);

  w.u64(pending_contexts_.size());
  for (std::size_t i = 0; i < pending_contexts_.size(); ++i) {
    w.str(pending_contexts_[i].first);
    w.u32(pending_refs[i]);
  }

  w.u32(last_ref);
  w.u64(last_records_.size());
  for (const auto& r : last_records_) write_record(w, r);

  w.u64(annotations_.size());
  for (const auto& [k, v] : annotations_) {
    w.str(k);
    w.str(v);
  }

  std::string body = w.take();
  body += sha256_hex(body);
  return body;
}

Detector Detector::restore(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 4 + kDigestHex) throw FormatError("checkpoint too short");
  if (bytes.substr(0, kMagic.size()) != kMagic) throw CheckpointVersionError("not a checkpoint (bad magic)");
  const std::string_view body = bytes.substr(0, bytes.size() - kDigestHex);
  ByteReader r(body);
  r.raw(kMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));
  }
  if (sha256_hex(body) != bytes.substr(bytes.size() - kDigestHex)) throw FormatError("checkpoint digest mismatch");

  Detector d(DetectorConfig::from_json(r.str()));
  d.initialized_ = r.u8() != 0;
  d.spec_ = graph::read_spec(r);
  d.clock_ = r.i64();
  d.windows_processed_ = r.u64();
  d.windows_since_retrain_ = r.u64();
  d.feedback_since_retrain_ = r.u64();
  d.retrain_count_ = r.u64();
  d.model_version_ = r.u64();
  d.last_retrain_at_ = read_opt_time(r);
  Rng::State st{};
  for (auto& s : st) s = r.u64();
  d.rng_ = Rng::from_state(st);

  if (r.u8() != 0) {
    d.params_ = gnn::read_params(r);
    d.adam_ = gnn::read_adam(r);
  }

  d.threshold_.tau = r.f64();
  d.threshold_.quantile = r.f64();
  d.threshold_.capacity = r.u64();
  const std::size_t nwin = r.length(8);
  for (std::size_t i = 0; i < nwin; ++i) d.threshold_.window.push_back(r.f64());

  d.history_ = graph::read_history(r);

  std::vector<std::shared_ptr<const graph::GraphSnapshot>> table(r.length(16));
  for (auto& s : table) s = std::make_shared<const graph::GraphSnapshot>(graph::read_snapshot(r));
  auto deref = [&](std::uint32_t i) -> std::shared_ptr<const graph::GraphSnapshot> {
    if (i == kNoSnapshot) return nullptr;
    if (i >= table.size()) throw FormatError("snapshot reference out of range");
    return table[i];
  };

  const std::size_t nrecent = r.length(4);
  for (std::size_t i = 0; i < nrecent; ++i) d.recent_.push_back(deref(r.u32()));

  d.buffer_.capacity = r.u64();
  const std::size_t nbuf = r.length(40);
  for (std::size_t i = 0; i < nbuf; ++i) {
    FeedbackSample s;
    s.context = deref(r.u32());
    s.src = r.u32();
    s.dst = r.u32();
    s.y = r.f64();
    s.lambda = r.f64();
    s.confirmed_at = r.i64();
    s.weight = r.f64();
    s.alert_id = r.str();
    d.buffer_.samples.push_back(std::move(s));
  }

  const std::size_t nex = r.length(10);
  for (std::size_t i = 0; i < nex; ++i) {
    graph::EntityId a = graph::read_entity(r);
    graph::EntityId b = graph::read_entity(r);
    d.excluded_.emplace(std::move(a), std::move(b));
  }

  const std::size_t nalerts = r.length(16);
  for (std::size_t i = 0; i < nalerts; ++i) {
    Alert a = read_alert(r);
    d.alert_index_.emplace(a.id, d.alerts_.size());
    d.alerts_.push_back(std::move(a));
  }

  const std::size_t npending = r.length(12);
  for (std::size_t i = 0; i < npending; ++i) {
    std::string id = r.str();
    auto snap = deref(r.u32());
    d.pending_lookup_[id] = snap;
    d.pending_contexts_.emplace_back(std::move(id), std::move(snap));
  }

  d.last_snapshot_ = deref(r.u32());
  const std::size_t nrec = r.length(16);
  for (std::size_t i = 0; i < nrec; ++i) d.last_records_.push_back(read_record(r));

  const std::size_t nann = r.length(16);
  for (std::size_t i = 0; i < nann; ++i) {
    std::string k = r.str();
    d.annotations_[std::move(k)] = r.str();
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");
  return d;
}

}  // namespace sentinel::detect
