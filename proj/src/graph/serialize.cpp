#include "sentinel/graph/serialize.hpp"

namespace sentinel::graph {

namespace {

void write_map(ByteWriter& w, const std::map<std::string, double>& m) {
  w.u64(m.size());
  for (const auto& [k, v] : m) {
    w.str(k);
    w.f64(v);
  }
}

std::map<std::string, double> read_map(ByteReader& r) {
  std::map<std::string, double> m;
  const std::size_t n = r.length(12);
  for (std::size_t i = 0; i < n; ++i) {
    std::string k = r.str();
    m[std::move(k)] = r.f64();
  }
  return m;
}

void write_tally(ByteWriter& w, const NodeTally& t) {
  write_map(w, t.actions);
  write_map(w, t.roles);
  w.f64(t.count);
  w.f64(t.privilege_sum);
}

NodeTally read_tally(ByteReader& r) {
  NodeTally t;
  t.actions = read_map(r);
  t.roles = read_map(r);
  t.count = r.f64();
  t.privilege_sum = r.f64();
  return t;
}

void write_strings(ByteWriter& w, const std::vector<std::string>& v) {
  w.u64(v.size());
  for (const auto& s : v) w.str(s);
}

std::vector<std::string> read_strings(ByteReader& r) {
  std::vector<std::string> v(r.length(4));
  for (auto& s : v) s = r.str();
  return v;
}

}  // namespace

void write_entity(ByteWriter& w, const EntityId& e) {
  w.u8(static_cast<std::uint8_t>(e.kind));
  w.str(e.name);
}

EntityId read_entity(ByteReader& r) {
  const std::uint8_t k = r.u8();
  if (k > 2) throw FormatError("bad node kind");
  return EntityId{static_cast<NodeKind>(k), r.str()};
}

void write_snapshot(ByteWriter& w, const GraphSnapshot& s) {
  w.i64(s.window_start);
  w.i64(s.window_end);
  w.u64(s.nodes.size());
  for (const auto& n : s.nodes) write_entity(w, n);
  w.u64(s.features.rows());
  w.u64(s.features.cols());
  for (double x : s.features.flat()) w.f64(x);
  w.u64(s.edges.size());
  for (const auto& e : s.edges) {
    w.u32(e.src);
    w.u32(e.dst);
    w.str(e.action);
    w.i64(e.last_seen);
    w.u32(e.count);
    w.f64(e.weight);
  }
  w.u64(s.window_tally.size());
  for (const auto& t : s.window_tally) write_tally(w, t);
  w.u8(s.malicious ? 1 : 0);
  if (s.malicious) {
    w.u64(s.malicious->size());
    for (std::uint8_t m : *s.malicious) w.u8(m);
  }
}

GraphSnapshot read_snapshot(ByteReader& r) {
  GraphSnapshot s;
  s.window_start = r.i64();
  s.window_end = r.i64();
  s.nodes.resize(r.length(5));
  for (auto& n : s.nodes) n = read_entity(r);
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (rows != s.nodes.size() || (cols != 0 && rows > r.remaining() / 8 / cols)) {
    throw FormatError("bad feature matrix");
  }
  s.features = Matrix(rows, cols);
  for (double& x : s.features.flat()) x = r.f64();
  s.edges.resize(r.length(32));
  for (auto& e : s.edges) {
    e.src = r.u32();
    e.dst = r.u32();
    e.action = r.str();
    e.last_seen = r.i64();
    e.count = r.u32();
    e.weight = r.f64();
    if (e.src >= s.nodes.size() || e.dst >= s.nodes.size()) throw FormatError("edge endpoint out of range");
  }
  s.window_tally.resize(r.length(24));
  for (auto& t : s.window_tally) t = read_tally(r);
  if (r.u8() != 0) {
    std::vector<std::uint8_t> m(r.length(1));
    for (auto& x : m) x = r.u8();
    if (m.size() != s.edges.size()) throw FormatError("label count differs from edge count");
    s.malicious = std::move(m);
  }
  return s;
}

void write_history(ByteWriter& w, const History& h) {
  w.i64(h.as_of);
  w.u64(h.nodes.size());
  for (const auto& [id, t] : h.nodes) {
    write_entity(w, id);
    write_tally(w, t);
  }
}

History read_history(ByteReader& r) {
  History h;
  h.as_of = r.i64();
  const std::size_t n = r.length(29);
  for (std::size_t i = 0; i < n; ++i) {
    EntityId id = read_entity(r);
    h.nodes.emplace(std::move(id), read_tally(r));
  }
  return h;
}

void write_spec(ByteWriter& w, const FeatureSpec& s) {
  write_strings(w, s.role_vocab);
  write_strings(w, s.action_vocab);
  w.u8(static_cast<std::uint8_t>(s.vocab_mode));
  w.u8(static_cast<std::uint8_t>(s.role_context));
}

FeatureSpec read_spec(ByteReader& r) {
  FeatureSpec s;
  s.role_vocab = read_strings(r);
  s.action_vocab = read_strings(r);
  const std::uint8_t mode = r.u8();
  const std::uint8_t ctx = r.u8();
  if (mode > 2 || ctx > 1) throw FormatError("bad feature spec");
  s.vocab_mode = static_cast<VocabMode>(mode);
  s.role_context = static_cast<RoleContext>(ctx);
  return s;
}

}  // namespace sentinel::graph
