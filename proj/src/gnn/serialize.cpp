#include "sentinel/gnn/serialize.hpp"

namespace sentinel::gnn {

namespace {

void write_matrix(ByteWriter& w, const Matrix& m) {
  w.u64(m.rows());
  w.u64(m.cols());
  for (double x : m.flat()) w.f64(x);
}

Matrix read_matrix(ByteReader& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (cols != 0 && rows > r.remaining() / 8 / cols) throw FormatError("matrix larger than remaining input");
  Matrix m(rows, cols);
  for (double& x : m.flat()) x = r.f64();
  return m;
}

void write_tree(ByteWriter& w, const ParamSet& p) {
  w.u32(static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    write_matrix(w, l.w_self);
    write_matrix(w, l.w_neigh);
    w.f64s(l.attn);
  }
  write_matrix(w, p.w_out);
}

ParamSet read_tree(ByteReader& r) {
  ParamSet p;
  const std::uint32_t n = r.u32();
  if (n > r.remaining()) throw FormatError("layer count larger than remaining input");
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerParams l;
    l.w_self = read_matrix(r);
    l.w_neigh = read_matrix(r);
    l.attn = r.f64s();
    if (!l.w_self.same_shape(l.w_neigh) || l.attn.size() != 2 * l.w_self.rows()) {
      throw FormatError("inconsistent layer shapes");
    }
    if (i > 0 && l.w_self.cols() != p.layers.back().w_self.rows()) throw FormatError("layer chain mismatch");
    p.layers.push_back(std::move(l));
  }
  p.w_out = read_matrix(r);
  if (!p.layers.empty() &&
      (p.w_out.rows() != p.layers.back().w_self.rows() || p.w_out.cols() != p.w_out.rows())) {
    throw FormatError("decoder shape mismatch");
  }
  return p;
}

}  // namespace

void write_params(ByteWriter& w, const ParamSet& p) {
  write_tree(w, p);
  w.u64(p.revision);
}

ParamSet read_params(ByteReader& r) {
  ParamSet p = read_tree(r);
  p.revision = r.u64();
  return p;
}

void write_adam(ByteWriter& w, const AdamState& s) {
  w.u64(s.step);
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.epsilon);
  write_tree(w, s.m);
  write_tree(w, s.v);
}

AdamState read_adam(ByteReader& r) {
  AdamState s;
  s.step = r.u64();
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.epsilon = r.f64();
  s.m = read_tree(r);
  s.v = read_tree(r);
  return s;
}

void write_options(ByteWriter& w, const ModelOptions& o) {
  w.u8(static_cast<std::uint8_t>(o.attention));
  w.u8(o.edge_weight_logits ? 1 : 0);
  w.u8(o.bidirectional ? 1 : 0);
  w.f64(o.leaky_slope);
}

ModelOptions read_options(ByteReader& r) {
  ModelOptions o;
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError("unknown attention mode");
  o.attention = static_cast<AttentionMode>(mode);
  o.edge_weight_logits = r.u8() != 0;
  o.bidirectional = r.u8() != 0;
  o.leaky_slope = r.f64();
  return o;
}

}  // namespace sentinel::gnn
