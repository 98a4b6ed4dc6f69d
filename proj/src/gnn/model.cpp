#include "sentinel/gnn/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace sentinel::gnn {

namespace {

void require(bool ok, GnnErrorKind kind, const std::string& what) {
  if (!ok) throw GnnError(kind, what);
}

double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }

// Derivative convention: 0 at the kink.
double leaky_grad(double x, double slope) {
  if (x > 0.0) return 1.0;
  if (x < 0.0) return slope;
  return 0.0;
}

void check_layer_shapes(const LayerParams& layer, std::size_t d_in) {
  const std::size_t d_out = layer.w_self.rows();
  require(layer.w_self.cols() == d_in && layer.w_neigh.rows() == d_out && layer.w_neigh.cols() == d_in &&
              layer.attn.size() == 2 * d_out,
          GnnErrorKind::shape_mismatch, "layer parameter shapes do not match input dimension");
}

void check_adjacency(const Adjacency& adj, std::size_t rows) {
  require(adj.num_nodes == rows && adj.offsets.size() == rows + 1 &&
              adj.neighbors.size() == adj.offsets.back() && adj.log_weights.size() == adj.neighbors.size(),
          GnnErrorKind::shape_mismatch, "adjacency does not match node count");
}

void xavier_fill(std::span<double> out, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : out) x = rng.uniform(-bound, bound);
}

}  // namespace

std::vector<std::size_t> ParamSet::dims() const {
  std::vector<std::size_t> d;
  if (layers.empty()) return d;
  d.push_back(layers.front().w_self.cols());
  for (const auto& l : layers) d.push_back(l.w_self.rows());
  return d;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = w_out.size();
  for (const auto& l : layers) n += l.w_self.size() + l.w_neigh.size() + l.attn.size();
  return n;
}

std::vector<std::span<double>> ParamSet::tensors() {
  std::vector<std::span<double>> out;
  for (auto& l : layers) {
    out.push_back(l.w_self.flat());
    out.push_back(l.w_neigh.flat());
    out.push_back(l.attn);
  }
  out.push_back(w_out.flat());
  return out;
}

std::vector<std::span<const double>> ParamSet::tensors() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers) {
    out.push_back(l.w_self.flat());
    out.push_back(l.w_neigh.flat());
    out.push_back(l.attn);
  }
  out.push_back(w_out.flat());
  return out;
}

bool ParamSet::same_values(const ParamSet& other) const { return layers == other.layers && w_out == other.w_out; }

GradSet zeros_like(const ParamSet& p) {
  GradSet g;
  for (const auto& l : p.layers) {
    g.layers.push_back(LayerParams{Matrix(l.w_self.rows(), l.w_self.cols()),
                                   Matrix(l.w_neigh.rows(), l.w_neigh.cols()),
                                   std::vector<double>(l.attn.size(), 0.0)});
  }
  g.w_out = Matrix(p.w_out.rows(), p.w_out.cols());
  return g;
}

ParamSet init_params(std::span<const std::size_t> dims, std::uint64_t seed) {
  require(dims.size() >= 2, GnnErrorKind::invalid_dims, "need at least input and one layer dimension");
  for (std::size_t d : dims) require(d > 0, GnnErrorKind::invalid_dims, "dimensions must be positive");
  Rng rng(seed);
  ParamSet p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t d_in = dims[l];
    const std::size_t d_out = dims[l + 1];
    LayerParams layer{Matrix(d_out, d_in), Matrix(d_out, d_in), std::vector<double>(2 * d_out)};
    xavier_fill(layer.w_self.flat(), d_in, d_out, rng);
    xavier_fill(layer.w_neigh.flat(), d_in, d_out, rng);
    xavier_fill(layer.attn, 2 * d_out, 1, rng);
    p.layers.push_back(std::move(layer));
  }
  const std::size_t d_l = dims.back();
  p.w_out = Matrix(d_l, d_l);
  xavier_fill(p.w_out.flat(), d_l, d_l, rng);
  return p;
}

Adjacency make_adjacency(std::size_t num_nodes, std::span<const DirectedEdge> edges, bool bidirectional) {
  // (target, neighbor) -> summed weight
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> in;
  for (const auto& e : edges) {
    require(e.src < num_nodes && e.dst < num_nodes, GnnErrorKind::index_out_of_range, "edge endpoint out of range");
    require(std::isfinite(e.weight) && e.weight > 0.0, GnnErrorKind::non_finite_input,
            "edge weight must be positive and finite");
    if (e.src == e.dst) continue;
    in[{e.dst, e.src}] += e.weight;
    if (bidirectional) in[{e.src, e.dst}] += e.weight;
  }
  Adjacency adj;
  adj.num_nodes = num_nodes;
  adj.offsets.assign(num_nodes + 1, 0);
  for (const auto& [key, w] : in) {
    ++adj.offsets[key.first + 1];
    adj.neighbors.push_back(key.second);
    adj.log_weights.push_back(std::log(w));
  }
  for (std::size_t i = 0; i < num_nodes; ++i) adj.offsets[i + 1] += adj.offsets[i];
  return adj;
}

Adjacency make_adjacency(const graph::GraphSnapshot& snapshot, const ModelOptions& options) {
  std::vector<DirectedEdge> edges;
  edges.reserve(snapshot.edges.size());
  for (const auto& e : snapshot.edges) {
    // Decay can underflow for very stale edges; keep the logit finite.
    edges.push_back({e.src, e.dst, std::max(e.weight, std::numeric_limits<double>::min())});
  }
  return make_adjacency(snapshot.size(), edges, options.bidirectional);
}

Adjacency make_adjacency(const graph::GraphSnapshot& snapshot, const ModelOptions& options,
                         const std::set<std::pair<std::uint32_t, std::uint32_t>>& hidden) {
  std::vector<DirectedEdge> edges;
  edges.reserve(snapshot.edges.size());
  for (const auto& e : snapshot.edges) {
    if (hidden.count({e.src, e.dst})) continue;
    edges.push_back({e.src, e.dst, std::max(e.weight, std::numeric_limits<double>::min())});
  }
  return make_adjacency(snapshot.size(), edges, options.bidirectional);
}

namespace {

// self_part/neigh_part/raw_logits/alpha for one layer.
void project_and_attend(const Matrix& h_prev, const Adjacency& adj, const LayerParams& layer,
                        const ModelOptions& options, LayerActivation& act) {
  const std::size_t n = h_prev.rows();
  const std::size_t d_out = layer.w_self.rows();
  act.self_part = Matrix(n, d_out);
  act.neigh_part = Matrix(n, d_out);
  for (std::size_t i = 0; i < n; ++i) {
    mat_vec(layer.w_self, h_prev.row(i), act.self_part.row(i));
    mat_vec(layer.w_neigh, h_prev.row(i), act.neigh_part.row(i));
  }
  const std::span<const double> a1(layer.attn.data(), d_out);
  const std::span<const double> a2(layer.attn.data() + d_out, d_out);

  const std::size_t m = adj.neighbors.size();
  act.raw_logits.assign(m, 0.0);
  act.alpha.assign(m, 0.0);
  std::vector<double> logit;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = adj.offsets[i];
    const std::size_t hi = adj.offsets[i + 1];
    if (lo == hi) continue;
    if (options.attention == AttentionMode::uniform) {
      const double u = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t k = lo; k < hi; ++k) act.alpha[k] = u;
      continue;
    }
    const double self_score = dot(a1, act.self_part.row(i));
    logit.assign(hi - lo, 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = lo; k < hi; ++k) {
      const double e = self_score + dot(a2, act.neigh_part.row(adj.neighbors[k]));
      act.raw_logits[k] = e;
      double l = leaky(e, options.leaky_slope);
      if (options.edge_weight_logits) l += adj.log_weights[k];
      logit[k - lo] = l;
      mx = std::max(mx, l);
    }
    double z = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      const double ex = std::exp(logit[k - lo] - mx);
      act.alpha[k] = ex;
      z += ex;
    }
    for (std::size_t k = lo; k < hi; ++k) act.alpha[k] /= z;
  }
}

void check_input(const Matrix& h, const Adjacency& adj, const LayerParams& layer) {
  check_layer_shapes(layer, h.cols());
  check_adjacency(adj, h.rows());
}

}  // namespace

std::vector<double> attention_coefficients(const Matrix& h_prev, const Adjacency& adj, const LayerParams& layer,
                                           const ModelOptions& options) {
  check_input(h_prev, adj, layer);
  LayerActivation act;
  project_and_attend(h_prev, adj, layer, options, act);
  return std::move(act.alpha);
}

LayerActivation message_pass_layer(const Matrix& h_prev, const Adjacency& adj, const LayerParams& layer,
                                   const ModelOptions& options) {
  check_input(h_prev, adj, layer);
  LayerActivation act;
  project_and_attend(h_prev, adj, layer, options, act);
  const std::size_t n = h_prev.rows();
  const std::size_t d_out = layer.w_self.rows();
  act.pre = act.self_part;
  for (std::size_t i = 0; i < n; ++i) {
    auto u = act.pre.row(i);
    for (std::size_t k = adj.offsets[i]; k < adj.offsets[i + 1]; ++k) {
      const double a = act.alpha[k];
      const auto q = act.neigh_part.row(adj.neighbors[k]);
      for (std::size_t c = 0; c < d_out; ++c) u[c] += a * q[c];
    }
  }
  act.out = act.pre;
  for (double& x : act.out.flat()) x = x > 0.0 ? x : 0.0;
  return act;
}

Encoding encode(const Matrix& features, const Adjacency& adj, const ParamSet& params, const ModelOptions& options) {
  require(!params.layers.empty(), GnnErrorKind::invalid_dims, "parameter set has no layers");
  require(features.cols() == params.input_dim(), GnnErrorKind::shape_mismatch,
          "feature dimension does not match the model input");
  for (double x : features.flat()) require(std::isfinite(x), GnnErrorKind::non_finite_input, "non-finite feature");
  check_adjacency(adj, features.rows());
  Encoding enc;
  enc.input = features;
  enc.revision = params.revision;
  enc.num_layers_used = params.num_layers();
  const Matrix* h = &enc.input;
  for (const auto& layer : params.layers) {
    enc.layers.push_back(message_pass_layer(*h, adj, layer, options));
    h = &enc.layers.back().out;
  }
  return enc;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double bilinear(const Matrix& z, std::size_t i, std::size_t j, const Matrix& w_out) {
  const auto zi = z.row(i);
  const auto zj = z.row(j);
  double s = 0.0;
  for (std::size_t r = 0; r < w_out.rows(); ++r) {
    if (zi[r] == 0.0) continue;
    s += zi[r] * dot(w_out.row(r), zj);
  }
  return s;
}

}  // namespace

double decode_edge(const Matrix& z, std::size_t i, std::size_t j, const Matrix& w_out) {
  require(i < z.rows() && j < z.rows(), GnnErrorKind::index_out_of_range, "decode index out of range");
  require(w_out.rows() == z.cols() && w_out.cols() == z.cols(), GnnErrorKind::shape_mismatch,
          "decoder shape does not match embeddings");
  return sigmoid(bilinear(z, i, j, w_out));
}

double loss_weighted_bce(std::span<const double> predictions, const EdgeBatch& batch) {
  require(predictions.size() == batch.size() && batch.labels.size() == batch.size() &&
              batch.weights.size() == batch.size(),
          GnnErrorKind::length_mismatch, "predictions, labels and weights differ in length");
  double loss = 0.0;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const double p = std::clamp(predictions[k], kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double y = batch.labels[k];
    loss -= batch.weights[k] * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return loss;
}

namespace {

std::vector<double> predict(const Matrix& z, const ParamSet& params, const EdgeBatch& batch) {
  std::vector<double> preds;
  preds.reserve(batch.size());
  for (const auto& [i, j] : batch.pairs) preds.push_back(decode_edge(z, i, j, params.w_out));
  return preds;
}

}  // namespace

double evaluate_loss(const Matrix& features, const Adjacency& adj, const ParamSet& params, const EdgeBatch& batch,
                     const ModelOptions& options) {
  const Encoding enc = encode(features, adj, params, options);
  return loss_weighted_bce(predict(enc.embeddings(), params, batch), batch);
}

LossAndGrad backward(const Adjacency& adj, const ParamSet& params, const EdgeBatch& batch, const Encoding& cache,
                     const ModelOptions& options) {
  require(cache.revision == params.revision && cache.num_layers_used == params.num_layers() &&
              cache.layers.size() == params.num_layers(),
          GnnErrorKind::stale_cache, "encoding was computed with a different parameter version");
  check_adjacency(adj, cache.input.rows());
  const Matrix& z = cache.embeddings();
  require(params.w_out.rows() == z.cols(), GnnErrorKind::shape_mismatch, "decoder shape does not match embeddings");

  LossAndGrad result;
  result.grads = zeros_like(params);
  GradSet& g = result.grads;

  const std::vector<double> preds = predict(z, params, batch);
  result.loss = loss_weighted_bce(preds, batch);

  const std::size_t n = z.rows();
  const std::size_t d_l = z.cols();
  Matrix grad_h(n, d_l);
  std::vector<double> tmp(d_l);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto [i, j] = batch.pairs[k];
    const double gs = batch.weights[k] * (preds[k] - batch.labels[k]);
    if (gs == 0.0) continue;
    const auto zi = z.row(i);
    const auto zj = z.row(j);
    add_outer(g.w_out, gs, zi, zj);
    // dz_i += gs W_o z_j ; dz_j += gs W_o^T z_i
    mat_vec(params.w_out, zj, tmp);
    for (std::size_t c = 0; c < d_l; ++c) grad_h(i, c) += gs * tmp[c];
    std::fill(tmp.begin(), tmp.end(), 0.0);
    mat_t_vec_add(params.w_out, zi, tmp);
    for (std::size_t c = 0; c < d_l; ++c) grad_h(j, c) += gs * tmp[c];
  }

  for (std::size_t li = params.num_layers(); li-- > 0;) {
    const LayerParams& layer = params.layers[li];
    LayerParams& gl = g.layers[li];
    const LayerActivation& act = cache.layers[li];
    const Matrix& h_in = li == 0 ? cache.input : cache.layers[li - 1].out;
    const std::size_t d_out = layer.w_self.rows();
    const std::size_t d_in = layer.w_self.cols();

    Matrix d_self(n, d_out);
    Matrix d_neigh(n, d_out);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d_out; ++c) {
        d_self(i, c) = act.pre(i, c) > 0.0 ? grad_h(i, c) : 0.0;
      }
    }
    const std::span<const double> a1(layer.attn.data(), d_out);
    const std::span<const double> a2(layer.attn.data() + d_out, d_out);
    std::vector<double> d_alpha;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lo = adj.offsets[i];
      const std::size_t hi = adj.offsets[i + 1];
      if (lo == hi) continue;
      // d_self(i) currently holds dU_i only.
      const std::vector<double> du(d_self.row(i).begin(), d_self.row(i).end());
      d_alpha.assign(hi - lo, 0.0);
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t j = adj.neighbors[k];
        auto dq = d_neigh.row(j);
        const auto q = act.neigh_part.row(j);
        for (std::size_t c = 0; c < d_out; ++c) dq[c] += act.alpha[k] * du[c];
        d_alpha[k - lo] = dot(du, q);
      }
      if (options.attention == AttentionMode::uniform) continue;
      double s = 0.0;
      for (std::size_t k = lo; k < hi; ++k) s += act.alpha[k] * d_alpha[k - lo];
      const auto p_i = act.self_part.row(i);
      for (std::size_t k = lo; k < hi; ++k) {
        const double dl = act.alpha[k] * (d_alpha[k - lo] - s);
        const double de = dl * leaky_grad(act.raw_logits[k], options.leaky_slope);
        if (de == 0.0) continue;
        const std::size_t j = adj.neighbors[k];
        const auto q_j = act.neigh_part.row(j);
        for (std::size_t c = 0; c < d_out; ++c) {
          gl.attn[c] += de * p_i[c];
          gl.attn[d_out + c] += de * q_j[c];
          d_self(i, c) += de * a1[c];
          d_neigh(j, c) += de * a2[c];
        }
      }
    }
    Matrix grad_prev(n, d_in);
    for (std::size_t i = 0; i < n; ++i) {
      add_outer(gl.w_self, 1.0, d_self.row(i), h_in.row(i));
      add_outer(gl.w_neigh, 1.0, d_neigh.row(i), h_in.row(i));
      if (li > 0) {
        mat_t_vec_add(layer.w_self, d_self.row(i), grad_prev.row(i));
        mat_t_vec_add(layer.w_neigh, d_neigh.row(i), grad_prev.row(i));
      }
    }
    grad_h = std::move(grad_prev);
  }
  return result;
}

ParamSet optimizer_step(const ParamSet& params, const GradSet& grads, AdamState& state, double lr) {
  require(grads.dims() == params.dims() && grads.w_out.same_shape(params.w_out), GnnErrorKind::shape_mismatch,
          "gradient shapes do not match parameters");
  if (state.m.layers.size() != params.layers.size() || !state.m.w_out.same_shape(params.w_out)) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
    state.step = 0;
  }
  ParamSet next = params;
  ++next.revision;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto pt = next.tensors();
  const auto gt = grads.tensors();
  auto mt = state.m.tensors();
  auto vt = state.v.tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    for (std::size_t x = 0; x < pt[k].size(); ++x) {
      const double gx = gt[k][x];
      require(std::isfinite(gx), GnnErrorKind::non_finite_input, "non-finite gradient");
      mt[k][x] = state.beta1 * mt[k][x] + (1.0 - state.beta1) * gx;
      vt[k][x] = state.beta2 * vt[k][x] + (1.0 - state.beta2) * gx * gx;
      const double mh = mt[k][x] / c1;
      const double vh = vt[k][x] / c2;
      pt[k][x] -= lr * mh / (std::sqrt(vh) + state.epsilon);
    }
  }
  return next;
}

EdgeBatch sample_training_batch(const graph::GraphSnapshot& snapshot, Rng& rng, std::size_t negatives_per_positive) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> linked;
  for (const auto& e : snapshot.edges) linked.emplace(e.src, e.dst);

  std::array<std::vector<std::uint32_t>, 3> by_kind;
  for (std::uint32_t i = 0; i < snapshot.size(); ++i) {
    by_kind[static_cast<std::size_t>(snapshot.nodes[i].kind)].push_back(i);
  }

  EdgeBatch batch;
  for (const auto& [src, dst] : linked) {
    batch.add(src, dst, 1.0, 1.0);
    const auto& pool = by_kind[static_cast<std::size_t>(snapshot.nodes[dst].kind)];
    for (std::size_t k = 0; k < negatives_per_positive; ++k) {
      // A few rejection rounds; dense neighborhoods just get fewer negatives.
      for (int attempt = 0; attempt < 10; ++attempt) {
        const std::uint32_t cand = pool[rng.uniform_index(pool.size())];
        if (cand == src || linked.count({src, cand})) continue;
        batch.add(src, cand, 0.0, 1.0);
        break;
      }
    }
  }
  return batch;
}

TrainingView make_training_view(const graph::GraphSnapshot& snapshot, Rng& rng, std::size_t negatives_per_positive,
                                double target_fraction, const ModelOptions& options) {
  if (target_fraction <= 0.0) {
    return {make_adjacency(snapshot, options), sample_training_batch(snapshot, rng, negatives_per_positive)};
  }
  std::set<std::pair<std::uint32_t, std::uint32_t>> linked;
  for (const auto& e : snapshot.edges) linked.emplace(e.src, e.dst);
  std::set<std::pair<std::uint32_t, std::uint32_t>> targets;
  for (const auto& p : linked) {
    if (rng.bernoulli(target_fraction)) targets.insert(p);
  }
  if (targets.empty() && !linked.empty()) {
    targets.insert(*std::next(linked.begin(), static_cast<std::ptrdiff_t>(rng.uniform_index(linked.size()))));
  }

  std::array<std::vector<std::uint32_t>, 3> by_kind;
  for (std::uint32_t i = 0; i < snapshot.size(); ++i) {
    by_kind[static_cast<std::size_t>(snapshot.nodes[i].kind)].push_back(i);
  }
  TrainingView view;
  for (const auto& [src, dst] : targets) {
    view.batch.add(src, dst, 1.0, 1.0);
    const auto& pool = by_kind[static_cast<std::size_t>(snapshot.nodes[dst].kind)];
    for (std::size_t k = 0; k < negatives_per_positive; ++k) {
      for (int attempt = 0; attempt < 10; ++attempt) {
        const std::uint32_t cand = pool[rng.uniform_index(pool.size())];
        if (cand == src || linked.count({src, cand})) continue;
        view.batch.add(src, cand, 0.0, 1.0);
        break;
      }
    }
  }
  view.adjacency = make_adjacency(snapshot, options, targets);
  return view;
}

}  // namespace sentinel::gnn
