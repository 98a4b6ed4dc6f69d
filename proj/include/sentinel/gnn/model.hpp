#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sentinel/common/matrix.hpp"
#include "sentinel/common/rng.hpp"
#include "sentinel/graph/snapshot.hpp"

namespace sentinel::gnn {

enum class GnnErrorKind {
  shape_mismatch,
  non_finite_input,
  index_out_of_range,
  length_mismatch,
  stale_cache,
  invalid_dims,
};

class GnnError : public std::runtime_error {
 public:
  GnnError(GnnErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  GnnErrorKind kind() const { return kind_; }

 private:
  GnnErrorKind kind_;
};

// One message-passing layer: h_i' = ReLU(W_self h_i + sum_j alpha_ij W_neigh h_j).
// The attention logits reuse the same two transforms:
//   e_ij = LeakyReLU(attn . [W_self h_i || W_neigh h_j]).
struct LayerParams {
  Matrix w_self;             // d_out x d_in
  Matrix w_neigh;            // d_out x d_in
  std::vector<double> attn;  // 2 * d_out

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ParamSet {
  std::vector<LayerParams> layers;
  Matrix w_out;  // d_L x d_L bilinear decoder
  // Bumped by every optimizer step; encodings remember the revision they were
  // computed with so backward can refuse a stale cache.
  std::uint64_t revision = 0;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().w_self.cols(); }
  std::size_t output_dim() const { return w_out.rows(); }
  std::vector<std::size_t> dims() const;
  std::size_t parameter_count() const;

  // Flat views in a fixed order: per layer (w_self, w_neigh, attn), then w_out.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  // Bitwise equality of every tensor (revision ignored).
  bool same_values(const ParamSet& other) const;
};

// Gradients share ParamSet's shape tree; revision is unused.
using GradSet = ParamSet;

GradSet zeros_like(const ParamSet& p);

// Xavier-uniform initialization, bound sqrt(6 / (fan_in + fan_out)), drawn in
// tensor order from Rng(seed). dims = {d_0, d_1, ..., d_L}, L >= 1.
ParamSet init_params(std::span<const std::size_t> dims, std::uint64_t seed);

enum class AttentionMode : std::uint8_t { learned = 0, uniform = 1 };

struct ModelOptions {
  AttentionMode attention = AttentionMode::learned;
  // Adds log(edge weight) to the attention logit after the LeakyReLU.
  bool edge_weight_logits = false;
  // Also pass messages against edge direction.
  bool bidirectional = false;
  double leaky_slope = 0.2;

  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

// In-neighbor lists in CSR form. Entry k of node i's range is neighbor j with
// the log of the summed edge weight (0 when weights are unused).
struct Adjacency {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> offsets;  // size num_nodes + 1
  std::vector<std::uint32_t> neighbors;
  std::vector<double> log_weights;

  std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
};

struct DirectedEdge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  double weight = 1.0;
};

// Unique (src, dst) pairs; parallel edges are merged by summing weights.
// Self loops are dropped. Messages flow src -> dst.
Adjacency make_adjacency(std::size_t num_nodes, std::span<const DirectedEdge> edges, bool bidirectional);
Adjacency make_adjacency(const graph::GraphSnapshot& snapshot, const ModelOptions& options);
// Same, without the listed (src, dst) pairs.
Adjacency make_adjacency(const graph::GraphSnapshot& snapshot, const ModelOptions& options,
                         const std::set<std::pair<std::uint32_t, std::uint32_t>>& hidden);

struct LayerActivation {
  Matrix self_part;   // rows W_self h_i
  Matrix neigh_part;  // rows W_neigh h_j
  Matrix pre;         // pre-activation u_i
  Matrix out;         // ReLU(u_i)
  std::vector<double> raw_logits;  // attn . [..||..] per adjacency entry
  std::vector<double> alpha;       // per adjacency entry
};

struct Encoding {
  Matrix input;
  std::vector<LayerActivation> layers;
  std::uint64_t revision = 0;
  std::size_t num_layers_used = 0;

  const Matrix& embeddings() const { return layers.empty() ? input : layers.back().out; }
};

// alpha per adjacency entry (softmax with max subtraction). Isolated nodes
// contribute no entries.
std::vector<double> attention_coefficients(const Matrix& h_prev, const Adjacency& adj,
                                           const LayerParams& layer, const ModelOptions& options);

LayerActivation message_pass_layer(const Matrix& h_prev, const Adjacency& adj, const LayerParams& layer,
                                   const ModelOptions& options);

Encoding encode(const Matrix& features, const Adjacency& adj, const ParamSet& params,
                const ModelOptions& options);

double sigmoid(double x);

// sigmoid(z_i^T W_o z_j)
double decode_edge(const Matrix& z, std::size_t i, std::size_t j, const Matrix& w_out);

inline constexpr double kProbabilityClamp = 1e-7;

struct EdgeBatch {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<double> labels;   // y in {0, 1}
  std::vector<double> weights;  // w > 0

  std::size_t size() const { return pairs.size(); }
  void add(std::uint32_t i, std::uint32_t j, double y, double w) {
    pairs.emplace_back(i, j);
    labels.push_back(y);
    weights.push_back(w);
  }
};

// -sum w [y log p + (1-y) log(1-p)], p clamped to [eps, 1-eps].
double loss_weighted_bce(std::span<const double> predictions, const EdgeBatch& batch);

struct LossAndGrad {
  double loss = 0.0;
  GradSet grads;
};

// Exact gradients of the weighted BCE through decoder and every layer. The
// probability clamp only guards the loss value; the logit gradient is the
// unclamped w (p - y). ReLU/LeakyReLU derivatives are 0 at the kink.
LossAndGrad backward(const Adjacency& adj, const ParamSet& params, const EdgeBatch& batch,
                     const Encoding& cache, const ModelOptions& options);

// Loss only (forward pass + decoder), used by finite-difference checks.
double evaluate_loss(const Matrix& features, const Adjacency& adj, const ParamSet& params,
                     const EdgeBatch& batch, const ModelOptions& options);

struct AdamState {
  GradSet m;
  GradSet v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const ParamSet& p) { return AdamState{zeros_like(p), zeros_like(p)}; }
  friend bool operator==(const AdamState& a, const AdamState& b) {
    return a.step == b.step && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.epsilon == b.epsilon &&
           a.m.same_values(b.m) && a.v.same_values(b.v);
  }
};

// Bias-corrected Adam. Returns the next parameter version (revision + 1).
ParamSet optimizer_step(const ParamSet& params, const GradSet& grads, AdamState& state, double lr);

// Positives are the snapshot's unique (src, dst) pairs; each gets
// `negatives_per_positive` corrupted pairs whose destination is a uniformly
// drawn node of the same kind that is not already linked from src.
EdgeBatch sample_training_batch(const graph::GraphSnapshot& snapshot, Rng& rng,
                                std::size_t negatives_per_positive = 1);

struct TrainingView {
  Adjacency adjacency;
  EdgeBatch batch;
};

// Each unique pair becomes a supervised target with probability
// `target_fraction` (at least one pair is chosen) and is then left out of the
// message-passing graph; the other pairs only pass messages. Negatives are
// drawn as in sample_training_batch. target_fraction 0 supervises every pair
// on the full graph.
TrainingView make_training_view(const graph::GraphSnapshot& snapshot, Rng& rng, std::size_t negatives_per_positive,
                                double target_fraction, const ModelOptions& options);

}  // namespace sentinel::gnn
