#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "icgm/features.hpp"
#include "icgm/graph.hpp"
#include "icgm/optim.hpp"
#include "icgm/tensor.hpp"

namespace icgm {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Architecture hyperparameters of the matching network.
struct NetConfig {
  int input_dim = kFeatureDim;
  int intra_layers = 5;      // L
  int cross_iterations = 3;  // M
  int d_intra = 256;
  int d_cross = 256;
  int sinkhorn_iters = 10;
  double sinkhorn_epsilon = 1e-6;
  bool cross_embedding_enabled = true;
  bool similarity_clamp = true;
  bool share_cross_directions = true;
  bool recompute_affinity = false;  // experimental: refresh S per iteration
  double exp_clamp = 50.0;

  void validate() const;
};

/// One two-layer perceptron: linear -> ReLU -> linear.
struct MlpParams {
  Tensor w1, b1, w2, b2;
};

/// All learnable weights of the network.
struct ParameterSet {
  std::vector<MlpParams> intra;          // per intra layer
  Tensor affinity;                       // d_intra x d_intra
  std::vector<MlpParams> cross;          // per cross iteration
  std::vector<MlpParams> cross_reverse;  // only when directions unshared
  Tensor projection;  // d_intra -> d_cross map, only when widths differ

  /// Glorot-uniform initialization, seeded.
  static ParameterSet init(const NetConfig& config, uint64_t seed);

  /// Stable-order (name, tensor) view for the optimizer and checkpoint.
  /// Tensors are shallow handles onto this set's parameters.
  std::vector<NamedTensor> named();

  /// Same values, fresh grad state. requires_grad = false gives a frozen
  /// inference view with no tape recording.
  ParameterSet alias(bool requires_grad) const;
};

/// A graph lifted into tensors: node features (n x d) and the 0/1 adjacency
/// matrix (n x n), both constant w.r.t. differentiation.
struct GraphTensors {
  Tensor features;
  Tensor adjacency;
  int n = 0;
};

GraphTensors graph_tensors(const RoiGraph& g);

Tensor apply_mlp(const MlpParams& mlp, const Tensor& x);

/// Per-node embeddings after L rounds of neighbor-sum message passing:
/// z <- MLP_l([sum of neighbor embeddings, own embedding]).
Tensor intra_embed(const GraphTensors& g, const ParameterSet& params,
                   const NetConfig& config);

/// Alternating row/column normalization of a strictly positive matrix.
/// With `fixed_unroll` the full iteration budget always runs (static tape
/// for training); otherwise iteration stops once every row and column sum
/// is within eps of 1.
Tensor sinkhorn(const Tensor& positive, int iters, double eps,
                bool fixed_unroll);

/// Doubly-stochastic assignment S = Sinkhorn(exp(z1 A z2^T / sqrt(d))).
Tensor node_affinity(const Tensor& z1, const Tensor& z2,
                     const ParameterSet& params, const NetConfig& config);

/// M iterations of assignment-weighted cross-graph mixing. Both directions
/// read the opposite graph's pre-update embeddings; S stays fixed unless
/// recompute_affinity is set. Passthrough (with width projection) when
/// cross embedding is disabled or M = 0.
std::pair<Tensor, Tensor> cross_embed(const Tensor& z1, const Tensor& z2,
                                      const Tensor& assignment,
                                      const ParameterSet& params,
                                      const NetConfig& config);

/// Graph average pooling: n x d -> 1 x d.
Tensor pool(const Tensor& node_embeddings);

/// Cosine similarity of the pooled embeddings, clamped to [0, 1] when
/// requested. A (near-)zero pooled vector degenerates to 0, reported via
/// the flag.
Tensor similarity(const Tensor& p1, const Tensor& p2, bool clamp,
                  bool* degenerate = nullptr);

/// Full forward pass for a pair of equal-size graphs.
Tensor forward_pair(const GraphTensors& g1, const GraphTensors& g2,
                    const ParameterSet& params, const NetConfig& config);

// -- checkpoint -----------------------------------------------------------

/// Self-describing binary container: versioned header with the architecture
/// hyperparameters, normalization statistics, then named tensors with shape
/// and row-major 64-bit values. Round trip is bit-exact.
struct Checkpoint {
  NetConfig config;
  ParameterSet params;
  NormStats norm;
  uint64_t seed = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace icgm
