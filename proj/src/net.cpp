#include "icgm/net.hpp"

#include <cmath>
#include <iostream>

namespace icgm {

void NetConfig::validate() const {
  if (input_dim < 1) throw NetError("input_dim must be >= 1");
  if (intra_layers < 1) throw NetError("intra_layers (L) must be >= 1");
  if (cross_iterations < 0) throw NetError("cross_iterations (M) must be >= 0");
  if (d_intra < 1 || d_cross < 1) throw NetError("embedding widths must be >= 1");
  if (sinkhorn_iters < 1) throw NetError("sinkhorn_iters must be >= 1");
  if (recompute_affinity && d_intra != d_cross)
    throw NetError("recompute_affinity requires d_intra == d_cross");
}

namespace {

Tensor glorot(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_values(rows, cols, std::move(v), true);
}

MlpParams init_mlp(int in_dim, int hidden, int out_dim, Rng& rng) {
  MlpParams m;
  m.w1 = glorot(in_dim, hidden, rng);
  m.b1 = Tensor::zeros(1, hidden, true);
  m.w2 = glorot(hidden, out_dim, rng);
  m.b2 = Tensor::zeros(1, out_dim, true);
  return m;
}

void name_mlp(std::vector<NamedTensor>& out, const std::string& prefix,
              MlpParams& m) {
  out.emplace_back(prefix + ".w1", m.w1);
  out.emplace_back(prefix + ".b1", m.b1);
  out.emplace_back(prefix + ".w2", m.w2);
  out.emplace_back(prefix + ".b2", m.b2);
}

}  // namespace

ParameterSet ParameterSet::init(const NetConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "params"));
  ParameterSet p;
  for (int l = 0; l < config.intra_layers; ++l) {
    const int in = l == 0 ? config.input_dim : config.d_intra;
    p.intra.push_back(init_mlp(2 * in, config.d_intra, config.d_intra, rng));
  }
  p.affinity = glorot(config.d_intra, config.d_intra, rng);
  for (int m = 0; m < config.cross_iterations; ++m) {
    const int in = m == 0 ? config.d_intra : config.d_cross;
    p.cross.push_back(init_mlp(2 * in, config.d_cross, config.d_cross, rng));
  }
  if (!config.share_cross_directions)
    for (int m = 0; m < config.cross_iterations; ++m) {
      const int in = m == 0 ? config.d_intra : config.d_cross;
      p.cross_reverse.push_back(
          init_mlp(2 * in, config.d_cross, config.d_cross, rng));
    }
  if (config.d_intra != config.d_cross)
    p.projection = glorot(config.d_intra, config.d_cross, rng);
  return p;
}

std::vector<NamedTensor> ParameterSet::named() {
  std::vector<NamedTensor> out;
  for (size_t l = 0; l < intra.size(); ++l)
    name_mlp(out, "intra." + std::to_string(l), intra[l]);
  out.emplace_back("affinity", affinity);
  for (size_t m = 0; m < cross.size(); ++m)
    name_mlp(out, "cross." + std::to_string(m), cross[m]);
  for (size_t m = 0; m < cross_reverse.size(); ++m)
    name_mlp(out, "cross_rev." + std::to_string(m), cross_reverse[m]);
  if (projection.defined()) out.emplace_back("projection", projection);
  return out;
}

ParameterSet ParameterSet::alias(bool requires_grad) const {
  ParameterSet out;
  auto alias_mlp = [&](const MlpParams& m) {
    return MlpParams{Tensor::alias(m.w1, requires_grad),
                     Tensor::alias(m.b1, requires_grad),
                     Tensor::alias(m.w2, requires_grad),
                     Tensor::alias(m.b2, requires_grad)};
  };
  for (const MlpParams& m : intra) out.intra.push_back(alias_mlp(m));
  out.affinity = Tensor::alias(affinity, requires_grad);
  for (const MlpParams& m : cross) out.cross.push_back(alias_mlp(m));
  for (const MlpParams& m : cross_reverse)
    out.cross_reverse.push_back(alias_mlp(m));
  if (projection.defined())
    out.projection = Tensor::alias(projection, requires_grad);
  return out;
}

GraphTensors graph_tensors(const RoiGraph& g) {
  const int n = g.node_count();
  const int d = g.feature_dim();
  if (n < 1) throw NetError("graph '" + g.id + "' has no nodes");
  std::vector<double> feats;
  feats.reserve(static_cast<size_t>(n) * d);
  for (const RoiNode& node : g.nodes) {
    if (static_cast<int>(node.features.size()) != d)
      throw NetError("graph '" + g.id + "' has ragged feature vectors");
    feats.insert(feats.end(), node.features.begin(), node.features.end());
  }
  GraphTensors gt;
  gt.n = n;
  gt.features = Tensor::from_values(n, d, std::move(feats));
  gt.adjacency = Tensor::zeros(n, n);
  for (const auto& [i, j] : g.edges) {
    gt.adjacency.at_mut(i, j) = 1.0;
    gt.adjacency.at_mut(j, i) = 1.0;
  }
  return gt;
}

Tensor apply_mlp(const MlpParams& mlp, const Tensor& x) {
  Tensor h = relu(add_rowvec(matmul(x, mlp.w1), mlp.b1));
  return add_rowvec(matmul(h, mlp.w2), mlp.b2);
}

Tensor intra_embed(const GraphTensors& g, const ParameterSet& params,
                   const NetConfig& config) {
  if (g.features.cols() != config.input_dim)
    throw NetError("feature length " + std::to_string(g.features.cols()) +
                   " does not match configured input dim " +
                   std::to_string(config.input_dim));
  Tensor z = g.features;
  for (const MlpParams& layer : params.intra) {
    Tensor neighbor_sum = matmul(g.adjacency, z);
    z = apply_mlp(layer, concat_cols(neighbor_sum, z));
  }
  return z;
}

namespace {

// Alternating row/column normalization starting from the given orientation.
Tensor sinkhorn_oriented(const Tensor& positive, int iters, double eps,
                         bool fixed_unroll) {
  Tensor s = positive;
  for (int it = 0; it < iters; ++it) {
    s = row_normalize(s);
    s = col_normalize(s);
    if (!fixed_unroll) {
      // Column sums are exactly 1 after col_normalize; only rows can drift.
      double worst = 0.0;
      for (int i = 0; i < s.rows(); ++i) {
        double sum = 0.0;
        for (int j = 0; j < s.cols(); ++j) sum += s.at(i, j);
        worst = std::max(worst, std::abs(sum - 1.0));
      }
      if (worst < eps) break;
    }
  }
  return s;
}

}  // namespace

Tensor sinkhorn(const Tensor& positive, int iters, double eps,
                bool fixed_unroll) {
  for (double v : positive.values())
    if (!(v > 0.0))
      throw NumericError("sinkhorn input must be strictly positive");
  // A single alternating pass is neither transpose-equivariant nor
  // symmetry-preserving on a finite budget, so average both orientations:
  // sinkhorn(M^T) is then bitwise the transpose of sinkhorn(M), and a
  // symmetric input yields a bitwise symmetric output. The pair-score
  // symmetry and self-similarity invariants rely on both properties.
  Tensor fwd = sinkhorn_oriented(positive, iters, eps, fixed_unroll);
  Tensor rev = transpose(
      sinkhorn_oriented(transpose(positive), iters, eps, fixed_unroll));
  return scale(add(fwd, rev), 0.5);
}

Tensor node_affinity(const Tensor& z1, const Tensor& z2,
                     const ParameterSet& params, const NetConfig& config) {
  if (z1.rows() != z2.rows())
    throw NetError("graphs must have equal RoI counts (" +
                   std::to_string(z1.rows()) + " vs " +
                   std::to_string(z2.rows()) + ")");
  // Symmetrized affinity weights keep the raw matrix of the swapped pair
  // equal to the transpose of the original, so scores are order-independent.
  Tensor affinity_sym =
      scale(add(params.affinity, transpose(params.affinity)), 0.5);
  Tensor raw = scale(matmul(matmul(z1, affinity_sym), transpose(z2)),
                     1.0 / std::sqrt(static_cast<double>(config.d_intra)));
  Tensor positive = exp_clamped(raw, config.exp_clamp);
  const bool training = z1.requires_grad() || params.affinity.requires_grad();
  return sinkhorn(positive, config.sinkhorn_iters, config.sinkhorn_epsilon,
                  /*fixed_unroll=*/training);
}

std::pair<Tensor, Tensor> cross_embed(const Tensor& z1, const Tensor& z2,
                                      const Tensor& assignment,
                                      const ParameterSet& params,
                                      const NetConfig& config) {
  const bool passthrough =
      !config.cross_embedding_enabled || config.cross_iterations == 0;
  if (passthrough) {
    if (config.d_intra == config.d_cross) return {z1, z2};
    return {matmul(z1, params.projection), matmul(z2, params.projection)};
  }
  Tensor s = assignment;
  Tensor a = z1, b = z2;
  for (int m = 0; m < config.cross_iterations; ++m) {
    const MlpParams& fwd = params.cross[m];
    const MlpParams& rev = config.share_cross_directions
                               ? params.cross[m]
                               : params.cross_reverse[m];
    // Both directions read the pre-update opposite embeddings.
    Tensor mixed1 = matmul(s, b);
    Tensor mixed2 = matmul(transpose(s), a);
    Tensor next_a = apply_mlp(fwd, concat_cols(mixed1, a));
    Tensor next_b = apply_mlp(rev, concat_cols(mixed2, b));
    a = next_a;
    b = next_b;
    if (config.recompute_affinity && m + 1 < config.cross_iterations)
      s = node_affinity(a, b, params, config);
  }
  return {a, b};
}

Tensor pool(const Tensor& node_embeddings) { return mean_rows(node_embeddings); }

Tensor similarity(const Tensor& p1, const Tensor& p2, bool clamp,
                  bool* degenerate) {
  double n1 = 0.0, n2 = 0.0;
  for (double v : p1.values()) n1 += v * v;
  for (double v : p2.values()) n2 += v * v;
  if (degenerate) *degenerate = false;
  if (n1 < 1e-30 || n2 < 1e-30) {
    if (degenerate)
      *degenerate = true;
    else
      std::cerr << "warning: zero pooled embedding, similarity degenerates to 0\n";
    return Tensor::scalar(0.0);
  }
  Tensor denom = sqrt_elem(mul(sum_all(mul(p1, p1)), sum_all(mul(p2, p2))));
  Tensor cosine = divide(dot(p1, p2), denom);
  if (!clamp) return cosine;
  // Clamp to [0, 1]: rounding can push the cosine of near-identical inputs
  // a few ulps above 1.
  Tensor one = Tensor::scalar(1.0);
  return sub(one, relu(sub(one, relu(cosine))));
}

Tensor forward_pair(const GraphTensors& g1, const GraphTensors& g2,
                    const ParameterSet& params, const NetConfig& config) {
  if (g1.n != g2.n)
    throw NetError("graphs must have equal RoI counts (" +
                   std::to_string(g1.n) + " vs " + std::to_string(g2.n) + ")");
  Tensor z1 = intra_embed(g1, params, config);
  Tensor z2 = intra_embed(g2, params, config);
  Tensor assignment;
  if (config.cross_embedding_enabled && config.cross_iterations > 0)
    assignment = node_affinity(z1, z2, params, config);
  auto [h1, h2] = cross_embed(z1, z2, assignment, params, config);
  return similarity(pool(h1), pool(h2), config.similarity_clamp);
}

}  // namespace icgm
