#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "icgm/net.hpp"
#include "icgm/rng.hpp"
#include "test_util.hpp"

using namespace icgm;
namespace fs = std::filesystem;

namespace {

NetConfig tiny_config() {
  NetConfig c;
  c.input_dim = 3;
  c.intra_layers = 2;
  c.cross_iterations = 1;
  c.d_intra = 4;
  c.d_cross = 4;
  c.sinkhorn_iters = 6;
  return c;
}

GraphTensors random_graph(int n, int d, Rng& rng) {
  std::vector<double> feats(static_cast<size_t>(n) * d);
  for (double& v : feats) v = rng.uniform(-1, 1);
  GraphTensors g;
  g.n = n;
  g.features = Tensor::from_values(n, d, std::move(feats));
  g.adjacency = Tensor::zeros(n, n);
  for (int i = 1; i < n; ++i) {  // path backbone keeps it connected
    g.adjacency.at_mut(i - 1, i) = 1.0;
    g.adjacency.at_mut(i, i - 1) = 1.0;
  }
  return g;
}

GraphTensors permute_graph(const GraphTensors& g, const std::vector<int>& perm) {
  GraphTensors out;
  out.n = g.n;
  out.features = Tensor::zeros(g.n, g.features.cols());
  out.adjacency = Tensor::zeros(g.n, g.n);
  for (int i = 0; i < g.n; ++i) {
    for (int c = 0; c < g.features.cols(); ++c)
      out.features.at_mut(perm[i], c) = g.features.at(i, c);
    for (int j = 0; j < g.n; ++j)
      out.adjacency.at_mut(perm[i], perm[j]) = g.adjacency.at(i, j);
  }
  return out;
}

void set_values(Tensor& t, const std::vector<double>& v) {
  REQUIRE(t.values().size() == v.size());
  std::copy(v.begin(), v.end(), t.values_mut().begin());
}

}  // namespace

TEST_CASE("sinkhorn on a 1x1 matrix is [[1]]") {
  Tensor s = sinkhorn(Tensor::full(1, 1, 7.3), 10, 1e-9, false);
  CHECK(s.at(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("sinkhorn of a constant matrix is uniform") {
  Tensor s = sinkhorn(Tensor::full(3, 3, 2.0), 10, 1e-9, false);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(s.at(i, j) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("sinkhorn makes random positive matrices doubly stochastic") {
  Rng rng(21);
  std::vector<double> v(16);
  for (double& x : v) x = std::exp(rng.uniform(-3, 3));
  Tensor s = sinkhorn(Tensor::from_values(4, 4, v), 50, 1e-8, false);
  for (int i = 0; i < 4; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < 4; ++j) {
      row += s.at(i, j);
      col += s.at(j, i);
    }
    CHECK(std::abs(row - 1.0) < 1e-6);
    CHECK(std::abs(col - 1.0) < 1e-6);
  }
}

TEST_CASE("sinkhorn rejects non-positive input") {
  CHECK_THROWS_AS(sinkhorn(Tensor::zeros(2, 2), 5, 1e-6, false), NumericError);
}

TEST_CASE("fixed unroll and early exit agree on the fixed point") {
  Rng rng(22);
  std::vector<double> v(9);
  for (double& x : v) x = rng.uniform(0.5, 2.0);
  Tensor in = Tensor::from_values(3, 3, v);
  Tensor a = sinkhorn(in, 40, 1e-12, true);
  Tensor b = sinkhorn(in, 40, 1e-12, false);
  for (size_t i = 0; i < a.values().size(); ++i)
    CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-9));
}

TEST_CASE("intra embedding of a hand-computed single layer") {
  NetConfig c;
  c.input_dim = 1;
  c.intra_layers = 1;
  c.d_intra = 1;
  c.d_cross = 1;
  ParameterSet p = ParameterSet::init(c, 0);
  set_values(p.intra[0].w1, {1.0, 1.0});  // neighbor-sum slot, own slot
  set_values(p.intra[0].b1, {0.0});
  set_values(p.intra[0].w2, {1.0});
  set_values(p.intra[0].b2, {0.5});

  GraphTensors g;
  g.n = 3;
  g.features = Tensor::from_values(3, 1, {1.0, 2.0, 3.0});
  g.adjacency = Tensor::from_values(3, 3, {0, 1, 0, 1, 0, 1, 0, 1, 0});
  Tensor z = intra_embed(g, p, c);
  // neighbor sums are (2, 4, 2); relu(sum + own) + 0.5
  CHECK(z.at(0, 0) == doctest::Approx(3.5));
  CHECK(z.at(1, 0) == doctest::Approx(6.5));
  CHECK(z.at(2, 0) == doctest::Approx(5.5));
}

TEST_CASE("intra embedding handles a single node and validates input width") {
  NetConfig c = tiny_config();
  ParameterSet p = ParameterSet::init(c, 1);
  Rng rng(4);
  GraphTensors g = random_graph(1, 3, rng);
  Tensor z = intra_embed(g, p, c);
  CHECK(z.rows() == 1);
  CHECK(z.cols() == c.d_intra);

  GraphTensors bad = random_graph(2, 5, rng);
  CHECK_THROWS_AS(intra_embed(bad, p, c), NetError);
}

TEST_CASE("single-node affinity is the trivial assignment") {
  NetConfig c = tiny_config();
  ParameterSet p = ParameterSet::init(c, 2);
  Tensor z1 = Tensor::from_values(1, 4, {1, 2, 3, 4});
  Tensor z2 = Tensor::from_values(1, 4, {4, 3, 2, 1});
  Tensor s = node_affinity(z1, z2, p, c);
  CHECK(s.rows() == 1);
  CHECK(s.at(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("zero affinity weights give the uniform assignment") {
  NetConfig c = tiny_config();
  ParameterSet p = ParameterSet::init(c, 3);
  set_values(p.affinity, std::vector<double>(16, 0.0));
  Rng rng(5);
  std::vector<double> v1(12), v2(12);
  for (double& x : v1) x = rng.uniform(-2, 2);
  for (double& x : v2) x = rng.uniform(-2, 2);
  Tensor s = node_affinity(Tensor::from_values(3, 4, v1),
                           Tensor::from_values(3, 4, v2), p, c);
  for (double p_ij : s.values()) CHECK(p_ij == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("unequal node counts are rejected with both counts named") {
  NetConfig c = tiny_config();
  ParameterSet p = ParameterSet::init(c, 6);
  try {
    node_affinity(Tensor::zeros(2, 4), Tensor::zeros(3, 4), p, c);
    FAIL("expected NetError");
  } catch (const NetError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
}

TEST_CASE("disabled cross embedding is a passthrough") {
  NetConfig c = tiny_config();
  c.cross_embedding_enabled = false;
  ParameterSet p = ParameterSet::init(c, 7);
  Rng rng(6);
  GraphTensors g1 = random_graph(3, 3, rng), g2 = random_graph(3, 3, rng);
  Tensor z1 = intra_embed(g1, p, c), z2 = intra_embed(g2, p, c);
  auto [h1, h2] = cross_embed(z1, z2, Tensor(), p, c);
  CHECK(h1.values()[0] == z1.values()[0]);
  CHECK(h2.values()[5] == z2.values()[5]);

  NetConfig c0 = tiny_config();
  c0.cross_iterations = 0;
  ParameterSet p0 = ParameterSet::init(c0, 7);
  auto [a, b] = cross_embed(z1, z2, Tensor(), p0, c0);
  CHECK(a.values()[0] == z1.values()[0]);
  CHECK(b.values()[0] == z2.values()[0]);
}

TEST_CASE("cross embedding of identical graphs stays symmetric") {
  NetConfig c = tiny_config();
  c.cross_iterations = 2;
  ParameterSet p = ParameterSet::init(c, 8);
  Rng rng(7);
  GraphTensors g = random_graph(4, 3, rng);
  Tensor z = intra_embed(g, p, c);
  Tensor s = node_affinity(z, z, p, c);
  auto [h1, h2] = cross_embed(z, z, s, p, c);
  REQUIRE(h1.values().size() == h2.values().size());
  for (size_t i = 0; i < h1.values().size(); ++i)
    CHECK(h1.values()[i] == doctest::Approx(h2.values()[i]).epsilon(1e-12));
  CHECK(h1.cols() == c.d_cross);
}

TEST_CASE("similarity is 1 for a vector with itself and scale invariant") {
  Tensor v = Tensor::from_values(1, 3, {1.0, -2.0, 0.5});
  CHECK(similarity(v, v, true).values()[0] == doctest::Approx(1.0));
  Tensor w = scale(v, 3.7);
  CHECK(similarity(v, w, true).values()[0] == doctest::Approx(1.0));
}

TEST_CASE("similarity clamp maps negative cosine to 0") {
  Tensor a = Tensor::from_values(1, 2, {1.0, 0.0});
  Tensor b = Tensor::from_values(1, 2, {0.0, 1.0});
  CHECK(similarity(a, b, true).values()[0] == doctest::Approx(0.0));
  Tensor na = Tensor::from_values(1, 2, {-1.0, 0.0});
  CHECK(similarity(a, na, true).values()[0] == doctest::Approx(0.0));
  CHECK(similarity(a, na, false).values()[0] == doctest::Approx(-1.0));
}

TEST_CASE("zero pooled embedding degenerates to 0 with a flag") {
  Tensor z = Tensor::zeros(1, 3);
  Tensor v = Tensor::from_values(1, 3, {1, 2, 3});
  bool degenerate = false;
  Tensor s = similarity(z, v, true, &degenerate);
  CHECK(degenerate);
  CHECK(s.values()[0] == 0.0);
  similarity(v, v, true, &degenerate);
  CHECK_FALSE(degenerate);
}

TEST_CASE("a graph paired with a copy of itself scores 1") {
  NetConfig c = tiny_config();
  ParameterSet p = ParameterSet::init(c, 9);
  Rng rng(8);
  GraphTensors g = random_graph(5, 3, rng);
  Tensor s = forward_pair(g, g, p, c);
  CHECK(s.values()[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("pair score is symmetric and inside [0, 1]") {
  NetConfig c = tiny_config();
  ParameterSet p = ParameterSet::init(c, 10);
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    GraphTensors g1 = random_graph(4, 3, rng), g2 = random_graph(4, 3, rng);
    const double s12 = forward_pair(g1, g2, p, c).values()[0];
    const double s21 = forward_pair(g2, g1, p, c).values()[0];
    CHECK(std::abs(s12 - s21) < 1e-9);
    CHECK(s12 >= 0.0);
    CHECK(s12 <= 1.0);
  }
}

TEST_CASE("pair score is invariant under node relabeling") {
  NetConfig c = tiny_config();
  ParameterSet p = ParameterSet::init(c, 11);
  Rng rng(10);
  for (int t = 0; t < 10; ++t) {
    GraphTensors g1 = random_graph(5, 3, rng), g2 = random_graph(5, 3, rng);
    std::vector<int> perm = {0, 1, 2, 3, 4};
    rng.shuffle(perm);
    GraphTensors g2p = permute_graph(g2, perm);
    const double base = forward_pair(g1, g2, p, c).values()[0];
    const double permuted = forward_pair(g1, g2p, p, c).values()[0];
    CHECK(base == doctest::Approx(permuted).epsilon(1e-9));
  }
}

TEST_CASE("forward pass gradients match finite differences") {
  NetConfig c = tiny_config();
  c.similarity_clamp = false;  // keep the objective smooth at the probe point
  c.sinkhorn_iters = 4;
  ParameterSet p = ParameterSet::init(c, 12);
  Rng rng(11);
  GraphTensors g1 = random_graph(3, 3, rng), g2 = random_graph(3, 3, rng);
  std::vector<Tensor> leaves;
  for (auto& [name, t] : p.named()) leaves.push_back(t);
  testutil::check_gradients([&] { return forward_pair(g1, g2, p, c); }, leaves,
                            1e-6, 2e-3);
}

TEST_CASE("checkpoint round trip is bit exact") {
  NetConfig c = tiny_config();
  c.d_cross = 6;  // exercise the projection tensor
  c.share_cross_directions = false;
  Checkpoint ckpt;
  ckpt.config = c;
  ckpt.params = ParameterSet::init(c, 13);
  ckpt.seed = 13;
  ckpt.norm.mean = {0.5, -1.0, 2.0};
  ckpt.norm.stddev = {1.0, 0.0, 3.0};
  const fs::path path = fs::temp_directory_path() / "icgm_test_ckpt.bin";
  save_checkpoint(ckpt, path.string());
  Checkpoint back = load_checkpoint(path.string());
  fs::remove(path);

  CHECK(back.seed == 13);
  CHECK(back.config.d_cross == 6);
  CHECK(back.config.share_cross_directions == false);
  CHECK(back.norm.mean == ckpt.norm.mean);
  CHECK(back.norm.stddev == ckpt.norm.stddev);
  auto a = ckpt.params.named();
  auto b = back.params.named();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    REQUIRE(a[i].second.values().size() == b[i].second.values().size());
    for (size_t k = 0; k < a[i].second.values().size(); ++k)
      CHECK(a[i].second.values()[k] == b[i].second.values()[k]);
  }
}

TEST_CASE("corrupt checkpoint is rejected") {
  const fs::path path = fs::temp_directory_path() / "icgm_bad_ckpt.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT garbage";
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), NetError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), NetError);
}
