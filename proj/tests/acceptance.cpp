// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria are independent properties of the library; the heavier
// cohort-level checks share one protocol run where the criterion allows it.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "icgm/pipeline.hpp"

using namespace icgm;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

GraphTensors random_graph(int n, int d, Rng& rng) {
  std::vector<double> feats(static_cast<size_t>(n) * d);
  for (double& v : feats) v = rng.uniform(-1, 1);
  GraphTensors g;
  g.n = n;
  g.features = Tensor::from_values(n, d, std::move(feats));
  g.adjacency = Tensor::zeros(n, n);
  for (int i = 1; i < n; ++i) {
    g.adjacency.at_mut(i - 1, i) = 1.0;
    g.adjacency.at_mut(i, i - 1) = 1.0;
  }
  // A few extra random edges.
  for (int t = 0; t < n; ++t) {
    const int i = static_cast<int>(rng.below(n));
    const int j = static_cast<int>(rng.below(n));
    if (i != j) {
      g.adjacency.at_mut(i, j) = 1.0;
      g.adjacency.at_mut(j, i) = 1.0;
    }
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

/// Central-difference check of d(forward)/d(leaf) for every leaf element.
/// Returns the worst |analytic - fd| / max(1, |fd|, |analytic|).
double max_gradient_violation(const std::function<Tensor()>& forward,
                              std::vector<Tensor> leaves, double h) {
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor out = forward();
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto vals = leaves[li].values_mut();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double fp = forward().scalar_value();
      vals[i] = keep - h;
      const double fm = forward().scalar_value();
      vals[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double g = analytic[li][i];
      worst = std::max(worst, std::abs(g - fd) /
                                  std::max({1.0, std::abs(fd), std::abs(g)}));
    }
  }
  return worst;
}

SynthSpec separable_spec() {
  SynthSpec spec;
  spec.n_subjects = 547;
  spec.positive_count = 94;
  spec.node_counts = {7};
  spec.informative_slots = {0, 5, 16, 34, 40, 60, 75, 90, 110, 121};
  spec.separation = 4.0;
  spec.seed = 2024;
  return spec;
}

TrainConfig headline_config() {
  TrainConfig cfg;
  cfg.steps = 100;
  cfg.batch_size = 64;
  cfg.theta_test = 0.5;
  cfg.repeat_count = 10;
  cfg.seed = 99;
  cfg.net.intra_layers = 5;
  cfg.net.cross_iterations = 3;
  cfg.net.d_intra = 256;
  cfg.net.d_cross = 256;
  return cfg;
}

// Shared between criteria 5, 9 and 12.
SynthCohort g_separable_cohort;
ProtocolResult g_headline_result;
bool g_headline_ran = false;

const ProtocolResult& headline_protocol() {
  if (!g_headline_ran) {
    g_separable_cohort = generate(separable_spec());
    g_headline_result = run_protocol(g_separable_cohort.graphs,
                                     headline_config());
    g_headline_ran = true;
  }
  return g_headline_result;
}

bool criterion_gradients(std::string& detail) {
  double worst = 0.0;
  for (uint64_t seed : {1ull, 2ull}) {
    NetConfig c;
    c.input_dim = 6;
    c.intra_layers = 2;
    c.cross_iterations = 2;
    c.d_intra = 8;
    c.d_cross = 8;
    c.sinkhorn_iters = 4;
    c.similarity_clamp = true;
    ParameterSet p = ParameterSet::init(c, seed);
    Rng rng(seed + 10);
    // The clamp makes the loss non-smooth at scores 0 and 1; redraw the
    // probe graphs until the score sits away from both kinks so finite
    // differences are meaningful.
    GraphTensors g1, g2;
    double score = 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      g1 = random_graph(4, 6, rng);
      g2 = random_graph(4, 6, rng);
      score = forward_pair(g1, g2, p.alias(false), c).scalar_value();
      placed = score > 1e-3 && score < 1.0 - 1e-3;
    }
    if (!placed) {
      detail = "no probe point found away from the clamp kinks";
      return false;
    }
    const int label = seed % 2 ? 1 : 0;
    auto forward = [&] {
      Tensor diff = sub(forward_pair(g1, g2, p, c), Tensor::scalar(label));
      return mul(diff, diff);  // per-pair squared error
    };
    std::vector<Tensor> leaves;
    for (auto& [name, t] : p.named()) leaves.push_back(t);
    worst = std::max(worst, max_gradient_violation(forward, leaves, 1e-5));
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max relative error %.2e", worst);
  detail = buf;
  return worst < 1e-4;
}

bool criterion_sinkhorn(std::string& detail) {
  Rng rng(77);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng.below(8));
    std::vector<double> v(static_cast<size_t>(n) * n);
    for (double& x : v) x = std::exp(rng.uniform(-3, 3));
    // Run to the convergence stop (1e-8 drift); the cap is a safety net.
    Tensor s = sinkhorn(Tensor::from_values(n, n, v), 20000, 1e-8, false);
    for (int i = 0; i < n; ++i) {
      double row = 0.0, col = 0.0;
      for (int j = 0; j < n; ++j) {
        row += s.at(i, j);
        col += s.at(j, i);
      }
      worst = std::max({worst, std::abs(row - 1.0), std::abs(col - 1.0)});
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max sum deviation %.2e", worst);
  detail = buf;
  return worst < 1e-6;
}

bool criterion_self_similarity(std::string& detail) {
  double worst_self = 0.0, worst_sym = 0.0;
  for (int t = 0; t < 100; ++t) {
    NetConfig c;
    c.input_dim = 5;
    c.intra_layers = 2;
    c.cross_iterations = 2;
    c.d_intra = 8;
    c.d_cross = 8;
    c.sinkhorn_iters = 6;
    ParameterSet p = ParameterSet::init(c, 100 + t);
    Rng rng(200 + t);
    const int n = 2 + static_cast<int>(rng.below(6));
    GraphTensors g1 = random_graph(n, 5, rng), g2 = random_graph(n, 5, rng);
    worst_self = std::max(
        worst_self,
        std::abs(forward_pair(g1, g1, p, c).scalar_value() - 1.0));
    worst_sym = std::max(
        worst_sym, std::abs(forward_pair(g1, g2, p, c).scalar_value() -
                            forward_pair(g2, g1, p, c).scalar_value()));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "self error %.2e, asymmetry %.2e", worst_self,
                worst_sym);
  detail = buf;
  return worst_self < 1e-6 && worst_sym < 1e-9;
}

bool criterion_equivariance(std::string& detail) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    NetConfig c;
    c.input_dim = 5;
    c.intra_layers = 2;
    c.cross_iterations = 2;
    c.d_intra = 8;
    c.d_cross = 8;
    c.sinkhorn_iters = 6;
    ParameterSet p = ParameterSet::init(c, 300 + t);
    Rng rng(400 + t);
    const int n = 3 + static_cast<int>(rng.below(5));
    GraphTensors g1 = random_graph(n, 5, rng), g2 = random_graph(n, 5, rng);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    const double base = forward_pair(g1, g2, p, c).scalar_value();
    const double permuted =
        forward_pair(g1, permute_graph(g2, perm), p, c).scalar_value();
    worst = std::max(worst, std::abs(base - permuted));
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max score change %.2e", worst);
  detail = buf;
  return worst < 1e-9;
}

bool criterion_headline(std::string& detail) {
  const auto t0 = Clock::now();
  const ProtocolResult& result = headline_protocol();
  const double per_seed = seconds_since(t0) / 10.0;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "mean SN %.4f, mean SP %.4f, %.1f s per seed", result.mean_sn,
                result.mean_sp, per_seed);
  detail = buf;
  return result.mean_sn >= 0.95 && result.mean_sp >= 0.95 && per_seed <= 600.0;
}

bool criterion_cross_ablation(std::string& detail) {
  SynthSpec spec;
  spec.n_subjects = 200;
  spec.positive_count = 80;
  spec.node_counts = {7};
  spec.informative_slots = {0, 5, 16, 34, 40, 60, 75, 90};
  spec.separation = 4.0;
  spec.structure_coupling = 1.0;
  spec.seed = 404;
  SynthCohort cohort = generate(spec);

  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 16;
  cfg.repeat_count = 10;
  cfg.seed = 11;
  // The coupled cohort carries no marginal signal, so both arms need a
  // regime where they actually learn the joint structure; the stock rate
  // leaves both near chance and the comparison meaningless.
  cfg.adam.learning_rate = 3e-3;
  cfg.net.intra_layers = 2;
  cfg.net.cross_iterations = 2;
  cfg.net.d_intra = 64;
  cfg.net.d_cross = 64;
  ProtocolResult with_cross = run_protocol(cohort.graphs, cfg);

  TrainConfig ablated = cfg;
  ablated.net.cross_embedding_enabled = false;
  ProtocolResult without = run_protocol(cohort.graphs, ablated);

  char buf[128];
  std::snprintf(buf, sizeof buf, "mean SN %.4f with cross vs %.4f without (gap %+.4f)",
                with_cross.mean_sn, without.mean_sn,
                with_cross.mean_sn - without.mean_sn);
  detail = buf;
  return with_cross.mean_sn > without.mean_sn;
}

bool criterion_sweep(std::string& detail) {
  SynthSpec spec;
  spec.n_subjects = 100;
  spec.positive_count = 40;
  spec.node_counts = {7};
  spec.informative_slots = {0, 5, 16, 34, 40, 60, 75, 90, 110, 121};
  spec.separation = 4.0;
  spec.seed = 505;
  SynthCohort cohort = generate(spec);

  TrainConfig cfg;
  cfg.steps = 6;
  cfg.batch_size = 8;
  cfg.repeat_count = 1;
  cfg.seed = 12;
  std::vector<SweepRow> rows =
      sweep(cohort.graphs, cfg, {1, 2, 3, 4}, {2, 3, 4, 5}, {32, 64, 128, 256});
  int failures = 0, nans = 0;
  for (const SweepRow& row : rows) {
    if (row.failed) ++failures;
    if (!std::isfinite(row.mean_sn)) ++nans;
  }
  const std::string csv = sweep_csv(rows);
  const size_t lines = std::count(csv.begin(), csv.end(), '\n');
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu rows, %d failures, %d NaN cells",
                rows.size(), failures, nans);
  detail = buf;
  return rows.size() == 128 && failures == 0 && nans == 0 && lines == 129;
}

bool criterion_importance(std::string& detail) {
  SynthSpec spec;
  spec.n_subjects = 300;
  spec.positive_count = 150;
  spec.node_counts = {7};
  spec.informative_slots = {20};
  spec.separation = 6.0;
  spec.seed = 606;
  SynthCohort cohort = generate(spec);

  std::vector<SubjectLabel> labels;
  for (const RoiGraph& g : cohort.graphs) labels.push_back(g.label);
  DatasetSplit split = make_split(labels, 0.10, 0.80, 13);

  NormStats norm =
      fit_normalization(select_graphs(cohort.graphs, split.train));
  std::vector<RoiGraph> normed = cohort.graphs;
  for (RoiGraph& g : normed) apply_normalization(g, norm);

  TrainConfig cfg;
  cfg.steps = 80;
  cfg.batch_size = 16;
  cfg.seed = 14;
  cfg.net.intra_layers = 2;
  cfg.net.cross_iterations = 2;
  cfg.net.d_intra = 32;
  cfg.net.d_cross = 32;
  TrainResult trained = train(select_graphs(normed, split.train), cfg, norm);

  auto test = select_graphs(normed, split.test);
  auto templates = select_graphs(normed, split.templates);
  auto ranking =
      feature_importance(test, templates, trained.checkpoint, 0.8);

  double noise_worst = 0.0;
  for (size_t i = 1; i < ranking.size(); ++i)
    noise_worst = std::max(noise_worst, std::abs(ranking[i].delta_sn));
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "top slot %d (dSN %.3f), worst noise |dSN| %.3f",
                ranking[0].slot, ranking[0].delta_sn, noise_worst);
  detail = buf;
  return ranking[0].slot == 20 && ranking[0].delta_sn > 0.5 &&
         noise_worst < 0.05;
}

bool criterion_topk(std::string& detail) {
  headline_protocol();  // materializes the shared separable cohort
  std::vector<SubjectLabel> labels;
  for (const RoiGraph& g : g_separable_cohort.graphs) labels.push_back(g.label);
  DatasetSplit split = make_split(labels, 0.10, 0.80, 15);

  NormStats norm =
      fit_normalization(select_graphs(g_separable_cohort.graphs, split.train));
  std::vector<RoiGraph> normed = g_separable_cohort.graphs;
  for (RoiGraph& g : normed) apply_normalization(g, norm);

  TrainConfig cfg;
  cfg.steps = 100;
  cfg.batch_size = 16;
  cfg.seed = 16;
  cfg.net.intra_layers = 2;
  cfg.net.cross_iterations = 2;
  cfg.net.d_intra = 32;
  cfg.net.d_cross = 32;
  TrainResult trained = train(select_graphs(normed, split.train), cfg, norm);

  auto test = select_graphs(normed, split.test);
  auto templates = select_graphs(normed, split.templates);
  auto ranking = feature_importance(test, templates, trained.checkpoint, 0.5);
  auto results =
      topk_eval({10, 130}, ranking, test, templates, trained.checkpoint, 0.5);
  EvalReport baseline = evaluate(test, templates, trained.checkpoint, 0.5);

  const EvalReport& k10 = results[0].report;
  const EvalReport& k130 = results[1].report;
  const bool exact = k130.tp == baseline.tp && k130.tn == baseline.tn &&
                     k130.fp == baseline.fp && k130.fn == baseline.fn;
  const double dacc = std::abs(k10.acc - k130.acc);
  const double dsn = std::abs(k10.sn - k130.sn);
  const double dsp = std::abs(k10.sp - k130.sp);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "K=10 vs K=130 deltas acc %.3f sn %.3f sp %.3f, K=130 %s",
                dacc, dsn, dsp, exact ? "exact" : "NOT exact");
  detail = buf;
  return exact && dacc <= 0.02 && dsn <= 0.02 && dsp <= 0.02;
}

bool criterion_vote_oracles(std::string& detail) {
  Rng rng(808);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(16));
    std::vector<TemplateVote> votes;
    for (int i = 0; i < n; ++i) {
      TemplateVote v;
      v.template_id = "t" + std::to_string(i);
      v.label = rng.uniform() < 0.5 ? SubjectLabel::fractured
                                    : SubjectLabel::non_fractured;
      v.score = rng.uniform();
      votes.push_back(v);
    }
    const double theta = rng.uniform();
    VoteTrace t = tally_votes("g", votes, theta);
    int pos = 0, neg = 0;
    double best = -1.0;
    SubjectLabel best_label = SubjectLabel::unknown;
    for (const TemplateVote& v : votes) {
      if (v.score > theta) (v.label == SubjectLabel::fractured ? pos : neg)++;
      if (v.score > best) {
        best = v.score;
        best_label = v.label;
      }
    }
    const SubjectLabel expect =
        pos + neg == 0 ? best_label
                       : (pos >= neg ? SubjectLabel::fractured
                                     : SubjectLabel::non_fractured);
    if (t.predicted != expect || t.accepted_positive != pos ||
        t.accepted_negative != neg) {
      detail = "vote recount mismatch at trial " + std::to_string(trial);
      return false;
    }
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const int tp = static_cast<int>(rng.below(50));
    const int tn = static_cast<int>(rng.below(50));
    const int fp = static_cast<int>(rng.below(50));
    const int fn = static_cast<int>(rng.below(50));
    EvalReport r = report_from_counts(tp, tn, fp, fn);
    const int total = tp + tn + fp + fn;
    if (total > 0 &&
        r.acc != static_cast<double>(tp + tn) / total) {
      detail = "accuracy mismatch";
      return false;
    }
    if (total == 0 && r.acc_defined) {
      detail = "empty table should leave accuracy undefined";
      return false;
    }
    if (tp + fn > 0 && r.sn != static_cast<double>(tp) / (tp + fn)) {
      detail = "sensitivity mismatch";
      return false;
    }
    if (tp + fn == 0 && r.sn_defined) {
      detail = "sensitivity should be undefined without positives";
      return false;
    }
    if (tn + fp > 0 && r.sp != static_cast<double>(tn) / (tn + fp)) {
      detail = "specificity mismatch";
      return false;
    }
    if (2 * tp + fp + fn > 0 &&
        r.f1 != 2.0 * tp / (2.0 * tp + fp + fn)) {
      detail = "F1 mismatch";
      return false;
    }
  }
  detail = "10000 vote recounts and 1000 confusion tables exact";
  return true;
}

bool criterion_edge_builders(std::string& detail) {
  std::ostringstream csv;
  csv << "method,connected_fraction,mean_acc,mean_sn,mean_sp\n";
  int rows = 0;
  bool all_connected = true;
  for (EdgeMethod method :
       {EdgeMethod::knn, EdgeMethod::delaunay, EdgeMethod::distance}) {
    SynthSpec spec;
    spec.n_subjects = 80;
    spec.positive_count = 32;
    spec.node_counts = {7};
    spec.informative_slots = {0, 5, 16, 34, 40, 60, 75, 90, 110, 121};
    spec.separation = 4.0;
    spec.seed = 909;
    spec.edge_method = method;
    if (method == EdgeMethod::distance) spec.edge_params.threshold = 1.5;
    SynthCohort cohort = generate(spec);
    int connected = 0;
    for (const RoiGraph& g : cohort.graphs) {
      validate_graph(g);  // throws if disconnected
      ++connected;
    }
    if (connected != spec.n_subjects) all_connected = false;

    TrainConfig cfg;
    cfg.steps = 20;
    cfg.batch_size = 8;
    cfg.repeat_count = 2;
    cfg.seed = 17;
    cfg.net.intra_layers = 2;
    cfg.net.cross_iterations = 1;
    cfg.net.d_intra = 16;
    cfg.net.d_cross = 16;
    ProtocolResult result = run_protocol(cohort.graphs, cfg);
    csv << to_string(method) << ","
        << static_cast<double>(connected) / spec.n_subjects << ","
        << result.mean_acc << "," << result.mean_sn << "," << result.mean_sp
        << "\n";
    ++rows;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d methods, all graphs connected: %s", rows,
                all_connected ? "yes" : "no");
  detail = buf;
  const std::string table = csv.str();
  return rows == 3 && all_connected &&
         std::count(table.begin(), table.end(), '\n') == 4;
}

bool criterion_determinism(std::string& detail) {
  const ProtocolResult& first = headline_protocol();
  ProtocolResult second =
      run_protocol(g_separable_cohort.graphs, headline_config());
  if (first.reports.size() != second.reports.size()) {
    detail = "repeat count differs between runs";
    return false;
  }
  for (size_t r = 0; r < first.reports.size(); ++r)
    if (eval_report_to_json(first.reports[r]) !=
        eval_report_to_json(second.reports[r])) {
      detail = "report " + std::to_string(r) + " differs between runs";
      return false;
    }
  detail = std::to_string(first.reports.size()) +
           " reports byte-identical across runs";
  return true;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<bool(std::string&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient integrity", criterion_gradients},
      {2, "sinkhorn invariant", criterion_sinkhorn},
      {3, "self-similarity and symmetry", criterion_self_similarity},
      {4, "permutation equivariance", criterion_equivariance},
      {5, "synthetic cohort target", criterion_headline},
      {6, "cross-embedding ablation", criterion_cross_ablation},
      {7, "sweep sanity", criterion_sweep},
      {8, "importance oracle", criterion_importance},
      {9, "top-K plateau", criterion_topk},
      {10, "vote and metric oracles", criterion_vote_oracles},
      {11, "edge-builder comparison", criterion_edge_builders},
      {12, "determinism", criterion_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = Clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    if (!ok) ++failures;
    std::printf("criterion %2d (%s): %s [%.1f s] %s\n", c.id, c.name,
                ok ? "PASS" : "FAIL", seconds_since(t0), detail.c_str());
    std::fflush(stdout);
  }
  if (failures) std::printf("%d criterion(s) FAILED\n", failures);
  return failures == 0 ? 0 : 1;
}
