#include "icgm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace icgm {

using json = nlohmann::ordered_json;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void TrainConfig::validate() const {
  if (steps < 0) throw PipelineError("steps (N) must be >= 0");
  if (batch_size < 1) throw PipelineError("batch_size (B) must be >= 1");
  if (theta_test < 0.0 || theta_test > 1.0 || theta_explain < 0.0 ||
      theta_explain > 1.0)
    throw PipelineError("theta must be in [0, 1]");
  if (repeat_count < 1) throw PipelineError("repeat_count must be >= 1");
  if (template_frac <= 0.0 || train_frac <= 0.0 ||
      template_frac >= 1.0 || train_frac >= 1.0)
    throw PipelineError("split fractions must be in (0, 1)");
  net.validate();
}

int pair_label(const RoiGraph& g1, const RoiGraph& g2) {
  if (g1.label == SubjectLabel::unknown || g2.label == SubjectLabel::unknown)
    throw PipelineError("pair_label requires known labels ('" + g1.id +
                        "', '" + g2.id + "')");
  return g1.label == g2.label ? 1 : 0;
}

PairBatch sample_pair_batch(const std::vector<const RoiGraph*>& train, int B,
                            Rng& rng) {
  // Only node counts shared by at least two graphs can form pairs.
  std::map<int, std::vector<int>> by_count;
  for (size_t i = 0; i < train.size(); ++i)
    by_count[train[i]->node_count()].push_back(static_cast<int>(i));
  std::vector<int> eligible;  // graph indices inside a pairable count group
  for (const auto& [count, members] : by_count)
    if (members.size() >= 2)
      eligible.insert(eligible.end(), members.begin(), members.end());
  if (eligible.empty())
    throw PipelineError("no two train graphs share a node count");

  auto draw_pair = [&](PairBatch& batch) {
    const int i = eligible[rng.below(eligible.size())];
    const auto& group = by_count[train[i]->node_count()];
    int j = i;
    while (j == i) j = group[rng.below(group.size())];
    batch.pairs.emplace_back(std::min(i, j), std::max(i, j));
    batch.labels.push_back(pair_label(*train[i], *train[j]));
  };

  PairBatch batch;
  for (int b = 0; b < B; ++b) draw_pair(batch);

  // Nudge the same-class rate into [0.25, 0.75] by redrawing surplus pairs.
  // Bounded, so a degenerate pool (e.g. one class) still yields a batch.
  const int lo = (B + 3) / 4;          // ceil(B/4)
  const int hi = B - lo;               // floor(3B/4) counterpart
  int positives = 0;
  for (int l : batch.labels) positives += l;
  for (int attempt = 0; attempt < 50 * B; ++attempt) {
    if (positives >= lo && positives <= hi) break;
    const int want = positives < lo ? 1 : 0;
    // Replace one surplus pair with a fresh draw of the wanted label.
    PairBatch redraw;
    draw_pair(redraw);
    if (redraw.labels[0] != want) continue;
    for (int b = 0; b < B; ++b) {
      if (batch.labels[b] != want) {
        batch.pairs[b] = redraw.pairs[0];
        batch.labels[b] = want;
        positives += want == 1 ? 1 : -1;
        break;
      }
    }
  }
  return batch;
}

TrainResult train(const std::vector<const RoiGraph*>& train_graphs,
                  const TrainConfig& config, const NormStats& norm) {
  config.validate();
  TrainResult result;
  result.checkpoint.config = config.net;
  result.checkpoint.params = ParameterSet::init(config.net, config.seed);
  result.checkpoint.norm = norm;
  result.checkpoint.seed = config.seed;
  if (config.steps == 0) return result;

  std::vector<GraphTensors> tensors;
  tensors.reserve(train_graphs.size());
  for (const RoiGraph* g : train_graphs) tensors.push_back(graph_tensors(*g));

  Rng batch_rng(derive_seed(config.seed, "batches"));
  auto named = result.checkpoint.params.named();
  AdamState adam{config.adam};
  double last_finite = kNaN;

  for (int step = 0; step < config.steps; ++step) {
    PairBatch batch =
        sample_pair_batch(train_graphs, config.batch_size, batch_rng);
    for (auto& [name, p] : named) p.zero_grad();
    double batch_loss = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto [i, j] = batch.pairs[b];
      Tensor s_hat = forward_pair(tensors[i], tensors[j],
                                  result.checkpoint.params, config.net);
      Tensor diff = sub(s_hat, Tensor::scalar(batch.labels[b]));
      Tensor loss = scale(mul(diff, diff), 1.0 / config.batch_size);
      batch_loss += loss.scalar_value();
      loss.backward();  // gradients accumulate across the batch
    }
    if (!std::isfinite(batch_loss))
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                         " (last finite loss " + std::to_string(last_finite) +
                         ")");
    last_finite = batch_loss;
    result.loss_curve.push_back(batch_loss);
    for (auto& [name, p] : named) p.grad_mut();  // zero-fill untouched params
    adam_step(named, adam);
  }
  return result;
}

namespace {

/// Inference-side cache: graph tensors plus the intra embedding, computed
/// once per graph under frozen parameters.
struct EmbeddedGraph {
  const RoiGraph* graph = nullptr;
  GraphTensors gt;
  Tensor z;
};

EmbeddedGraph embed_graph(const RoiGraph& g, const ParameterSet& frozen,
                          const NetConfig& config) {
  EmbeddedGraph e;
  e.graph = &g;
  e.gt = graph_tensors(g);
  e.z = intra_embed(e.gt, frozen, config);
  return e;
}

double pair_score(const EmbeddedGraph& a, const EmbeddedGraph& b,
                  const ParameterSet& frozen, const NetConfig& config) {
  Tensor assignment;
  if (config.cross_embedding_enabled && config.cross_iterations > 0)
    assignment = node_affinity(a.z, b.z, frozen, config);
  auto [h1, h2] = cross_embed(a.z, b.z, assignment, frozen, config);
  return similarity(pool(h1), pool(h2), config.similarity_clamp).scalar_value();
}

VoteTrace vote(const EmbeddedGraph& test,
               const std::vector<EmbeddedGraph>& templates,
               const ParameterSet& frozen, const NetConfig& config,
               double theta) {
  std::vector<TemplateVote> votes;
  for (const EmbeddedGraph& t : templates) {
    if (t.gt.n != test.gt.n) continue;
    TemplateVote v;
    v.template_id = t.graph->id;
    v.label = t.graph->label;
    v.score = pair_score(test, t, frozen, config);
    votes.push_back(std::move(v));
  }
  if (votes.empty())
    throw PipelineError("no template matches the RoI count of graph '" +
                        test.graph->id + "'");
  return tally_votes(test.graph->id, std::move(votes), theta);
}

void finish_metrics(EvalReport& r) {
  const int total = r.tp + r.tn + r.fp + r.fn;
  r.acc_defined = total > 0;
  r.sn_defined = r.tp + r.fn > 0;
  r.sp_defined = r.tn + r.fp > 0;
  r.f1_defined = 2 * r.tp + r.fp + r.fn > 0;
  r.acc = r.acc_defined ? static_cast<double>(r.tp + r.tn) / total : kNaN;
  r.sn = r.sn_defined ? static_cast<double>(r.tp) / (r.tp + r.fn) : kNaN;
  r.sp = r.sp_defined ? static_cast<double>(r.tn) / (r.tn + r.fp) : kNaN;
  r.f1 = r.f1_defined ? 2.0 * r.tp / (2.0 * r.tp + r.fp + r.fn) : kNaN;
}

}  // namespace

VoteTrace tally_votes(const std::string& graph_id,
                      std::vector<TemplateVote> votes, double theta) {
  if (votes.empty())
    throw PipelineError("no template votes for graph '" + graph_id + "'");
  VoteTrace trace;
  trace.graph_id = graph_id;
  trace.votes = std::move(votes);
  int best = 0;
  for (size_t i = 0; i < trace.votes.size(); ++i) {
    TemplateVote& v = trace.votes[i];
    v.accepted = v.score > theta;
    if (v.accepted) {
      if (v.label == SubjectLabel::fractured)
        ++trace.accepted_positive;
      else
        ++trace.accepted_negative;
    }
    if (v.score > trace.votes[best].score) best = static_cast<int>(i);
  }
  if (trace.accepted_positive + trace.accepted_negative == 0) {
    trace.fallback_used = true;
    trace.predicted = trace.votes[best].label;
  } else if (trace.accepted_positive >= trace.accepted_negative) {
    trace.predicted = SubjectLabel::fractured;  // tie goes to positive
  } else {
    trace.predicted = SubjectLabel::non_fractured;
  }
  return trace;
}

EvalReport report_from_counts(int tp, int tn, int fp, int fn) {
  if (tp < 0 || tn < 0 || fp < 0 || fn < 0)
    throw PipelineError("confusion counts must be non-negative");
  EvalReport r;
  r.tp = tp;
  r.tn = tn;
  r.fp = fp;
  r.fn = fn;
  finish_metrics(r);
  return r;
}

VoteTrace predict(const RoiGraph& test_graph,
                  const std::vector<const RoiGraph*>& templates,
                  const Checkpoint& ckpt, double theta) {
  if (theta < 0.0 || theta > 1.0)
    throw PipelineError("theta must be in [0, 1]");
  ParameterSet frozen = ckpt.params.alias(false);
  EmbeddedGraph test = embed_graph(test_graph, frozen, ckpt.config);
  std::vector<EmbeddedGraph> embedded;
  for (const RoiGraph* t : templates)
    if (t->node_count() == test_graph.node_count())
      embedded.push_back(embed_graph(*t, frozen, ckpt.config));
  return vote(test, embedded, frozen, ckpt.config, theta);
}

EvalReport evaluate(const std::vector<const RoiGraph*>& test_graphs,
                    const std::vector<const RoiGraph*>& templates,
                    const Checkpoint& ckpt, double theta) {
  if (theta < 0.0 || theta > 1.0)
    throw PipelineError("theta must be in [0, 1]");
  ParameterSet frozen = ckpt.params.alias(false);
  std::vector<EmbeddedGraph> embedded;
  embedded.reserve(templates.size());
  for (const RoiGraph* t : templates)
    embedded.push_back(embed_graph(*t, frozen, ckpt.config));

  EvalReport report;
  report.theta = theta;
  report.seed = ckpt.seed;
  report.net = ckpt.config;
  for (const RoiGraph* g : test_graphs) {
    if (g->label == SubjectLabel::unknown)
      throw PipelineError("test graph '" + g->id + "' has no label");
    EmbeddedGraph test = embed_graph(*g, frozen, ckpt.config);
    VoteTrace trace = vote(test, embedded, frozen, ckpt.config, theta);
    const bool actual = g->label == SubjectLabel::fractured;
    const bool predicted = trace.predicted == SubjectLabel::fractured;
    if (actual && predicted) ++report.tp;
    else if (actual) ++report.fn;
    else if (predicted) ++report.fp;
    else ++report.tn;
    report.traces.push_back(std::move(trace));
  }
  finish_metrics(report);
  return report;
}

namespace {

json metric_json(double value, bool defined) {
  if (!defined) return nullptr;
  return value;
}

json net_config_json(const NetConfig& c) {
  json j;
  j["input_dim"] = c.input_dim;
  j["intra_layers"] = c.intra_layers;
  j["cross_iterations"] = c.cross_iterations;
  j["d_intra"] = c.d_intra;
  j["d_cross"] = c.d_cross;
  j["sinkhorn_iters"] = c.sinkhorn_iters;
  j["sinkhorn_epsilon"] = c.sinkhorn_epsilon;
  j["cross_embedding_enabled"] = c.cross_embedding_enabled;
  j["similarity_clamp"] = c.similarity_clamp;
  j["share_cross_directions"] = c.share_cross_directions;
  j["recompute_affinity"] = c.recompute_affinity;
  j["exp_clamp"] = c.exp_clamp;
  return j;
}

std::string fmt_metric(double value, bool defined) {
  if (!defined) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& r) {
  json j;
  j["tp"] = r.tp;
  j["tn"] = r.tn;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["acc"] = metric_json(r.acc, r.acc_defined);
  j["sn"] = metric_json(r.sn, r.sn_defined);
  j["sp"] = metric_json(r.sp, r.sp_defined);
  j["f1"] = metric_json(r.f1, r.f1_defined);
  j["theta"] = r.theta;
  j["seed"] = r.seed;
  j["net"] = net_config_json(r.net);
  j["traces"] = json::array();
  for (const VoteTrace& t : r.traces) {
    json jt;
    jt["graph_id"] = t.graph_id;
    jt["predicted"] = to_string(t.predicted);
    jt["accepted_positive"] = t.accepted_positive;
    jt["accepted_negative"] = t.accepted_negative;
    jt["fallback_used"] = t.fallback_used;
    jt["votes"] = json::array();
    for (const TemplateVote& v : t.votes) {
      json jv;
      jv["template_id"] = v.template_id;
      jv["label"] = to_string(v.label);
      jv["score"] = v.score;
      jv["accepted"] = v.accepted;
      jt["votes"].push_back(std::move(jv));
    }
    j["traces"].push_back(std::move(jt));
  }
  return j.dump(2);
}

std::string eval_report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "tp,tn,fp,fn,acc,sn,sp,f1\n";
  out << r.tp << ',' << r.tn << ',' << r.fp << ',' << r.fn << ','
      << fmt_metric(r.acc, r.acc_defined) << ','
      << fmt_metric(r.sn, r.sn_defined) << ','
      << fmt_metric(r.sp, r.sp_defined) << ','
      << fmt_metric(r.f1, r.f1_defined) << '\n';
  return out.str();
}

namespace {

void mean_std(const std::vector<double>& xs, double& mean, double& std) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  std = std::sqrt(var / xs.size());
}

}  // namespace

std::vector<const RoiGraph*> select_graphs(const std::vector<RoiGraph>& cohort,
                                           const std::vector<int>& indices) {
  std::vector<const RoiGraph*> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(&cohort[i]);
  return out;
}

std::vector<RoiGraph> zero_slots(const std::vector<const RoiGraph*>& graphs,
                                 const std::vector<int>& slots) {
  std::vector<RoiGraph> out;
  out.reserve(graphs.size());
  for (const RoiGraph* g : graphs) {
    RoiGraph copy = *g;
    for (RoiNode& node : copy.nodes)
      for (int s : slots) node.features.at(s) = 0.0;
    out.push_back(std::move(copy));
  }
  return out;
}

ProtocolResult run_protocol(const std::vector<RoiGraph>& cohort,
                            const TrainConfig& config) {
  config.validate();
  std::vector<SubjectLabel> labels;
  for (const RoiGraph& g : cohort) labels.push_back(g.label);

  ProtocolResult result;
  std::vector<double> accs, sns, sps, f1s;
  for (int r = 0; r < config.repeat_count; ++r) {
    const uint64_t rseed =
        derive_seed(config.seed, "repeat", static_cast<uint64_t>(r));
    DatasetSplit split =
        make_split(labels, config.template_frac, config.train_frac, rseed);

    std::vector<RoiGraph> normalized = cohort;  // copy, then z-score in place
    NormStats norm =
        fit_normalization(select_graphs(normalized, split.train));
    for (RoiGraph& g : normalized) apply_normalization(g, norm);

    TrainConfig run = config;
    run.seed = rseed;
    TrainResult trained =
        train(select_graphs(normalized, split.train), run, norm);
    EvalReport report = evaluate(select_graphs(normalized, split.test),
                                 select_graphs(normalized, split.templates),
                                 trained.checkpoint, config.theta_test);
    accs.push_back(report.acc);
    sns.push_back(report.sn);
    sps.push_back(report.sp);
    f1s.push_back(report.f1);
    result.reports.push_back(std::move(report));
  }
  mean_std(accs, result.mean_acc, result.std_acc);
  mean_std(sns, result.mean_sn, result.std_sn);
  mean_std(sps, result.mean_sp, result.std_sp);
  mean_std(f1s, result.mean_f1, result.std_f1);
  return result;
}

std::vector<ImportanceEntry> feature_importance(
    const std::vector<const RoiGraph*>& test_graphs,
    const std::vector<const RoiGraph*>& templates, const Checkpoint& ckpt,
    double theta) {
  const double baseline = evaluate(test_graphs, templates, ckpt, theta).sn;
  std::vector<ImportanceEntry> entries;
  entries.reserve(kFeatureDim);
  for (int slot = 0; slot < kFeatureDim; ++slot) {
    std::vector<RoiGraph> ablated_test = zero_slots(test_graphs, {slot});
    std::vector<RoiGraph> ablated_templates = zero_slots(templates, {slot});
    std::vector<const RoiGraph*> test_view, template_view;
    for (const RoiGraph& g : ablated_test) test_view.push_back(&g);
    for (const RoiGraph& g : ablated_templates) template_view.push_back(&g);
    const double ablated = evaluate(test_view, template_view, ckpt, theta).sn;
    entries.push_back({slot, FeatureLayout::instance().name(slot),
                       baseline - ablated});
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) {
                     return a.delta_sn > b.delta_sn;
                   });
  return entries;
}

std::string importance_csv(const std::vector<ImportanceEntry>& entries) {
  std::ostringstream out;
  out << "slot_name,delta_sn\n";
  for (const ImportanceEntry& e : entries)
    out << e.name << ',' << fmt_metric(e.delta_sn, std::isfinite(e.delta_sn))
        << '\n';
  return out.str();
}

std::vector<TopKResult> topk_eval(
    const std::vector<int>& k_list, const std::vector<ImportanceEntry>& ranking,
    const std::vector<const RoiGraph*>& test_graphs,
    const std::vector<const RoiGraph*>& templates, const Checkpoint& ckpt,
    double theta) {
  if (static_cast<int>(ranking.size()) != kFeatureDim)
    throw PipelineError("ranking must cover all " +
                        std::to_string(kFeatureDim) + " slots");
  std::vector<TopKResult> results;
  for (int k : k_list) {
    if (k < 0 || k > kFeatureDim)
      throw PipelineError("K must be in [0, " + std::to_string(kFeatureDim) +
                          "], got " + std::to_string(k));
    std::vector<int> masked;  // slots outside the top K
    for (int i = k; i < kFeatureDim; ++i) masked.push_back(ranking[i].slot);
    if (masked.empty()) {
      results.push_back({k, evaluate(test_graphs, templates, ckpt, theta)});
      continue;
    }
    std::vector<RoiGraph> masked_test = zero_slots(test_graphs, masked);
    std::vector<RoiGraph> masked_templates = zero_slots(templates, masked);
    std::vector<const RoiGraph*> test_view, template_view;
    for (const RoiGraph& g : masked_test) test_view.push_back(&g);
    for (const RoiGraph& g : masked_templates) template_view.push_back(&g);
    results.push_back({k, evaluate(test_view, template_view, ckpt, theta)});
  }
  return results;
}

std::string topk_csv(const std::vector<TopKResult>& results) {
  std::ostringstream out;
  out << "K,acc,f1,sn,sp\n";
  for (const TopKResult& r : results)
    out << r.k << ',' << fmt_metric(r.report.acc, r.report.acc_defined) << ','
        << fmt_metric(r.report.f1, r.report.f1_defined) << ','
        << fmt_metric(r.report.sn, r.report.sn_defined) << ','
        << fmt_metric(r.report.sp, r.report.sp_defined) << '\n';
  return out.str();
}

std::vector<SweepRow> sweep(const std::vector<RoiGraph>& cohort,
                            const TrainConfig& base_config,
                            const std::vector<int>& m_values,
                            const std::vector<int>& l_values,
                            const std::vector<int>& d_values) {
  std::vector<SweepRow> rows;
  for (int m : m_values)
    for (int l : l_values)
      for (int d : d_values)
        for (bool cross : {true, false}) {
          SweepRow row;
          row.m = m;
          row.l = l;
          row.d = d;
          row.cross_enabled = cross;
          TrainConfig cell = base_config;
          cell.net.cross_iterations = m;
          cell.net.intra_layers = l;
          cell.net.d_intra = d;
          cell.net.d_cross = d;
          cell.net.cross_embedding_enabled = cross;
          try {
            ProtocolResult res = run_protocol(cohort, cell);
            row.mean_sn = res.mean_sn;
            row.std_sn = res.std_sn;
          } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
            row.mean_sn = kNaN;
            row.std_sn = kNaN;
          }
          rows.push_back(std::move(row));
        }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "M,L,d,cross_enabled,mean_sn,std_sn\n";
  for (const SweepRow& row : rows)
    out << row.m << ',' << row.l << ',' << row.d << ','
        << (row.cross_enabled ? 1 : 0) << ','
        << fmt_metric(row.mean_sn, std::isfinite(row.mean_sn)) << ','
        << fmt_metric(row.std_sn, std::isfinite(row.std_sn)) << '\n';
  return out.str();
}

}  // namespace icgm
