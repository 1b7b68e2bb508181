#pragma once

#include <string>
#include <vector>

#include "icgm/net.hpp"
#include "icgm/synthgen.hpp"

namespace icgm {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int steps = 2000;          // N
  int batch_size = 64;       // B
  double theta_test = 0.5;
  double theta_explain = 0.8;
  uint64_t seed = 0;
  int repeat_count = 10;
  double template_frac = 0.10;
  double train_frac = 0.80;
  AdamConfig adam;
  NetConfig net;

  void validate() const;
};

/// 1 iff both graphs carry the same (known) class label.
int pair_label(const RoiGraph& g1, const RoiGraph& g2);

struct PairBatch {
  std::vector<std::pair<int, int>> pairs;  // indices into the train pool
  std::vector<int> labels;
};

/// B unordered pairs of distinct train graphs with equal node counts.
/// Pair draws are rejection-balanced so the same-class rate stays within
/// [0.25, 0.75] whenever both kinds of pair exist.
PairBatch sample_pair_batch(const std::vector<const RoiGraph*>& train, int B,
                            Rng& rng);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_curve;  // one mean batch loss per step
};

/// N Adam steps of pairwise MSE on pre-normalized train graphs. `norm` is
/// embedded in the checkpoint so inference can normalize raw graphs the same
/// way. A non-finite loss aborts with the step index and last finite loss.
TrainResult train(const std::vector<const RoiGraph*>& train_graphs,
                  const TrainConfig& config, const NormStats& norm);

struct TemplateVote {
  std::string template_id;
  SubjectLabel label = SubjectLabel::unknown;
  double score = 0.0;
  bool accepted = false;
};

struct VoteTrace {
  std::string graph_id;
  std::vector<TemplateVote> votes;  // size-matching templates only
  int accepted_positive = 0;
  int accepted_negative = 0;
  SubjectLabel predicted = SubjectLabel::unknown;
  bool fallback_used = false;
};

/// Pure voting rule over scored templates: accept when score > theta,
/// majority vote over accepted labels, tie goes to fractured, zero
/// acceptances fall back to the best-scoring template's label. An empty
/// candidate list is an error.
VoteTrace tally_votes(const std::string& graph_id,
                      std::vector<TemplateVote> votes, double theta);

/// Majority vote over templates with matching node count: accept when
/// score > theta; tie goes to fractured; zero acceptances fall back to the
/// best-scoring template's label. No size-matching template is an error.
VoteTrace predict(const RoiGraph& test_graph,
                  const std::vector<const RoiGraph*>& templates,
                  const Checkpoint& ckpt, double theta);

struct EvalReport {
  int tp = 0, tn = 0, fp = 0, fn = 0;
  double acc = 0.0, sn = 0.0, sp = 0.0, f1 = 0.0;  // NaN when undefined
  bool acc_defined = true, sn_defined = true, sp_defined = true,
       f1_defined = true;
  std::vector<VoteTrace> traces;
  double theta = 0.5;
  uint64_t seed = 0;
  NetConfig net;
};

/// Metrics recomputed from confusion counts alone (traces left empty).
/// Undefined ratios are NaN with the matching defined flag cleared.
EvalReport report_from_counts(int tp, int tn, int fp, int fn);

/// Confusion counts and metrics over a labeled test split, fractured being
/// the positive class. Graphs must already be normalized per the checkpoint.
EvalReport evaluate(const std::vector<const RoiGraph*>& test_graphs,
                    const std::vector<const RoiGraph*>& templates,
                    const Checkpoint& ckpt, double theta);

std::string eval_report_to_json(const EvalReport& r);
/// Header plus a single metrics row.
std::string eval_report_csv(const EvalReport& r);

struct ProtocolResult {
  std::vector<EvalReport> reports;  // one per repeat
  double mean_acc = 0.0, std_acc = 0.0;
  double mean_sn = 0.0, std_sn = 0.0;
  double mean_sp = 0.0, std_sp = 0.0;
  double mean_f1 = 0.0, std_f1 = 0.0;
};

/// Full protocol: per repeat, derive a seed, re-split the cohort
/// (template / train / test), fit normalization on the train split, train,
/// and evaluate at theta_test. Means and stds are over the repeats.
ProtocolResult run_protocol(const std::vector<RoiGraph>& cohort,
                            const TrainConfig& config);

struct ImportanceEntry {
  int slot = 0;
  std::string name;
  double delta_sn = 0.0;  // baseline SN minus SN with the slot zeroed
};

/// Feature-zeroing importance at threshold theta: zero one slot at a time
/// (post-normalization) on every test and template node, re-evaluate, and
/// rank all slots by the sensitivity drop.
std::vector<ImportanceEntry> feature_importance(
    const std::vector<const RoiGraph*>& test_graphs,
    const std::vector<const RoiGraph*>& templates, const Checkpoint& ckpt,
    double theta = 0.8);

std::string importance_csv(const std::vector<ImportanceEntry>& entries);

struct TopKResult {
  int k = 0;
  EvalReport report;
};

/// For each K, zero every slot outside the top K of `ranking` and evaluate.
/// K = 130 leaves the graphs untouched.
std::vector<TopKResult> topk_eval(
    const std::vector<int>& k_list,
    const std::vector<ImportanceEntry>& ranking,
    const std::vector<const RoiGraph*>& test_graphs,
    const std::vector<const RoiGraph*>& templates, const Checkpoint& ckpt,
    double theta);

std::string topk_csv(const std::vector<TopKResult>& results);

struct SweepRow {
  int m = 0, l = 0, d = 0;
  bool cross_enabled = true;
  double mean_sn = 0.0, std_sn = 0.0;  // NaN on failure
  bool failed = false;
  std::string error;
};

/// Grid over cross iterations M, intra layers L, and width d, each cell run
/// with and without cross embedding via the full protocol. Failures are
/// recorded per cell; the sweep always completes.
std::vector<SweepRow> sweep(const std::vector<RoiGraph>& cohort,
                            const TrainConfig& base_config,
                            const std::vector<int>& m_values,
                            const std::vector<int>& l_values,
                            const std::vector<int>& d_values);

std::string sweep_csv(const std::vector<SweepRow>& rows);

// -- shared helpers ---------------------------------------------------------

/// Pointer views of cohort graphs selected by split indices.
std::vector<const RoiGraph*> select_graphs(const std::vector<RoiGraph>& cohort,
                                           const std::vector<int>& indices);

/// Deep copies with every slot in `slots` set to zero on every node.
std::vector<RoiGraph> zero_slots(const std::vector<const RoiGraph*>& graphs,
                                 const std::vector<int>& slots);

}  // namespace icgm
