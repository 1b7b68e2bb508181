#include "icgm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"

namespace icgm {

using json = nlohmann::ordered_json;

void SynthSpec::validate() const {
  if (n_subjects < 1) throw SynthError("n_subjects must be >= 1");
  if (positive_count < 0 || positive_count > n_subjects)
    throw SynthError("positive_count must be in [0, n_subjects]");
  if (node_counts.empty()) throw SynthError("node_counts must be nonempty");
  const int layout_size = static_cast<int>(canonical_layout().size());
  for (int n : node_counts)
    if (n < 3 || n > layout_size)
      throw SynthError("node counts must be in [3, " +
                       std::to_string(layout_size) + "], got " +
                       std::to_string(n));
  if (!node_count_weights.empty()) {
    if (node_count_weights.size() != node_counts.size())
      throw SynthError("node_count_weights must match node_counts in length");
    double total = 0.0;
    for (double w : node_count_weights) {
      if (w < 0.0) throw SynthError("node count weights must be >= 0");
      total += w;
    }
    if (total <= 0.0) throw SynthError("node count weights sum to zero");
  }
  std::set<int> seen;
  for (int s : informative_slots) {
    if (s < 0 || s >= kFeatureDim)
      throw SynthError("informative slot " + std::to_string(s) +
                       " outside [0, " + std::to_string(kFeatureDim) + ")");
    if (!seen.insert(s).second)
      throw SynthError("duplicate informative slot " + std::to_string(s));
  }
  if (separation < 0.0) throw SynthError("separation must be >= 0");
  if (structure_coupling < 0.0 || structure_coupling > 1.0)
    throw SynthError("structure_coupling must be in [0, 1]");
  if (jitter < 0.0) throw SynthError("jitter must be >= 0");
}

const std::vector<std::pair<std::string, Point>>& canonical_layout() {
  // Rough proximal-femur arrangement in arbitrary units; only the relative
  // geometry matters for edge building.
  static const std::vector<std::pair<std::string, Point>> layout = {
      {"femur_head", {1.0, 4.2}},
      {"subcapital", {1.8, 3.6}},
      {"inferior_neck", {2.4, 2.8}},
      {"superior_neck", {2.6, 3.8}},
      {"intertrochanteric", {3.4, 2.6}},
      {"greater_trochanter", {4.2, 3.4}},
      {"femur_shaft", {4.0, 0.8}},
      {"lesser_trochanter", {3.2, 1.6}},
  };
  return layout;
}

namespace {

int draw_node_count(const SynthSpec& spec, Rng& rng) {
  if (spec.node_counts.size() == 1) return spec.node_counts[0];
  if (spec.node_count_weights.empty())
    return spec.node_counts[rng.below(spec.node_counts.size())];
  double total = 0.0;
  for (double w : spec.node_count_weights) total += w;
  double u = rng.uniform(0.0, total);
  for (size_t i = 0; i < spec.node_counts.size(); ++i) {
    u -= spec.node_count_weights[i];
    if (u < 0.0) return spec.node_counts[i];
  }
  return spec.node_counts.back();
}

}  // namespace

SynthCohort generate(const SynthSpec& spec) {
  spec.validate();
  const auto& layout = canonical_layout();
  const std::set<int> informative(spec.informative_slots.begin(),
                                  spec.informative_slots.end());
  const double rho = spec.structure_coupling;
  const double mean_gap = (1.0 - rho) * spec.separation;
  const double shared_weight = std::sqrt(rho);
  const double noise_weight = std::sqrt(1.0 - rho);

  SynthCohort cohort;
  cohort.spec = spec;
  cohort.graphs.reserve(spec.n_subjects);
  for (int i = 0; i < spec.n_subjects; ++i) {
    Rng rng(derive_seed(spec.seed, "subject", static_cast<uint64_t>(i)));
    const bool positive = i < spec.positive_count;
    const int n = draw_node_count(spec, rng);

    RoiGraph g;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%04d", i);
    g.id = id;
    g.label = positive ? SubjectLabel::fractured : SubjectLabel::non_fractured;

    std::vector<Point> centroids;
    for (int v = 0; v < n; ++v) {
      RoiNode node;
      node.label = layout[v].first;
      node.centroid = {layout[v].second.x + rng.normal(0.0, spec.jitter),
                       layout[v].second.y + rng.normal(0.0, spec.jitter)};
      centroids.push_back(node.centroid);
      g.nodes.push_back(std::move(node));
    }

    // One shared component per informative slot; only the positive class
    // mixes it in, which is what couples its nodes.
    std::vector<double> shared(spec.informative_slots.size());
    for (double& v : shared) v = rng.normal();

    for (RoiNode& node : g.nodes) {
      node.features.resize(kFeatureDim);
      size_t info_idx = 0;
      for (int s = 0; s < kFeatureDim; ++s) {
        const double eps = rng.normal();
        if (informative.count(s)) {
          if (positive)
            node.features[s] = mean_gap / 2.0 +
                               shared_weight * shared[info_idx] +
                               noise_weight * eps;
          else
            node.features[s] = -mean_gap / 2.0 + eps;
          ++info_idx;
        } else {
          node.features[s] = eps;
        }
      }
    }

    g.method = spec.edge_method;
    g.params = spec.edge_params;
    g.edges = build_connected_edges(centroids, spec.edge_method, g.params);
    validate_graph(g);
    cohort.graphs.push_back(std::move(g));
  }
  return cohort;
}

std::optional<double> oracle_bayes_accuracy(const SynthSpec& spec, int draws) {
  spec.validate();
  if (spec.structure_coupling > 0.0) return std::nullopt;
  if (draws < 1) throw SynthError("draws must be >= 1");

  const double gap = spec.separation;
  const double prior1 =
      static_cast<double>(spec.positive_count) / spec.n_subjects;
  const double prior0 = 1.0 - prior1;
  const int k = static_cast<int>(spec.informative_slots.size());

  // With no informative signal the Bayes rule is the prior vote.
  if (k == 0 || gap == 0.0) return std::max(prior0, prior1);

  Rng rng(derive_seed(spec.seed, "bayes-oracle"));
  int correct = 0;
  for (int t = 0; t < draws; ++t) {
    const bool positive = rng.uniform() < prior1;
    const int n = draw_node_count(spec, rng);
    // Sufficient statistic: the sum over all n*k informative entries.
    // log LR = gap * sum(x) (means are +/- gap/2, unit variance).
    double sum = 0.0;
    const double mean = positive ? gap / 2.0 : -gap / 2.0;
    for (int v = 0; v < n * k; ++v) sum += rng.normal(mean, 1.0);
    const double log_lr =
        gap * sum + std::log(std::max(prior1, 1e-300)) -
        std::log(std::max(prior0, 1e-300));
    const bool predicted = log_lr > 0.0;
    if (predicted == positive) ++correct;
  }
  return static_cast<double>(correct) / draws;
}

namespace {

json spec_to_json(const SynthSpec& spec) {
  json j;
  j["n_subjects"] = spec.n_subjects;
  j["positive_count"] = spec.positive_count;
  j["node_counts"] = spec.node_counts;
  j["node_count_weights"] = spec.node_count_weights;
  j["informative_slots"] = spec.informative_slots;
  j["separation"] = spec.separation;
  j["structure_coupling"] = spec.structure_coupling;
  j["jitter"] = spec.jitter;
  j["edge_method"] = to_string(spec.edge_method);
  j["edge_k"] = spec.edge_params.k;
  j["edge_threshold"] = spec.edge_params.threshold;
  j["seed"] = spec.seed;
  return j;
}

}  // namespace

std::string synth_metadata_json(const SynthSpec& spec) {
  json j = spec_to_json(spec);
  json names = json::array();
  for (int s : spec.informative_slots)
    names.push_back(FeatureLayout::instance().name(s));
  j["informative_slot_names"] = names;
  return j.dump(2);
}

SynthSpec synth_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SynthError(std::string("invalid synth spec JSON: ") + e.what());
  }
  SynthSpec spec;
  const json defaults = spec_to_json(spec);
  for (const auto& [key, value] : j.items()) {
    if (key == "informative_slot_names") continue;  // derived, ignored
    if (!defaults.contains(key))
      throw SynthError("unknown synth spec key '" + key + "'");
    (void)value;
  }
  try {
    if (j.contains("n_subjects")) spec.n_subjects = j["n_subjects"];
    if (j.contains("positive_count")) spec.positive_count = j["positive_count"];
    if (j.contains("node_counts"))
      spec.node_counts = j["node_counts"].get<std::vector<int>>();
    if (j.contains("node_count_weights"))
      spec.node_count_weights =
          j["node_count_weights"].get<std::vector<double>>();
    if (j.contains("informative_slots"))
      spec.informative_slots = j["informative_slots"].get<std::vector<int>>();
    if (j.contains("separation")) spec.separation = j["separation"];
    if (j.contains("structure_coupling"))
      spec.structure_coupling = j["structure_coupling"];
    if (j.contains("jitter")) spec.jitter = j["jitter"];
    if (j.contains("edge_method"))
      spec.edge_method = edge_method_from_string(j["edge_method"]);
    if (j.contains("edge_k")) spec.edge_params.k = j["edge_k"];
    if (j.contains("edge_threshold"))
      spec.edge_params.threshold = j["edge_threshold"];
    if (j.contains("seed")) spec.seed = j["seed"];
  } catch (const json::exception& e) {
    throw SynthError(std::string("invalid synth spec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace icgm
