#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icgm/features.hpp"
#include "icgm/graph.hpp"

namespace icgm {

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Recipe for a labeled synthetic cohort. Class signal lives in the
/// informative slots: a marginal mean gap of (1 - coupling) * separation
/// within-class standard deviations, plus (for the positive class) a shared
/// per-subject component with weight coupling, so coupling = 1 leaves the
/// per-slot marginals of the two classes identical while their joint
/// distributions differ. All other slots are standard normal noise.
struct SynthSpec {
  int n_subjects = 547;
  int positive_count = 94;
  /// Candidate node counts, each in [3, 8]; one is drawn per subject
  /// (uniformly when weights are empty).
  std::vector<int> node_counts = {7};
  std::vector<double> node_count_weights;
  std::vector<int> informative_slots;  // 0-based feature indices
  double separation = 4.0;
  double structure_coupling = 0.0;
  double jitter = 0.05;  // centroid jitter std, canonical layout units
  EdgeMethod edge_method = EdgeMethod::knn;
  BuildParams edge_params;
  uint64_t seed = 0;

  void validate() const;
};

struct SynthCohort {
  std::vector<RoiGraph> graphs;
  SynthSpec spec;
};

/// Canonical femur-like centroid layout backing the generator; entry i is
/// (roi label, position). Subjects with n nodes use the first n entries.
const std::vector<std::pair<std::string, Point>>& canonical_layout();

/// Deterministic under spec.seed; subject i gets the derived stream
/// ("subject", i). Subjects 0 .. positive_count-1 are fractured.
SynthCohort generate(const SynthSpec& spec);

/// Monte-Carlo estimate of the Bayes-optimal accuracy for the
/// marginal-Gaussian case. Unsupported (nullopt) when structure_coupling > 0.
std::optional<double> oracle_bayes_accuracy(const SynthSpec& spec,
                                            int draws = 100000);

/// Cohort ground truth: the spec and the informative slot names.
std::string synth_metadata_json(const SynthSpec& spec);

/// Parses a SynthSpec from JSON (same shape as synth_metadata_json).
/// Unknown keys are rejected.
SynthSpec synth_spec_from_json(const std::string& text);

}  // namespace icgm
