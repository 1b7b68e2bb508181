#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "icgm/annotations.hpp"

namespace icgm {

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kFeatureDim = 130;

enum class FeatureFamily {
  intensity_basic,   // slots 0-4
  shape,             // slots 5-15
  first_order,       // slots 16-33
  glcm,              // slots 34-57
  gldm,              // slots 58-72   (ingested)
  glrlm,             // slots 73-88   (ingested)
  glszm,             // slots 89-104  (ingested)
  ngtdm,             // slots 105-109 (ingested)
  clinical,          // slots 110-120
  bmd,               // slots 121-129
};

/// Fixed registry of the 130 per-node feature slots. Slot indices are
/// 0-based in code; names are unique and stable (they key the precomputed
/// feature CSV columns).
class FeatureLayout {
 public:
  static const FeatureLayout& instance();

  const std::string& name(int slot) const;
  FeatureFamily family(int slot) const;
  /// Slot index for a name; throws on unknown names.
  int slot(const std::string& name) const;
  bool has(const std::string& name) const;
  /// True for slots 58-109, which are ingested from file rather than
  /// computed here.
  bool ingested_only(int slot) const;

 private:
  FeatureLayout();
  std::vector<std::string> names_;
  std::vector<FeatureFamily> families_;
  std::map<std::string, int> index_;
};

/// Subject-level clinical / densitometry attributes, replicated onto every
/// node of the subject's graph.
struct SubjectRecord {
  std::string subject_id;
  SubjectLabel label = SubjectLabel::unknown;
  std::vector<double> clinical;  // 11 values, slots 110-120
  std::vector<double> bmd;       // 9 values, slots 121-129
  std::vector<std::string> missing;  // names of slots encoded as 0
};

/// CSV with a header row of SubjectRecord field names, one row per subject.
std::map<std::string, SubjectRecord> load_subject_table(const std::string& path);

/// Precomputed feature families keyed by (subject_id, roi_label); columns
/// are registry slot names.
using PrecomputedFeatures =
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>>;
PrecomputedFeatures load_precomputed_features(const std::string& path);

// -- radiomics computation ---------------------------------------------------

/// Intensity basics (5 values, slots 0-4) and first-order statistics
/// (18 values, slots 16-33) of the foreground intensities.
struct FirstOrderResult {
  std::vector<double> basic;       // mean, min, max, pixel count, area
  std::vector<double> first_order; // percentile/energy/entropy/... block
};
FirstOrderResult first_order_features(const std::vector<double>& pixels);

/// 11 shape descriptors (slots 5-15) of the mask foreground. 2-D
/// interpretations throughout: axis lengths from the pixel covariance
/// eigenvalues, diameter over boundary pixel centers, perimeter as exposed
/// pixel edges, sphericity as circularity.
std::vector<double> shape_features(const RoiMask& mask);

/// 24 co-occurrence statistics (slots 34-57) from a symmetric, normalized
/// GLCM averaged over the four unit-offset directions. Intensities are
/// quantized to `levels` equal-width bins over the foreground min-max.
std::vector<double> glcm_features(const std::vector<double>& pixels,
                                  const RoiMask& mask, int levels = 32);

/// Collects the foreground intensities of an RoI window.
std::vector<double> masked_pixels(const GrayImage& image, const RoiMask& mask);

// -- assembly ----------------------------------------------------------------

struct NodeVectorProvenance {
  bool radiomics_placeholder = false;     // missing crop: slots 0-109 zero
  std::vector<std::string> zero_filled;   // ingested families absent from file
  std::vector<std::string> ingested_overrides;  // computed slots taken from file
};

/// Assembles the 130-slot node vector. `computed` maps slot index to value
/// for the computed block (empty = missing crop placeholder); `ingested`
/// maps slot names to file-supplied values (ingestion wins over computation
/// and fills slots 58-109). Subject attributes land in slots 110-129.
std::vector<double> assemble_node_vector(
    const std::map<int, double>& computed,
    const std::map<std::string, double>& ingested, const SubjectRecord& subject,
    NodeVectorProvenance* provenance = nullptr);

// -- normalization -----------------------------------------------------------

/// Per-slot z-score statistics, fitted on the train split only.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // 0 marks a constant slot

  int dim() const { return static_cast<int>(mean.size()); }
};

NormStats fit_normalization(const std::vector<const RoiGraph*>& train_graphs);

/// (v - mean) / std per slot; constant slots map to 0.
void apply_normalization(RoiGraph& g, const NormStats& stats);

}  // namespace icgm
