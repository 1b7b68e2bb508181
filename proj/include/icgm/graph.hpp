#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icgm/rng.hpp"

namespace icgm {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SubjectLabel { fractured, non_fractured, unknown };

std::string to_string(SubjectLabel label);
SubjectLabel subject_label_from_string(const std::string& s);

enum class EdgeMethod { knn, delaunay, distance };

std::string to_string(EdgeMethod m);
EdgeMethod edge_method_from_string(const std::string& s);

/// Parameters actually used to build the edge set, after any connectivity
/// repair. Only the field matching the method is meaningful.
struct BuildParams {
  int k = 2;
  double threshold = 0.0;
  bool delaunay_fallback = false;  // degenerate input repaired via kNN

  bool operator==(const BuildParams&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point&) const = default;
};

struct RoiNode {
  std::string label;
  Point centroid;
  std::vector<double> features;

  bool operator==(const RoiNode&) const = default;
};

/// Undirected edges as (i, j) with i < j, sorted, no duplicates.
using EdgeSet = std::vector<std::pair<int, int>>;

/// Attributed spatial graph for one subject; the unit of classification.
struct RoiGraph {
  std::string id;
  SubjectLabel label = SubjectLabel::unknown;
  std::vector<RoiNode> nodes;
  EdgeSet edges;
  EdgeMethod method = EdgeMethod::knn;
  BuildParams params;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int feature_dim() const {
    return nodes.empty() ? 0 : static_cast<int>(nodes[0].features.size());
  }
  bool operator==(const RoiGraph&) const = default;
};

// Edge construction. All builders return canonical edge sets (i < j, sorted).
EdgeSet build_edges_knn(const std::vector<Point>& centroids, int k);
EdgeSet build_edges_delaunay(const std::vector<Point>& centroids);
EdgeSet build_edges_distance(const std::vector<Point>& centroids,
                             double threshold);

bool is_connected(int node_count, const EdgeSet& edges);

///// Builds edges with the chosen method and repairs connectivity: kNN bumps
/// k by 1, distance scales the threshold by 1.25, Delaunay falls back to
/// repaired kNN on degenerate input. Records the final parameters.
EdgeSet build_connected_edges(const std::vector<Point>& centroids,
                              EdgeMethod method, BuildParams& params);

/// Validates the RoiGraph invariants (connected, canonical edges, uniform
/// feature length); throws GraphError on violation.
void validate_graph(const RoiGraph& g);

// JSON serialization (lossless round trip).
std::string graph_to_json(const RoiGraph& g);
RoiGraph graph_from_json(const std::string& text);
void save_graph(const RoiGraph& g, const std::string& path);
RoiGraph load_graph(const std::string& path);

enum class SplitRole { train, test, templates };

struct DatasetSplit {
  std::vector<int> train;      // indices into the source pool
  std::vector<int> test;
  std::vector<int> templates;
  uint64_t seed = 0;
  double template_frac = 0.10;
  double train_frac = 0.80;
};

/// Stratified split: template set carved out first, then train/test on the
/// remainder. Per-class counts use largest-remainder rounding so class
/// proportions hold within one subject. Deterministic under the seed.
DatasetSplit make_split(const std::vector<SubjectLabel>& pool_labels,
                        double template_frac, double train_frac,
                        uint64_t seed);

/// Dataset manifest: graph file paths plus split assignment.
struct ManifestEntry {
  std::string file;
  SubjectLabel label = SubjectLabel::unknown;
  SplitRole role = SplitRole::train;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  uint64_t seed = 0;
  double template_frac = 0.10;
  double train_frac = 0.80;
};

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

}  // namespace icgm
