#include "icgm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace icgm {

using json = nlohmann::ordered_json;

std::string to_string(SubjectLabel label) {
  switch (label) {
    case SubjectLabel::fractured: return "fractured";
    case SubjectLabel::non_fractured: return "non-fractured";
    case SubjectLabel::unknown: return "unknown";
  }
  return "unknown";
}

SubjectLabel subject_label_from_string(const std::string& s) {
  if (s == "fractured") return SubjectLabel::fractured;
  if (s == "non-fractured") return SubjectLabel::non_fractured;
  if (s == "unknown") return SubjectLabel::unknown;
  throw GraphError("unknown subject label '" + s + "'");
}

std::string to_string(EdgeMethod m) {
  switch (m) {
    case EdgeMethod::knn: return "knn";
    case EdgeMethod::delaunay: return "delaunay";
    case EdgeMethod::distance: return "distance";
  }
  return "knn";
}

EdgeMethod edge_method_from_string(const std::string& s) {
  if (s == "knn") return EdgeMethod::knn;
  if (s == "delaunay") return EdgeMethod::delaunay;
  if (s == "distance") return EdgeMethod::distance;
  throw GraphError("unknown edge method '" + s + "'");
}

namespace {

double dist2(const Point& a, const Point& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

EdgeSet canonicalize(std::set<std::pair<int, int>>& raw) {
  return EdgeSet(raw.begin(), raw.end());
}

}  // namespace

EdgeSet build_edges_knn(const std::vector<Point>& centroids, int k) {
  const int n = static_cast<int>(centroids.size());
  if (n < 2) throw GraphError("kNN edges require at least 2 nodes");
  if (k < 1 || k > n - 1)
    throw GraphError("kNN parameter k=" + std::to_string(k) +
                     " outside [1, " + std::to_string(n - 1) + "]");
  std::set<std::pair<int, int>> edges;
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(dist2(centroids[i], centroids[j]), j);
    // (distance, lower index) tie-break keeps the selection deterministic
    std::sort(cand.begin(), cand.end());
    for (int t = 0; t < k; ++t) {
      const int j = cand[t].second;
      edges.emplace(std::min(i, j), std::max(i, j));
    }
  }
  return canonicalize(edges);
}

namespace {

struct Triangle {
  int a, b, c;
};

// Returns > 0 if p lies strictly inside the circumcircle of (a, b, c),
// assuming (a, b, c) is counter-clockwise.
double incircle(const Point& a, const Point& b, const Point& c,
                const Point& p) {
  const double ax = a.x - p.x, ay = a.y - p.y;
  const double bx = b.x - p.x, by = b.y - p.y;
  const double cx = c.x - p.x, cy = c.y - p.y;
  return (ax * ax + ay * ay) * (bx * cy - cx * by) -
         (bx * bx + by * by) * (ax * cy - cx * ay) +
         (cx * cx + cy * cy) * (ax * by - bx * ay);
}

double orient(const Point& a, const Point& b, const Point& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

}  // namespace

EdgeSet build_edges_delaunay(const std::vector<Point>& centroids) {
  const int n = static_cast<int>(centroids.size());
  if (n < 3) throw GraphError("Delaunay requires at least 3 points");

  // Degenerate when every triple is (near-)collinear.
  double span = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      span = std::max(span, dist2(centroids[i], centroids[j]));
  bool collinear = true;
  for (int i = 0; i < n && collinear; ++i)
    for (int j = i + 1; j < n && collinear; ++j)
      for (int k = j + 1; k < n; ++k)
        if (std::abs(orient(centroids[i], centroids[j], centroids[k])) >
            1e-9 * std::max(span, 1.0)) {
          collinear = false;
          break;
        }
  if (collinear) throw GraphError("Delaunay: all points collinear");

  // Bowyer-Watson with a super triangle; fine for RoI-scale point counts.
  std::vector<Point> pts(centroids);
  double minx = pts[0].x, maxx = pts[0].x, miny = pts[0].y, maxy = pts[0].y;
  for (const Point& p : pts) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  const double d = std::max({maxx - minx, maxy - miny, 1.0}) * 64.0;
  const double cx = (minx + maxx) / 2.0, cy = (miny + maxy) / 2.0;
  pts.push_back({cx - d, cy - d});
  pts.push_back({cx + d, cy - d});
  pts.push_back({cx, cy + d});

  auto ccw = [&](Triangle& t) {
    if (orient(pts[t.a], pts[t.b], pts[t.c]) < 0.0) std::swap(t.b, t.c);
  };
  std::vector<Triangle> tris{{n, n + 1, n + 2}};
  ccw(tris[0]);

  for (int i = 0; i < n; ++i) {
    std::vector<Triangle> keep;
    std::vector<std::pair<int, int>> cavity;  // directed boundary edges
    for (const Triangle& t : tris) {
      if (incircle(pts[t.a], pts[t.b], pts[t.c], pts[i]) > 0.0) {
        cavity.emplace_back(t.a, t.b);
        cavity.emplace_back(t.b, t.c);
        cavity.emplace_back(t.c, t.a);
      } else {
        keep.push_back(t);
      }
    }
    // Boundary edges appear once; shared cavity edges appear in both
    // directions and cancel.
    std::vector<std::pair<int, int>> boundary;
    for (const auto& e : cavity) {
      bool shared = false;
      for (const auto& f : cavity)
        if (e.first == f.second && e.second == f.first) {
          shared = true;
          break;
        }
      if (!shared) boundary.push_back(e);
    }
    tris = std::move(keep);
    for (const auto& e : boundary) {
      Triangle t{e.first, e.second, i};
      ccw(t);
      tris.push_back(t);
    }
  }

  std::set<std::pair<int, int>> edges;
  for (const Triangle& t : tris) {
    if (t.a >= n || t.b >= n || t.c >= n) continue;  // touches super triangle
    edges.emplace(std::min(t.a, t.b), std::max(t.a, t.b));
    edges.emplace(std::min(t.b, t.c), std::max(t.b, t.c));
    edges.emplace(std::min(t.a, t.c), std::max(t.a, t.c));
  }
  return canonicalize(edges);
}

EdgeSet build_edges_distance(const std::vector<Point>& centroids,
                             double threshold) {
  if (threshold <= 0.0) throw GraphError("distance threshold must be > 0");
  const int n = static_cast<int>(centroids.size());
  std::set<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (dist2(centroids[i], centroids[j]) < threshold * threshold)
        edges.emplace(i, j);
  return canonicalize(edges);
}

bool is_connected(int node_count, const EdgeSet& edges) {
  if (node_count <= 0) return false;
  if (node_count == 1) return true;
  std::vector<std::vector<int>> adj(node_count);
  for (const auto& [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  std::vector<char> seen(node_count, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int visited = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++visited;
        stack.push_back(w);
      }
  }
  return visited == node_count;
}

EdgeSet build_connected_edges(const std::vector<Point>& centroids,
                              EdgeMethod method, BuildParams& params) {
  const int n = static_cast<int>(centroids.size());
  if (n < 1) throw GraphError("graph needs at least one node");
  if (n == 1) return {};

  auto repair_knn = [&](int k) {
    EdgeSet edges = build_edges_knn(centroids, k);
    while (!is_connected(n, edges) && k < n - 1) {
      ++k;
      edges = build_edges_knn(centroids, k);
    }
    params.k = k;
    return edges;
  };

  switch (method) {
    case EdgeMethod::knn: {
      int k = std::clamp(params.k, 1, n - 1);
      return repair_knn(k);
    }
    case EdgeMethod::distance: {
      double t = params.threshold;
      if (t <= 0.0) throw GraphError("distance threshold must be > 0");
      EdgeSet edges = build_edges_distance(centroids, t);
      while (!is_connected(n, edges)) {
        t *= 1.25;
        edges = build_edges_distance(centroids, t);
      }
      params.threshold = t;
      return edges;
    }
    case EdgeMethod::delaunay: {
      try {
        EdgeSet edges = build_edges_delaunay(centroids);
        if (is_connected(n, edges)) return edges;
        // Triangulations are connected; reaching here means numerics failed.
        std::cerr << "warning: Delaunay result disconnected, repairing via kNN\n";
      } catch (const GraphError& e) {
        std::cerr << "warning: " << e.what() << "; falling back to kNN\n";
      }
      params.delaunay_fallback = true;
      return repair_knn(1);
    }
  }
  throw GraphError("unreachable edge method");
}

void validate_graph(const RoiGraph& g) {
  const int n = g.node_count();
  if (n < 1) throw GraphError("graph '" + g.id + "' has no nodes");
  const size_t d = g.nodes[0].features.size();
  for (const RoiNode& node : g.nodes)
    if (node.features.size() != d)
      throw GraphError("graph '" + g.id + "' has inconsistent feature lengths");
  for (size_t e = 0; e < g.edges.size(); ++e) {
    const auto& [i, j] = g.edges[e];
    if (i < 0 || j >= n || i >= j)
      throw GraphError("graph '" + g.id + "' has a non-canonical edge");
    if (e > 0 && !(g.edges[e - 1] < g.edges[e]))
      throw GraphError("graph '" + g.id + "' has unsorted/duplicate edges");
  }
  if (!is_connected(n, g.edges))
    throw GraphError("graph '" + g.id + "' is not connected");
}

namespace {

json params_to_json(EdgeMethod method, const BuildParams& p) {
  json j;
  if (method == EdgeMethod::knn || p.delaunay_fallback) j["k"] = p.k;
  if (method == EdgeMethod::distance) j["threshold"] = p.threshold;
  if (method == EdgeMethod::delaunay) j["fallback"] = p.delaunay_fallback;
  return j;
}

BuildParams params_from_json(const json& j) {
  BuildParams p;
  if (j.contains("k")) p.k = j["k"].get<int>();
  if (j.contains("threshold")) p.threshold = j["threshold"].get<double>();
  if (j.contains("fallback")) p.delaunay_fallback = j["fallback"].get<bool>();
  return p;
}

}  // namespace

std::string graph_to_json(const RoiGraph& g) {
  json j;
  j["graph_id"] = g.id;
  j["subject_label"] = to_string(g.label);
  j["build_method"] = to_string(g.method);
  j["build_params"] = params_to_json(g.method, g.params);
  j["nodes"] = json::array();
  for (const RoiNode& n : g.nodes) {
    json jn;
    jn["label"] = n.label;
    jn["centroid"] = {n.centroid.x, n.centroid.y};
    jn["features"] = n.features;
    j["nodes"].push_back(std::move(jn));
  }
  j["edges"] = json::array();
  for (const auto& [a, b] : g.edges) j["edges"].push_back({a, b});
  return j.dump(2);
}

RoiGraph graph_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw GraphError(std::string("graph JSON parse error: ") + e.what());
  }
  RoiGraph g;
  try {
    g.id = j.at("graph_id").get<std::string>();
    g.label = subject_label_from_string(j.at("subject_label").get<std::string>());
    g.method = edge_method_from_string(j.at("build_method").get<std::string>());
    g.params = params_from_json(j.at("build_params"));
    for (const json& jn : j.at("nodes")) {
      RoiNode n;
      n.label = jn.at("label").get<std::string>();
      n.centroid = {jn.at("centroid").at(0).get<double>(),
                    jn.at("centroid").at(1).get<double>()};
      n.features = jn.at("features").get<std::vector<double>>();
      g.nodes.push_back(std::move(n));
    }
    for (const json& je : j.at("edges"))
      g.edges.emplace_back(je.at(0).get<int>(), je.at(1).get<int>());
  } catch (const json::exception& e) {
    throw GraphError(std::string("graph JSON field error: ") + e.what());
  }
  return g;
}

void save_graph(const RoiGraph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw GraphError("cannot write graph file '" + path + "'");
  out << graph_to_json(g) << '\n';
}

RoiGraph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GraphError("cannot read graph file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return graph_from_json(text);
}

namespace {

// Largest-remainder allocation of round(frac * total) picks across classes.
std::vector<int> allocate(const std::vector<int>& class_sizes, double frac) {
  const int total = static_cast<int>(
      class_sizes.size() == 0
          ? 0
          : std::llround(frac * std::accumulate(class_sizes.begin(),
                                                class_sizes.end(), 0)));
  std::vector<int> quota(class_sizes.size());
  std::vector<std::pair<double, int>> fracs;
  int allocated = 0;
  for (size_t c = 0; c < class_sizes.size(); ++c) {
    const double q = frac * class_sizes[c];
    quota[c] = static_cast<int>(std::floor(q));
    allocated += quota[c];
    fracs.emplace_back(-(q - quota[c]), static_cast<int>(c));
  }
  std::sort(fracs.begin(), fracs.end());
  for (const auto& [negfrac, c] : fracs) {
    if (allocated >= total) break;
    if (quota[c] < class_sizes[c]) {
      ++quota[c];
      ++allocated;
    }
  }
  return quota;
}

}  // namespace

DatasetSplit make_split(const std::vector<SubjectLabel>& pool_labels,
                        double template_frac, double train_frac,
                        uint64_t seed) {
  std::vector<int> positives, negatives;
  for (size_t i = 0; i < pool_labels.size(); ++i) {
    switch (pool_labels[i]) {
      case SubjectLabel::fractured: positives.push_back(static_cast<int>(i)); break;
      case SubjectLabel::non_fractured: negatives.push_back(static_cast<int>(i)); break;
      case SubjectLabel::unknown:
        throw GraphError("split pool contains an unlabeled subject");
    }
  }
  if (positives.empty() || negatives.empty())
    throw GraphError("split pool must contain both classes");

  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(positives);
  rng.shuffle(negatives);

  DatasetSplit split;
  split.seed = seed;
  split.template_frac = template_frac;
  split.train_frac = train_frac;

  std::vector<std::vector<int>*> classes{&positives, &negatives};
  std::vector<int> sizes{static_cast<int>(positives.size()),
                         static_cast<int>(negatives.size())};
  std::vector<int> tmpl_quota = allocate(sizes, template_frac);
  std::vector<std::vector<int>> remainder(2);
  for (int c = 0; c < 2; ++c) {
    auto& cls = *classes[c];
    for (size_t i = 0; i < cls.size(); ++i) {
      if (static_cast<int>(i) < tmpl_quota[c])
        split.templates.push_back(cls[i]);
      else
        remainder[c].push_back(cls[i]);
    }
  }
  std::vector<int> rem_sizes{static_cast<int>(remainder[0].size()),
                             static_cast<int>(remainder[1].size())};
  std::vector<int> train_quota = allocate(rem_sizes, train_frac);
  for (int c = 0; c < 2; ++c)
    for (size_t i = 0; i < remainder[c].size(); ++i) {
      if (static_cast<int>(i) < train_quota[c])
        split.train.push_back(remainder[c][i]);
      else
        split.test.push_back(remainder[c][i]);
    }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.templates.begin(), split.templates.end());
  return split;
}

namespace {

std::string role_name(SplitRole r) {
  switch (r) {
    case SplitRole::train: return "train";
    case SplitRole::test: return "test";
    case SplitRole::templates: return "template";
  }
  return "train";
}

SplitRole role_from_string(const std::string& s) {
  if (s == "train") return SplitRole::train;
  if (s == "test") return SplitRole::test;
  if (s == "template") return SplitRole::templates;
  throw GraphError("unknown split role '" + s + "'");
}

}  // namespace

std::string manifest_to_json(const Manifest& m) {
  json j;
  j["seed"] = m.seed;
  j["template_frac"] = m.template_frac;
  j["train_frac"] = m.train_frac;
  j["graphs"] = json::array();
  for (const ManifestEntry& e : m.entries) {
    json je;
    je["file"] = e.file;
    je["label"] = to_string(e.label);
    je["split"] = role_name(e.role);
    j["graphs"].push_back(std::move(je));
  }
  return j.dump(2);
}

Manifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw GraphError(std::string("manifest parse error: ") + e.what());
  }
  Manifest m;
  m.seed = j.at("seed").get<uint64_t>();
  m.template_frac = j.at("template_frac").get<double>();
  m.train_frac = j.at("train_frac").get<double>();
  for (const json& je : j.at("graphs")) {
    ManifestEntry e;
    e.file = je.at("file").get<std::string>();
    e.label = subject_label_from_string(je.at("label").get<std::string>());
    e.role = role_from_string(je.at("split").get<std::string>());
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw GraphError("cannot write manifest '" + path + "'");
  out << manifest_to_json(m) << '\n';
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GraphError("cannot read manifest '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return manifest_from_json(text);
}

}  // namespace icgm
