#include "icgm/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace icgm {

namespace {

const std::vector<std::string>& slot_names() {
  static const std::vector<std::string> names{
      // intensity basics (5)
      "intensity_mean", "intensity_min", "intensity_max", "pixel_count",
      "area",
      // shape (11)
      "elongation", "major_axis_length", "minor_axis_length",
      "maximum_diameter", "mesh_area", "pixel_area", "perimeter",
      "perimeter_area_ratio", "sphericity", "extent", "eccentricity",
      // first order (18)
      "percentile_10", "percentile_25", "percentile_75", "percentile_90",
      "energy", "entropy", "interquartile_range", "variance", "skewness",
      "kurtosis", "mean", "median", "root_mean_squared",
      "mean_absolute_deviation", "robust_mean_absolute_deviation", "range",
      "uniformity", "standard_deviation",
      // GLCM (24)
      "glcm_autocorrelation", "glcm_joint_average", "glcm_cluster_prominence",
      "glcm_cluster_shade", "glcm_cluster_tendency", "glcm_contrast",
      "glcm_correlation", "glcm_difference_average", "glcm_difference_entropy",
      "glcm_difference_variance", "glcm_joint_energy", "glcm_joint_entropy",
      "glcm_imc1", "glcm_imc2", "glcm_id", "glcm_idm", "glcm_idmn", "glcm_idn",
      "glcm_inverse_variance", "glcm_maximum_probability", "glcm_sum_average",
      "glcm_sum_entropy", "glcm_sum_squares", "glcm_sum_variance",
      // GLDM (15, ingested)
      "gldm_small_dependence_emphasis", "gldm_large_dependence_emphasis",
      "gldm_gray_level_nonuniformity", "gldm_dependence_nonuniformity",
      "gldm_dependence_nonuniformity_normalized", "gldm_gray_level_variance",
      "gldm_dependence_variance", "gldm_dependence_entropy",
      "gldm_low_gray_level_emphasis", "gldm_high_gray_level_emphasis",
      "gldm_small_dependence_low_gray_level_emphasis",
      "gldm_small_dependence_high_gray_level_emphasis",
      "gldm_large_dependence_low_gray_level_emphasis",
      "gldm_large_dependence_high_gray_level_emphasis",
      "gldm_dependence_percentage",
      // GLRLM (16, ingested)
      "glrlm_short_run_emphasis", "glrlm_long_run_emphasis",
      "glrlm_gray_level_nonuniformity",
      "glrlm_gray_level_nonuniformity_normalized",
      "glrlm_run_length_nonuniformity",
      "glrlm_run_length_nonuniformity_normalized", "glrlm_run_percentage",
      "glrlm_gray_level_variance", "glrlm_run_variance", "glrlm_run_entropy",
      "glrlm_low_gray_level_run_emphasis", "glrlm_high_gray_level_run_emphasis",
      "glrlm_short_run_low_gray_level_emphasis",
      "glrlm_short_run_high_gray_level_emphasis",
      "glrlm_long_run_low_gray_level_emphasis",
      "glrlm_long_run_high_gray_level_emphasis",
      // GLSZM (16, ingested)
      "glszm_small_area_emphasis", "glszm_large_area_emphasis",
      "glszm_gray_level_nonuniformity",
      "glszm_gray_level_nonuniformity_normalized",
      "glszm_size_zone_nonuniformity",
      "glszm_size_zone_nonuniformity_normalized", "glszm_zone_percentage",
      "glszm_gray_level_variance", "glszm_zone_variance", "glszm_zone_entropy",
      "glszm_low_gray_level_zone_emphasis",
      "glszm_high_gray_level_zone_emphasis",
      "glszm_small_area_low_gray_level_emphasis",
      "glszm_small_area_high_gray_level_emphasis",
      "glszm_large_area_low_gray_level_emphasis",
      "glszm_large_area_high_gray_level_emphasis",
      // NGTDM (5, ingested)
      "ngtdm_busyness", "ngtdm_coarseness", "ngtdm_complexity",
      "ngtdm_contrast", "ngtdm_strength",
      // clinical (11)
      "age", "sex", "height", "weight", "household_size", "smoking", "alcohol",
      "diet", "dietary_change", "falls_last_year", "fractures_last_5y",
      // BMD / BMC (9)
      "bmd_neck_l", "tscore_neck_l", "bmd_total_l", "tscore_total_l",
      "bmd_troch_l", "tscore_troch_l", "bmd_wards_l", "tscore_wards_l",
      "bmc_pelvis"};
  return names;
}

constexpr std::array<std::pair<int, FeatureFamily>, 10> kFamilyBounds{{
    {5, FeatureFamily::intensity_basic},
    {16, FeatureFamily::shape},
    {34, FeatureFamily::first_order},
    {58, FeatureFamily::glcm},
    {73, FeatureFamily::gldm},
    {89, FeatureFamily::glrlm},
    {105, FeatureFamily::glszm},
    {110, FeatureFamily::ngtdm},
    {121, FeatureFamily::clinical},
    {130, FeatureFamily::bmd},
}};

}  // namespace

FeatureLayout::FeatureLayout() : names_(slot_names()) {
  if (names_.size() != kFeatureDim)
    throw FeatureError("feature registry must contain exactly 130 slots");
  families_.resize(kFeatureDim);
  int slot = 0;
  for (const auto& [bound, family] : kFamilyBounds)
    for (; slot < bound; ++slot) families_[slot] = family;
  for (int i = 0; i < kFeatureDim; ++i)
    if (!index_.emplace(names_[i], i).second)
      throw FeatureError("duplicate feature name '" + names_[i] + "'");
}

const FeatureLayout& FeatureLayout::instance() {
  static const FeatureLayout layout;
  return layout;
}

const std::string& FeatureLayout::name(int slot) const {
  return names_.at(slot);
}

FeatureFamily FeatureLayout::family(int slot) const {
  return families_.at(slot);
}

int FeatureLayout::slot(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw FeatureError("unknown feature name '" + name + "'");
  return it->second;
}

bool FeatureLayout::has(const std::string& name) const {
  return index_.count(name) != 0;
}

bool FeatureLayout::ingested_only(int slot) const {
  const FeatureFamily f = family(slot);
  return f == FeatureFamily::gldm || f == FeatureFamily::glrlm ||
         f == FeatureFamily::glszm || f == FeatureFamily::ngtdm;
}

// -- CSV helpers --------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_field(const std::string& s, bool* missing) {
  if (s.empty()) {
    if (missing) *missing = true;
    return 0.0;
  }
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw FeatureError("cannot parse numeric field '" + s + "'");
  }
}

}  // namespace

std::map<std::string, SubjectRecord> load_subject_table(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FeatureError("cannot open subject table '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw FeatureError("empty subject table '" + path + "'");
  const std::vector<std::string> header = split_csv_line(line);

  const auto& layout = FeatureLayout::instance();
  std::map<std::string, int> col;
  for (size_t i = 0; i < header.size(); ++i) col[header[i]] = static_cast<int>(i);
  for (const char* required : {"subject_id", "label"})
    if (!col.count(required))
      throw FeatureError("subject table missing column '" +
                         std::string(required) + "'");

  std::map<std::string, SubjectRecord> table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    SubjectRecord rec;
    auto field = [&](const std::string& name) -> const std::string& {
      auto it = col.find(name);
      if (it == col.end() || it->second >= static_cast<int>(f.size()))
        throw FeatureError("subject table missing column '" + name + "'");
      return f[it->second];
    };
    rec.subject_id = field("subject_id");
    rec.label = subject_label_from_string(field("label"));
    for (int slot = 110; slot < 130; ++slot) {
      const std::string& name = layout.name(slot);
      bool missing = false;
      const double v = parse_field(field(name), &missing);
      if (missing) rec.missing.push_back(name);
      if (slot < 121)
        rec.clinical.push_back(v);
      else
        rec.bmd.push_back(v);
    }
    table[rec.subject_id] = std::move(rec);
  }
  return table;
}

PrecomputedFeatures load_precomputed_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FeatureError("cannot open feature file '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw FeatureError("empty feature file '" + path + "'");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "subject_id" ||
      header[1] != "roi_label")
    throw FeatureError(
        "feature file must start with subject_id,roi_label columns");
  const auto& layout = FeatureLayout::instance();
  for (size_t i = 2; i < header.size(); ++i)
    if (!layout.has(header[i]))
      throw FeatureError("feature file column '" + header[i] +
                         "' is not a registry slot name");

  PrecomputedFeatures out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size())
      throw FeatureError("feature file row has " + std::to_string(f.size()) +
                         " fields, header has " +
                         std::to_string(header.size()));
    auto& row = out[{f[0], f[1]}];
    for (size_t i = 2; i < header.size(); ++i)
      if (!f[i].empty()) row[header[i]] = parse_field(f[i], nullptr);
  }
  return out;
}

// -- first order ---------------------------------------------------------------

namespace {

// Linear-interpolation percentile over a sorted vector.
double percentile(const std::vector<double>& sorted, double q) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q / 100.0 * (n - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - lo;
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

// Histogram probabilities over `levels` equal-width bins spanning min-max.
std::vector<double> histogram_probs(const std::vector<double>& values,
                                    double lo, double hi, int levels) {
  std::vector<double> p(levels, 0.0);
  const double range = hi - lo;
  for (double v : values) {
    int bin = range > 0.0
                  ? std::min(levels - 1,
                             static_cast<int>((v - lo) / range * levels))
                  : 0;
    p[bin] += 1.0;
  }
  for (double& x : p) x /= static_cast<double>(values.size());
  return p;
}

constexpr int kHistogramLevels = 32;

}  // namespace

FirstOrderResult first_order_features(const std::vector<double>& pixels) {
  if (pixels.empty())
    throw FeatureError("first-order features require at least one pixel");
  const size_t n = pixels.size();
  std::vector<double> sorted(pixels);
  std::sort(sorted.begin(), sorted.end());
  const double minv = sorted.front();
  const double maxv = sorted.back();
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;

  double m2 = 0.0, m3 = 0.0, m4 = 0.0, energy = 0.0, mad = 0.0;
  for (double v : sorted) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
    energy += v * v;
    mad += std::abs(d);
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  mad /= n;
  // Singleton / constant regions: skewness and kurtosis defined as 0.
  const double skewness = m2 > 1e-30 ? m3 / std::pow(m2, 1.5) : 0.0;
  const double kurtosis = m2 > 1e-30 ? m4 / (m2 * m2) : 0.0;

  const double p10 = percentile(sorted, 10.0);
  const double p25 = percentile(sorted, 25.0);
  const double p75 = percentile(sorted, 75.0);
  const double p90 = percentile(sorted, 90.0);
  const double median = percentile(sorted, 50.0);

  // Robust MAD: mean absolute deviation within the 10th-90th percentile band.
  double rmad = 0.0;
  {
    std::vector<double> band;
    for (double v : sorted)
      if (v >= p10 && v <= p90) band.push_back(v);
    if (!band.empty()) {
      const double bmean =
          std::accumulate(band.begin(), band.end(), 0.0) / band.size();
      for (double v : band) rmad += std::abs(v - bmean);
      rmad /= band.size();
    }
  }

  const std::vector<double> hist =
      histogram_probs(sorted, minv, maxv, kHistogramLevels);
  double entropy = 0.0, uniformity = 0.0;
  for (double p : hist) {
    if (p > 0.0) entropy -= p * std::log2(p);
    uniformity += p * p;
  }

  FirstOrderResult r;
  r.basic = {mean, minv, maxv, static_cast<double>(n),
             static_cast<double>(n)};  // unit pixel spacing: area == count
  r.first_order = {p10,
                   p25,
                   p75,
                   p90,
                   energy,
                   entropy,
                   p75 - p25,
                   m2,
                   skewness,
                   kurtosis,
                   mean,
                   median,
                   std::sqrt(energy / n),
                   mad,
                   rmad,
                   maxv - minv,
                   uniformity,
                   std::sqrt(m2)};
  return r;
}

// -- shape ---------------------------------------------------------------------

std::vector<double> shape_features(const RoiMask& mask) {
  std::vector<std::pair<int, int>> fg;  // window-local (x, y)
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) fg.emplace_back(x, y);
  if (fg.empty()) throw FeatureError("shape features require a non-empty mask");
  const double n = static_cast<double>(fg.size());

  int bx0 = fg[0].first, bx1 = fg[0].first;
  int by0 = fg[0].second, by1 = fg[0].second;
  for (const auto& [x, y] : fg) {
    bx0 = std::min(bx0, x);
    bx1 = std::max(bx1, x);
    by0 = std::min(by0, y);
    by1 = std::max(by1, y);
  }
  // Canonicalize to the bounding-box origin so a shifted copy of the mask
  // produces bitwise-identical features (translation invariance).
  std::vector<std::pair<int, int>> canon(fg);
  for (auto& [x, y] : canon) {
    x -= bx0;
    y -= by0;
  }
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : canon) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double cxx = 0.0, cyy = 0.0, cxy = 0.0;
  for (const auto& [x, y] : canon) {
    cxx += (x - mx) * (x - mx);
    cyy += (y - my) * (y - my);
    cxy += (x - mx) * (y - my);
  }
  cxx /= n;
  cyy /= n;
  cxy /= n;
  const double tr = cxx + cyy;
  const double det = cxx * cyy - cxy * cxy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  const double l1 = std::max(0.0, tr / 2.0 + disc);  // major eigenvalue
  const double l2 = std::max(0.0, tr / 2.0 - disc);
  const double elongation = l1 > 1e-30 ? std::sqrt(l2 / l1) : 1.0;
  const double eccentricity = l1 > 1e-30 ? std::sqrt(1.0 - l2 / l1) : 0.0;
  const double major = 4.0 * std::sqrt(l1);
  const double minor = 4.0 * std::sqrt(l2);

  // Boundary pixels: any 4-neighbor outside the mask (or the window).
  std::vector<std::pair<int, int>> boundary;
  int perimeter_edges = 0;
  auto inside = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < mask.width && y < mask.height &&
           mask.at(x, y);
  };
  for (const auto& [x, y] : fg) {
    int exposed = 0;
    exposed += !inside(x - 1, y);
    exposed += !inside(x + 1, y);
    exposed += !inside(x, y - 1);
    exposed += !inside(x, y + 1);
    perimeter_edges += exposed;
    if (exposed > 0) boundary.push_back({x, y});
  }

  double max_diam = 0.0;
  for (size_t i = 0; i < boundary.size(); ++i)
    for (size_t j = i + 1; j < boundary.size(); ++j) {
      const double dx = boundary[i].first - boundary[j].first;
      const double dy = boundary[i].second - boundary[j].second;
      max_diam = std::max(max_diam, dx * dx + dy * dy);
    }
  max_diam = std::sqrt(max_diam);

  // Mesh area: convex hull of the foreground pixel centers (monotone chain).
  double hull_area = 0.0;
  if (fg.size() >= 3) {
    std::vector<std::pair<int, int>> pts(fg);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    auto cross = [](const std::pair<int, int>& o, const std::pair<int, int>& a,
                    const std::pair<int, int>& b) {
      return static_cast<double>(a.first - o.first) * (b.second - o.second) -
             static_cast<double>(a.second - o.second) * (b.first - o.first);
    };
    std::vector<std::pair<int, int>> hull(2 * pts.size());
    size_t k = 0;
    for (const auto& p : pts) {
      while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
      hull[k++] = p;
    }
    const size_t lower = k + 1;
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
      while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) --k;
      hull[k++] = *it;
    }
    hull.resize(k > 1 ? k - 1 : 0);
    for (size_t i = 0; i < hull.size(); ++i) {
      const auto& a = hull[i];
      const auto& b = hull[(i + 1) % hull.size()];
      hull_area += static_cast<double>(a.first) * b.second -
                   static_cast<double>(b.first) * a.second;
    }
    hull_area = std::abs(hull_area) / 2.0;
  }

  const double perimeter = static_cast<double>(perimeter_edges);
  const double sphericity =
      perimeter > 0.0 ? 2.0 * std::sqrt(M_PI * n) / perimeter : 0.0;
  const double bbox_area =
      static_cast<double>(bx1 - bx0 + 1) * (by1 - by0 + 1);

  return {elongation,           major,      minor,
          max_diam,             hull_area,  n,
          perimeter,            perimeter / n, sphericity,
          n / bbox_area,        eccentricity};
}

// -- GLCM ----------------------------------------------------------------------

std::vector<double> masked_pixels(const GrayImage& image, const RoiMask& mask) {
  std::vector<double> out;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) out.push_back(image.at(mask.x0 + x, mask.y0 + y));
  return out;
}

std::vector<double> glcm_features(const std::vector<double>& pixels,
                                  const RoiMask& mask, int levels) {
  if (levels < 2) throw FeatureError("GLCM needs at least 2 gray levels");
  // Quantize foreground intensities to equal-width bins over min-max.
  std::vector<int> level(static_cast<size_t>(mask.width) * mask.height, -1);
  {
    double lo = 0.0, hi = 0.0;
    bool first = true;
    size_t pi = 0;
    for (uint8_t in : mask.inside)
      if (in) {
        const double v = pixels.at(pi++);
        if (first) {
          lo = hi = v;
          first = false;
        } else {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
    if (first) throw FeatureError("GLCM requires a non-empty mask");
    const double range = hi - lo;
    pi = 0;
    for (size_t i = 0; i < mask.inside.size(); ++i)
      if (mask.inside[i]) {
        const double v = pixels.at(pi++);
        level[i] = range > 0.0 ? std::min(levels - 1, static_cast<int>(
                                              (v - lo) / range * levels))
                               : 0;
      }
  }

  // Symmetric co-occurrence counts for the four unit offsets, each matrix
  // normalized, then averaged over the directions that produced pairs.
  const int offsets[4][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};
  std::vector<double> P(static_cast<size_t>(levels) * levels, 0.0);
  int active_directions = 0;
  for (const auto& off : offsets) {
    std::vector<double> D(P.size(), 0.0);
    double total = 0.0;
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x) {
        const int xx = x + off[0], yy = y + off[1];
        if (xx < 0 || yy < 0 || xx >= mask.width || yy >= mask.height) continue;
        const int a = level[static_cast<size_t>(y) * mask.width + x];
        const int b = level[static_cast<size_t>(yy) * mask.width + xx];
        if (a < 0 || b < 0) continue;
        D[static_cast<size_t>(a) * levels + b] += 1.0;
        D[static_cast<size_t>(b) * levels + a] += 1.0;
        total += 2.0;
      }
    if (total > 0.0) {
      ++active_directions;
      for (size_t i = 0; i < P.size(); ++i) P[i] += D[i] / total;
    }
  }
  if (active_directions == 0)
    throw FeatureError("GLCM has no valid neighbor pair");
  for (double& p : P) p /= active_directions;

  // Gray level value of bin i is i+1 so products never collapse to zero.
  auto at = [&](int i, int j) { return P[static_cast<size_t>(i) * levels + j]; };
  std::vector<double> px(levels, 0.0);
  for (int i = 0; i < levels; ++i)
    for (int j = 0; j < levels; ++j) px[i] += at(i, j);
  double mu = 0.0;
  for (int i = 0; i < levels; ++i) mu += (i + 1) * px[i];
  double sigma2 = 0.0;
  for (int i = 0; i < levels; ++i) sigma2 += (i + 1 - mu) * (i + 1 - mu) * px[i];
  const double sigma = std::sqrt(sigma2);

  double autocorr = 0.0, contrast = 0.0, joint_energy = 0.0,
         joint_entropy = 0.0, id = 0.0, idm = 0.0, idmn = 0.0, idn = 0.0,
         inv_var = 0.0, max_prob = 0.0, sum_squares = 0.0, hxy1 = 0.0,
         hxy2 = 0.0, cluster2 = 0.0, cluster3 = 0.0, cluster4 = 0.0;
  std::vector<double> pdiff(levels, 0.0);
  std::vector<double> psum(2 * levels + 1, 0.0);
  for (int i = 0; i < levels; ++i)
    for (int j = 0; j < levels; ++j) {
      const double p = at(i, j);
      const double gi = i + 1, gj = j + 1;
      const double diff = gi - gj;
      autocorr += p * gi * gj;
      contrast += p * diff * diff;
      joint_energy += p * p;
      if (p > 0.0) joint_entropy -= p * std::log2(p);
      id += p / (1.0 + std::abs(diff));
      idm += p / (1.0 + diff * diff);
      idmn += p / (1.0 + diff * diff / (levels * static_cast<double>(levels)));
      idn += p / (1.0 + std::abs(diff) / levels);
      if (i != j) inv_var += p / (diff * diff);
      max_prob = std::max(max_prob, p);
      sum_squares += p * (gi - mu) * (gi - mu);
      const double dev = gi + gj - 2.0 * mu;
      cluster2 += p * dev * dev;
      cluster3 += p * dev * dev * dev;
      cluster4 += p * dev * dev * dev * dev;
      const double pp = px[i] * px[j];
      if (p > 0.0 && pp > 0.0) hxy1 -= p * std::log2(pp);
      if (pp > 0.0) hxy2 -= pp * std::log2(pp);
      pdiff[std::abs(i - j)] += p;
      psum[i + j + 2] += p;
    }

  double da = 0.0, de = 0.0;
  for (int k = 0; k < levels; ++k) {
    da += k * pdiff[k];
    if (pdiff[k] > 0.0) de -= pdiff[k] * std::log2(pdiff[k]);
  }
  double dv = 0.0;
  for (int k = 0; k < levels; ++k) dv += (k - da) * (k - da) * pdiff[k];

  double sa = 0.0, se = 0.0;
  for (size_t k = 2; k < psum.size(); ++k) {
    sa += k * psum[k];
    if (psum[k] > 0.0) se -= psum[k] * std::log2(psum[k]);
  }
  double sv = 0.0;
  for (size_t k = 2; k < psum.size(); ++k)
    sv += (k - sa) * (k - sa) * psum[k];

  const double correlation =
      sigma2 > 1e-30 ? (autocorr - mu * mu) / sigma2 : 1.0;

  double hx = 0.0;
  for (int i = 0; i < levels; ++i)
    if (px[i] > 0.0) hx -= px[i] * std::log2(px[i]);
  const double imc1 = hx > 1e-30 ? (joint_entropy - hxy1) / hx : 0.0;
  const double imc2 =
      std::sqrt(std::max(0.0, 1.0 - std::exp(-2.0 * (hxy2 - joint_entropy))));

  return {autocorr, mu,       cluster4, cluster3, cluster2, contrast,
          correlation, da,    de,       dv,       joint_energy,
          joint_entropy, imc1, imc2,    id,       idm,      idmn,
          idn,      inv_var,  max_prob, sa,       se,       sum_squares,
          sv};
}

// -- assembly ------------------------------------------------------------------

std::vector<double> assemble_node_vector(
    const std::map<int, double>& computed,
    const std::map<std::string, double>& ingested, const SubjectRecord& subject,
    NodeVectorProvenance* provenance) {
  const auto& layout = FeatureLayout::instance();
  if (subject.clinical.size() != 11 || subject.bmd.size() != 9)
    throw FeatureError("subject record for '" + subject.subject_id +
                       "' has wrong clinical/BMD arity");

  std::vector<double> v(kFeatureDim, 0.0);
  NodeVectorProvenance prov;
  prov.radiomics_placeholder = computed.empty();

  for (const auto& [slot, value] : computed) {
    if (slot < 0 || slot >= 110)
      throw FeatureError("computed slot " + std::to_string(slot) +
                         " outside the radiomics block");
    v[slot] = value;
  }
  std::vector<bool> ingested_present(110, false);
  for (const auto& [name, value] : ingested) {
    const int slot = layout.slot(name);
    if (slot >= 110)
      throw FeatureError("feature file may not supply clinical/BMD slot '" +
                         name + "'");
    if (computed.count(slot)) prov.ingested_overrides.push_back(name);
    v[slot] = value;  // ingestion wins
    ingested_present[slot] = true;
  }
  for (int slot = 0; slot < 110; ++slot)
    if (layout.ingested_only(slot) && !ingested_present[slot])
      prov.zero_filled.push_back(layout.name(slot));

  for (int i = 0; i < 11; ++i) v[110 + i] = subject.clinical[i];
  for (int i = 0; i < 9; ++i) v[121 + i] = subject.bmd[i];

  if (provenance) *provenance = std::move(prov);
  return v;
}

// -- normalization ---------------------------------------------------------

NormStats fit_normalization(const std::vector<const RoiGraph*>& train_graphs) {
  if (train_graphs.empty())
    throw FeatureError("normalization needs at least one training graph");
  const int d = train_graphs[0]->feature_dim();
  NormStats stats;
  stats.mean.assign(d, 0.0);
  stats.stddev.assign(d, 0.0);
  long count = 0;
  for (const RoiGraph* g : train_graphs)
    for (const RoiNode& node : g->nodes) {
      if (static_cast<int>(node.features.size()) != d)
        throw FeatureError("inconsistent feature dimension in train split");
      for (int s = 0; s < d; ++s) stats.mean[s] += node.features[s];
      ++count;
    }
  for (double& m : stats.mean) m /= count;
  for (const RoiGraph* g : train_graphs)
    for (const RoiNode& node : g->nodes)
      for (int s = 0; s < d; ++s) {
        const double dval = node.features[s] - stats.mean[s];
        stats.stddev[s] += dval * dval;
      }
  for (double& sd : stats.stddev) sd = std::sqrt(sd / count);
  return stats;
}

void apply_normalization(RoiGraph& g, const NormStats& stats) {
  for (RoiNode& node : g.nodes) {
    if (static_cast<int>(node.features.size()) != stats.dim())
      throw FeatureError("graph '" + g.id +
                         "' feature dimension does not match stats");
    for (int s = 0; s < stats.dim(); ++s)
      node.features[s] = stats.stddev[s] > 1e-12
                             ? (node.features[s] - stats.mean[s]) /
                                   stats.stddev[s]
                             : 0.0;
  }
}

}  // namespace icgm
