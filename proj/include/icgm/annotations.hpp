#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "icgm/graph.hpp"

namespace icgm {

class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One labeled polygon from a LabelMe-style annotation file.
struct RoiAnnotation {
  std::string label;
  std::vector<Point> polygon;  // >= 3 vertices
};

struct AnnotationFile {
  std::string image_path;
  std::vector<RoiAnnotation> annotations;  // file order
};

/// Default RoI vocabulary for the left femur.
const std::vector<std::string>& default_roi_vocabulary();

struct AnnotationOptions {
  std::vector<std::string> vocabulary = default_roi_vocabulary();
  bool reject_unknown_labels = true;  // false: warn and keep
};

/// Parses a LabelMe-compatible JSON subset:
///   {image_path, shapes: [{label, points: [[x, y], ...]}]}
/// Rejects degenerate polygons (< 3 vertices) and duplicate labels.
AnnotationFile parse_annotations(const std::string& path,
                                 const AnnotationOptions& opts = {});

/// Single-channel grayscale raster; origin top-left, x = column, y = row.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major intensities

  double at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

/// Loads 8- or 16-bit grayscale PGM (P2/P5) or PNG.
GrayImage load_gray_image(const std::string& path);

/// Binary mask over the image grid, restricted to the polygon bounding box.
struct RoiMask {
  int x0 = 0, y0 = 0;      // offset of the window in image coordinates
  int width = 0, height = 0;
  std::vector<uint8_t> inside;  // row-major

  bool at(int x, int y) const {  // window-local coordinates
    return inside[static_cast<size_t>(y) * width + x] != 0;
  }
  int count() const;
};

/// Rasterizes a polygon with the even-odd rule sampled at pixel centers.
RoiMask rasterize_polygon(const std::vector<Point>& polygon, int image_width,
                          int image_height);

/// Centroid via image moments: mean of foreground pixel coordinates, in
/// image coordinates. Throws on an empty mask.
Point mask_centroid(const RoiMask& mask);

}  // namespace icgm
