#include "icgm/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <png.h>

#include "json.hpp"

namespace icgm {

using json = nlohmann::json;

const std::vector<std::string>& default_roi_vocabulary() {
  static const std::vector<std::string> vocab{
      "femur_head",       "subcapital",        "inferior_neck",
      "superior_neck",    "intertrochanteric", "greater_trochanter",
      "femur_shaft",      "lesser_trochanter"};
  return vocab;
}

AnnotationFile parse_annotations(const std::string& path,
                                 const AnnotationOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AnnotationError("cannot open annotation file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw AnnotationError("malformed annotation file '" + path +
                          "': " + e.what());
  }

  AnnotationFile out;
  try {
    if (j.contains("image_path"))
      out.image_path = j.at("image_path").get<std::string>();
    else if (j.contains("imagePath"))  // LabelMe spelling
      out.image_path = j.at("imagePath").get<std::string>();

    std::set<std::string> seen;
    for (const json& shape : j.at("shapes")) {
      RoiAnnotation a;
      a.label = shape.at("label").get<std::string>();
      for (const json& pt : shape.at("points"))
        a.polygon.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      if (a.polygon.size() < 3)
        throw AnnotationError("degenerate polygon for label '" + a.label +
                              "' in '" + path + "' (" +
                              std::to_string(a.polygon.size()) + " vertices)");
      if (!seen.insert(a.label).second)
        throw AnnotationError("duplicate RoI label '" + a.label + "' in '" +
                              path + "'");
      const bool known =
          std::find(opts.vocabulary.begin(), opts.vocabulary.end(), a.label) !=
          opts.vocabulary.end();
      if (!known) {
        if (opts.reject_unknown_labels)
          throw AnnotationError("unknown RoI label '" + a.label + "' in '" +
                                path + "'");
        std::cerr << "warning: unknown RoI label '" << a.label << "' in '"
                  << path << "'\n";
      }
      out.annotations.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw AnnotationError("annotation schema error in '" + path +
                          "': " + e.what());
  }
  return out;
}

namespace {

void skip_pgm_junk(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

GrayImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AnnotationError("cannot open image '" + path + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P2" && magic != "P5")
    throw AnnotationError("unsupported PGM magic '" + magic + "' in '" + path +
                          "'");
  int width, height, maxval;
  skip_pgm_junk(in);
  in >> width;
  skip_pgm_junk(in);
  in >> height;
  skip_pgm_junk(in);
  in >> maxval;
  if (!in || width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
    throw AnnotationError("bad PGM header in '" + path + "'");

  GrayImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<size_t>(width) * height);
  if (magic == "P2") {
    for (double& p : img.pixels) {
      long v;
      in >> v;
      if (!in) throw AnnotationError("truncated PGM data in '" + path + "'");
      p = static_cast<double>(v);
    }
  } else {
    in.get();  // single whitespace after maxval
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(img.pixels.size() * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), raw.size());
    if (static_cast<size_t>(in.gcount()) != raw.size())
      throw AnnotationError("truncated PGM data in '" + path + "'");
    for (size_t i = 0; i < img.pixels.size(); ++i)
      img.pixels[i] = bytes == 1 ? raw[i]
                                 : static_cast<double>(raw[2 * i] << 8 |
                                                       raw[2 * i + 1]);
  }
  return img;
}

GrayImage load_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw AnnotationError("cannot open image '" + path + "'");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw AnnotationError("libpng init failure for '" + path + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw AnnotationError("PNG decode error in '" + path + "'");
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw AnnotationError("PNG '" + path + "' is not single-channel grayscale");
  }
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  GrayImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  std::vector<unsigned char> row(png_get_rowbytes(png, info));
  for (int y = 0; y < img.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < img.width; ++x)
      img.pixels[static_cast<size_t>(y) * img.width + x] =
          depth == 16 ? static_cast<double>(row[2 * x] << 8 | row[2 * x + 1])
                      : static_cast<double>(row[x]);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace

GrayImage load_gray_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw AnnotationError("cannot open image '" + path + "'");
  unsigned char head[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(head), 2);
  probe.close();
  if (head[0] == 'P' && (head[1] == '2' || head[1] == '5'))
    return load_pgm(path);
  if (head[0] == 0x89 && head[1] == 'P') return load_png(path);
  throw AnnotationError("unrecognized image format in '" + path + "'");
}

int RoiMask::count() const {
  int n = 0;
  for (uint8_t v : inside) n += v != 0;
  return n;
}

RoiMask rasterize_polygon(const std::vector<Point>& polygon, int image_width,
                          int image_height) {
  if (polygon.size() < 3)
    throw AnnotationError("cannot rasterize polygon with fewer than 3 vertices");
  double minx = polygon[0].x, maxx = polygon[0].x;
  double miny = polygon[0].y, maxy = polygon[0].y;
  for (const Point& p : polygon) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  RoiMask m;
  m.x0 = std::max(0, static_cast<int>(std::floor(minx)));
  m.y0 = std::max(0, static_cast<int>(std::floor(miny)));
  const int x1 = std::min(image_width - 1, static_cast<int>(std::ceil(maxx)));
  const int y1 = std::min(image_height - 1, static_cast<int>(std::ceil(maxy)));
  m.width = std::max(0, x1 - m.x0 + 1);
  m.height = std::max(0, y1 - m.y0 + 1);
  m.inside.assign(static_cast<size_t>(m.width) * m.height, 0);

  const size_t nv = polygon.size();
  for (int y = 0; y < m.height; ++y) {
    const double py = m.y0 + y;  // pixel center (integer grid)
    for (int x = 0; x < m.width; ++x) {
      const double px = m.x0 + x;
      bool in = false;
      for (size_t i = 0, j = nv - 1; i < nv; j = i++) {
        const Point& a = polygon[i];
        const Point& b = polygon[j];
        if ((a.y > py) != (b.y > py) &&
            px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x)
          in = !in;
      }
      if (in) m.inside[static_cast<size_t>(y) * m.width + x] = 1;
    }
  }
  return m;
}

Point mask_centroid(const RoiMask& mask) {
  double sx = 0.0, sy = 0.0;
  long n = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        sx += mask.x0 + x;
        sy += mask.y0 + y;
        ++n;
      }
  if (n == 0) throw AnnotationError("empty RoI mask");
  return {sx / n, sy / n};
}

}  // namespace icgm
