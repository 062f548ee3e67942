#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detective/geometry.hpp"
#include "detective/matching.hpp"
#include "detective/tensor.hpp"

namespace detective {

/// Malformed or unreadable dataset/image file. The message names the file
/// and, where applicable, the record.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SceneConfig {
  std::size_t image_size = 64;
  std::vector<std::string> classes{"rectangle", "ellipse", "triangle"};
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  double min_size = 0.15;  // object side as a fraction of the image side
  double max_size = 0.5;
  double max_overlap = 0.3;   // pairwise IoU cap
  double max_coverage = 0.5;  // cap on the fraction of the smaller box covered
  double noise = 0.08;
  std::size_t max_retries = 50;
  std::uint64_t seed = 1;

  std::size_t min_pixels() const {
    return static_cast<std::size_t>(std::lround(min_size * static_cast<double>(image_size)));
  }
  std::size_t max_pixels() const {
    return static_cast<std::size_t>(std::lround(max_size * static_cast<double>(image_size)));
  }

  void validate() const {
    if (classes.size() < 2) throw std::invalid_argument("scene config needs at least two classes");
    for (const auto& name : classes) {
      if (name != "rectangle" && name != "ellipse" && name != "triangle") {
        throw std::invalid_argument("scene config: unknown shape class '" + name + "'");
      }
    }
    if (min_objects > max_objects) {
      throw std::invalid_argument("scene config: min_objects exceeds max_objects");
    }
    if (!(min_size > 0.0) || min_size > max_size || max_size > 1.0) {
      throw std::invalid_argument("scene config: object sizes must satisfy 0 < min <= max <= 1");
    }
    if (min_pixels() < 3) {
      throw std::invalid_argument("scene config: objects would be smaller than 3 pixels");
    }
    if (max_pixels() + 2 > image_size) {
      throw std::invalid_argument("scene config: objects do not fit inside the image border");
    }
    if (noise < 0.0 || noise > 0.5) throw std::invalid_argument("scene config: noise out of range");
  }
};

struct AnnotatedImage {
  Tensor image;  // H x W x 3, values k/255
  std::vector<TargetLabel> objects;

  bool operator==(const AnnotatedImage&) const = default;
};

/// 8-bit RGB raster used while drawing; converted to a tensor at the end.
struct Raster {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> rgb;

  Tensor to_tensor() const {
    Tensor t(Shape{height, width, 3});
    for (std::size_t i = 0; i < rgb.size(); ++i) t[i] = rgb[i] / 255.0;
    return t;
  }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// SplitMix64 finaliser; gives independent per-scene streams from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace detail {

struct PixelBox {
  std::size_t x0, y0, x1, y1;  // half-open pixel ranges
};

// Pixel coverage mask of a shape inscribed in `box`, tested at pixel centres.
inline std::vector<bool> shape_mask(const std::string& shape, const PixelBox& box,
                                    std::size_t size) {
  std::vector<bool> mask(size * size, false);
  const double x0 = static_cast<double>(box.x0), x1 = static_cast<double>(box.x1);
  const double y0 = static_cast<double>(box.y0), y1 = static_cast<double>(box.y1);
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  const double rx = 0.5 * (x1 - x0), ry = 0.5 * (y1 - y0);
  for (std::size_t y = box.y0; y < box.y1; ++y) {
    for (std::size_t x = box.x0; x < box.x1; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      bool inside = true;
      if (shape == "ellipse") {
        const double dx = (px - cx) / rx, dy = (py - cy) / ry;
        inside = dx * dx + dy * dy <= 1.0;
      } else if (shape == "triangle") {  // isosceles, apex at the top centre
        inside = std::abs(px - cx) <= (py - y0) / (y1 - y0) * rx;
      }
      mask[y * size + x] = inside;
    }
  }
  return mask;
}

inline PixelBox mask_bounds(const std::vector<bool>& mask, std::size_t size) {
  PixelBox b{size, size, 0, 0};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      if (mask[y * size + x]) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  return b;
}

inline BoxXYXY normalized(const PixelBox& b, std::size_t size) {
  const double s = static_cast<double>(size);
  return {b.x0 / s, b.y0 / s, b.x1 / s, b.y1 / s};
}

}  // namespace detail

/// Draws n ~ U[min_objects, max_objects] shapes with distinct fill colours on
/// a noisy background, keeping a one-pixel border clear. Placements that
/// overlap an existing object beyond the caps are redrawn up to max_retries
/// times, after which the last candidate is accepted (and `all_placed`, when
/// given, is set to false). Annotations are the exact bounding boxes of the
/// painted pixels.
inline AnnotatedImage generate_scene(std::mt19937_64& rng, const SceneConfig& cfg,
                                     bool* all_placed = nullptr) {
  cfg.validate();
  const std::size_t s = cfg.image_size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<std::size_t> class_dist(0, cfg.classes.size() - 1);
  std::uniform_int_distribution<std::size_t> side_dist(cfg.min_pixels(), cfg.max_pixels());

  Raster raster{s, s, std::vector<std::uint8_t>(s * s * 3)};
  const double base = 0.05 + 0.25 * unit(rng);
  for (auto& px : raster.rgb) px = to_byte(base + cfg.noise * (2.0 * unit(rng) - 1.0));

  if (all_placed) *all_placed = true;
  const std::size_t n = count_dist(rng);
  std::vector<TargetLabel> objects;
  std::vector<BoxXYXY> placed;
  std::vector<std::array<double, 3>> fills;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t cls = class_dist(rng);
    std::vector<bool> mask;
    detail::PixelBox bounds{};
    for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
      const std::size_t w = side_dist(rng), h = side_dist(rng);
      const std::size_t x0 = std::uniform_int_distribution<std::size_t>(1, s - w - 1)(rng);
      const std::size_t y0 = std::uniform_int_distribution<std::size_t>(1, s - h - 1)(rng);
      mask = detail::shape_mask(cfg.classes[cls], {x0, y0, x0 + w, y0 + h}, s);
      bounds = detail::mask_bounds(mask, s);
      const BoxXYXY candidate = detail::normalized(bounds, s);
      const bool ok = std::all_of(placed.begin(), placed.end(), [&](const BoxXYXY& other) {
        const double coverage =
            intersection_area(candidate, other) / std::min(candidate.area(), other.area());
        return iou(candidate, other) <= cfg.max_overlap && coverage <= cfg.max_coverage;
      });
      if (ok) break;
      if (attempt == cfg.max_retries && all_placed) *all_placed = false;
    }
    // Fill colours at least 0.25 apart (L1 over channels) from earlier objects.
    std::array<double, 3> fill{};
    for (std::size_t attempt = 0; attempt < 100; ++attempt) {
      for (double& c : fill) c = 0.45 + 0.55 * unit(rng);
      const bool distinct = std::all_of(fills.begin(), fills.end(), [&](const auto& f) {
        return std::abs(f[0] - fill[0]) + std::abs(f[1] - fill[1]) + std::abs(f[2] - fill[2]) >=
               0.25;
      });
      if (distinct) break;
    }
    for (std::size_t p = 0; p < s * s; ++p) {
      if (!mask[p]) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        raster.rgb[p * 3 + c] = to_byte(fill[c] + 0.5 * cfg.noise * (2.0 * unit(rng) - 1.0));
      }
    }
    const BoxXYXY box = detail::normalized(bounds, s);
    placed.push_back(box);
    fills.push_back(fill);
    objects.push_back(TargetLabel{
        cls, BoxOffsets{box.x_min, box.y_min, box.x_max - box.x_min, box.y_max - box.y_min}});
  }
  return AnnotatedImage{raster.to_tensor(), std::move(objects)};
}

/// Scenes first_index .. first_index + count - 1 of the stream defined by cfg.seed.
inline std::vector<AnnotatedImage> generate_scenes(const SceneConfig& cfg, std::size_t count,
                                                   std::size_t first_index = 0) {
  std::vector<AnnotatedImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix_seed(cfg.seed, first_index + i));
    out.push_back(generate_scene(rng, cfg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Netpbm I/O

inline void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw std::invalid_argument("write_ppm: expected an h x w x 3 tensor");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::vector<char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) bytes[i] = static_cast<char>(to_byte(image[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Writes a single-channel map as an 8-bit P5 graymap, min-max normalised.
inline void write_pgm_normalized(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() < 2) throw std::invalid_argument("write_pgm: expected a 2-D map");
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const double range = *hi - *lo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
  for (double v : map.data()) {
    const double t = range > 0.0 ? (v - *lo) / range : 0.0;
    out.put(static_cast<char>(to_byte(t)));
  }
}

namespace detail {

inline std::size_t read_header_number(std::istream& in, const std::string& name) {
  in >> std::ws;
  while (in.peek() == '#') {
    std::string comment;
    std::getline(in, comment);
    in >> std::ws;
  }
  std::size_t v = 0;
  if (!(in >> v)) throw DataError(name + ": malformed netpbm header");
  return v;
}

}  // namespace detail

inline Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError(path.string() + ": not a binary PPM (P6) file");
  const std::size_t w = detail::read_header_number(in, path.string());
  const std::size_t h = detail::read_header_number(in, path.string());
  const std::size_t maxval = detail::read_header_number(in, path.string());
  if (maxval != 255) throw DataError(path.string() + ": only 8-bit PPM is supported");
  in.get();
  std::vector<char> bytes(w * h * 3);
  if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  Tensor t(Shape{h, w, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    t[i] = static_cast<std::uint8_t>(bytes[i]) / 255.0;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Dataset directory: images/NNNNNN.ppm, annotations.jsonl, manifest.json

struct Dataset {
  std::vector<std::string> classes;
  std::vector<AnnotatedImage> scenes;
  std::map<std::string, std::vector<std::size_t>> splits;

  std::vector<AnnotatedImage> split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw DataError("dataset has no split named '" + name + "'");
    std::vector<AnnotatedImage> out;
    out.reserve(it->second.size());
    for (std::size_t i : it->second) out.push_back(scenes.at(i));
    return out;
  }
};

inline constexpr int kDatasetFormatVersion = 1;

inline std::string image_file_name(std::size_t index) {
  std::ostringstream os;
  os << "images/" << std::setw(6) << std::setfill('0') << index << ".ppm";
  return os.str();
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw DataError("cannot write " + (dir / "annotations.jsonl").string());
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    const std::string file = image_file_name(i);
    write_ppm(dir / file, data.scenes[i].image);
    nlohmann::json objects = nlohmann::json::array();
    for (const TargetLabel& t : data.scenes[i].objects) {
      objects.push_back({{"class", t.cls},
                         {"x_tl", t.loc.x},
                         {"y_tl", t.loc.y},
                         {"w", t.loc.w},
                         {"h", t.loc.h}});
    }
    ann << nlohmann::json{{"file", file}, {"objects", objects}}.dump() << '\n';
  }
  nlohmann::json manifest{{"format_version", kDatasetFormatVersion},
                          {"classes", data.classes},
                          {"count", data.scenes.size()},
                          {"splits", data.splits}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("cannot open " + manifest_path.string());
  Dataset data;
  std::size_t count = 0;
  try {
    const nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.at("format_version").get<int>() != kDatasetFormatVersion) {
      throw DataError(manifest_path.string() + ": unsupported format version");
    }
    data.classes = manifest.at("classes").get<std::vector<std::string>>();
    count = manifest.at("count").get<std::size_t>();
    data.splits = manifest.at("splits").get<std::map<std::string, std::vector<std::size_t>>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }

  const auto ann_path = dir / "annotations.jsonl";
  std::ifstream ann(ann_path);
  if (!ann) throw DataError("cannot open " + ann_path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = ann_path.string() + ":" + std::to_string(line_no);
    AnnotatedImage scene;
    std::string file;
    try {
      const nlohmann::json rec = nlohmann::json::parse(line);
      file = rec.at("file").get<std::string>();
      for (const auto& o : rec.at("objects")) {
        TargetLabel t{o.at("class").get<std::size_t>(),
                      BoxOffsets{o.at("x_tl").get<double>(), o.at("y_tl").get<double>(),
                                 o.at("w").get<double>(), o.at("h").get<double>()}};
        if (t.cls >= data.classes.size()) {
          throw DataError(where + ": class id " + std::to_string(t.cls) + " out of range");
        }
        scene.objects.push_back(t);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed annotation record (" + e.what() + ")");
    }
    scene.image = read_ppm(dir / file);
    data.scenes.push_back(std::move(scene));
  }
  if (data.scenes.size() != count) {
    throw DataError(ann_path.string() + ": manifest lists " + std::to_string(count) +
                    " scenes but " + std::to_string(data.scenes.size()) + " records were read");
  }
  for (const auto& [name, idx] : data.splits) {
    for (std::size_t i : idx) {
      if (i >= count) throw DataError(manifest_path.string() + ": split '" + name +
                                      "' references missing scene " + std::to_string(i));
    }
  }
  return data;
}

}  // namespace detective
