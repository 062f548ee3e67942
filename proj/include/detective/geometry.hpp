#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <vector>

namespace detective {

/// Box as (x_tl, y_tl, w, h), each a fraction of the image size in [0, 1].
struct BoxOffsets {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  std::array<double, 4> as_array() const { return {x, y, w, h}; }
  bool operator==(const BoxOffsets&) const = default;
};

/// Corner form used for overlap computations.
struct BoxXYXY {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double area() const {
    return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min);
  }
  bool operator==(const BoxXYXY&) const = default;
};

/// Corner form of an offset box; the far corner is clamped to the image.
inline BoxXYXY decode_offsets(const BoxOffsets& p) {
  return {p.x, p.y, std::min(1.0, p.x + p.w), std::min(1.0, p.y + p.h)};
}

inline double intersection_area(const BoxXYXY& a, const BoxXYXY& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
}

/// Intersection over union. Zero-area unions (degenerate boxes) give 0.
inline double iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double inter = intersection_area(a, b);
  // Summing both areas in a fixed order keeps iou(a, b) == iou(b, a) exactly.
  const double area_a = a.area(), area_b = b.area();
  const double uni = std::min(area_a, area_b) + std::max(area_a, area_b) - inter;
  if (area_a <= 0.0 || area_b <= 0.0 || uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct Detection {
  int cls = 0;
  double score = 0.0;
  BoxXYXY box;

  bool operator==(const Detection&) const = default;
};

/// Greedy per-class suppression. Detections are visited by descending score
/// (stable for ties) and kept when their IoU with every kept box of the same
/// class is below the threshold. The result is in visiting order.
inline std::vector<Detection> nms(const std::vector<Detection>& detections,
                                  double iou_threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = detections[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.cls == d.cls && iou(k.box, d.box) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace detective
