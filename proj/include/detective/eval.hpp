#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "detective/data.hpp"
#include "detective/geometry.hpp"
#include "detective/matching.hpp"
#include "detective/model.hpp"

namespace detective {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled
/// by exactly one thread, so writes to per-index slots need no locking.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += jobs) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

enum class ApMode { all_point, eleven_point };

inline std::string to_string(ApMode mode) {
  return mode == ApMode::all_point ? "all-point" : "11-point";
}

struct ImageDetections {
  std::vector<Detection> detections;
  std::vector<TargetLabel> ground_truth;
};

struct ClassAp {
  std::size_t cls = 0;
  std::size_t ground_truth = 0;
  std::size_t detections = 0;
  std::size_t true_positives = 0;
  std::optional<double> ap;  // empty when the class has no ground truth
};

struct MapResult {
  double map = 0.0;
  std::vector<ClassAp> per_class;
  std::vector<std::string> notices;
};

/// Area under the precision-recall curve for detections already ranked by
/// score. `tp[i]` marks the i-th ranked detection as a true positive.
inline double average_precision(const std::vector<bool>& tp, std::size_t num_gt, ApMode mode) {
  if (num_gt == 0) return 0.0;
  std::vector<double> precision, recall;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    hits += tp[i] ? 1 : 0;
    precision.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(hits) / static_cast<double>(num_gt));
  }
  if (mode == ApMode::eleven_point) {
    double total = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= t) best = std::max(best, precision[i]);
      }
      total += best;
    }
    return total / 11.0;
  }
  // Monotone envelope, then sum precision over recall increments.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// VOC-style mAP. Detections of each class are pooled over images and ranked
/// by score (ties keep image order, then in-image order). A detection is a
/// true positive when it reaches the IoU threshold with an unclaimed ground
/// truth of its class in the same image; it claims the best such match.
inline MapResult compute_map(const std::vector<ImageDetections>& images, std::size_t num_classes,
                             double iou_threshold = 0.5, ApMode mode = ApMode::all_point) {
  MapResult result;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    struct Ranked {
      double score;
      std::size_t image;
      BoxXYXY box;
    };
    std::vector<Ranked> ranked;
    std::vector<std::vector<bool>> claimed(images.size());
    ClassAp entry{cls};
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (const Detection& d : images[i].detections) {
        if (d.cls == static_cast<int>(cls)) ranked.push_back({d.score, i, d.box});
      }
      claimed[i].assign(images[i].ground_truth.size(), false);
      for (const TargetLabel& t : images[i].ground_truth) entry.ground_truth += t.cls == cls ? 1 : 0;
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
    std::vector<bool> tp;
    for (const Ranked& r : ranked) {
      const auto& gts = images[r.image].ground_truth;
      double best = -1.0;
      std::size_t best_idx = gts.size();
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].cls != cls || claimed[r.image][g]) continue;
        const double v = iou(r.box, decode_offsets(gts[g].loc));
        if (v >= iou_threshold && v > best) {
          best = v;
          best_idx = g;
        }
      }
      if (best_idx < gts.size()) claimed[r.image][best_idx] = true;
      tp.push_back(best_idx < gts.size());
    }
    entry.detections = ranked.size();
    entry.true_positives = static_cast<std::size_t>(std::count(tp.begin(), tp.end(), true));
    if (entry.ground_truth == 0) {
      result.notices.push_back("class " + std::to_string(cls) +
                               " has no ground truth; excluded from mAP");
    } else {
      entry.ap = average_precision(tp, entry.ground_truth, mode);
      sum += *entry.ap;
      ++defined;
    }
    result.per_class.push_back(entry);
  }
  result.map = defined > 0 ? sum / static_cast<double>(defined) : 0.0;
  return result;
}

enum class Category { good, bad, duplicate, background, eos_correct, eos_incorrect };
inline constexpr std::size_t kNumCategories = 6;

inline const char* category_name(Category c) {
  switch (c) {
    case Category::good: return "good";
    case Category::bad: return "bad";
    case Category::duplicate: return "duplicate";
    case Category::background: return "background";
    case Category::eos_correct: return "eos_correct";
    case Category::eos_incorrect: return "eos_incorrect";
  }
  return "?";
}

/// Labels every prediction of a raw decoder sequence, in order. A prediction
/// of the right class reaching the IoU threshold with an unclaimed ground
/// truth is good and claims it; one that only reaches an already claimed
/// ground truth is a duplicate. EoS is correct once every ground truth is
/// claimed.
inline std::vector<Category> categorize_predictions(const std::vector<Prediction>& sequence,
                                                    const std::vector<TargetLabel>& ground_truth,
                                                    const ModelConfig& config,
                                                    double iou_threshold = 0.5) {
  std::vector<bool> claimed(ground_truth.size(), false);
  std::vector<Category> out;
  for (const Prediction& p : sequence) {
    const std::size_t cls = p.argmax();
    if (cls == config.eos_index()) {
      const bool all = std::all_of(claimed.begin(), claimed.end(), [](bool b) { return b; });
      out.push_back(all ? Category::eos_correct : Category::eos_incorrect);
      continue;
    }
    if (config.background_index() && cls == *config.background_index()) {
      out.push_back(Category::background);
      continue;
    }
    const BoxXYXY box = decode_offsets(p.p_loc);
    double best = -1.0;
    std::size_t best_idx = ground_truth.size();
    bool hits_claimed = false;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (ground_truth[g].cls != cls) continue;
      const double v = iou(box, decode_offsets(ground_truth[g].loc));
      if (v < iou_threshold) continue;
      if (claimed[g]) {
        hits_claimed = true;
      } else if (v > best) {
        best = v;
        best_idx = g;
      }
    }
    if (best_idx < ground_truth.size()) {
      claimed[best_idx] = true;
      out.push_back(Category::good);
    } else {
      out.push_back(hits_claimed ? Category::duplicate : Category::bad);
    }
  }
  return out;
}

using CategoryRow = std::array<std::size_t, kNumCategories>;

/// Per-iteration precision good / (good + bad + duplicate); empty for
/// iterations without any object prediction.
inline std::vector<std::optional<double>> precision_per_iteration(
    const std::vector<CategoryRow>& histogram) {
  std::vector<std::optional<double>> out;
  for (const CategoryRow& row : histogram) {
    const std::size_t good = row[static_cast<std::size_t>(Category::good)];
    const std::size_t denom = good + row[static_cast<std::size_t>(Category::bad)] +
                              row[static_cast<std::size_t>(Category::duplicate)];
    out.push_back(denom > 0 ? std::optional<double>(static_cast<double>(good) /
                                                    static_cast<double>(denom))
                            : std::nullopt);
  }
  return out;
}

/// Pearson correlation; empty when fewer than two points or zero variance.
inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return std::nullopt;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

struct EvalOptions {
  double iou_threshold = 0.5;
  ApMode ap_mode = ApMode::all_point;
  std::size_t max_iters = 16;
  std::size_t jobs = 1;
};

struct EvalReport {
  std::string mode = "sparse";
  EvalOptions options;
  std::optional<double> nms_threshold;
  std::size_t fixed_steps = 0;  // dense mode only
  std::size_t images = 0;
  MapResult map;
  std::vector<CategoryRow> histogram;  // one row per iteration
  std::vector<std::optional<double>> precision;
  std::vector<std::pair<std::size_t, std::size_t>> counts;  // (ground truth, detections)
  std::optional<double> count_correlation;
  double mean_iterations = 0.0;
  double eos_termination_rate = 0.0;
  double mean_detections = 0.0;
  double mean_ground_truth = 0.0;
};

/// Builds the report from per-image inference results.
inline EvalReport summarize(const std::vector<AnnotatedImage>& scenes,
                            const std::vector<InferenceResult>& results,
                            const ModelConfig& config, const EvalOptions& options) {
  EvalReport report;
  report.options = options;
  report.images = scenes.size();
  std::vector<ImageDetections> pooled;
  std::vector<double> gt_counts, det_counts;
  std::size_t eos_runs = 0, iterations = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const InferenceResult& r = results[i];
    pooled.push_back({r.detections, scenes[i].objects});
    const auto cats =
        categorize_predictions(r.sequence, scenes[i].objects, config, options.iou_threshold);
    if (report.histogram.size() < cats.size()) report.histogram.resize(cats.size(), CategoryRow{});
    for (std::size_t t = 0; t < cats.size(); ++t) {
      ++report.histogram[t][static_cast<std::size_t>(cats[t])];
    }
    report.counts.emplace_back(scenes[i].objects.size(), r.detections.size());
    gt_counts.push_back(static_cast<double>(scenes[i].objects.size()));
    det_counts.push_back(static_cast<double>(r.detections.size()));
    eos_runs += r.stopped_by_eos ? 1 : 0;
    iterations += r.sequence.size();
  }
  report.map = compute_map(pooled, config.num_classes, options.iou_threshold, options.ap_mode);
  report.precision = precision_per_iteration(report.histogram);
  report.count_correlation = pearson(gt_counts, det_counts);
  if (!scenes.empty()) {
    const double n = static_cast<double>(scenes.size());
    report.mean_iterations = static_cast<double>(iterations) / n;
    report.eos_termination_rate = static_cast<double>(eos_runs) / n;
    report.mean_detections = std::accumulate(det_counts.begin(), det_counts.end(), 0.0) / n;
    report.mean_ground_truth = std::accumulate(gt_counts.begin(), gt_counts.end(), 0.0) / n;
  }
  return report;
}

/// Sparse evaluation: EoS-terminated inference, no post-processing.
inline EvalReport evaluate_map(const Detective& model, const std::vector<AnnotatedImage>& scenes,
                               const EvalOptions& options = {}) {
  std::vector<InferenceResult> results(scenes.size());
  parallel_for(scenes.size(), options.jobs,
               [&](std::size_t i) { results[i] = model.infer(scenes[i].image, options.max_iters); });
  return summarize(scenes, results, model.config(), options);
}

/// Dense evaluation: a fixed number of decoder steps regardless of EoS, then
/// greedy per-class NMS before mAP.
inline EvalReport evaluate_dense(const Detective& model, const std::vector<AnnotatedImage>& scenes,
                                 std::size_t steps, double nms_threshold,
                                 const EvalOptions& options = {}) {
  std::vector<InferenceResult> results(scenes.size());
  parallel_for(scenes.size(), options.jobs, [&](std::size_t i) {
    results[i] = model.run_fixed(scenes[i].image, steps);
    results[i].detections = nms(results[i].detections, nms_threshold);
  });
  EvalReport report = summarize(scenes, results, model.config(), options);
  report.mode = "dense";
  report.nms_threshold = nms_threshold;
  report.fixed_steps = steps;
  return report;
}

// ---------------------------------------------------------------------------
// Report output

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const ClassAp& c : r.map.per_class) {
    per_class.push_back({{"class", c.cls},
                         {"ap", optional_json(c.ap)},
                         {"ground_truth", c.ground_truth},
                         {"detections", c.detections},
                         {"true_positives", c.true_positives}});
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const CategoryRow& row : r.histogram) {
    nlohmann::json h;
    for (std::size_t c = 0; c < kNumCategories; ++c) h[category_name(static_cast<Category>(c))] = row[c];
    hist.push_back(h);
  }
  nlohmann::json precision = nlohmann::json::array();
  for (const auto& p : r.precision) precision.push_back(optional_json(p));
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [gt, det] : r.counts) counts.push_back({gt, det});
  nlohmann::json j{{"mode", r.mode},
                   {"ap_interpolation", to_string(r.options.ap_mode)},
                   {"iou_threshold", r.options.iou_threshold},
                   {"max_iters", r.options.max_iters},
                   {"images", r.images},
                   {"map", r.map.map},
                   {"per_class", per_class},
                   {"notices", r.map.notices},
                   {"category_histogram", hist},
                   {"precision_per_iteration", precision},
                   {"precision_legend", "good / (good + bad + duplicate) per iteration"},
                   {"count_pairs", counts},
                   {"count_correlation", optional_json(r.count_correlation)},
                   {"mean_iterations", r.mean_iterations},
                   {"eos_termination_rate", r.eos_termination_rate},
                   {"mean_detections", r.mean_detections},
                   {"mean_ground_truth", r.mean_ground_truth}};
  if (r.mode == "dense") {
    j["nms_threshold"] = optional_json(r.nms_threshold);
    j["fixed_steps"] = r.fixed_steps;
    j["dense_note"] = "fixed-length decoding; EoS predictions do not stop inference";
  }
  return j;
}

inline std::string format_optional(const std::optional<double>& v, int precision = 4) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

inline std::string to_text(const EvalReport& r, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "mode: " << r.mode << "  images: " << r.images << "  IoU threshold: "
     << r.options.iou_threshold << "  AP: " << to_string(r.options.ap_mode) << '\n';
  if (r.mode == "dense") {
    os << "fixed steps: " << r.fixed_steps << "  NMS threshold: " << format_optional(r.nms_threshold)
       << '\n';
  }
  os << "\nclass            AP      GT    dets\n";
  for (const ClassAp& c : r.map.per_class) {
    const std::string name =
        c.cls < class_names.size() ? class_names[c.cls] : "class" + std::to_string(c.cls);
    os << std::left << std::setw(14) << name << std::right << std::setw(8) << format_optional(c.ap)
       << std::setw(8) << c.ground_truth << std::setw(8) << c.detections << '\n';
  }
  os << "mAP           " << std::setw(8) << r.map.map << '\n';
  for (const auto& n : r.map.notices) os << "note: " << n << '\n';
  os << "\niteration  good   bad   dup    bg  eos_ok eos_bad  precision\n";
  for (std::size_t t = 0; t < r.histogram.size(); ++t) {
    os << std::setw(9) << t + 1;
    for (std::size_t c = 0; c < kNumCategories; ++c) os << std::setw(c < 4 ? 6 : 8) << r.histogram[t][c];
    os << std::setw(11) << format_optional(r.precision[t]) << '\n';
  }
  os << "(precision = good / (good + bad + duplicate))\n";
  os << "\ncount correlation r: " << format_optional(r.count_correlation) << '\n';
  os << "mean detections / image: " << r.mean_detections
     << "  mean ground truth / image: " << r.mean_ground_truth << '\n';
  os << "mean iterations: " << r.mean_iterations
     << "  EoS termination rate: " << r.eos_termination_rate << '\n';
  return os.str();
}

inline std::string histogram_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "iteration";
  for (std::size_t c = 0; c < kNumCategories; ++c) os << ',' << category_name(static_cast<Category>(c));
  os << '\n';
  for (std::size_t t = 0; t < r.histogram.size(); ++t) {
    os << t + 1;
    for (std::size_t v : r.histogram[t]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

inline std::string precision_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "iteration,precision\n";
  for (std::size_t t = 0; t < r.precision.size(); ++t) {
    os << t + 1 << ',' << (r.precision[t] ? nlohmann::json(*r.precision[t]).dump() : "") << '\n';
  }
  return os.str();
}

inline std::string counts_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "ground_truth,detections\n";
  for (const auto& [gt, det] : r.counts) os << gt << ',' << det << '\n';
  return os.str();
}

/// Writes <prefix>.json, <prefix>.txt and the per-iteration CSV tables.
inline void write_report(const std::filesystem::path& dir, const std::string& prefix,
                         const EvalReport& r, const std::vector<std::string>& class_names) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / (prefix + ".json")) << to_json(r).dump(2) << '\n';
  std::ofstream(dir / (prefix + ".txt")) << to_text(r, class_names);
  std::ofstream(dir / (prefix + "_categories.csv")) << histogram_csv(r);
  std::ofstream(dir / (prefix + "_precision.csv")) << precision_csv(r);
  std::ofstream(dir / (prefix + "_counts.csv")) << counts_csv(r);
}

}  // namespace detective
