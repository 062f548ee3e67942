#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "detective/eval.hpp"
#include "detective/selfcheck.hpp"

namespace detective {
namespace {

using selfcheck::det;
using selfcheck::gt;

// Independent all-point AP: each true positive at rank k contributes the best
// precision at any rank >= k, divided by the number of ground truths.
double oracle_all_point(const std::vector<bool>& tp, std::size_t num_gt) {
  std::vector<double> precision;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    hits += tp[i];
    precision.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
  }
  double total = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (tp[k]) total += *std::max_element(precision.begin() + static_cast<long>(k), precision.end());
  }
  return total / static_cast<double>(num_gt);
}

TEST(AveragePrecision, MatchesOracleOnRandomRankings) {
  std::mt19937_64 rng(51);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t len = 1 + trial % 12;
    std::vector<bool> tp(len);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < len; ++i) hits += (tp[i] = coin(rng));
    const std::size_t num_gt = hits + trial % 3;
    if (num_gt == 0) continue;
    EXPECT_NEAR(average_precision(tp, num_gt, ApMode::all_point), oracle_all_point(tp, num_gt),
                1e-12);
    const double eleven = average_precision(tp, num_gt, ApMode::eleven_point);
    EXPECT_GE(eleven, 0.0);
    EXPECT_LE(eleven, 1.0);
  }
}

TEST(ComputeMap, HandTracedFixtures) {
  for (const auto& f : selfcheck::map_fixtures()) {
    const MapResult all = compute_map(f.images, f.num_classes, 0.5, ApMode::all_point);
    const MapResult eleven = compute_map(f.images, f.num_classes, 0.5, ApMode::eleven_point);
    EXPECT_NEAR(all.map, f.all_point, 1e-15) << f.name;
    EXPECT_NEAR(eleven.map, f.eleven_point, 1e-15) << f.name;
  }
}

TEST(ComputeMap, ExactValuesAndNotices) {
  const auto fixtures = selfcheck::map_fixtures();
  EXPECT_EQ(compute_map(fixtures[0].images, 1).map, 1.0);
  EXPECT_EQ(compute_map(fixtures[1].images, 1).map, 1.0);
  EXPECT_EQ(compute_map(fixtures[2].images, 1).map, 0.0);
  const MapResult two = compute_map(fixtures[4].images, 3);
  EXPECT_EQ(two.map, 0.25);
  ASSERT_EQ(two.per_class.size(), 3u);
  EXPECT_FALSE(two.per_class[2].ap.has_value());
  ASSERT_EQ(two.notices.size(), 1u);
  EXPECT_NE(two.notices[0].find("class 2"), std::string::npos);
}

TEST(ComputeMap, ThresholdIsInclusive) {
  // Half-overlapping box: IoU exactly 0.5.
  const std::vector<ImageDetections> images{
      {{det(0, 0.9, 0.0, 0.0, 0.5, 1.0)}, {gt(0, 0.0, 0.0, 1.0, 1.0)}}};
  EXPECT_EQ(compute_map(images, 1, 0.5).map, 1.0);
  EXPECT_EQ(compute_map(images, 1, 0.51).map, 0.0);
}

Prediction pred(std::size_t cls, BoxOffsets loc, std::size_t outputs = 5) {
  std::vector<double> p(outputs, 0.0);
  p[cls] = 1.0;
  return Prediction{p, loc, Tensor()};
}

constexpr std::size_t kEos = 4, kBackground = 3;

TEST(Categorize, Examples) {
  const ModelConfig cfg;  // 3 classes, background 3, EoS 4
  const std::vector<TargetLabel> two{gt(0, 0.1, 0.1, 0.3, 0.3), gt(2, 0.6, 0.6, 0.3, 0.3)};
  EXPECT_EQ(categorize_predictions({pred(2, two[1].loc), pred(0, two[0].loc), pred(kEos, {})}, two,
                                   cfg),
            (std::vector<Category>{Category::good, Category::good, Category::eos_correct}));

  const std::vector<TargetLabel> one{gt(1, 0.2, 0.2, 0.4, 0.4)};
  EXPECT_EQ(categorize_predictions({pred(kEos, {})}, one, cfg),
            std::vector<Category>{Category::eos_incorrect});
  EXPECT_EQ(categorize_predictions({pred(1, one[0].loc), pred(1, one[0].loc), pred(kEos, {})},
                                   one, cfg),
            (std::vector<Category>{Category::good, Category::duplicate, Category::eos_correct}));
  EXPECT_EQ(categorize_predictions({pred(0, one[0].loc), pred(1, {0.7, 0.7, 0.2, 0.2}),
                                    pred(kBackground, {})},
                                   one, cfg),
            (std::vector<Category>{Category::bad, Category::bad, Category::background}));
  EXPECT_EQ(categorize_predictions({pred(kEos, {})}, {}, cfg),
            std::vector<Category>{Category::eos_correct});
}

std::vector<AnnotatedImage> scenes_with_counts(const std::vector<std::size_t>& counts) {
  std::vector<AnnotatedImage> scenes;
  for (std::size_t n : counts) {
    AnnotatedImage s;
    for (std::size_t k = 0; k < n; ++k) {
      s.objects.push_back(gt(k % 3, 0.05 + 0.22 * static_cast<double>(k), 0.1, 0.15, 0.2));
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

InferenceResult perfect_run(const AnnotatedImage& scene) {
  InferenceResult r;
  for (const TargetLabel& t : scene.objects) {
    r.sequence.push_back(pred(t.cls, t.loc));
    r.detections.push_back(det(static_cast<int>(t.cls), 1.0, t.loc.x, t.loc.y, t.loc.w, t.loc.h));
  }
  r.sequence.push_back(pred(kEos, {}));
  r.stopped_by_eos = true;
  return r;
}

TEST(Analysis, PerfectModel) {
  const ModelConfig cfg;
  const auto scenes = scenes_with_counts({1, 2, 3, 4, 2});
  std::vector<InferenceResult> results;
  for (const auto& s : scenes) results.push_back(perfect_run(s));
  const EvalReport r = summarize(scenes, results, cfg, {});
  EXPECT_EQ(r.map.map, 1.0);
  ASSERT_EQ(r.precision.size(), 5u);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(r.precision[t], 1.0);
  EXPECT_FALSE(r.precision[4].has_value());  // only EoS predictions at iteration 5
  ASSERT_TRUE(r.count_correlation.has_value());
  EXPECT_NEAR(*r.count_correlation, 1.0, 1e-12);
  EXPECT_EQ(r.eos_termination_rate, 1.0);
  EXPECT_EQ(r.mean_detections, r.mean_ground_truth);
  for (std::size_t t = 0; t < r.histogram.size(); ++t) {
    std::size_t row_total = 0;
    for (std::size_t c : r.histogram[t]) row_total += c;
    std::size_t expected = 0;
    for (const auto& res : results) expected += res.sequence.size() > t;
    EXPECT_EQ(row_total, expected);
  }
}

TEST(Analysis, AlwaysEosFirst) {
  const ModelConfig cfg;
  const auto scenes = scenes_with_counts({1, 2, 3});
  std::vector<InferenceResult> results(scenes.size());
  for (auto& r : results) {
    r.sequence.push_back(pred(kEos, {}));
    r.stopped_by_eos = true;
  }
  const EvalReport r = summarize(scenes, results, cfg, {});
  EXPECT_EQ(r.map.map, 0.0);
  for (const auto& p : r.precision) EXPECT_FALSE(p.has_value());
  for (const auto& [n_gt, n_det] : r.counts) EXPECT_EQ(n_det, 0u);
  EXPECT_FALSE(r.count_correlation.has_value());
  EXPECT_EQ(r.mean_detections, 0.0);
}

TEST(Analysis, Pearson) {
  EXPECT_NEAR(*pearson({1, 2, 3, 4}, {1, 2, 3, 4}), 1.0, 1e-15);
  EXPECT_NEAR(*pearson({1, 2, 3, 4}, {8, 6, 4, 2}), -1.0, 1e-15);
  EXPECT_FALSE(pearson({1, 2, 3}, {5, 5, 5}).has_value());
  EXPECT_FALSE(pearson({1}, {1}).has_value());
}

TEST(Dense, NmsIsNoOpWithoutOverlapsAndReducesDuplicates) {
  const ModelConfig cfg;
  const auto scenes = scenes_with_counts({2, 3});
  std::vector<InferenceResult> results;
  for (const auto& s : scenes) results.push_back(perfect_run(s));
  const EvalReport before = summarize(scenes, results, cfg, {});
  auto filtered = results;
  for (auto& r : filtered) r.detections = nms(r.detections, 0.5);
  const EvalReport after = summarize(scenes, filtered, cfg, {});
  EXPECT_EQ(before.map.map, after.map.map);
  EXPECT_EQ(before.mean_detections, after.mean_detections);

  auto doubled = results;
  std::size_t total_before = 0, total_after = 0;
  for (auto& r : doubled) {
    const auto copy = r.detections;
    for (Detection d : copy) {
      d.score *= 0.5;
      r.detections.push_back(d);
    }
    total_before += r.detections.size();
    total_after += nms(r.detections, 0.5).size();
  }
  EXPECT_LT(total_after, total_before);
}

TEST(Dense, FixedLengthRunIgnoresEos) {
  ModelConfig cfg;
  cfg.encoder.image_height = cfg.encoder.image_width = 16;
  cfg.encoder.stage_channels = {4, 4, 4};
  cfg.hidden_channels = 4;
  Detective model(cfg, 3);
  model.heads().w_cls.fill(0.0);
  model.heads().b_cls.fill(0.0);
  model.heads().b_cls[cfg.eos_index()] = 4.0;
  AnnotatedImage scene;
  scene.image = Tensor(Shape{16, 16, 3}, 0.5);
  scene.objects.push_back(gt(0, 0.1, 0.1, 0.3, 0.3));
  const EvalReport dense = evaluate_dense(model, {scene}, 6, 0.5);
  EXPECT_EQ(dense.mode, "dense");
  EXPECT_EQ(dense.mean_iterations, 6.0);
  const EvalReport sparse = evaluate_map(model, {scene});
  EXPECT_EQ(sparse.mean_iterations, 1.0);
  EXPECT_EQ(sparse.eos_termination_rate, 1.0);
}

TEST(Reports, SerializationIsStable) {
  const ModelConfig cfg;
  const auto scenes = scenes_with_counts({1, 3});
  std::vector<InferenceResult> results;
  for (const auto& s : scenes) results.push_back(perfect_run(s));
  const EvalReport r = summarize(scenes, results, cfg, {});
  const std::vector<std::string> names{"rectangle", "ellipse", "triangle"};
  EXPECT_EQ(to_json(r).dump(), to_json(summarize(scenes, results, cfg, {})).dump());
  const std::string text = to_text(r, names);
  EXPECT_NE(text.find("rectangle"), std::string::npos);
  EXPECT_NE(histogram_csv(r).find("good"), std::string::npos);
  EXPECT_EQ(to_json(r).at("map").get<double>(), 1.0);
}

}  // namespace
}  // namespace detective
