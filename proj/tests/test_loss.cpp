#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "detective/loss.hpp"
#include "test_support.hpp"

namespace detective {
namespace {

using testing::random_tensor;

PredictionNode node(Tape& tape, std::vector<double> logits, BoxOffsets loc = {}) {
  Var z = tape.constant(Tensor::vector(std::move(logits)));
  return PredictionNode{z, softmax(z), tape.constant(Tensor::vector({loc.x, loc.y, loc.w, loc.h})),
                        tape.constant(Tensor(Shape{2, 2}, 0.25))};
}

ModelConfig config_with(std::size_t classes) {
  ModelConfig c;
  c.num_classes = classes;
  return c;
}

MatchedSet single(Band band) {
  MatchedSet ms;
  ms.pairs.push_back({0, 0, 0.0, band});
  return ms;
}

TEST(Bands, Thresholds) {
  EXPECT_EQ(band_for_iou(0.0), Band::background);
  EXPECT_EQ(band_for_iou(0.29), Band::background);
  EXPECT_EQ(band_for_iou(std::nextafter(0.3, 0.0)), Band::background);
  EXPECT_EQ(band_for_iou(0.3), Band::ignored);
  EXPECT_EQ(band_for_iou(0.45), Band::ignored);
  EXPECT_EQ(band_for_iou(std::nextafter(0.5, 0.0)), Band::ignored);
  EXPECT_EQ(band_for_iou(0.5), Band::foreground);
  EXPECT_EQ(band_for_iou(1.0), Band::foreground);
}

// Nested boxes sharing the top-left corner: IoU is the ratio of the areas.
TEST(Bands, ConstructedBoxesLandOnTheRightSide) {
  struct Case {
    BoxOffsets outer, inner;
    double expected_iou;
    Band band;
  };
  const std::vector<Case> cases{
      {{0, 0, 1, 1}, {0, 0, 0.29, 1}, 0.29, Band::background},
      {{0, 0, 0.625, 1}, {0, 0, 0.1875, 1}, 0.3, Band::ignored},
      {{0, 0, 1, 1}, {0, 0, 0.4, 1}, 0.4, Band::ignored},
      {{0, 0, 1, 1}, {0, 0, 0.45, 1}, 0.45, Band::ignored},
      {{0, 0, 1, 1}, {0, 0, 0.5, 1}, 0.5, Band::foreground},
      {{0, 0, 1, 1}, {0, 0, 0.6, 1}, 0.6, Band::foreground},
      {{0.1, 0.1, 0.3, 0.3}, {0.1, 0.1, 0.3, 0.3}, 1.0, Band::foreground},
      {{0, 0, 0.2, 0.2}, {0.5, 0.5, 0.2, 0.2}, 0.0, Band::background},
  };
  for (const Case& c : cases) {
    const std::vector<TargetLabel> targets{{0, c.outer}};
    const std::vector<Prediction> preds{Prediction{{1, 0, 0, 0, 0}, c.inner, Tensor()}};
    const MatchedSet ms = partition_matches(Assignment{{0}, 0.0}, targets, preds);
    ASSERT_EQ(ms.pairs.size(), 1u);
    if (c.expected_iou == 0.3 || c.expected_iou == 0.5 || c.expected_iou == 1.0 ||
        c.expected_iou == 0.0) {
      EXPECT_EQ(ms.pairs[0].iou, c.expected_iou);
    } else {
      EXPECT_NEAR(ms.pairs[0].iou, c.expected_iou, 1e-15);
    }
    EXPECT_EQ(ms.pairs[0].band, c.band) << "iou " << c.expected_iou;
  }
}

TEST(ClassificationLoss, Examples) {
  const ModelConfig cfg = config_with(3);  // 5 outputs, background 3, EoS 4
  const std::vector<TargetLabel> targets{{1, {}}};
  Tape tape;
  const PredictionNode certain_eos = node(tape, {-1000, -1000, -1000, -1000, 0});

  const PredictionNode perfect = node(tape, {-1000, 0, -1000, -1000, -1000});
  EXPECT_EQ(classification_loss(tape, single(Band::foreground), targets, std::vector{perfect},
                                certain_eos, cfg)
                .value()
                .item(),
            0.0);

  const double rest = (1.0 - std::exp(-1.0)) / 4.0;
  const std::vector<double> p{rest, std::exp(-1.0), rest, rest, rest};
  std::vector<double> logits;
  for (double v : p) logits.push_back(std::log(v));
  const PredictionNode one_nat = node(tape, logits);
  EXPECT_NEAR(classification_loss(tape, single(Band::foreground), targets, std::vector{one_nat},
                                  certain_eos, cfg)
                  .value()
                  .item(),
              1.0, 1e-12);

  const ModelConfig eight = config_with(6);
  const PredictionNode uniform = node(tape, std::vector<double>(8, 0.0));
  EXPECT_NEAR(classification_loss(tape, single(Band::foreground), targets, std::vector{uniform},
                                  uniform, eight)
                  .value()
                  .item(),
              2.0 * std::log(8.0), 1e-12);
}

TEST(ClassificationLoss, BandsChooseTheSupervisedClass) {
  const ModelConfig cfg = config_with(3);
  const std::vector<TargetLabel> targets{{1, {}}};
  Tape tape;
  const PredictionNode eos = node(tape, {-1000, -1000, -1000, -1000, 0});
  const std::vector<double> z{0.3, -0.2, 0.9, 0.1, -0.5};
  const PredictionNode pred = node(tape, z);
  auto nll = [&](std::size_t c) {
    double lse = 0.0;
    for (double v : z) lse += std::exp(v);
    return std::log(lse) - z[c];
  };
  auto loss = [&](Band band, const ModelConfig& mc) {
    return classification_loss(tape, single(band), targets, std::vector{pred}, eos, mc)
        .value()
        .item();
  };
  EXPECT_NEAR(loss(Band::foreground, cfg), nll(1), 1e-12);
  EXPECT_NEAR(loss(Band::background, cfg), nll(3), 1e-12);
  EXPECT_EQ(loss(Band::ignored, cfg), 0.0);

  ModelConfig no_bg = cfg;
  no_bg.background_class = false;
  const PredictionNode eos4 = node(tape, {-1000, -1000, -1000, 0});
  EXPECT_EQ(classification_loss(tape, single(Band::background), targets,
                                std::vector{node(tape, {0.3, -0.2, 0.9, 0.1})}, eos4, no_bg)
                .value()
                .item(),
            0.0);
}

TEST(LocalizationLoss, Examples) {
  const std::vector<TargetLabel> targets{{0, {0.2, 0.3, 0.4, 0.5}}};
  Tape tape;
  const PredictionNode exact = node(tape, {0, 0, 0, 0, 0}, targets[0].loc);
  EXPECT_EQ(localization_loss(tape, single(Band::ignored), targets, std::vector{exact}).value().item(),
            0.0);
  const PredictionNode off = node(tape, {0, 0, 0, 0, 0}, {0.3, 0.4, 0.5, 0.6});
  for (Band band : {Band::foreground, Band::background, Band::ignored}) {
    EXPECT_NEAR(localization_loss(tape, single(band), targets, std::vector{off}).value().item(),
                0.04, 1e-15);
  }
}

TEST(TotalLoss, Weights) {
  Tape tape;
  auto total = [&](double cls, double loc) {
    return total_loss(tape, tape.constant(Tensor::scalar(cls)), tape.constant(Tensor::scalar(loc)),
                      LossWeights{}, MatchedSet{})
        .breakdown.total;
  };
  EXPECT_EQ(total(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(total(1.0, 0.0), 0.1);
  EXPECT_DOUBLE_EQ(total(0.0, 0.04), 0.64);
}

ModelConfig scene_config() {
  ModelConfig c;
  c.encoder.image_height = 16;
  c.encoder.image_width = 16;
  c.encoder.stage_channels = {4, 4, 6};
  c.hidden_channels = 6;
  return c;
}

std::vector<TargetLabel> random_targets(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 0.6), size(0.1, 0.4);
  std::vector<TargetLabel> t;
  for (std::size_t i = 0; i < n; ++i) {
    t.push_back({i % 3, {pos(rng), pos(rng), size(rng), size(rng)}});
  }
  return t;
}

TEST(SceneLoss, PermutingTargetsLeavesLossUnchanged) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    Detective model(scene_config(), static_cast<std::uint64_t>(trial));
    const Tensor img = random_tensor({16, 16, 3}, rng, 0.0, 1.0);
    std::vector<TargetLabel> targets = random_targets(1 + trial % 4, rng);
    LossConfig cfg;
    cfg.extra_predictions = trial % 2 ? 2 : 0;
    Tape a(false), b(false);
    const double base = scene_loss(a, model, img, targets, cfg).breakdown.total;
    std::shuffle(targets.begin(), targets.end(), rng);
    EXPECT_NEAR(scene_loss(b, model, img, targets, cfg).breakdown.total, base, 1e-9);
  }
}

TEST(SceneLoss, EmptySceneIsTheEosTerm) {
  Detective model(scene_config(), 3);
  std::mt19937_64 rng(42);
  const Tensor img = random_tensor({16, 16, 3}, rng, 0.0, 1.0);
  Tape tape(false);
  const LossResult r = scene_loss(tape, model, img, {}, LossConfig{});
  const auto seq = model.decode_sequence(tape, img, 1);
  const double eos_p = seq[0].probabilities.value()[model.config().eos_index()];
  EXPECT_NEAR(r.breakdown.cls, -std::log(eos_p), 1e-12);
  EXPECT_EQ(r.breakdown.loc, 0.0);
  EXPECT_NEAR(r.breakdown.total, 0.1 * -std::log(eos_p), 1e-12);
}

}  // namespace
}  // namespace detective
