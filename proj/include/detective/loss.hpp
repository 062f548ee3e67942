#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "detective/geometry.hpp"
#include "detective/matching.hpp"
#include "detective/model.hpp"
#include "detective/ops.hpp"

namespace detective {

inline constexpr double kForegroundIoU = 0.5;
inline constexpr double kBackgroundIoU = 0.3;

enum class Band { foreground, background, ignored };

/// IoU >= 0.5 is foreground, IoU < 0.3 background, the rest is ignored by
/// the classification loss.
inline Band band_for_iou(double iou_value) {
  if (iou_value >= kForegroundIoU) return Band::foreground;
  if (iou_value < kBackgroundIoU) return Band::background;
  return Band::ignored;
}

struct MatchedPair {
  std::size_t target = 0;
  std::size_t prediction = 0;
  double iou = 0.0;
  Band band = Band::ignored;
};

struct MatchedSet {
  std::vector<MatchedPair> pairs;
  std::size_t foreground = 0;
  std::size_t background = 0;
  std::size_t ignored = 0;
};

/// Bands every matched pair by the IoU of the decoded target and predicted
/// boxes. IoU is computed on detached values.
inline MatchedSet partition_matches(const Assignment& assignment,
                                    std::span<const TargetLabel> targets,
                                    std::span<const Prediction> predictions) {
  MatchedSet ms;
  for (std::size_t t = 0; t < assignment.target_to_prediction.size(); ++t) {
    const std::size_t p = assignment.target_to_prediction[t];
    const double v = iou(decode_offsets(targets[t].loc), decode_offsets(predictions[p].p_loc));
    const Band band = band_for_iou(v);
    ms.pairs.push_back({t, p, v, band});
    switch (band) {
      case Band::foreground: ++ms.foreground; break;
      case Band::background: ++ms.background; break;
      case Band::ignored: ++ms.ignored; break;
    }
  }
  return ms;
}

struct LossWeights {
  double cls = 0.1;
  double loc = 16.0;
};

struct LossBreakdown {
  double cls = 0.0;
  double loc = 0.0;
  double total = 0.0;
  std::size_t foreground = 0;
  std::size_t background = 0;
  std::size_t ignored = 0;
};

struct LossResult {
  Var total;
  LossBreakdown breakdown;
};

/// Foreground pairs score their target class, background pairs the
/// background class, and the final prediction the EoS class. Ignored pairs
/// contribute nothing. Without a background class, background-band pairs are
/// skipped as well.
inline Var classification_loss(Tape& tape, const MatchedSet& ms,
                               std::span<const TargetLabel> targets,
                               std::span<const PredictionNode> predictions,
                               const PredictionNode& last, const ModelConfig& config) {
  std::vector<Var> terms;
  for (const MatchedPair& pair : ms.pairs) {
    const Var logits = predictions[pair.prediction].logits;
    if (pair.band == Band::foreground) {
      terms.push_back(nll_from_logits(logits, targets[pair.target].cls));
    } else if (pair.band == Band::background && config.background_index()) {
      terms.push_back(nll_from_logits(logits, *config.background_index()));
    }
  }
  terms.push_back(nll_from_logits(last.logits, config.eos_index()));
  return add_scalars(tape, terms);
}

/// Squared offset error summed over every matched pair, whatever its band.
inline Var localization_loss(Tape& tape, const MatchedSet& ms,
                             std::span<const TargetLabel> targets,
                             std::span<const PredictionNode> predictions) {
  std::vector<Var> terms;
  for (const MatchedPair& pair : ms.pairs) {
    const auto target = targets[pair.target].loc.as_array();
    terms.push_back(squared_error(predictions[pair.prediction].offsets, target));
  }
  return add_scalars(tape, terms);
}

inline LossResult total_loss(Tape& tape, Var cls, Var loc, const LossWeights& lambda,
                             const MatchedSet& ms) {
  Var total = add(scale(cls, lambda.cls), scale(loc, lambda.loc));
  LossBreakdown b{cls.value().item(), loc.value().item(), total.value().item(),
                  ms.foreground, ms.background, ms.ignored};
  return LossResult{total, b};
}

struct LossConfig {
  MatchWeights match;
  LossWeights weights;
  std::size_t extra_predictions = 0;  // k: m = n + 1 + k decoder steps
};

/// Full per-image objective: decode m = n + 1 + k steps, match the n targets
/// among the first m - 1 predictions, and apply the banded loss with the last
/// prediction supervised as EoS. Unmatched predictions do not contribute.
inline LossResult scene_loss(Tape& tape, const Detective& model, const Tensor& image,
                             std::span<const TargetLabel> targets, const LossConfig& cfg) {
  const std::size_t n = targets.size();
  const std::size_t m = n + 1 + cfg.extra_predictions;
  const std::vector<PredictionNode> nodes = model.decode_sequence(tape, image, m);
  std::vector<Prediction> values;
  values.reserve(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) values.push_back(detach(nodes[i]));

  MatchedSet ms;
  if (n > 0) {
    const CostMatrix costs = build_cost_matrix(targets, values, cfg.match, m - 1);
    ms = partition_matches(assign_rectangular(costs), targets, values);
  }
  const std::span<const PredictionNode> matchable(nodes.data(), m - 1);
  Var cls = classification_loss(tape, ms, targets, matchable, nodes.back(), model.config());
  Var loc = localization_loss(tape, ms, targets, matchable);
  return total_loss(tape, cls, loc, cfg.weights, ms);
}

}  // namespace detective
