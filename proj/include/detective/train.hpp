#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detective/data.hpp"
#include "detective/eval.hpp"
#include "detective/loss.hpp"
#include "detective/model.hpp"

namespace detective {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& parameter)
      : std::runtime_error("non-finite gradient for parameter " + parameter),
        parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

/// Bias-corrected Adam update. Every gradient is checked before anything is
/// modified, so a non-finite gradient leaves parameters and state untouched.
inline void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params,
                      const std::vector<std::vector<double>>& grads, AdamState& state) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: gradient count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].second->size()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + params[p].first);
    }
    for (double g : grads[p]) {
      if (!std::isfinite(g)) throw NonFiniteGradient(params[p].first);
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& [name, t] : params) {
      state.first_moment.emplace_back(t->size(), 0.0);
      state.second_moment.emplace_back(t->size(), 0.0);
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p].second;
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      theta[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1;  // images per optimizer step (gradient accumulation)
  LossConfig loss;             // includes extra_predictions k
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// Per-image gradients for every model parameter, in named_parameters order.
using Gradients = std::vector<std::vector<double>>;

inline Gradients zero_gradients(Detective& model) {
  Gradients g;
  for (const auto& [name, t] : model.named_parameters()) g.emplace_back(t->size(), 0.0);
  return g;
}

/// Forward, match, loss and backward for one scene; the scene's gradients are
/// added to `accumulator`.
inline LossBreakdown train_step(Detective& model, const AnnotatedImage& scene,
                                const LossConfig& cfg, Gradients& accumulator) {
  Tape tape;
  LossResult loss = scene_loss(tape, model, scene.image, scene.objects, cfg);
  tape.backward(loss.total);
  const auto params = model.named_parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    tape.accumulate_grad_for(*params[p].second, accumulator[p]);
  }
  return loss.breakdown;
}

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0.0;
  double mean_cls = 0.0;
  double mean_loc = 0.0;
  std::size_t foreground = 0;  // matched pairs per band over the epoch
  std::size_t background = 0;
  std::size_t ignored = 0;
};

class Trainer {
 public:
  Trainer(Detective& model, TrainConfig config)
      : model_(model), config_(std::move(config)), params_(model.named_parameters()) {
    adam_.config = config_.adam;
  }

  const AdamState& optimizer() const { return adam_; }
  const std::vector<double>& loss_trajectory() const { return losses_; }

  /// One pass over `scenes` in a seeded shuffled order; an optimizer step
  /// after every batch_size images (and after a trailing partial batch).
  EpochSummary run_epoch(const std::vector<AnnotatedImage>& scenes, std::size_t epoch) {
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(config_.seed, 1000003 + epoch));
    std::shuffle(order.begin(), order.end(), rng);

    EpochSummary summary{epoch};
    const std::size_t batch = std::max<std::size_t>(1, config_.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<LossBreakdown> losses(count);
      Gradients total = zero_gradients(model_);
      if (config_.jobs <= 1) {
        for (std::size_t b = 0; b < count; ++b) {
          Gradients g = zero_gradients(model_);
          losses[b] = train_step(model_, scenes[order[start + b]], config_.loss, g);
          add_into(total, g);
        }
      } else {
        // Per-image gradients, summed afterwards in batch order so the result
        // does not depend on the number of workers.
        std::vector<Gradients> per_image(count);
        parallel_for(count, config_.jobs, [&](std::size_t b) {
          per_image[b] = zero_gradients(model_);
          losses[b] = train_step(model_, scenes[order[start + b]], config_.loss, per_image[b]);
        });
        for (const Gradients& g : per_image) add_into(total, g);
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& g : total)
        for (double& v : g) v *= inv;
      adam_step(params_, total, adam_);
      for (const LossBreakdown& l : losses) {
        losses_.push_back(l.total);
        summary.mean_loss += l.total;
        summary.mean_cls += l.cls;
        summary.mean_loc += l.loc;
        summary.foreground += l.foreground;
        summary.background += l.background;
        summary.ignored += l.ignored;
      }
      summary.steps += 1;
    }
    if (!scenes.empty()) {
      const double n = static_cast<double>(scenes.size());
      summary.mean_loss /= n;
      summary.mean_cls /= n;
      summary.mean_loc /= n;
    }
    return summary;
  }

 private:
  static void add_into(Gradients& total, const Gradients& g) {
    for (std::size_t p = 0; p < total.size(); ++p)
      for (std::size_t i = 0; i < total[p].size(); ++i) total[p][i] += g[p][i];
  }

  Detective& model_;
  TrainConfig config_;
  std::vector<std::pair<std::string, Tensor*>> params_;
  AdamState adam_;
  std::vector<double> losses_;
};

}  // namespace detective
