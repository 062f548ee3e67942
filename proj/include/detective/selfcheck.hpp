#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "detective/eval.hpp"
#include "detective/gradcheck.hpp"
#include "detective/loss.hpp"
#include "detective/matching.hpp"

// Built-in verification routines shared by `detective selfcheck` and the
// acceptance suite.
namespace detective::selfcheck {

namespace detail {

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Weighted sum with generic positive weights, so no output coordinate cancels.
inline Var project(Var y, std::mt19937_64& rng) {
  return sum(hadamard(y, y.tape->constant(uniform_tensor(y.shape(), rng, 0.5, 1.5))));
}

}  // namespace detail

struct OperatorCheck {
  std::string name;
  double max_error = 0.0;
};

/// Central-difference checks of the model's building blocks on small random inputs.
inline std::vector<OperatorCheck> operator_gradients(std::uint64_t seed = 1) {
  using detail::project;
  using detail::uniform_tensor;
  std::mt19937_64 rng(seed);
  const Tensor kernels = uniform_tensor({3, 3, 2, 3}, rng);
  const Tensor bias = uniform_tensor({3}, rng);
  const Tensor features = uniform_tensor({4, 4, 3}, rng);
  const Tensor conv_input = uniform_tensor({4, 4, 2}, rng);
  const Tensor weights = uniform_tensor({3, 5}, rng);
  const Tensor offsets = uniform_tensor({5}, rng);
  std::vector<OperatorCheck> out;
  auto check = [&](std::string name, const Tensor& x, std::function<Var(Tape&, Var)> fn) {
    out.push_back({std::move(name), gradient_check(fn, x)});
  };
  check("conv2d, elu, avg_pool2", uniform_tensor({4, 4, 2}, rng), [&](Tape& t, Var x) {
    std::mt19937_64 r(seed + 1);
    return project(avg_pool2(elu(conv2d(x, t.constant(kernels), t.constant(bias)))), r);
  });
  check("conv2d kernel", kernels, [&](Tape& t, Var k) {
    std::mt19937_64 r(seed + 2);
    return project(conv2d(t.constant(conv_input), k), r);
  });
  check("sigmoid, tanh, hadamard", uniform_tensor({6}, rng), [&](Tape&, Var x) {
    std::mt19937_64 r(seed + 3);
    return project(hadamard(sigmoid(x), tanh(scale(x, 1.5))), r);
  });
  check("softmax attention pooling", uniform_tensor({4, 4, 1}, rng), [&](Tape& t, Var s) {
    std::mt19937_64 r(seed + 4);
    return project(spatial_weighted_sum(t.constant(features), softmax(reshape(s, {16}))), r);
  });
  check("linear, nll_from_logits", uniform_tensor({3}, rng), [&](Tape& t, Var o) {
    return nll_from_logits(linear(o, t.constant(weights), t.constant(offsets)), 2);
  });
  check("sigmoid, squared_error", uniform_tensor({4}, rng), [&](Tape&, Var x) {
    const std::vector<double> target{0.2, 0.4, 0.6, 0.8};
    return squared_error(sigmoid(x), target);
  });
  return out;
}

struct GradientCheckResult {
  std::size_t probes = 0;
  double max_error = 0.0;
  double seconds = 0.0;
};

/// Full model and loss on a 16x16 image with two targets: the default
/// architecture apart from the input size.
inline GradientCheckResult end_to_end_gradients(std::size_t probes = 200, std::uint64_t seed = 1,
                                                double eps = 2e-3) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig c;
  c.encoder.image_height = c.encoder.image_width = 16;
  Detective model(c, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  Tensor image(Shape{16, 16, 3});
  for (double& v : image.data()) v = pixel(rng);
  const std::vector<TargetLabel> targets{{0, {0.1, 0.2, 0.4, 0.3}}, {2, {0.5, 0.4, 0.3, 0.5}}};
  const LossConfig cfg;
  auto loss = [&](Tape& tape) { return scene_loss(tape, model, image, targets, cfg).total; };
  const std::vector<Tensor*> params = model.parameters();
  const ParameterCheckReport r = check_parameter_gradients(loss, params, probes, seed + 2, eps);
  return {r.probes.size(), r.max_error,
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

struct OracleSweepResult {
  std::size_t cases = 0;
  std::size_t mismatches = 0;
  double seconds = 0.0;
};

/// Hungarian vs exhaustive search on uniform random costs for n = 2..7.
inline OracleSweepResult hungarian_sweep(std::size_t per_size = 1000, std::uint64_t seed = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  OracleSweepResult r;
  for (std::size_t n = 2; n <= 7; ++n) {
    for (std::size_t trial = 0; trial < per_size; ++trial) {
      CostMatrix c(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) c(i, j) = u(rng);
      ++r.cases;
      if (hungarian(c).total_cost != brute_force_assign(c).total_cost) ++r.mismatches;
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct MapFixture {
  std::string name;
  std::vector<ImageDetections> images;
  std::size_t num_classes = 1;
  double all_point = 0.0;
  double eleven_point = 0.0;
};

inline TargetLabel gt(std::size_t cls, double x, double y, double w, double h) {
  return TargetLabel{cls, BoxOffsets{x, y, w, h}};
}

inline Detection det(int cls, double score, double x, double y, double w, double h) {
  return Detection{cls, score, decode_offsets({x, y, w, h})};
}

/// Small detection sets with precision-recall curves traced by hand.
inline std::vector<MapFixture> map_fixtures() {
  std::vector<MapFixture> f;

  // One ground truth found exactly.
  f.push_back({"single hit",
               {{{det(0, 0.9, 0.1, 0.1, 0.3, 0.3)}, {gt(0, 0.1, 0.1, 0.3, 0.3)}}},
               1, 1.0, 1.0});

  // Ranks: TP (P 1, R 1), duplicate FP (P 1/2, R 1). Recall saturates at the first.
  f.push_back({"duplicate below hit",
               {{{det(0, 0.9, 0.1, 0.1, 0.3, 0.3), det(0, 0.8, 0.1, 0.1, 0.3, 0.3)},
                 {gt(0, 0.1, 0.1, 0.3, 0.3)}}},
               1, 1.0, 1.0});

  // Nothing detected.
  f.push_back({"no detections", {{{}, {gt(0, 0.1, 0.1, 0.3, 0.3)}}}, 1, 0.0, 0.0});

  // Two images, two ground truths. Ranks: TP (1, 1/2), FP wrong place
  // (1/2, 1/2), TP (2/3, 1). Envelope: 1 up to recall 1/2, then 2/3.
  // All-point 1/2 + 1/3 = 5/6; 11-point (6 * 1 + 5 * 2/3) / 11 = 28/33.
  f.push_back({"miss between hits",
               {{{det(0, 0.9, 0.1, 0.1, 0.3, 0.3), det(0, 0.8, 0.6, 0.6, 0.3, 0.3)},
                 {gt(0, 0.1, 0.1, 0.3, 0.3)}},
                {{det(0, 0.7, 0.5, 0.2, 0.4, 0.4)}, {gt(0, 0.5, 0.2, 0.4, 0.4)}}},
               1, 5.0 / 6.0, 28.0 / 33.0});

  // Two classes. Class 0: FP ranked above TP -> 1/2. Class 1: the only
  // detection has the wrong class for its box, so class 1 scores 0 and the
  // class-0 list gains a low-ranked FP that leaves its AP at 1/2.
  // Class 2 has no ground truth and is excluded. mAP = (1/2 + 0) / 2.
  f.push_back({"two classes with a confusion",
               {{{det(0, 0.95, 0.5, 0.5, 0.2, 0.2), det(0, 0.6, 0.1, 0.1, 0.3, 0.3),
                  det(0, 0.3, 0.6, 0.1, 0.3, 0.3)},
                 {gt(0, 0.1, 0.1, 0.3, 0.3), gt(1, 0.6, 0.1, 0.3, 0.3)}}},
               3, 0.25, 0.25});
  return f;
}

struct FixtureOutcome {
  std::string name;
  double all_point = 0.0;
  double eleven_point = 0.0;
  bool exact = false;
};

inline std::vector<FixtureOutcome> run_map_fixtures() {
  std::vector<FixtureOutcome> out;
  for (const MapFixture& f : map_fixtures()) {
    const double a = compute_map(f.images, f.num_classes, 0.5, ApMode::all_point).map;
    const double e = compute_map(f.images, f.num_classes, 0.5, ApMode::eleven_point).map;
    out.push_back({f.name, a, e,
                   std::abs(a - f.all_point) <= 1e-12 && std::abs(e - f.eleven_point) <= 1e-12});
  }
  return out;
}

}  // namespace detective::selfcheck
