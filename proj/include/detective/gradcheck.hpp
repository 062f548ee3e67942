#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "detective/tensor.hpp"

namespace detective {

/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares the tape gradient of fn at x with central differences over every
/// coordinate of x and returns the largest relative error.
inline double gradient_check(const std::function<Var(Tape&, Var)>& fn, const Tensor& x,
                             double eps = 1e-5) {
  Tensor analytic;
  {
    Tape tape;
    Var input = tape.variable(x);
    Var loss = fn(tape, input);
    tape.backward(loss);
    analytic = tape.grad(input);
  }
  auto evaluate = [&](const Tensor& point) {
    Tape tape(false);
    return fn(tape, tape.constant(point)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = evaluate(probe);
    probe[i] = x[i] - eps;
    const double down = evaluate(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

struct ParameterProbe {
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct ParameterCheckReport {
  std::vector<ParameterProbe> probes;
  double max_error = 0.0;
};

/// Finite-difference check of d(loss)/d(parameter) for `samples` randomly
/// chosen coordinates. A tensor is drawn uniformly first, then a coordinate
/// inside it, so small tensors (biases, peepholes) are represented.
/// `loss_fn` must register the parameters with Tape::parameter.
inline ParameterCheckReport check_parameter_gradients(
    const std::function<Var(Tape&)>& loss_fn, std::span<Tensor* const> parameters,
    std::size_t samples, std::uint64_t seed, double eps = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
    for (Tensor* p : parameters) analytic.push_back(tape.grad_for(*p));
  }
  auto evaluate = [&] {
    Tape tape(false);
    return loss_fn(tape).value().item();
  };

  std::mt19937_64 rng(seed);
  ParameterCheckReport report;
  for (std::size_t s = 0; s < samples; ++s) {
    ParameterProbe probe;
    probe.tensor = std::uniform_int_distribution<std::size_t>(0, parameters.size() - 1)(rng);
    Tensor& p = *parameters[probe.tensor];
    probe.index = std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(rng);
    const double original = p[probe.index];
    p[probe.index] = original + eps;
    const double up = evaluate();
    p[probe.index] = original - eps;
    const double down = evaluate();
    p[probe.index] = original;
    probe.analytic = analytic[probe.tensor][probe.index];
    probe.numeric = (up - down) / (2.0 * eps);
    probe.error = relative_error(probe.analytic, probe.numeric);
    report.max_error = std::max(report.max_error, probe.error);
    report.probes.push_back(probe);
  }
  return report;
}

}  // namespace detective
