#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "detective/tensor.hpp"

namespace detective {

// Probability floor applied before taking logarithms in likelihood terms.
inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op,
                         const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + what + " must have rank " +
                                std::to_string(rank) + ", got " +
                                shape_string(t.shape()));
  }
}

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("operands live on different tapes");
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise map whose derivative is a function of input x and output y.
template <typename Forward, typename Derivative>
Var unary(Var a, Forward forward, Derivative derivative) {
  Tape& tape = *a.tape;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  return tape.record(
      std::move(y), tape.any_requires_grad({a}),
      [a, derivative](Tape& t, const Tensor& out, std::span<const double> g) {
        const Tensor& x = a.value();
        auto ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * derivative(x[i], out[i]);
      });
}

// Zero-padded patch matrix: one row per output pixel, columns ordered
// (ky, kx, c_in) to match a row-major k x k x c_in x c_out kernel.
inline RowMatrix im2col(const Tensor& x, std::size_t k, std::size_t stride,
                        std::size_t out_h, std::size_t out_w) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(out_h * out_w),
                                   static_cast<Eigen::Index>(k * k * c));
  const double* src = x.data().data();
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double* row = cols.data() + (oy * out_w + ox) * k * k * c;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          std::copy_n(src + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c,
                      c, row + (ky * k + kx) * c);
        }
      }
    }
  }
  return cols;
}

inline void col2im_add(const RowMatrix& cols, std::size_t k, std::size_t stride,
                       std::size_t out_h, std::size_t out_w, const Shape& in_shape,
                       std::span<double> dx) {
  const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double* row = cols.data() + (oy * out_w + ox) * k * k * c;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          double* dst = dx.data() +
                        (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          const double* s = row + (ky * k + kx) * c;
          for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += s[ci];
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution of an h x w x c_in map with k x k x c_in x c_out kernels,
/// zero "same" padding. With stride s the output is ceil(h/s) x ceil(w/s).
inline Var conv2d(Var input, Var kernels, std::optional<Var> bias = std::nullopt,
                  std::size_t stride = 1) {
  detail::require_same_tape(input, kernels);
  const Tensor& x = input.value();
  const Tensor& kt = kernels.value();
  detail::require_rank(x, 3, "conv2d", "input");
  detail::require_rank(kt, 4, "conv2d", "kernels");
  const std::size_t k = kt.dim(0);
  if (kt.dim(1) != k || k % 2 == 0) {
    throw std::invalid_argument("conv2d: kernels must be square with odd size, got " +
                                shape_string(kt.shape()));
  }
  if (kt.dim(2) != x.dim(2)) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.dim(2)) +
                                " channels but kernels expect " + std::to_string(kt.dim(2)));
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t c_out = kt.dim(3);
  if (bias) {
    detail::require_same_tape(input, *bias);
    if (bias->value().shape() != Shape{c_out}) {
      throw std::invalid_argument("conv2d: bias shape " + shape_string(bias->value().shape()) +
                                  " does not match " + std::to_string(c_out) + " outputs");
    }
  }
  const std::size_t out_h = (x.dim(0) + stride - 1) / stride;
  const std::size_t out_w = (x.dim(1) + stride - 1) / stride;
  const auto pixels = static_cast<Eigen::Index>(out_h * out_w);
  const auto patch = static_cast<Eigen::Index>(k * k * x.dim(2));
  const bool pointwise = k == 1 && stride == 1;

  detail::RowMatrix cols;
  if (!pointwise) cols = detail::im2col(x, k, stride, out_h, out_w);
  detail::ConstMatrixMap kmat(kt.data().data(), patch, static_cast<Eigen::Index>(c_out));

  Tensor y(Shape{out_h, out_w, c_out});
  detail::MatrixMap ymat(y.data().data(), pixels, static_cast<Eigen::Index>(c_out));
  if (pointwise) {
    ymat.noalias() = detail::ConstMatrixMap(x.data().data(), pixels, patch) * kmat;
  } else {
    ymat.noalias() = cols * kmat;
  }
  if (bias) {
    ymat.rowwise() += detail::ConstVectorMap(bias->value().data().data(),
                                             static_cast<Eigen::Index>(c_out))
                          .transpose();
  }

  Tape& tape = *input.tape;
  const bool rg = bias ? tape.any_requires_grad({input, kernels, *bias})
                       : tape.any_requires_grad({input, kernels});
  return tape.record(
      std::move(y), rg,
      [=, cols = std::move(cols)](Tape& t, const Tensor&, std::span<const double> g) {
        const Tensor& x = input.value();
        const Tensor& kt = kernels.value();
        detail::ConstMatrixMap gmat(g.data(), pixels, static_cast<Eigen::Index>(c_out));
        detail::ConstMatrixMap kmat(kt.data().data(), patch, static_cast<Eigen::Index>(c_out));
        if (t.requires_grad(kernels)) {
          detail::MatrixMap dk(t.grad_buffer(kernels).data(), patch,
                               static_cast<Eigen::Index>(c_out));
          if (pointwise) {
            dk.noalias() += detail::ConstMatrixMap(x.data().data(), pixels, patch).transpose() * gmat;
          } else {
            dk.noalias() += cols.transpose() * gmat;
          }
        }
        if (bias && t.requires_grad(*bias)) {
          detail::VectorMap(t.grad_buffer(*bias).data(), static_cast<Eigen::Index>(c_out)) +=
              gmat.colwise().sum().transpose();
        }
        if (t.requires_grad(input)) {
          if (pointwise) {
            detail::MatrixMap(t.grad_buffer(input).data(), pixels, patch).noalias() +=
                gmat * kmat.transpose();
          } else {
            detail::RowMatrix dcols = gmat * kmat.transpose();
            detail::col2im_add(dcols, k, stride, out_h, out_w, x.shape(), t.grad_buffer(input));
          }
        }
      });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  Tape& tape = *a.tape;
  return tape.record(std::move(z), tape.any_requires_grad({a, b}),
                     [a, b](Tape& t, const Tensor&, std::span<const double> g) {
                       for (Var v : {a, b}) {
                         if (!t.requires_grad(v)) continue;
                         auto gv = t.grad_buffer(v);
                         for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
                       }
                     });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "hadamard");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  Tape& tape = *a.tape;
  return tape.record(std::move(z), tape.any_requires_grad({a, b}),
                     [a, b](Tape& t, const Tensor&, std::span<const double> g) {
                       const Tensor& x = a.value();
                       const Tensor& y = b.value();
                       if (t.requires_grad(a)) {
                         auto ga = t.grad_buffer(a);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                       }
                       if (t.requires_grad(b)) {
                         auto gb = t.grad_buffer(b);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                       }
                     });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, detail::stable_sigmoid,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

/// Exponential linear unit with alpha = 1 (continuously differentiable).
inline Var elu(Var a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
                       [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

inline Var scale(Var a, double s) {
  return detail::unary(a, [s](double x) { return s * x; },
                       [s](double, double) { return s; });
}

/// Sum of all elements, as a scalar.
inline Var sum(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tape& tape = *a.tape;
  return tape.record(Tensor::scalar(total), tape.any_requires_grad({a}),
                     [a](Tape& t, const Tensor&, std::span<const double> g) {
                       for (double& v : t.grad_buffer(a)) v += g[0];
                     });
}

/// Sum of scalars; an empty list yields a constant zero on `tape`.
inline Var add_scalars(Tape& tape, const std::vector<Var>& terms) {
  double total = 0.0;
  bool rg = false;
  for (Var v : terms) {
    if (v.tape != &tape || v.size() != 1) {
      throw std::invalid_argument("add_scalars: terms must be scalars on the same tape");
    }
    total += v.value()[0];
    rg = rg || tape.requires_grad(v);
  }
  return tape.record(Tensor::scalar(total), rg,
                     [terms](Tape& t, const Tensor&, std::span<const double> g) {
                       for (Var v : terms) {
                         if (t.requires_grad(v)) t.grad_buffer(v)[0] += g[0];
                       }
                     });
}

/// Softmax over all elements, computed with max subtraction.
inline Var softmax(Var a) {
  const Tensor& z = a.value();
  if (z.size() == 0) throw std::invalid_argument("softmax: empty input");
  const double zmax = *std::max_element(z.data().begin(), z.data().end());
  Tensor p(z.shape());
  double denom = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    denom += p[i];
  }
  for (double& v : p.data()) v /= denom;
  Tape& tape = *a.tape;
  return tape.record(std::move(p), tape.any_requires_grad({a}),
                     [a](Tape& t, const Tensor& p, std::span<const double> g) {
                       double dot = 0.0;
                       for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * p[i];
                       auto ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += p[i] * (g[i] - dot);
                     });
}

/// Affine map W^T o + b with o of length d, W of shape d x q, b of length q.
inline Var linear(Var o, Var weights, Var bias) {
  detail::require_same_tape(o, weights);
  detail::require_same_tape(o, bias);
  const Tensor& x = o.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  detail::require_rank(w, 2, "linear", "weights");
  if (x.size() != w.dim(0) || b.size() != w.dim(1)) {
    throw std::invalid_argument("linear: input " + shape_string(x.shape()) + ", weights " +
                                shape_string(w.shape()) + ", bias " + shape_string(b.shape()) +
                                " are incompatible");
  }
  const auto d = static_cast<Eigen::Index>(w.dim(0));
  const auto q = static_cast<Eigen::Index>(w.dim(1));
  Tensor y(Shape{w.dim(1)});
  detail::VectorMap(y.data().data(), q).noalias() =
      detail::ConstMatrixMap(w.data().data(), d, q).transpose() *
          detail::ConstVectorMap(x.data().data(), d) +
      detail::ConstVectorMap(b.data().data(), q);
  Tape& tape = *o.tape;
  return tape.record(
      std::move(y), tape.any_requires_grad({o, weights, bias}),
      [=](Tape& t, const Tensor&, std::span<const double> g) {
        detail::ConstVectorMap gv(g.data(), q);
        detail::ConstVectorMap xv(o.value().data().data(), d);
        if (t.requires_grad(weights)) {
          detail::MatrixMap(t.grad_buffer(weights).data(), d, q).noalias() +=
              xv * gv.transpose();
        }
        if (t.requires_grad(bias)) detail::VectorMap(t.grad_buffer(bias).data(), q) += gv;
        if (t.requires_grad(o)) {
          detail::VectorMap(t.grad_buffer(o).data(), d).noalias() +=
              detail::ConstMatrixMap(weights.value().data().data(), d, q) * gv;
        }
      });
}

/// 2 x 2 average pooling with stride 2 (trailing odd rows/columns dropped).
inline Var avg_pool2(Var a) {
  const Tensor& x = a.value();
  detail::require_rank(x, 3, "avg_pool2", "input");
  const std::size_t h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
  if (h == 0 || w == 0) {
    throw std::invalid_argument("avg_pool2: input " + shape_string(x.shape()) +
                                " is too small to downsample");
  }
  Tensor y(Shape{h, w, c});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k)
        y.at(i, j, k) = 0.25 * (x.at(2 * i, 2 * j, k) + x.at(2 * i, 2 * j + 1, k) +
                                x.at(2 * i + 1, 2 * j, k) + x.at(2 * i + 1, 2 * j + 1, k));
  Tape& tape = *a.tape;
  return tape.record(std::move(y), tape.any_requires_grad({a}),
                     [a, h, w, c](Tape& t, const Tensor&, std::span<const double> g) {
                       const std::size_t in_w = a.value().dim(1);
                       auto ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < h; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           for (std::size_t k = 0; k < c; ++k) {
                             const double v = 0.25 * g[(i * w + j) * c + k];
                             for (std::size_t di = 0; di < 2; ++di)
                               for (std::size_t dj = 0; dj < 2; ++dj)
                                 ga[((2 * i + di) * in_w + 2 * j + dj) * c + k] += v;
                           }
                     });
}

/// Channel concatenation of two h x w maps.
inline Var concat_channels(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::require_rank(x, 3, "concat_channels", "first operand");
  detail::require_rank(y, 3, "concat_channels", "second operand");
  if (x.dim(0) != y.dim(0) || x.dim(1) != y.dim(1)) {
    throw std::invalid_argument("concat_channels: spatial mismatch " +
                                shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  const std::size_t pixels = x.dim(0) * x.dim(1), ca = x.dim(2), cb = y.dim(2);
  Tensor z(Shape{x.dim(0), x.dim(1), ca + cb});
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(x.data().data() + p * ca, ca, z.data().data() + p * (ca + cb));
    std::copy_n(y.data().data() + p * cb, cb, z.data().data() + p * (ca + cb) + ca);
  }
  Tape& tape = *a.tape;
  return tape.record(std::move(z), tape.any_requires_grad({a, b}),
                     [=](Tape& t, const Tensor&, std::span<const double> g) {
                       if (t.requires_grad(a)) {
                         auto ga = t.grad_buffer(a);
                         for (std::size_t p = 0; p < pixels; ++p)
                           for (std::size_t k = 0; k < ca; ++k) ga[p * ca + k] += g[p * (ca + cb) + k];
                       }
                       if (t.requires_grad(b)) {
                         auto gb = t.grad_buffer(b);
                         for (std::size_t p = 0; p < pixels; ++p)
                           for (std::size_t k = 0; k < cb; ++k)
                             gb[p * cb + k] += g[p * (ca + cb) + ca + k];
                       }
                     });
}

inline Var reshape(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (shape_size(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " +
                                shape_string(shape));
  }
  Tape& tape = *a.tape;
  return tape.record(x.reshaped(std::move(shape)), tape.any_requires_grad({a}),
                     [a](Tape& t, const Tensor&, std::span<const double> g) {
                       auto ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

/// o = sum over locations of weights[loc] * H[loc, :] for H of shape h x w x d
/// and h*w weights.
inline Var spatial_weighted_sum(Var hidden, Var weights) {
  detail::require_same_tape(hidden, weights);
  const Tensor& hv = hidden.value();
  detail::require_rank(hv, 3, "spatial_weighted_sum", "hidden state");
  const auto pixels = static_cast<Eigen::Index>(hv.dim(0) * hv.dim(1));
  const auto d = static_cast<Eigen::Index>(hv.dim(2));
  if (weights.size() != static_cast<std::size_t>(pixels)) {
    throw std::invalid_argument("spatial_weighted_sum: " + std::to_string(weights.size()) +
                                " weights for " + std::to_string(pixels) + " locations");
  }
  Tensor o(Shape{hv.dim(2)});
  detail::VectorMap(o.data().data(), d).noalias() =
      detail::ConstMatrixMap(hv.data().data(), pixels, d).transpose() *
      detail::ConstVectorMap(weights.value().data().data(), pixels);
  Tape& tape = *hidden.tape;
  return tape.record(
      std::move(o), tape.any_requires_grad({hidden, weights}),
      [=](Tape& t, const Tensor&, std::span<const double> g) {
        detail::ConstVectorMap gv(g.data(), d);
        if (t.requires_grad(hidden)) {
          detail::MatrixMap(t.grad_buffer(hidden).data(), pixels, d).noalias() +=
              detail::ConstVectorMap(weights.value().data().data(), pixels) * gv.transpose();
        }
        if (t.requires_grad(weights)) {
          detail::VectorMap(t.grad_buffer(weights).data(), pixels).noalias() +=
              detail::ConstMatrixMap(hidden.value().data().data(), pixels, d) * gv;
        }
      });
}

/// Negative log-likelihood of class `target` under softmax(logits), using
/// the log-sum-exp form. Probabilities below the floor are clamped, which
/// also zeroes the gradient of that term.
inline Var nll_from_logits(Var logits, std::size_t target) {
  const Tensor& z = logits.value();
  if (target >= z.size()) {
    throw std::out_of_range("nll_from_logits: class " + std::to_string(target) +
                            " out of range for " + std::to_string(z.size()) + " logits");
  }
  const double zmax = *std::max_element(z.data().begin(), z.data().end());
  double denom = 0.0;
  for (double v : z.data()) denom += std::exp(v - zmax);
  const double log_p = z[target] - zmax - std::log(denom);
  const bool clamped = log_p < std::log(kProbabilityFloor);
  const double value = clamped ? -std::log(kProbabilityFloor) : -log_p;
  Tape& tape = *logits.tape;
  return tape.record(Tensor::scalar(value), tape.any_requires_grad({logits}) && !clamped,
                     [logits, target, zmax, denom](Tape& t, const Tensor&,
                                                   std::span<const double> g) {
                       const Tensor& z = logits.value();
                       auto gz = t.grad_buffer(logits);
                       for (std::size_t i = 0; i < z.size(); ++i) {
                         const double p = std::exp(z[i] - zmax) / denom;
                         gz[i] += g[0] * (p - (i == target ? 1.0 : 0.0));
                       }
                     });
}

/// Squared Euclidean distance between `a` and a constant target.
inline Var squared_error(Var a, std::span<const double> target) {
  const Tensor& x = a.value();
  if (target.size() != x.size()) {
    throw std::invalid_argument("squared_error: target length mismatch");
  }
  double total = 0.0;
  std::vector<double> diff(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff[i] = x[i] - target[i];
    total += diff[i] * diff[i];
  }
  Tape& tape = *a.tape;
  return tape.record(Tensor::scalar(total), tape.any_requires_grad({a}),
                     [a, diff = std::move(diff)](Tape& t, const Tensor&,
                                                 std::span<const double> g) {
                       auto ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < diff.size(); ++i) ga[i] += 2.0 * g[0] * diff[i];
                     });
}

}  // namespace detective
