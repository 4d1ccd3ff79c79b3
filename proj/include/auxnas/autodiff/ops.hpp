#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "auxnas/autodiff/tape.hpp"

namespace auxnas::ops {

namespace detail {

inline void require_matrix(const Tensor& t, std::string_view op, std::string_view what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": " + std::string(what) + " must be a matrix, got " +
                         shape_str(t.shape()));
  }
}

inline void require_scalar(const Tensor& t, std::string_view op) {
  if (t.numel() != 1) {
    throw DimensionError(std::string(op) + ": expected a scalar, got " + shape_str(t.shape()));
  }
}

}  // namespace detail

/// y = x W (+ b). `kind` labels the node for cost accounting, e.g.
/// "projection" for fusion projections.
inline Var linear(Var x, Var weight, std::optional<Var> bias = std::nullopt,
                  std::string kind = "linear") {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  detail::require_matrix(xv, kind, "input");
  detail::require_matrix(wv, kind, "weight");
  if (xv.cols() != wv.rows()) {
    throw DimensionError(kind + ": input " + shape_str(xv.shape()) + " does not conform to weight " +
                         shape_str(wv.shape()));
  }
  const std::size_t b = xv.rows(), in = xv.cols(), out = wv.cols();
  if (bias && bias->value().shape() != Shape{out}) {
    throw DimensionError(kind + ": bias " + shape_str(bias->value().shape()) +
                         " does not match output width " + std::to_string(out));
  }
  Tensor y({b, out});
  {
    const double* X = xv.data().data();
    const double* W = wv.data().data();
    double* Y = y.data().data();
    for (std::size_t r = 0; r < b; ++r) {
      double* yr = Y + r * out;
      for (std::size_t k = 0; k < in; ++k) {
        const double xk = X[r * in + k];
        const double* wk = W + k * out;
        for (std::size_t c = 0; c < out; ++c) yr[c] += xk * wk[c];
      }
      if (bias) {
        const double* B = bias->value().data().data();
        for (std::size_t c = 0; c < out; ++c) yr[c] += B[c];
      }
    }
  }
  const Tensor* xp = &xv;
  const Tensor* wp = &wv;
  const bool has_bias = bias.has_value();
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  OpCost cost{b * in * out + (has_bias ? b * out : 0),
              2 * b * in * out + (has_bias ? b * out : 0)};
  return x.tape().record(
      std::move(kind), inputs, std::move(y),
      [xp, wp, b, in, out, has_bias](const Tensor& g, std::vector<Tensor*>& grads) {
        const double* G = g.data().data();
        if (Tensor* gx = grads[0]) {
          const double* W = wp->data().data();
          double* GX = gx->data().data();
          for (std::size_t r = 0; r < b; ++r)
            for (std::size_t k = 0; k < in; ++k) {
              const double* gr = G + r * out;
              const double* wk = W + k * out;
              double acc = 0.0;
              for (std::size_t c = 0; c < out; ++c) acc += gr[c] * wk[c];
              GX[r * in + k] += acc;
            }
        }
        if (Tensor* gw = grads[1]) {
          const double* X = xp->data().data();
          double* GW = gw->data().data();
          for (std::size_t r = 0; r < b; ++r)
            for (std::size_t k = 0; k < in; ++k) {
              const double xk = X[r * in + k];
              const double* gr = G + r * out;
              double* gwk = GW + k * out;
              for (std::size_t c = 0; c < out; ++c) gwk[c] += xk * gr[c];
            }
        }
        if (has_bias) {
          if (Tensor* gb = grads[2]) {
            for (std::size_t r = 0; r < b; ++r)
              for (std::size_t c = 0; c < out; ++c) (*gb)[c] += g(r, c);
          }
        }
      },
      cost);
}

/// Channel-wise concatenation in argument order.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat: empty input list");
  const std::size_t b = parts[0].value().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p.value(), "concat", "part");
    if (p.value().rows() != b) {
      throw DimensionError("concat: batch extent " + std::to_string(p.value().rows()) +
                           " does not match " + std::to_string(b));
    }
    offsets.push_back(total);
    total += p.value().cols();
  }
  Tensor y({b, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) y(r, offsets[k] + c) = pv(r, c);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      "concat", inputs, std::move(y),
      [offsets, b](const Tensor& g, std::vector<Tensor*>& grads) {
        for (std::size_t k = 0; k < grads.size(); ++k) {
          Tensor* gk = grads[k];
          if (!gk) continue;
          for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < gk->cols(); ++c) (*gk)(r, c) += g(r, offsets[k] + c);
        }
      },
      {});
}

inline Var concat(std::initializer_list<Var> parts) {
  std::vector<Var> v(parts);
  return concat(std::span<const Var>(v));
}

/// alpha * x for a scalar architecture weight alpha.
inline Var scale(Var x, Var alpha) {
  const Tensor& xv = x.value();
  detail::require_scalar(alpha.value(), "scale");
  const double a = alpha.value()[0];
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = a * xv[i];
  const Tensor* xp = &xv;
  const std::uint64_t n = xv.numel();
  return x.tape().record(
      "scale", {x, alpha}, std::move(y),
      [xp, a](const Tensor& g, std::vector<Tensor*>& grads) {
        if (Tensor* gx = grads[0]) {
          for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += a * g[i];
        }
        if (Tensor* ga = grads[1]) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * (*xp)[i];
          (*ga)[0] += acc;
        }
      },
      {n, 2 * n});
}

/// c * x for a fixed real c.
inline Var mul_scalar(Var x, double c) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = c * xv[i];
  const std::uint64_t n = xv.numel();
  return x.tape().record(
      "mul_scalar", {x}, std::move(y),
      [c](const Tensor& g, std::vector<Tensor*>& grads) {
        if (Tensor* gx = grads[0]) {
          for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += c * g[i];
        }
      },
      {n, n});
}

/// Elementwise sum of two tensors of identical shape.
inline Var add(Var a, Var b, std::string kind = "add") {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError(kind + ": " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor y(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) y[i] = av[i] + bv[i];
  const std::uint64_t n = av.numel();
  return a.tape().record(
      std::move(kind), {a, b}, std::move(y),
      [](const Tensor& g, std::vector<Tensor*>& grads) {
        for (Tensor* gi : grads) {
          if (gi) *gi += g;
        }
      },
      {n, 2 * n});
}

/// Sum of all elements, as a scalar.
inline Var sum(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  const std::uint64_t n = xv.numel();
  return x.tape().record(
      "sum", {x}, Tensor::scalar(acc),
      [](const Tensor& g, std::vector<Tensor*>& grads) {
        if (Tensor* gx = grads[0]) {
          for (double& v : gx->data()) v += g[0];
        }
      },
      {n, n});
}

/// <x, w> for a fixed weight tensor w of the same shape.
inline Var sum_product(Var x, const Tensor& weights) {
  const Tensor& xv = x.value();
  if (xv.shape() != weights.shape()) {
    throw DimensionError("sum_product: " + shape_str(xv.shape()) + " vs " +
                         shape_str(weights.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i] * weights[i];
  const std::uint64_t n = xv.numel();
  return x.tape().record(
      "sum_product", {x}, Tensor::scalar(acc),
      [weights](const Tensor& g, std::vector<Tensor*>& grads) {
        if (Tensor* gx = grads[0]) {
          for (std::size_t i = 0; i < weights.numel(); ++i) (*gx)[i] += g[0] * weights[i];
        }
      },
      {n, n});
}

inline Var relu(Var x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  double kink = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    kink = std::min(kink, std::abs(xv[i]));
  }
  x.tape().note_kink(kink);
  const Tensor* xp = &xv;
  const std::uint64_t n = xv.numel();
  return x.tape().record(
      "relu", {x}, std::move(y),
      [xp](const Tensor& g, std::vector<Tensor*>& grads) {
        if (Tensor* gx = grads[0]) {
          for (std::size_t i = 0; i < g.numel(); ++i) {
            if ((*xp)[i] > 0.0) (*gx)[i] += g[i];
          }
        }
      },
      {n, n});
}

enum class NormMode {
  train,         // batch statistics, running statistics updated
  train_frozen,  // batch statistics, running statistics untouched
  eval,          // running statistics
};

struct RunningStats {
  Tensor mean;
  Tensor var;

  static RunningStats identity(std::size_t channels) {
    return {Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
  }
};

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kNormMomentum = 0.1;

/// Batch normalization over the batch dimension of a [batch x c] input.
/// gamma and beta are either per-channel ([c]) or shared across channels ([1]).
inline Var batchnorm(Var x, Var gamma, Var beta, NormMode mode, RunningStats& stats) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "batchnorm", "input");
  const std::size_t b = xv.rows(), c = xv.cols();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const bool shared = gv.numel() == 1;
  if (!(gv.shape() == Shape{c} || gv.shape() == Shape{1}) || gv.shape() != bv.shape()) {
    throw DimensionError("batchnorm: affine " + shape_str(gv.shape()) + "/" +
                         shape_str(bv.shape()) + " for " + std::to_string(c) + " channels");
  }
  if (stats.mean.shape() != Shape{c} || stats.var.shape() != Shape{c}) {
    throw DimensionError("batchnorm: running statistics do not match " + std::to_string(c) +
                         " channels");
  }
  const bool batch_stats = mode != NormMode::eval;
  if (batch_stats && b < 2) {
    throw ContractViolation("batchnorm: batch of " + std::to_string(b) +
                            " in train mode (need at least 2)");
  }

  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (batch_stats) {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv(r, j);
    for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xv(r, j) - mean[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= static_cast<double>(b);
      inv_std[j] = 1.0 / std::sqrt(var[j] + kNormEpsilon);
    }
    if (mode == NormMode::train) {
      const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
      for (std::size_t j = 0; j < c; ++j) {
        stats.mean[j] = (1.0 - kNormMomentum) * stats.mean[j] + kNormMomentum * mean[j];
        stats.var[j] = (1.0 - kNormMomentum) * stats.var[j] + kNormMomentum * var[j] * unbias;
      }
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = stats.mean[j];
      inv_std[j] = 1.0 / std::sqrt(stats.var[j] + kNormEpsilon);
    }
  }

  Tensor xhat({b, c});
  Tensor y({b, c});
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double g = shared ? gv[0] : gv[j];
      const double be = shared ? bv[0] : bv[j];
      xhat(r, j) = (xv(r, j) - mean[j]) * inv_std[j];
      y(r, j) = g * xhat(r, j) + be;
    }

  const std::uint64_t n = b * c;
  // sub, scale, gamma, beta per element; batch statistics add a mean pass
  // and a two-op variance pass.
  const OpCost cost{4 * n + (batch_stats ? 3 * n : 0), batch_stats ? 8 * n : 3 * n};
  return x.tape().record(
      "batchnorm", {x, gamma, beta}, std::move(y),
      [xhat = std::move(xhat), inv_std, gv_copy = gv, shared, batch_stats, b, c](
          const Tensor& g, std::vector<Tensor*>& grads) {
        auto gamma_at = [&](std::size_t j) { return shared ? gv_copy[0] : gv_copy[j]; };
        if (Tensor* gg = grads[1]) {
          for (std::size_t r = 0; r < b; ++r)
            for (std::size_t j = 0; j < c; ++j) (*gg)[shared ? 0 : j] += g(r, j) * xhat(r, j);
        }
        if (Tensor* gb = grads[2]) {
          for (std::size_t r = 0; r < b; ++r)
            for (std::size_t j = 0; j < c; ++j) (*gb)[shared ? 0 : j] += g(r, j);
        }
        Tensor* gx = grads[0];
        if (!gx) return;
        if (!batch_stats) {
          for (std::size_t r = 0; r < b; ++r)
            for (std::size_t j = 0; j < c; ++j) (*gx)(r, j) += g(r, j) * gamma_at(j) * inv_std[j];
          return;
        }
        const double bd = static_cast<double>(b);
        for (std::size_t j = 0; j < c; ++j) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t r = 0; r < b; ++r) {
            const double d = g(r, j) * gamma_at(j);
            sum_d += d;
            sum_dx += d * xhat(r, j);
          }
          for (std::size_t r = 0; r < b; ++r) {
            const double d = g(r, j) * gamma_at(j);
            (*gx)(r, j) += inv_std[j] / bd * (bd * d - sum_d - xhat(r, j) * sum_dx);
          }
        }
      },
      cost);
}

/// Mean cross-entropy of softmax(logits) against integer class labels.
inline Var softmax_xent(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  detail::require_matrix(lv, "softmax_xent", "logits");
  const std::size_t b = lv.rows(), classes = lv.cols();
  if (labels.size() != b) {
    throw DimensionError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(b));
  }
  Tensor probs({b, classes});
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractViolation("softmax_xent: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    double mx = lv(r, 0);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, lv(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs(r, c) = std::exp(lv(r, c) - mx);
      z += probs(r, c);
    }
    for (std::size_t c = 0; c < classes; ++c) probs(r, c) /= z;
    loss += std::log(z) + mx - lv(r, static_cast<std::size_t>(y));
  }
  loss /= static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  const std::uint64_t n = b * classes;
  return logits.tape().record(
      "softmax_xent", {logits}, Tensor::scalar(loss),
      [probs = std::move(probs), lab = std::move(lab), b, classes](const Tensor& g,
                                                                   std::vector<Tensor*>& grads) {
        Tensor* gx = grads[0];
        if (!gx) return;
        const double s = g[0] / static_cast<double>(b);
        for (std::size_t r = 0; r < b; ++r)
          for (std::size_t c = 0; c < classes; ++c) {
            const double onehot = static_cast<std::size_t>(lab[r]) == c ? 1.0 : 0.0;
            (*gx)(r, c) += s * (probs(r, c) - onehot);
          }
      },
      {4 * n, 2 * n});
}

/// Mean squared error over every element.
inline Var mse(Var pred, Var target) {
  const Tensor& pv = pred.value();
  const Tensor& tv = target.value();
  if (pv.shape() != tv.shape()) {
    throw DimensionError("mse: prediction " + shape_str(pv.shape()) + " vs target " +
                         shape_str(tv.shape()));
  }
  const std::size_t n = pv.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pv[i] - tv[i];
    acc += d * d;
  }
  const Tensor* pp = &pv;
  const Tensor* tp = &tv;
  return pred.tape().record(
      "mse", {pred, target}, Tensor::scalar(acc / static_cast<double>(n)),
      [pp, tp, n](const Tensor& g, std::vector<Tensor*>& grads) {
        const double s = 2.0 * g[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double d = (*pp)[i] - (*tp)[i];
          if (grads[0]) (*grads[0])[i] += s * d;
          if (grads[1]) (*grads[1])[i] -= s * d;
        }
      },
      {2 * n, 2 * n});
}

/// Mean over rows of 1 - cos(pred_r, target_r).
inline Var cosine_loss(Var pred, Var target) {
  const Tensor& pv = pred.value();
  const Tensor& tv = target.value();
  if (pv.shape() != tv.shape() || pv.rank() != 2) {
    throw DimensionError("cosine_loss: prediction " + shape_str(pv.shape()) + " vs target " +
                         shape_str(tv.shape()));
  }
  const std::size_t b = pv.rows(), c = pv.cols();
  std::vector<double> dot(b), np(b), nt(b);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    double d = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      d += pv(r, j) * tv(r, j);
      pp += pv(r, j) * pv(r, j);
      tt += tv(r, j) * tv(r, j);
    }
    if (pp == 0.0 || tt == 0.0) {
      throw ContractViolation("cosine_loss: zero vector in row " + std::to_string(r));
    }
    dot[r] = d;
    np[r] = std::sqrt(pp);
    nt[r] = std::sqrt(tt);
    loss += 1.0 - d / (np[r] * nt[r]);
  }
  loss /= static_cast<double>(b);
  const Tensor* pp = &pv;
  const Tensor* tp = &tv;
  return pred.tape().record(
      "cosine_loss", {pred, target}, Tensor::scalar(loss),
      [pp, tp, dot, np, nt, b, c](const Tensor& g, std::vector<Tensor*>& grads) {
        const double s = -g[0] / static_cast<double>(b);
        for (std::size_t r = 0; r < b; ++r) {
          const double cosv = dot[r] / (np[r] * nt[r]);
          for (std::size_t j = 0; j < c; ++j) {
            const double p = (*pp)(r, j), t = (*tp)(r, j);
            if (grads[0]) (*grads[0])(r, j) += s * (t / (np[r] * nt[r]) - cosv * p / (np[r] * np[r]));
            if (grads[1]) (*grads[1])(r, j) += s * (p / (np[r] * nt[r]) - cosv * t / (nt[r] * nt[r]));
          }
        }
      },
      {6 * b * c, 6 * b * c});
}

/// Sum of |v| over every element of the given tensors. The subgradient at
/// zero is zero.
inline Var l1_norm(std::span<const Var> params, Tape& tape) {
  if (params.empty()) return tape.constant(Tensor::scalar(0.0));
  double acc = 0.0;
  std::uint64_t n = 0;
  double kink = std::numeric_limits<double>::infinity();
  for (const auto& p : params) {
    for (double v : p.value().data()) {
      acc += std::abs(v);
      kink = std::min(kink, std::abs(v));
    }
    n += p.value().numel();
  }
  tape.note_kink(kink);
  std::vector<const Tensor*> vals;
  for (const auto& p : params) vals.push_back(&p.value());
  std::vector<Var> inputs(params.begin(), params.end());
  return tape.record(
      "l1_norm", inputs, Tensor::scalar(acc),
      [vals](const Tensor& g, std::vector<Tensor*>& grads) {
        for (std::size_t k = 0; k < grads.size(); ++k) {
          if (!grads[k]) continue;
          for (std::size_t i = 0; i < vals[k]->numel(); ++i) {
            const double v = (*vals[k])[i];
            const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
            (*grads[k])[i] += g[0] * sgn;
          }
        }
      },
      {n, n});
}

}  // namespace auxnas::ops
