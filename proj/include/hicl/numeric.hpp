#pragma once

// Minimal differentiable kernel: a two-layer fully connected net with a
// rectifier in between, stable softmax / cross-entropy, SGD with classical
// momentum, and a central-difference gradient checker. Everything runs in
// 64-bit with fixed accumulation order.

#include <cstring>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "hicl/common.hpp"
#include "hicl/rng.hpp"
#include "hicl/tensor.hpp"

namespace hicl {

// Positive entries summing to 1; shift invariant via max subtraction.
inline Vector softmax(const Vector& logits) {
  require(!logits.empty(), "softmax: empty logits");
  assert_finite(logits, "softmax");
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  Vector out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline double log_sum_exp(const Vector& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  return m + std::log(sum);
}

// -log softmax(logits)[target] and its gradient (softmax - onehot).
inline std::pair<double, Vector> cross_entropy_from_logits(const Vector& logits, std::size_t target) {
  require(target < logits.size(), "cross_entropy_from_logits: target out of range");
  double lse = log_sum_exp(logits);
  double loss = lse - logits[target];
  Vector grad = softmax(logits);
  grad[target] -= 1.0;
  return {loss, std::move(grad)};
}

struct LayerCache {
  Vector x;      // input
  Vector h_pre;  // first-layer preactivation
  Vector h;      // rectified
  Vector out;    // final-layer preactivation (the net output)
};

// out = w2 * relu(w1 * x + b1) + b2. No trailing nonlinearity: the output
// is the final layer's preactivation.
struct TwoLayerNet {
  Matrix w1;  // hidden x in
  Vector b1;  // hidden
  Matrix w2;  // out x hidden
  Vector b2;  // out

  std::size_t in_dim() const { return w1.cols; }
  std::size_t hidden_dim() const { return w1.rows; }
  std::size_t out_dim() const { return w2.rows; }

  // Fan-in scaled uniform init, zero biases. Deterministic given rng state.
  static TwoLayerNet init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    require_config(in > 0 && hidden > 0 && out > 0, "TwoLayerNet: dims must be positive");
    TwoLayerNet net;
    net.w1 = Matrix(hidden, in);
    net.b1 = Vector(hidden, 0.0);
    net.w2 = Matrix(out, hidden);
    net.b2 = Vector(out, 0.0);
    double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : net.w1.data) w = rng.uniform(-s1, s1);
    double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& w : net.w2.data) w = rng.uniform(-s2, s2);
    return net;
  }

  Vector forward(const Vector& x, LayerCache* cache = nullptr) const {
    require(x.size() == in_dim(), "TwoLayerNet::forward: input dim mismatch");
    Vector h_pre = matvec(w1, x);
    for (std::size_t i = 0; i < h_pre.size(); ++i) h_pre[i] += b1[i];
    Vector h(h_pre.size());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = h_pre[i] > 0.0 ? h_pre[i] : 0.0;
    Vector out = matvec(w2, h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b2[i];
    assert_finite(out, "TwoLayerNet::forward");
    if (cache) {
      cache->x = x;
      cache->h_pre = h_pre;
      cache->h = h;
      cache->out = out;
    }
    return out;
  }

  struct Grads {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;

    static Grads zeros_like(const TwoLayerNet& net) {
      Grads g;
      g.w1 = Matrix(net.w1.rows, net.w1.cols);
      g.b1 = Vector(net.b1.size(), 0.0);
      g.w2 = Matrix(net.w2.rows, net.w2.cols);
      g.b2 = Vector(net.b2.size(), 0.0);
      return g;
    }
  };

  // Reverse-mode pass. Accumulates parameter grads into `acc`, returns
  // grad wrt x. relu'(0) is taken as 0.
  Vector backward(const LayerCache& cache, const Vector& grad_out, Grads& acc) const {
    require(grad_out.size() == out_dim(), "TwoLayerNet::backward: grad_out dim mismatch");
    add_outer(acc.w2, grad_out, cache.h);
    axpy(1.0, grad_out, acc.b2);
    Vector dh = matvec_t(w2, grad_out);
    for (std::size_t i = 0; i < dh.size(); ++i)
      if (cache.h_pre[i] <= 0.0) dh[i] = 0.0;
    add_outer(acc.w1, dh, cache.x);
    axpy(1.0, dh, acc.b1);
    return matvec_t(w1, dh);
  }

  // Uniform view over the four parameter blocks, for optimizers and
  // checkpointing. Order is fixed: w1, b1, w2, b2.
  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    fn(prefix + "/w1", w1.data);
    fn(prefix + "/b1", b1);
    fn(prefix + "/w2", w2.data);
    fn(prefix + "/b2", b2);
  }

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) const {
    fn(prefix + "/w1", w1.data);
    fn(prefix + "/b1", b1);
    fn(prefix + "/w2", w2.data);
    fn(prefix + "/b2", b2);
  }
};

// Classical momentum: v <- mu*v + g; p <- p - lr*v.
struct OptimState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::map<std::string, Vector> velocity;  // shapes mirror parameters
};

inline void sgd_step(Vector& param, const Vector& grad, OptimState& state, const std::string& name) {
  require(param.size() == grad.size(), "sgd_step: shape mismatch for " + name);
  Vector& v = state.velocity[name];
  if (v.empty()) v.assign(param.size(), 0.0);
  require(v.size() == param.size(), "sgd_step: velocity shape mismatch for " + name);
  for (std::size_t i = 0; i < param.size(); ++i) {
    v[i] = state.momentum * v[i] + grad[i];
    param[i] -= state.learning_rate * v[i];
  }
}

// loss_fn maps a point to (value, analytic gradient). Returns the max over
// coordinates of |analytic - central difference| / max(|analytic|, |cd|,
// 1e-12). Throws NumericError if loss_fn is non-deterministic, or if tol > 0
// and the result exceeds it.
using LossFn = std::function<std::pair<double, Vector>(const Vector&)>;

inline double grad_check(const LossFn& loss_fn, const Vector& point, double step, double tol = 0.0) {
  auto [v0, analytic] = loss_fn(point);
  auto [v1, g1] = loss_fn(point);
  if (std::memcmp(&v0, &v1, sizeof(double)) != 0)
    throw NumericError("grad_check: loss_fn is not deterministic");
  require(analytic.size() == point.size(), "grad_check: gradient size mismatch");

  double max_rel = 0.0;
  Vector p = point;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double orig = p[i];
    p[i] = orig + step;
    double fp = loss_fn(p).first;
    p[i] = orig - step;
    double fm = loss_fn(p).first;
    p[i] = orig;
    double cd = (fp - fm) / (2.0 * step);
    double denom = std::max({std::abs(analytic[i]), std::abs(cd), 1e-12});
    max_rel = std::max(max_rel, std::abs(analytic[i] - cd) / denom);
  }
  if (tol > 0.0 && max_rel > tol)
    throw NumericError("grad_check: max relative error " + std::to_string(max_rel) + " exceeds tolerance");
  return max_rel;
}

}  // namespace hicl
