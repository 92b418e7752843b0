#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "ofaprune/tensor.hpp"

namespace ofp {

// Floor applied to teacher probabilities inside log arguments.
inline constexpr double kProbFloor = 1e-9;

template <class T>
struct LossResult {
  T loss{};
  Tensor<T> grad;  // w.r.t. logits
};

// Row-wise softmax of an N x classes tensor.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* z = logits.ptr() + n * K;
    T* q = p.ptr() + n * K;
    const T zmax = *std::max_element(z, z + K);
    T s{0};
    for (std::size_t k = 0; k < K; ++k) s += (q[k] = std::exp(z[k] - zmax));
    for (std::size_t k = 0; k < K; ++k) q[k] /= s;
  }
  return p;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* z = logits.ptr() + n * K;
    const T zmax = *std::max_element(z, z + K);
    T s{0};
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - zmax);
    const T lse = zmax + std::log(s);
    for (std::size_t k = 0; k < K; ++k) out[n * K + k] = z[k] - lse;
  }
  return out;
}

// Mean softmax cross-entropy (natural log) against integer class labels.
template <class T>
LossResult<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N) throw ShapeError("cross_entropy: one label per sample required");
  const auto logp = log_softmax(logits);
  LossResult<T> r{T{0}, Tensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw Error("cross_entropy: label " + std::to_string(y) + " out of range");
    total -= static_cast<double>(logp[n * K + y]);
    for (std::size_t k = 0; k < K; ++k) {
      const T pk = std::exp(logp[n * K + k]);
      r.grad[n * K + k] = (pk - (static_cast<std::size_t>(y) == k ? T{1} : T{0})) / static_cast<T>(N);
    }
  }
  r.loss = static_cast<T>(total / static_cast<double>(N));
  require_finite(r.loss, "cross-entropy loss");
  return r;
}

// Mean over the batch of sum_k p_s log2(p_s / p_t). Terms with p_s = 0
// contribute 0; p_t is floored at kProbFloor.
template <class T>
T kl_divergence_bits(const Tensor<T>& student_probs, const Tensor<T>& teacher_probs) {
  if (student_probs.shape() != teacher_probs.shape()) throw ShapeError("kl: probability tensors differ in shape");
  const std::size_t N = student_probs.dim(0), K = student_probs.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      const double ps = static_cast<double>(student_probs[n * K + k]);
      if (ps <= 0.0) continue;
      const double pt = std::max(static_cast<double>(teacher_probs[n * K + k]), kProbFloor);
      total += ps * std::log2(ps / pt);
    }
  }
  return static_cast<T>(std::max(total, 0.0) / static_cast<double>(N));
}

// Distillation loss KL(student || teacher) in bits, with the gradient taken
// w.r.t. the student logits only. teacher_probs is a constant target.
template <class T>
LossResult<T> kl_distill_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_probs) {
  if (student_logits.shape() != teacher_probs.shape()) throw ShapeError("kl_distill: logits and target differ in shape");
  const std::size_t N = student_logits.dim(0), K = student_logits.dim(1);
  const auto logp = log_softmax(student_logits);
  LossResult<T> r{T{0}, Tensor<T>(student_logits.shape())};
  const double inv_ln2 = 1.0 / std::numbers::ln2;
  double total = 0.0;
  std::vector<double> diff(K);
  for (std::size_t n = 0; n < N; ++n) {
    double kl_nat = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double lp = static_cast<double>(logp[n * K + k]);
      const double lq = std::log(std::max(static_cast<double>(teacher_probs[n * K + k]), kProbFloor));
      diff[k] = lp - lq;
      kl_nat += std::exp(lp) * diff[k];
    }
    total += std::max(kl_nat, 0.0) * inv_ln2;  // rounding can dip below zero
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(static_cast<double>(logp[n * K + k]));
      r.grad[n * K + k] = static_cast<T>(inv_ln2 * p * (diff[k] - kl_nat) / static_cast<double>(N));
    }
  }
  r.loss = static_cast<T>(total / static_cast<double>(N));
  require_finite(r.loss, "distillation loss");
  return r;
}

}  // namespace ofp
