#pragma once

#include <span>
#include <vector>

#include "vdc/dual.hpp"
#include "vdc/tensor.hpp"

namespace vdc::nn {

// Row-wise log-softmax of a [B, K] tensor.
template <class S>
Tensor<S> log_softmax(const Tensor<S>& logits) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  Tensor<S> out(logits.shape);
  for (std::size_t b = 0; b < B; ++b) {
    const S* z = logits.ptr() + b * K;
    S m = z[0];
    for (std::size_t k = 1; k < K; ++k) {
      if (z[k] > m) m = z[k];
    }
    S sum(0);
    for (std::size_t k = 0; k < K; ++k) sum += sexp(z[k] - m);
    const S lse = m + slog(sum);
    for (std::size_t k = 0; k < K; ++k) out.data[b * K + k] = z[k] - lse;
  }
  return out;
}

template <class S>
Tensor<S> softmax(const Tensor<S>& logits) {
  Tensor<S> out = log_softmax(logits);
  for (auto& v : out.data) v = sexp(v);
  return out;
}

// Mean cross-entropy against hard labels.
template <class S>
S cross_entropy(const Tensor<S>& logits, std::span<const int> labels, Tensor<S>* grad) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const Tensor<S> ls = log_softmax(logits);
  const auto invb = static_cast<real_of_t<S>>(1.0 / static_cast<double>(B));
  S loss(0);
  if (grad) *grad = Tensor<S>(logits.shape);
  for (std::size_t b = 0; b < B; ++b) {
    const auto y = static_cast<std::size_t>(labels[b]);
    loss -= ls.data[b * K + y];
    if (grad) {
      for (std::size_t k = 0; k < K; ++k) {
        grad->data[b * K + k] = (sexp(ls.data[b * K + k]) - S(k == y ? 1 : 0)) * invb;
      }
    }
  }
  return loss * invb;
}

// Mean over the batch of -sum_k softmax(target)_k * log_softmax(logits)_k.
// Gradients flow to both the logits and the target logits.
template <class S>
S soft_cross_entropy(const Tensor<S>& logits, const Tensor<S>& target_logits, Tensor<S>* grad_logits,
                     Tensor<S>* grad_targets) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const Tensor<S> ls = log_softmax(logits);
  const Tensor<S> pt = softmax(target_logits);
  const auto invb = static_cast<real_of_t<S>>(1.0 / static_cast<double>(B));
  if (grad_logits) *grad_logits = Tensor<S>(logits.shape);
  if (grad_targets) *grad_targets = Tensor<S>(logits.shape);
  S loss(0);
  for (std::size_t b = 0; b < B; ++b) {
    S dot(0);
    for (std::size_t k = 0; k < K; ++k) dot += pt.data[b * K + k] * ls.data[b * K + k];
    loss -= dot;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t i = b * K + k;
      if (grad_logits) grad_logits->data[i] = (sexp(ls.data[i]) - pt.data[i]) * invb;
      if (grad_targets) grad_targets->data[i] = -(pt.data[i] * (ls.data[i] - dot)) * invb;
    }
  }
  return loss * invb;
}

// Mean over the batch of mean_k (z - t)^2 + gt_weight * CE(z, hard).
template <class S>
S mse_gt_loss(const Tensor<S>& logits, const Tensor<S>& target_logits, std::span<const int> hard, double gt_weight,
              Tensor<S>* grad) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const auto invb = static_cast<real_of_t<S>>(1.0 / static_cast<double>(B));
  const auto invk = static_cast<real_of_t<S>>(1.0 / static_cast<double>(K));
  Tensor<S> gce;
  const S ce = cross_entropy(logits, hard, grad ? &gce : nullptr);
  S mse(0);
  if (grad) *grad = Tensor<S>(logits.shape);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const S d = logits.data[i] - target_logits.data[i];
    mse += d * d;
    if (grad) {
      grad->data[i] = d * (2 * invk * invb) + gce.data[i] * static_cast<real_of_t<S>>(gt_weight);
    }
  }
  return mse * (invk * invb) + ce * static_cast<real_of_t<S>>(gt_weight);
}

// Mean over the batch of KL(target_probs || softmax(logits)).
template <class S>
S kl_loss(const Tensor<S>& logits, const Tensor<S>& target_probs, Tensor<S>* grad) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const Tensor<S> ls = log_softmax(logits);
  const auto invb = static_cast<real_of_t<S>>(1.0 / static_cast<double>(B));
  if (grad) *grad = Tensor<S>(logits.shape);
  S loss(0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t i = b * K + k;
      const S p = target_probs.data[i];
      if (value_of(p) > 0) loss += p * (slog(p) - ls.data[i]);
      if (grad) grad->data[i] = (sexp(ls.data[i]) - p) * invb;
    }
  }
  return loss * invb;
}

}  // namespace vdc::nn
