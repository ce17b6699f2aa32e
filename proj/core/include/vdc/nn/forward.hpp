#pragma once

#include <optional>
#include <span>
#include <vector>

#include "vdc/nn/kernels.hpp"
#include "vdc/nn/model.hpp"

namespace vdc::nn {

using kernels::NormMode;

// Activations recorded by a forward pass. acts[0] is the normalized input,
// acts[i + 1] the output of layer i; acts.back() holds the logits.
template <class S>
struct Trace {
  std::vector<Tensor<S>> acts;
  std::vector<kernels::BnCache<S>> bn;  // indexed by layer, empty for non-BN layers

  const Tensor<S>& logits() const { return acts.back(); }
  const Tensor<S>& output(int layer) const { return acts.at(static_cast<std::size_t>(layer) + 1); }
};

// input: raw pixels [B, C, L, H, W] in [0, 1].
template <class S>
Trace<S> forward(const Network& net, std::span<const S> theta, std::span<const float> buffers, const Tensor<S>& input,
                 NormMode mode) {
  const ModelSpec& spec = net.spec();
  if (input.rank() != 5 || input.dim(1) != static_cast<std::size_t>(spec.channels) ||
      input.dim(2) != static_cast<std::size_t>(spec.input_length) ||
      input.dim(3) != static_cast<std::size_t>(spec.height) || input.dim(4) != static_cast<std::size_t>(spec.width)) {
    throw CompatibilityError("network input " + shape_string(input.shape) + " does not match model " + describe(spec));
  }
  if (theta.size() != net.param_count()) {
    throw CompatibilityError("parameter vector has " + std::to_string(theta.size()) + " entries, network expects " +
                             std::to_string(net.param_count()));
  }
  if (mode == NormMode::running && buffers.size() != net.buffer_count()) {
    throw CompatibilityError("running-statistics buffer size mismatch");
  }
  Trace<S> trace;
  trace.acts.reserve(net.layers().size() + 1);
  trace.bn.resize(net.layers().size());

  Tensor<S> x(input.shape);
  const std::size_t B = input.dim(0), C = input.dim(1), plane = input.size() / (B * C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const auto mean = static_cast<real_of_t<S>>(spec.mean_of(static_cast<int>(c)));
      const auto inv = static_cast<real_of_t<S>>(1.0 / spec.std_of(static_cast<int>(c)));
      const S* p = input.ptr() + (b * C + c) * plane;
      S* q = x.ptr() + (b * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mean) * inv;
    }
  }
  trace.acts.push_back(std::move(x));

  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Tensor<S>& in = trace.acts.back();
    Tensor<S> out = std::visit(
        [&](const auto& layer) -> Tensor<S> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Conv3d>) {
            return kernels::conv_forward(in, theta, layer);
          } else if constexpr (std::is_same_v<L, BatchNorm>) {
            return kernels::bn_forward(in, theta, layer, mode, buffers, trace.bn[i]);
          } else if constexpr (std::is_same_v<L, Relu>) {
            return kernels::relu_forward(in);
          } else if constexpr (std::is_same_v<L, AvgPool>) {
            return kernels::avgpool_forward(in, layer);
          } else if constexpr (std::is_same_v<L, GlobalAvgPool>) {
            return kernels::gap_forward(in);
          } else {
            return kernels::linear_forward(in, theta, layer);
          }
        },
        net.layers()[i]);
    trace.acts.push_back(std::move(out));
  }
  return trace;
}

// Extra gradients injected at layer outputs (for statistic-matching losses).
// Indexed by layer; an empty tensor means no injection.
template <class S>
using TapGrads = std::vector<Tensor<S>>;

// Reverse pass. Parameter gradients are accumulated into grad_theta (which
// must be sized param_count). Returns the gradient with respect to the raw
// input pixels when need_input is set, otherwise an empty tensor.
template <class S>
Tensor<S> backward(const Network& net, std::span<const S> theta, const Trace<S>& trace, NormMode mode,
                   const Tensor<S>* grad_logits, std::span<S> grad_theta, const TapGrads<S>* taps, bool need_input) {
  const auto& layers = net.layers();
  Tensor<S> g;
  if (grad_logits) {
    g = *grad_logits;
  } else {
    g = Tensor<S>(trace.logits().shape);
  }
  for (std::size_t ii = layers.size(); ii-- > 0;) {
    if (taps && ii < taps->size() && !(*taps)[ii].data.empty()) {
      const Tensor<S>& extra = (*taps)[ii];
      for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += extra.data[k];
    }
    const Tensor<S>& in = trace.acts[ii];
    const bool input_needed = ii > 0 || need_input;
    g = std::visit(
        [&](const auto& layer) -> Tensor<S> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Conv3d>) {
            return kernels::conv_backward(in, g, theta, layer, grad_theta, input_needed);
          } else if constexpr (std::is_same_v<L, BatchNorm>) {
            return kernels::bn_backward(in, g, theta, layer, mode, trace.bn[ii], grad_theta);
          } else if constexpr (std::is_same_v<L, Relu>) {
            return kernels::relu_backward(in, g);
          } else if constexpr (std::is_same_v<L, AvgPool>) {
            return kernels::avgpool_backward(in.shape, g, layer);
          } else if constexpr (std::is_same_v<L, GlobalAvgPool>) {
            return kernels::gap_backward(in.shape, g);
          } else {
            return kernels::linear_backward(in, g, theta, layer, grad_theta);
          }
        },
        layers[ii]);
  }
  if (!need_input) return {};
  const ModelSpec& spec = net.spec();
  const std::size_t B = g.dim(0), C = g.dim(1), plane = g.size() / (B * C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const auto inv = static_cast<real_of_t<S>>(1.0 / spec.std_of(static_cast<int>(c)));
      S* q = g.ptr() + (b * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = q[i] * inv;
    }
  }
  return g;
}

// Exponential-moving-average update of running statistics from a batch-mode
// trace (PyTorch convention: unbiased variance, momentum on the new value).
void update_running_stats(const Network& net, const Trace<float>& trace, std::span<float> buffers,
                          double momentum = 0.1);

// Stacks frame-major clips [L, C, H, W] into a network batch [B, C, L, H, W].
template <class S>
Tensor<S> stack_clips(std::span<const Tensor<S>> clips) {
  if (clips.empty()) throw DomainError("stack_clips: empty batch");
  const Shape& s = clips.front().shape;
  const std::size_t L = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<S> out({clips.size(), C, L, s[2], s[3]});
  for (std::size_t b = 0; b < clips.size(); ++b) {
    if (clips[b].shape != s) throw DomainError("stack_clips: clips differ in shape");
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const S* src = clips[b].ptr() + (t * C + c) * HW;
        S* dst = out.ptr() + ((b * C + c) * L + t) * HW;
        std::copy(src, src + HW, dst);
      }
    }
  }
  return out;
}

// Inverse layout map of stack_clips for sample b.
template <class S>
Tensor<S> unstack_clip(const Tensor<S>& batch, std::size_t b) {
  const std::size_t C = batch.dim(1), L = batch.dim(2), H = batch.dim(3), W = batch.dim(4), HW = H * W;
  Tensor<S> clip({L, C, H, W});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const S* src = batch.ptr() + ((b * C + c) * L + t) * HW;
      std::copy(src, src + HW, clip.ptr() + (t * C + c) * HW);
    }
  }
  return clip;
}

}  // namespace vdc::nn
