#pragma once

#include <string>
#include <vector>

#include "vdc/error.hpp"
#include "vdc/rng.hpp"
#include "vdc/tensor.hpp"

namespace vdc::temporal {

enum class SamplingMethod { naive, segment, sliding_window };
enum class Interpolation { none, duplication, linear };

std::string to_string(SamplingMethod m);
std::string to_string(Interpolation i);
SamplingMethod parse_sampling_method(const std::string& s);
Interpolation parse_interpolation(const std::string& s);

// How model-input clips of `input_length` frames are drawn from a stored
// video of `stored_length` frames: pick a source window of `window` frames,
// then stretch it to the input length with `interpolation`.
struct SamplingPlan {
  SamplingMethod method = SamplingMethod::naive;
  int stored_length = 8;  // T_c
  int input_length = 8;   // L
  int window = 8;         // W, source window length
  Interpolation interpolation = Interpolation::none;

  bool operator==(const SamplingPlan&) const = default;
};

// Throws PlanError when the plan is internally inconsistent.
void validate(const SamplingPlan& plan);

// Default plan for a stored length: sliding windows of the input length when
// the stored video is long enough, otherwise the whole video stretched with
// `when_short` (interpolation only applies when T_c < L).
SamplingPlan make_plan(int stored_length, int input_length,
                       Interpolation when_short = Interpolation::duplication);

struct Window {
  int start = 0;
  int length = 0;
  bool operator==(const Window&) const = default;
};

Window sample_window(const SamplingPlan& plan, Rng& rng);
// All windows the plan can ever return, in start order.
std::vector<Window> admissible_windows(const SamplingPlan& plan);
// Deterministic representative window (centered).
Window center_window(const SamplingPlan& plan);

// One output frame as a convex combination of at most two source frames.
struct InterpTap {
  int src0 = 0;
  int src1 = 0;
  double w0 = 1.0;
  double w1 = 0.0;
};

// Row i describes output frame i. Throws PlanError for incompatible (W, L).
std::vector<InterpTap> interpolation_taps(int source_length, int target_length, Interpolation mode);

// clip: [W, ...] frame-major. Returns [L, ...].
template <class S>
Tensor<S> interpolate(const Tensor<S>& clip, int target_length, Interpolation mode) {
  const int source_length = static_cast<int>(clip.dim(0));
  const auto taps = interpolation_taps(source_length, target_length, mode);
  const std::size_t frame = clip.size() / clip.dim(0);
  Shape shape = clip.shape;
  shape[0] = static_cast<std::size_t>(target_length);
  Tensor<S> out(shape);
  for (int i = 0; i < target_length; ++i) {
    const auto& tap = taps[static_cast<std::size_t>(i)];
    const S* a = clip.ptr() + static_cast<std::size_t>(tap.src0) * frame;
    const S* b = clip.ptr() + static_cast<std::size_t>(tap.src1) * frame;
    S* o = out.ptr() + static_cast<std::size_t>(i) * frame;
    if (tap.w1 == 0.0) {
      std::copy(a, a + frame, o);
    } else {
      const auto w0 = static_cast<real_of_t<S>>(tap.w0);
      const auto w1 = static_cast<real_of_t<S>>(tap.w1);
      for (std::size_t k = 0; k < frame; ++k) o[k] = a[k] * w0 + b[k] * w1;
    }
  }
  return out;
}

// Transpose of interpolate: maps a gradient on [L, ...] back to [W, ...].
template <class S>
Tensor<S> interpolate_adjoint(const Tensor<S>& grad, int source_length, Interpolation mode) {
  const int target_length = static_cast<int>(grad.dim(0));
  const auto taps = interpolation_taps(source_length, target_length, mode);
  const std::size_t frame = grad.size() / grad.dim(0);
  Shape shape = grad.shape;
  shape[0] = static_cast<std::size_t>(source_length);
  Tensor<S> out(shape);
  for (int i = 0; i < target_length; ++i) {
    const auto& tap = taps[static_cast<std::size_t>(i)];
    const S* g = grad.ptr() + static_cast<std::size_t>(i) * frame;
    S* a = out.ptr() + static_cast<std::size_t>(tap.src0) * frame;
    S* b = out.ptr() + static_cast<std::size_t>(tap.src1) * frame;
    const auto w0 = static_cast<real_of_t<S>>(tap.w0);
    const auto w1 = static_cast<real_of_t<S>>(tap.w1);
    for (std::size_t k = 0; k < frame; ++k) a[k] += g[k] * w0;
    if (tap.w1 != 0.0) {
      for (std::size_t k = 0; k < frame; ++k) b[k] += g[k] * w1;
    }
  }
  return out;
}

// Frames [start, start+length) of a frame-major video.
template <class S>
Tensor<S> slice_frames(const Tensor<S>& video, int start, int length) {
  const std::size_t frame = video.size() / video.dim(0);
  if (start < 0 || length < 1 || static_cast<std::size_t>(start + length) > video.dim(0)) {
    throw PlanError("window [" + std::to_string(start) + ", " + std::to_string(start + length) +
                    ") outside video of " + std::to_string(video.dim(0)) + " frames");
  }
  Shape shape = video.shape;
  shape[0] = static_cast<std::size_t>(length);
  Tensor<S> out(shape);
  std::copy(video.ptr() + static_cast<std::size_t>(start) * frame,
            video.ptr() + static_cast<std::size_t>(start + length) * frame, out.ptr());
  return out;
}

// Model-input clip for a window under the plan.
template <class S>
Tensor<S> extract_clip(const Tensor<S>& video, const SamplingPlan& plan, const Window& window) {
  auto source = slice_frames(video, window.start, window.length);
  if (window.length == plan.input_length) return source;
  return interpolate(source, plan.input_length, plan.interpolation);
}

// Adds the adjoint of extract_clip into `video_grad` (same shape as video).
template <class S>
void extract_clip_adjoint(const Tensor<S>& clip_grad, const SamplingPlan& plan, const Window& window,
                          Tensor<S>& video_grad) {
  Tensor<S> source = window.length == plan.input_length
                         ? clip_grad
                         : interpolate_adjoint(clip_grad, window.length, plan.interpolation);
  const std::size_t frame = video_grad.size() / video_grad.dim(0);
  S* dst = video_grad.ptr() + static_cast<std::size_t>(window.start) * frame;
  for (std::size_t k = 0; k < source.size(); ++k) dst[k] += source.data[k];
}

// Extends a video shorter than `min_length` by repeating each frame
// ceil(min_length / T) times in order. Longer videos are returned unchanged.
template <class S>
Tensor<S> extend_by_duplication(const Tensor<S>& video, int min_length) {
  const int length = static_cast<int>(video.dim(0));
  if (length >= min_length) return video;
  const int factor = (min_length + length - 1) / length;
  return interpolate(video, length * factor, Interpolation::duplication);
}

struct CompressionReport {
  double instance_ratio = 0;  // N_c / N
  double temporal_ratio = 0;  // T_c / T_m
  double total_ratio = 0;     // (N_c * T_c) / (N * T_m)
};

// Throws DomainError for nonpositive inputs.
CompressionReport compression_report(double num_videos, double num_condensed, double mean_frames,
                                     double condensed_frames);

}  // namespace vdc::temporal
