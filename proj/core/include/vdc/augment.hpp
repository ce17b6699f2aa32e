#pragma once

#include "vdc/rng.hpp"
#include "vdc/tensor.hpp"

namespace vdc::aug {

// Mirror every frame of a [L, C, H, W] clip left-right.
Tensor<float> horizontal_flip(const Tensor<float>& clip);

// Crop box in pixel coordinates (continuous), shared by all frames.
struct CropBox {
  double y0 = 0, x0 = 0, h = 0, w = 0;
};

// Random box covering area fraction in [min_area, 1] with log-uniform aspect
// ratio in [3/4, 4/3], clipped to the frame.
CropBox random_crop_box(int height, int width, double min_area, Rng& rng);

// Bilinearly resample the box back to the full H x W for every frame.
Tensor<float> resized_crop(const Tensor<float>& clip, const CropBox& box);

// Space-time box of a CutMix pair: frames [t0, t1), rows [y0, y1), cols [x0, x1).
struct MixBox {
  int t0 = 0, t1 = 0, y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  // Fraction of the clip volume covered by the box.
  double volume_fraction(int length, int height, int width) const;
};

// Box covering about 1 - lambda of the clip volume, lambda ~ U(0, 1).
MixBox random_mix_box(int length, int height, int width, Rng& rng);

// Copies the box region of `donor` into `target`.
void paste_box(Tensor<float>& target, const Tensor<float>& donor, const MixBox& box);

}  // namespace vdc::aug
