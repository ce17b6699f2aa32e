#include "vdc/augment.hpp"

#include <algorithm>
#include <cmath>

namespace vdc::aug {

Tensor<float> horizontal_flip(const Tensor<float>& clip) {
  Tensor<float> out(clip.shape);
  const std::size_t W = clip.dim(3);
  const std::size_t rows = clip.size() / W;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = clip.ptr() + r * W;
    float* dst = out.ptr() + r * W;
    for (std::size_t x = 0; x < W; ++x) dst[x] = src[W - 1 - x];
  }
  return out;
}

CropBox random_crop_box(int height, int width, double min_area, Rng& rng) {
  const double area = rng.uniform(min_area, 1.0) * height * width;
  const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
  const double ratio = std::exp(log_ratio);
  CropBox box;
  box.w = std::min<double>(width, std::sqrt(area * ratio));
  box.h = std::min<double>(height, std::sqrt(area / ratio));
  box.y0 = rng.uniform(0.0, height - box.h);
  box.x0 = rng.uniform(0.0, width - box.w);
  return box;
}

Tensor<float> resized_crop(const Tensor<float>& clip, const CropBox& box) {
  const std::size_t H = clip.dim(2), W = clip.dim(3);
  const std::size_t planes = clip.size() / (H * W);
  Tensor<float> out(clip.shape);
  // Sample positions at pixel centers of the output grid mapped into the box.
  std::vector<int> y0(H), y1(H), x0(W), x1(W);
  std::vector<float> fy(H), fx(W);
  auto setup = [](std::size_t n, double origin, double extent, std::size_t limit, std::vector<int>& lo,
                  std::vector<int>& hi, std::vector<float>& frac) {
    for (std::size_t i = 0; i < n; ++i) {
      double p = origin + (static_cast<double>(i) + 0.5) * extent / static_cast<double>(n) - 0.5;
      p = std::clamp(p, 0.0, static_cast<double>(limit - 1));
      lo[i] = static_cast<int>(std::floor(p));
      hi[i] = std::min(lo[i] + 1, static_cast<int>(limit) - 1);
      frac[i] = static_cast<float>(p - lo[i]);
    }
  };
  setup(H, box.y0, box.h, H, y0, y1, fy);
  setup(W, box.x0, box.w, W, x0, x1, fx);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = clip.ptr() + p * H * W;
    float* dst = out.ptr() + p * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      const float* r0 = src + static_cast<std::size_t>(y0[y]) * W;
      const float* r1 = src + static_cast<std::size_t>(y1[y]) * W;
      for (std::size_t x = 0; x < W; ++x) {
        const float top = r0[x0[x]] * (1 - fx[x]) + r0[x1[x]] * fx[x];
        const float bot = r1[x0[x]] * (1 - fx[x]) + r1[x1[x]] * fx[x];
        dst[y * W + x] = top * (1 - fy[y]) + bot * fy[y];
      }
    }
  }
  return out;
}

double MixBox::volume_fraction(int length, int height, int width) const {
  return static_cast<double>((t1 - t0) * (y1 - y0) * (x1 - x0)) / (static_cast<double>(length) * height * width);
}

MixBox random_mix_box(int length, int height, int width, Rng& rng) {
  const double lambda = rng.uniform();
  const double side = std::cbrt(1.0 - lambda);
  auto span = [&](int n, int& lo, int& hi) {
    const int len = static_cast<int>(std::lround(side * n));
    const int center = rng.uniform_int(0, n - 1);
    lo = std::clamp(center - len / 2, 0, n);
    hi = std::clamp(lo + len, 0, n);
  };
  MixBox box;
  span(length, box.t0, box.t1);
  span(height, box.y0, box.y1);
  span(width, box.x0, box.x1);
  return box;
}

void paste_box(Tensor<float>& target, const Tensor<float>& donor, const MixBox& box) {
  const std::size_t C = target.dim(1), H = target.dim(2), W = target.dim(3);
  for (int t = box.t0; t < box.t1; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      for (int y = box.y0; y < box.y1; ++y) {
        const std::size_t row = ((static_cast<std::size_t>(t) * C + c) * H + static_cast<std::size_t>(y)) * W;
        for (int x = box.x0; x < box.x1; ++x) target.data[row + static_cast<std::size_t>(x)] = donor.data[row + static_cast<std::size_t>(x)];
      }
    }
  }
}

}  // namespace vdc::aug
