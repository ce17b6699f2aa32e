#include "vdc/nn/inference.hpp"

#include <algorithm>

namespace vdc::nn {

namespace {

Tensor<float> run_chunks(const Network& net, const TrainedModel& model, std::span<const Tensor<float>> clips,
                         std::size_t chunk, int layer) {
  if (clips.empty()) throw DomainError("inference on an empty clip list");
  Tensor<float> out;
  std::size_t width = 0;
  for (std::size_t start = 0; start < clips.size(); start += chunk) {
    const std::size_t end = std::min(clips.size(), start + chunk);
    const Tensor<float> x = stack_clips<float>(clips.subspan(start, end - start));
    const auto trace = forward<float>(net, model.params, model.buffers, x, NormMode::running);
    const Tensor<float>& y = layer < 0 ? trace.logits() : trace.output(layer);
    if (out.data.empty()) {
      width = y.dim(1);
      out = Tensor<float>({clips.size(), width});
    }
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * width));
  }
  return out;
}

}  // namespace

Tensor<float> predict_logits(const Network& net, const TrainedModel& model, std::span<const Tensor<float>> clips,
                             std::size_t chunk) {
  return run_chunks(net, model, clips, chunk, -1);
}

Tensor<float> predict_features(const Network& net, const TrainedModel& model, std::span<const Tensor<float>> clips,
                               std::size_t chunk) {
  return run_chunks(net, model, clips, chunk, net.feature_layer());
}

double topk_accuracy(const Tensor<float>& logits, std::span<const int> labels, int k) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (B == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const float* z = logits.ptr() + b * K;
    const float target = z[labels[b]];
    // Rank = number of classes strictly better, ties resolved toward the lower index.
    int better = 0;
    for (std::size_t c = 0; c < K; ++c) {
      if (z[c] > target || (z[c] == target && static_cast<int>(c) < labels[b])) ++better;
    }
    if (better < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(B);
}

}  // namespace vdc::nn
