#pragma once

#include <span>
#include <vector>

#include "vdc/nn/forward.hpp"
#include "vdc/nn/model.hpp"

namespace vdc::nn {

// Eval-mode logits [B, K] for frame-major clips [L, C, H, W].
Tensor<float> predict_logits(const Network& net, const TrainedModel& model, std::span<const Tensor<float>> clips,
                             std::size_t chunk = 32);

// Eval-mode pooled pre-head features [B, F].
Tensor<float> predict_features(const Network& net, const TrainedModel& model, std::span<const Tensor<float>> clips,
                               std::size_t chunk = 32);

// Top-k accuracy of logits against labels.
double topk_accuracy(const Tensor<float>& logits, std::span<const int> labels, int k);

}  // namespace vdc::nn
