#include "vdc/nn/forward.hpp"

namespace vdc::nn {

void update_running_stats(const Network& net, const Trace<float>& trace, std::span<float> buffers, double momentum) {
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto* bn = std::get_if<BatchNorm>(&layers[i]);
    if (!bn) continue;
    const Tensor<float>& in = trace.acts[i];
    const double n = static_cast<double>(in.size() / in.dim(1));
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    for (int c = 0; c < bn->channels; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      float& rm = buffers[bn->stats_offset + cu];
      float& rv = buffers[bn->stats_offset + static_cast<std::size_t>(bn->channels) + cu];
      rm = static_cast<float>((1 - momentum) * rm + momentum * trace.bn[i].mean[cu]);
      rv = static_cast<float>((1 - momentum) * rv + momentum * trace.bn[i].var[cu] * unbias);
    }
  }
}

}  // namespace vdc::nn
