#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "vdc/tensor.hpp"

namespace vdc::nn {

enum class Arch { mini_c3d, factorized_st };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& s);

struct ModelSpec {
  Arch arch = Arch::mini_c3d;
  int input_length = 8;  // L
  int channels = 3;
  int height = 16;
  int width = 16;
  int num_classes = 4;
  double width_mult = 1.0;
  // Per-channel input normalization, applied inside the model. Empty means
  // the default (0.45, 0.25) for every channel.
  std::vector<float> norm_mean;
  std::vector<float> norm_std;

  float mean_of(int c) const { return norm_mean.empty() ? 0.45f : norm_mean.at(static_cast<std::size_t>(c)); }
  float std_of(int c) const { return norm_std.empty() ? 0.25f : norm_std.at(static_cast<std::size_t>(c)); }
};

// Canonical one-line description; the basis of spec hashes.
std::string describe(const ModelSpec& spec);
std::string spec_hash(const ModelSpec& spec);

// "mini_c3d", "factorized_st:0.5" -> spec with arch/width set on top of base.
ModelSpec parse_model_spec(const std::string& text, ModelSpec base);

// Flat parameter vector with a fixed canonical ordering (layer order, then
// weight before bias / gamma before beta).
using ParamVector = std::vector<float>;

struct Conv3d {
  int in = 0, out = 0;
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> pad{1, 1, 1};
  std::size_t weight_offset = 0, bias_offset = 0;
};

struct BatchNorm {
  int channels = 0;
  std::size_t gamma_offset = 0, beta_offset = 0;
  // Running mean at stats_offset, running variance at stats_offset + channels.
  std::size_t stats_offset = 0;
  double eps = 1e-5;
};

struct Relu {};

struct AvgPool {
  std::array<int, 3> kernel{2, 2, 2};
};

struct GlobalAvgPool {};

struct Linear {
  int in = 0, out = 0;
  std::size_t weight_offset = 0, bias_offset = 0;
};

using Layer = std::variant<Conv3d, BatchNorm, Relu, AvgPool, GlobalAvgPool, Linear>;

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  Shape shape;
  std::size_t size() const { return shape_numel(shape); }
};

// Layer graph of a space-time classifier. Parameters live outside the
// network in a ParamVector so the same graph can be evaluated functionally
// at any point of a trajectory.
//
// mini_c3d: 4 blocks of conv3x3x3 -> batchnorm -> relu -> avgpool, then a
// global average pool and a linear head. factorized_st swaps each conv for
// a 1x3x3 spatial conv followed by a 3x1x1 temporal conv. The first block
// pools (1,2,2), the rest (2,2,2), so L must be divisible by 8 and H, W by 16.
class Network {
 public:
  // Throws ConfigError when the input shape does not survive the pooling.
  static Network build(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t param_count() const { return param_count_; }
  std::size_t buffer_count() const { return buffer_count_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::vector<int> block_widths() const { return widths_; }

  // Activation shape (without batch) after layer i.
  const Shape& output_shape(int layer) const { return shapes_.at(static_cast<std::size_t>(layer)); }

  // Layers whose outputs carry matchable statistics: every batchnorm plus
  // the pooled pre-head feature.
  std::vector<int> stat_layers() const;
  int feature_layer() const { return feature_layer_; }

  ParamVector init_params(std::uint64_t seed) const;
  // Running mean 0, running variance 1.
  std::vector<float> init_buffers() const;

  std::map<std::string, Tensor<float>> unflatten(const ParamVector& theta) const;
  ParamVector flatten(const std::map<std::string, Tensor<float>>& named) const;

 private:
  ModelSpec spec_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::vector<ParamBlock> blocks_;
  std::vector<int> widths_;
  std::size_t param_count_ = 0;
  std::size_t buffer_count_ = 0;
  int feature_layer_ = -1;
};

// A trained network: spec, parameters and running normalization statistics.
struct TrainedModel {
  std::string id;
  ModelSpec spec;
  ParamVector params;
  std::vector<float> buffers;
};

}  // namespace vdc::nn
