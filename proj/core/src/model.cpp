#include "vdc/nn/model.hpp"

#include <cmath>
#include <sstream>

#include "vdc/hash.hpp"
#include "vdc/rng.hpp"

namespace vdc::nn {

std::string to_string(Arch arch) { return arch == Arch::mini_c3d ? "mini_c3d" : "factorized_st"; }

Arch parse_arch(const std::string& s) {
  if (s == "mini_c3d") return Arch::mini_c3d;
  if (s == "factorized_st") return Arch::factorized_st;
  throw ConfigError("unknown architecture '" + s + "'");
}

std::string describe(const ModelSpec& spec) {
  std::ostringstream os;
  os.precision(9);
  os << "arch=" << to_string(spec.arch) << ";input=" << spec.input_length << "x" << spec.channels << "x"
     << spec.height << "x" << spec.width << ";classes=" << spec.num_classes << ";width=" << spec.width_mult
     << ";norm=";
  for (int c = 0; c < spec.channels; ++c) os << (c ? "," : "") << spec.mean_of(c) << "/" << spec.std_of(c);
  return os.str();
}

std::string spec_hash(const ModelSpec& spec) { return short_hash(describe(spec)); }

ModelSpec parse_model_spec(const std::string& text, ModelSpec base) {
  const auto colon = text.find(':');
  base.arch = parse_arch(text.substr(0, colon));
  if (colon != std::string::npos) {
    try {
      base.width_mult = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad width multiplier in model spec '" + text + "'");
    }
    if (!(base.width_mult > 0)) throw ConfigError("width multiplier must be positive in '" + text + "'");
  }
  return base;
}

namespace {

constexpr std::array<int, 4> kBaseWidths{16, 32, 64, 64};

}  // namespace

Network Network::build(const ModelSpec& spec) {
  if (spec.input_length < 1 || spec.channels < 1 || spec.height < 1 || spec.width < 1) {
    throw ConfigError("model input dimensions must be positive");
  }
  if (spec.num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (!spec.norm_mean.empty() && static_cast<int>(spec.norm_mean.size()) != spec.channels) {
    throw ConfigError("normalization mean must have one entry per channel");
  }
  if (!spec.norm_std.empty() && static_cast<int>(spec.norm_std.size()) != spec.channels) {
    throw ConfigError("normalization std must have one entry per channel");
  }
  for (int c = 0; c < spec.channels; ++c) {
    if (!(spec.std_of(c) > 0)) throw ConfigError("normalization std must be positive");
  }
  if (spec.input_length % 8 != 0 || spec.height % 16 != 0 || spec.width % 16 != 0) {
    throw ConfigError("input " + std::to_string(spec.input_length) + "x" + std::to_string(spec.height) + "x" +
                      std::to_string(spec.width) +
                      " is incompatible with 4 pooling stages (need L % 8 == 0, H % 16 == 0, W % 16 == 0)");
  }

  Network net;
  net.spec_ = spec;
  std::size_t offset = 0;
  std::size_t stats = 0;
  Shape shape{static_cast<std::size_t>(spec.channels), static_cast<std::size_t>(spec.input_length),
              static_cast<std::size_t>(spec.height), static_cast<std::size_t>(spec.width)};

  auto add_block = [&](const std::string& name, Shape s) {
    net.blocks_.push_back({name, offset, s});
    offset += shape_numel(s);
    return net.blocks_.back().offset;
  };
  auto push = [&](Layer layer) {
    net.layers_.push_back(std::move(layer));
    net.shapes_.push_back(shape);
  };
  auto add_conv = [&](const std::string& name, int in, int out, std::array<int, 3> k, std::array<int, 3> pad) {
    Conv3d conv;
    conv.in = in;
    conv.out = out;
    conv.kernel = k;
    conv.pad = pad;
    conv.weight_offset = add_block(name + ".weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in),
                                                      static_cast<std::size_t>(k[0]), static_cast<std::size_t>(k[1]),
                                                      static_cast<std::size_t>(k[2])});
    conv.bias_offset = add_block(name + ".bias", {static_cast<std::size_t>(out)});
    shape[0] = static_cast<std::size_t>(out);
    push(conv);
  };

  int in = spec.channels;
  for (int b = 0; b < 4; ++b) {
    const int out = std::max(2, static_cast<int>(std::lround(kBaseWidths[static_cast<std::size_t>(b)] * spec.width_mult)));
    net.widths_.push_back(out);
    const std::string prefix = "block" + std::to_string(b + 1);
    if (spec.arch == Arch::mini_c3d) {
      add_conv(prefix + ".conv", in, out, {3, 3, 3}, {1, 1, 1});
    } else {
      add_conv(prefix + ".spatial", in, out, {1, 3, 3}, {0, 1, 1});
      add_conv(prefix + ".temporal", out, out, {3, 1, 1}, {1, 0, 0});
    }
    BatchNorm bn;
    bn.channels = out;
    bn.gamma_offset = add_block(prefix + ".bn.gamma", {static_cast<std::size_t>(out)});
    bn.beta_offset = add_block(prefix + ".bn.beta", {static_cast<std::size_t>(out)});
    bn.stats_offset = stats;
    stats += 2 * static_cast<std::size_t>(out);
    push(bn);
    push(Relu{});
    AvgPool pool;
    pool.kernel = b == 0 ? std::array<int, 3>{1, 2, 2} : std::array<int, 3>{2, 2, 2};
    for (int d = 0; d < 3; ++d) shape[static_cast<std::size_t>(d + 1)] /= static_cast<std::size_t>(pool.kernel[static_cast<std::size_t>(d)]);
    push(pool);
    in = out;
  }
  shape = {static_cast<std::size_t>(in)};
  push(GlobalAvgPool{});
  net.feature_layer_ = static_cast<int>(net.layers_.size()) - 1;
  Linear head;
  head.in = in;
  head.out = spec.num_classes;
  head.weight_offset = add_block("head.weight", {static_cast<std::size_t>(spec.num_classes), static_cast<std::size_t>(in)});
  head.bias_offset = add_block("head.bias", {static_cast<std::size_t>(spec.num_classes)});
  shape = {static_cast<std::size_t>(spec.num_classes)};
  push(head);

  net.param_count_ = offset;
  net.buffer_count_ = stats;
  return net;
}

std::vector<int> Network::stat_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<BatchNorm>(layers_[i])) out.push_back(static_cast<int>(i));
  }
  out.push_back(feature_layer_);
  return out;
}

ParamVector Network::init_params(std::uint64_t seed) const {
  ParamVector theta(param_count_, 0.0f);
  Rng rng = Rng::derive(seed, "init:" + describe(spec_));
  for (const auto& layer : layers_) {
    if (const auto* conv = std::get_if<Conv3d>(&layer)) {
      const int fan_in = conv->in * conv->kernel[0] * conv->kernel[1] * conv->kernel[2];
      const double bound = std::sqrt(6.0 / fan_in);
      const std::size_t n = static_cast<std::size_t>(conv->out * fan_in);
      for (std::size_t i = 0; i < n; ++i) theta[conv->weight_offset + i] = static_cast<float>(rng.uniform(-bound, bound));
    } else if (const auto* bn = std::get_if<BatchNorm>(&layer)) {
      for (int c = 0; c < bn->channels; ++c) theta[bn->gamma_offset + static_cast<std::size_t>(c)] = 1.0f;
    } else if (const auto* fc = std::get_if<Linear>(&layer)) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fc->in));
      const std::size_t n = static_cast<std::size_t>(fc->out * fc->in);
      for (std::size_t i = 0; i < n; ++i) theta[fc->weight_offset + i] = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  return theta;
}

std::vector<float> Network::init_buffers() const {
  std::vector<float> buffers(buffer_count_, 0.0f);
  for (const auto& layer : layers_) {
    if (const auto* bn = std::get_if<BatchNorm>(&layer)) {
      for (int c = 0; c < bn->channels; ++c) buffers[bn->stats_offset + static_cast<std::size_t>(bn->channels + c)] = 1.0f;
    }
  }
  return buffers;
}

std::map<std::string, Tensor<float>> Network::unflatten(const ParamVector& theta) const {
  if (theta.size() != param_count_) {
    throw CompatibilityError("parameter vector has " + std::to_string(theta.size()) + " entries, network expects " +
                             std::to_string(param_count_));
  }
  std::map<std::string, Tensor<float>> out;
  for (const auto& block : blocks_) {
    Tensor<float> t(block.shape);
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(block.offset),
              theta.begin() + static_cast<std::ptrdiff_t>(block.offset + block.size()), t.data.begin());
    out.emplace(block.name, std::move(t));
  }
  return out;
}

ParamVector Network::flatten(const std::map<std::string, Tensor<float>>& named) const {
  ParamVector theta(param_count_);
  if (named.size() != blocks_.size()) throw CompatibilityError("named parameter set does not match network");
  for (const auto& block : blocks_) {
    const auto it = named.find(block.name);
    if (it == named.end() || it->second.shape != block.shape) {
      throw CompatibilityError("missing or misshapen parameter block '" + block.name + "'");
    }
    std::copy(it->second.data.begin(), it->second.data.end(), theta.begin() + static_cast<std::ptrdiff_t>(block.offset));
  }
  return theta;
}

}  // namespace vdc::nn
