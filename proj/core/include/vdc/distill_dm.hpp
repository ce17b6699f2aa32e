#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vdc/config.hpp"
#include "vdc/dataio.hpp"
#include "vdc/nn/forward.hpp"
#include "vdc/nn/loss.hpp"
#include "vdc/nn/model.hpp"

namespace vdc::dm {

// Exact streaming per-channel mean / variance (pairwise merge of
// count, mean and sum of squared deviations).
class ChannelMoments {
 public:
  explicit ChannelMoments(std::size_t channels = 0) : mean_(channels, 0.0), m2_(channels, 0.0) {}

  // Activations [B, C, ...] or [B, C]; statistics pool batch and positions.
  void add(const Tensor<float>& act, std::span<const int> rows = {});
  void merge(double count, std::span<const double> mean, std::span<const double> m2);

  double count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }
  std::vector<double> variance() const;  // population variance

 private:
  double count_ = 0;
  std::vector<double> mean_, m2_;
};

struct StatTarget {
  int network = 0;  // index into the network list
  std::string network_id;
  int layer = 0;
  std::vector<double> mean, var;
  std::vector<std::vector<double>> class_mean, class_var;  // empty unless per_class
  // Mean over clips of the per-clip variance; may be empty.
  std::vector<double> within_var;
  std::vector<std::vector<double>> class_within_var;
};

// Expected population variance of a batch of n clips drawn from a source
// with the given total and mean within-clip variance:
//   within + (n - 1) / n * (total - within).
// Returns total unchanged when within is empty.
std::vector<double> batch_variance_target(std::span<const double> total, std::span<const double> within, std::size_t n);
using StatTargets = std::vector<StatTarget>;

struct CollectOptions {
  bool per_class = true;
  int clips_per_video = 4;  // random input-length windows per real video
  std::uint64_t seed = 0;
  std::vector<int> layers;  // empty: every statistics layer of each network
};

// Streams real clips through each network in eval mode and accumulates
// channel statistics of every matched layer. Throws StatsError when
// per_class is requested and a class has no videos.
StatTargets collect_stat_targets(const data::Dataset& dataset, const std::vector<nn::TrainedModel>& models,
                                 const CollectOptions& opt);

// As collect_stat_targets, memoized on disk under cache_dir keyed by the
// dataset hash, model fingerprints and options.
StatTargets cached_stat_targets(const data::Dataset& dataset, const std::vector<nn::TrainedModel>& models,
                                const CollectOptions& opt, const std::filesystem::path& cache_dir);

void save_stat_targets(const StatTargets& targets, const std::filesystem::path& path);
StatTargets load_stat_targets(const std::filesystem::path& path);

struct DmConfig {
  bool category_wise = true;
  double stat_weight = 1.0;
  double cls_weight = 1.0;
  int iterations = 200;
  double pixel_lr = 0.001;  // Adam on pixels
  int clips_per_video = 4;
  std::vector<int> layers;
  // Match each group against the variance expected for its batch size
  // instead of the pooled variance of all real clips.
  bool var_correction = false;
};

void validate(const DmConfig& cfg);
DmConfig dm_config_from(const Config& c, const std::string& section = "edc");
std::string dump_config(const DmConfig& cfg);

template <class R>
struct DmNet {
  const nn::Network* net = nullptr;
  std::vector<R> theta;
  std::vector<float> buffers;
};

template <class R>
struct DmLoss {
  R loss = R(0);
  R stat = R(0);  // weighted statistic term
  R cls = R(0);   // weighted classification term
  std::vector<Tensor<R>> d_clips;
};

namespace detail {

// Adds weight * (|mu - mu_t| + |var - var_t|) over the given rows of act to
// the loss, and its gradient into tap.
template <class R>
R stat_term(const Tensor<R>& act, std::span<const int> rows, std::span<const double> mean_t,
            std::span<const double> var_t, double weight, Tensor<R>* tap) {
  const std::size_t C = act.dim(1);
  if (mean_t.size() != C || var_t.size() != C) {
    throw CompatibilityError("statistic target has " + std::to_string(mean_t.size()) + " channels, activation has " +
                             std::to_string(C));
  }
  const std::size_t P = act.size() / (act.dim(0) * C);
  const auto n = static_cast<real_of_t<R>>(static_cast<double>(rows.size() * P));
  std::vector<R> mu(C, R(0)), var(C, R(0));
  for (int b : rows) {
    for (std::size_t c = 0; c < C; ++c) {
      const R* p = act.ptr() + (static_cast<std::size_t>(b) * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) mu[c] += p[i];
    }
  }
  for (auto& m : mu) m = m / n;
  for (int b : rows) {
    for (std::size_t c = 0; c < C; ++c) {
      const R* p = act.ptr() + (static_cast<std::size_t>(b) * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const R d = p[i] - mu[c];
        var[c] += d * d;
      }
    }
  }
  for (auto& v : var) v = v / n;
  R nm(0), nv(0);
  std::vector<R> dm(C), dv(C);
  for (std::size_t c = 0; c < C; ++c) {
    dm[c] = mu[c] - static_cast<real_of_t<R>>(mean_t[c]);
    dv[c] = var[c] - static_cast<real_of_t<R>>(var_t[c]);
    nm += dm[c] * dm[c];
    nv += dv[c] * dv[c];
  }
  nm = ssqrt(nm);
  nv = ssqrt(nv);
  const auto w = static_cast<real_of_t<R>>(weight);
  if (tap) {
    // The norm is not differentiable at zero; its subgradient 0 is used there.
    const bool zm = value_of(nm) == 0, zv = value_of(nv) == 0;
    for (int b : rows) {
      for (std::size_t c = 0; c < C; ++c) {
        const R gm = zm ? R(0) : w * dm[c] / (nm * n);
        const R gv = zv ? R(0) : w * dv[c] * real_of_t<R>(2) / (nv * n);
        const std::size_t base = (static_cast<std::size_t>(b) * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) tap->data[base + i] += gm + gv * (act.data[base + i] - mu[c]);
      }
    }
  }
  return w * (nm + nv);
}

}  // namespace detail

// Statistic matching plus teacher classification loss on synthetic clips
// [L, C, H, W] with their hard labels. Networks run in eval mode; the loss is
// a plain sum over networks.
template <class R>
DmLoss<R> dm_loss(const std::vector<DmNet<R>>& nets, const StatTargets& targets, const std::vector<Tensor<R>>& clips,
                  std::span<const int> labels, const DmConfig& cfg, bool need_grad = true) {
  if (clips.size() != labels.size() || clips.empty()) throw DomainError("dm_loss: need one label per clip");
  DmLoss<R> out;
  if (need_grad) {
    for (const auto& c : clips) out.d_clips.emplace_back(c.shape);
  }
  const Tensor<R> x = nn::stack_clips<R>(clips);

  // Groups of batch rows matched together.
  std::vector<std::vector<int>> groups;
  std::vector<int> group_class;
  if (cfg.category_wise) {
    std::vector<int> seen;
    for (int l : labels) {
      if (std::find(seen.begin(), seen.end(), l) == seen.end()) seen.push_back(l);
    }
    std::sort(seen.begin(), seen.end());
    for (int c : seen) {
      std::vector<int> rows;
      for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] == c) rows.push_back(static_cast<int>(b));
      }
      groups.push_back(std::move(rows));
      group_class.push_back(c);
    }
  } else {
    std::vector<int> rows(labels.size());
    for (std::size_t b = 0; b < rows.size(); ++b) rows[b] = static_cast<int>(b);
    groups.push_back(std::move(rows));
    group_class.push_back(-1);
  }
  const double group_weight = cfg.stat_weight / static_cast<double>(groups.size());

  for (std::size_t ni = 0; ni < nets.size(); ++ni) {
    const DmNet<R>& dn = nets[ni];
    const auto trace = nn::forward<R>(*dn.net, dn.theta, dn.buffers, x, nn::NormMode::running);
    nn::TapGrads<R> taps(dn.net->layers().size());
    for (const StatTarget& t : targets) {
      if (t.network != static_cast<int>(ni)) continue;
      const Tensor<R>& act = trace.output(t.layer);
      Tensor<R>* tap = nullptr;
      if (need_grad) {
        auto& slot = taps[static_cast<std::size_t>(t.layer)];
        if (slot.data.empty()) slot = Tensor<R>(act.shape);
        tap = &slot;
      }
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const int c = group_class[g];
        if (c >= 0 && t.class_mean.empty()) throw StatsError("category-wise matching needs per-class targets");
        std::span<const double> mt = c < 0 ? std::span<const double>(t.mean) : std::span<const double>(t.class_mean.at(c));
        std::span<const double> vt = c < 0 ? std::span<const double>(t.var) : std::span<const double>(t.class_var.at(c));
        std::vector<double> corrected;
        if (cfg.var_correction) {
          const auto& wv = c < 0 ? t.within_var : (t.class_within_var.empty() ? t.within_var : t.class_within_var.at(c));
          if (!wv.empty()) {
            corrected = batch_variance_target(vt, wv, groups[g].size());
            vt = corrected;
          }
        }
        out.stat += detail::stat_term<R>(act, groups[g], mt, vt, group_weight, tap);
      }
    }
    Tensor<R> gz;
    const R ce = nn::cross_entropy(trace.logits(), labels, need_grad ? &gz : nullptr);
    const auto cw = static_cast<real_of_t<R>>(cfg.cls_weight);
    out.cls += cw * ce;
    if (need_grad) {
      for (auto& v : gz.data) v = v * cw;
      std::vector<R> gtheta(dn.theta.size());
      const Tensor<R> gx =
          nn::backward<R>(*dn.net, dn.theta, trace, nn::NormMode::running, &gz, gtheta, &taps, true);
      for (std::size_t b = 0; b < clips.size(); ++b) {
        const Tensor<R> g = nn::unstack_clip(gx, b);
        for (std::size_t i = 0; i < g.size(); ++i) out.d_clips[b].data[i] += g.data[i];
      }
    }
  }
  out.loss = out.stat + out.cls;
  return out;
}

struct EdcLog {
  std::vector<double> losses, stat_terms, cls_terms;
};

// Statistical-matching distillation from a selected initialization. Labels of
// the result are the first network's softmax on each final center clip.
data::CondensedSet run_edc(const std::vector<nn::TrainedModel>& models, const StatTargets& targets,
                           const DmConfig& cfg, const data::CondensedSet& init, std::uint64_t seed,
                           EdcLog* log = nullptr);

}  // namespace vdc::dm
