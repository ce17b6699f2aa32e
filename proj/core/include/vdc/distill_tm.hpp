#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vdc/config.hpp"
#include "vdc/dataio.hpp"
#include "vdc/nn/forward.hpp"
#include "vdc/nn/loss.hpp"
#include "vdc/nn/trajectory.hpp"
#include "vdc/nn/unroll.hpp"
#include "vdc/temporal.hpp"

namespace vdc::tm {

struct TmConfig {
  int expert_span = 2;           // M, expert epochs spanned by one segment
  int student_steps = 10;        // N, unrolled student steps per segment
  int min_start = 0;             // t_min
  int initial_max_start = 1;     // t_max at iteration 0
  int final_max_start = -1;      // t_max once grown; -1 means n - M
  double growth_fraction = 0.5;  // share of iterations over which t_max grows
  double pixel_lr = 2.0;
  double label_lr = 2.0;
  double lr_lr = 1e-5;
  double student_lr = 0.01;      // initial learnable inner learning rate
  bool learn_lr = true;
  bool learn_labels = true;
  double momentum = 0.5;         // outer SGD momentum
  int batch_syn = 0;             // clips per student step, 0 = every synthetic video
  int iterations = 100;
  double epsilon_denom = 1e-12;
};

// Throws ConfigError unless 0 <= t_min <= t_max <= n - M with M, N >= 1.
void validate(const TmConfig& cfg, int expert_epochs);
TmConfig tm_config_from(const Config& c, const std::string& section = "datm");
std::string dump_config(const TmConfig& cfg);

// Upper end of the start window at an iteration: grows linearly from the
// initial cap to the final cap over the first growth_fraction of the run.
int curriculum_max_start(const TmConfig& cfg, int expert_epochs, int iteration);
// Uniform start epoch in [t_min, t_max(iteration)].
int curriculum_sample(const TmConfig& cfg, int expert_epochs, int iteration, Rng& rng);

template <class R>
struct TmLoss {
  R loss = R(0);
  R numerator = R(0);
  R denominator = R(0);
  std::vector<R> d_phi;
  R d_lr = R(0);
};

// Normalized parameter distance after N student steps from `start`:
//   |theta_N - target|^2 / |start - target|^2.
// Throws DegenerateSegmentError when the denominator is below epsilon.
template <class R, class O>
  requires nn::InnerObjective<O, R>
TmLoss<R> tm_loss(const O& obj, std::span<const R> start, std::span<const R> target, std::span<const R> phi, R lr,
                  int student_steps, double epsilon_denom, bool need_grad = true) {
  if (start.size() != target.size()) throw DomainError("tm_loss: start and target differ in length");
  TmLoss<R> out;
  for (std::size_t i = 0; i < start.size(); ++i) {
    const R d = start[i] - target[i];
    out.denominator += d * d;
  }
  if (!(static_cast<double>(out.denominator) >= epsilon_denom)) {
    throw DegenerateSegmentError("expert segment did not move (squared distance " +
                                 std::to_string(static_cast<double>(out.denominator)) + ")");
  }
  const auto path = nn::unrolled_steps<R>(obj, start, phi, lr, student_steps);
  std::vector<R> a(start.size());
  for (std::size_t i = 0; i < start.size(); ++i) {
    const R d = path.end()[i] - target[i];
    out.numerator += d * d;
    a[i] = R(2) * d / out.denominator;
  }
  out.loss = out.numerator / out.denominator;
  if (need_grad) {
    auto g = nn::unrolled_vjp<R>(obj, path, phi, lr, a);
    out.d_phi = std::move(g.phi);
    out.d_lr = g.lr;
  }
  return out;
}

// Clips drawn for one student step: synthetic video index and source window.
struct StepBatch {
  std::vector<int> videos;
  std::vector<temporal::Window> windows;
};

// Soft cross-entropy of the network on synthetic clips against learnable
// label logits. phi = [videos (n x T_c x C x H x W) | label logits (n x K)].
template <class R>
class VideoObjective {
 public:
  VideoObjective(const nn::Network& net, temporal::SamplingPlan plan, Shape video_shape, int num_videos,
                 std::vector<StepBatch> batches)
      : net_(&net),
        plan_(plan),
        video_shape_(std::move(video_shape)),
        num_videos_(num_videos),
        batches_(std::move(batches)) {
    video_numel_ = shape_numel(video_shape_);
    classes_ = net.spec().num_classes;
  }

  std::size_t phi_size() const {
    return static_cast<std::size_t>(num_videos_) * (video_numel_ + static_cast<std::size_t>(classes_));
  }
  std::size_t label_offset() const { return static_cast<std::size_t>(num_videos_) * video_numel_; }
  std::size_t video_numel() const { return video_numel_; }

  template <class S>
  S loss(int step, std::span<const S> theta, std::span<const S> phi, std::span<S> g_theta, std::span<S> g_phi) const {
    const StepBatch& batch = batches_.at(static_cast<std::size_t>(step));
    const std::size_t B = batch.videos.size(), K = static_cast<std::size_t>(classes_);
    std::vector<Tensor<S>> clips;
    clips.reserve(B);
    Tensor<S> targets({B, K});
    for (std::size_t j = 0; j < B; ++j) {
      const auto v = static_cast<std::size_t>(batch.videos[j]);
      Tensor<S> video(video_shape_);
      std::copy_n(phi.data() + v * video_numel_, video_numel_, video.data.begin());
      clips.push_back(temporal::extract_clip(video, plan_, batch.windows[j]));
      std::copy_n(phi.data() + label_offset() + v * K, K, targets.data.begin() + static_cast<std::ptrdiff_t>(j * K));
    }
    const Tensor<S> x = nn::stack_clips<S>(clips);
    const auto trace = nn::forward<S>(*net_, theta, {}, x, nn::NormMode::batch);
    const bool need_phi = !g_phi.empty();
    Tensor<S> gz, gt;
    const S l = nn::soft_cross_entropy(trace.logits(), targets, &gz, need_phi ? &gt : nullptr);
    const Tensor<S> gx = nn::backward<S>(*net_, theta, trace, nn::NormMode::batch, &gz, g_theta, nullptr, need_phi);
    if (need_phi) {
      for (std::size_t j = 0; j < B; ++j) {
        const auto v = static_cast<std::size_t>(batch.videos[j]);
        Tensor<S> vg(video_shape_);
        temporal::extract_clip_adjoint(nn::unstack_clip(gx, j), plan_, batch.windows[j], vg);
        S* dst = g_phi.data() + v * video_numel_;
        for (std::size_t i = 0; i < video_numel_; ++i) dst[i] += vg.data[i];
        S* lg = g_phi.data() + label_offset() + v * K;
        for (std::size_t k = 0; k < K; ++k) lg[k] += gt.data[j * K + k];
      }
    }
    return l;
  }

 private:
  const nn::Network* net_;
  temporal::SamplingPlan plan_;
  Shape video_shape_;
  std::size_t video_numel_ = 0;
  int num_videos_ = 0;
  int classes_ = 0;
  std::vector<StepBatch> batches_;
};

// Random clips for `steps` student steps over n synthetic videos.
std::vector<StepBatch> sample_step_batches(const temporal::SamplingPlan& plan, int num_videos, int batch_syn,
                                           int steps, Rng& rng);

struct DatmLog {
  std::vector<double> losses;  // per completed iteration
  std::vector<int> starts;
  int skipped_segments = 0;
  double final_student_lr = 0;
};

// Trajectory-matching distillation from a selected initialization. The first
// trajectory's final model labels the init clips; the learned label logits
// are emitted as probabilities. Throws DistillError with the iteration index
// on a non-finite loss.
data::CondensedSet run_datm(const std::vector<nn::ExpertTrajectory>& trajectories, const TmConfig& cfg,
                            const data::CondensedSet& init, std::uint64_t seed, DatmLog* log = nullptr);

// Teacher logits on each item's center clip, one row per item.
std::vector<std::vector<float>> teacher_logits(const nn::TrainedModel& teacher, const data::CondensedSet& set);

}  // namespace vdc::tm
