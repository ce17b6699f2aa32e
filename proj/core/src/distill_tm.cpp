#include "vdc/distill_tm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vdc/hash.hpp"
#include "vdc/nn/inference.hpp"
#include "vdc/nn/optim.hpp"

namespace vdc::tm {

void validate(const TmConfig& cfg, int expert_epochs) {
  if (cfg.expert_span < 1 || cfg.student_steps < 1) throw ConfigError("datm: expert_span and student_steps must be >= 1");
  if (cfg.epsilon_denom <= 0) throw ConfigError("datm: epsilon_denom must be positive");
  if (cfg.iterations < 0) throw ConfigError("datm: iterations must be >= 0");
  if (cfg.batch_syn < 0) throw ConfigError("datm: batch_syn must be >= 0");
  if (cfg.student_lr < 0) throw ConfigError("datm: student_lr must be >= 0");
  const int last = expert_epochs - cfg.expert_span;
  if (last < 0) {
    throw ConfigError("datm: trajectories have " + std::to_string(expert_epochs) + " epochs, fewer than expert_span " +
                      std::to_string(cfg.expert_span));
  }
  const int final_max = cfg.final_max_start < 0 ? last : cfg.final_max_start;
  if (cfg.min_start < 0 || cfg.min_start > cfg.initial_max_start || cfg.initial_max_start > final_max ||
      final_max > last) {
    throw ConfigError("datm: curriculum window must satisfy 0 <= min_start <= initial_max_start <= final_max_start <= " +
                      std::to_string(last));
  }
}

TmConfig tm_config_from(const Config& c, const std::string& s) {
  TmConfig cfg;
  const auto k = [&](const char* name) { return s + "." + name; };
  cfg.expert_span = c.get_int(k("expert_span"), cfg.expert_span);
  cfg.student_steps = c.get_int(k("student_steps"), cfg.student_steps);
  cfg.min_start = c.get_int(k("min_start"), cfg.min_start);
  cfg.initial_max_start = c.get_int(k("initial_max_start"), cfg.initial_max_start);
  cfg.final_max_start = c.get_int(k("final_max_start"), cfg.final_max_start);
  cfg.growth_fraction = c.get_double(k("growth_fraction"), cfg.growth_fraction);
  cfg.pixel_lr = c.get_double(k("pixel_lr"), cfg.pixel_lr);
  cfg.label_lr = c.get_double(k("label_lr"), cfg.label_lr);
  cfg.lr_lr = c.get_double(k("lr_lr"), cfg.lr_lr);
  cfg.student_lr = c.get_double(k("student_lr"), cfg.student_lr);
  cfg.learn_lr = c.get_bool(k("learn_lr"), cfg.learn_lr);
  cfg.learn_labels = c.get_bool(k("learn_labels"), cfg.learn_labels);
  cfg.momentum = c.get_double(k("momentum"), cfg.momentum);
  cfg.batch_syn = c.get_int(k("batch_syn"), cfg.batch_syn);
  cfg.iterations = c.get_int(k("iterations"), cfg.iterations);
  cfg.epsilon_denom = c.get_double(k("epsilon_denom"), cfg.epsilon_denom);
  return cfg;
}

std::string dump_config(const TmConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "[datm]\n"
     << "expert_span = " << cfg.expert_span << "\n"
     << "student_steps = " << cfg.student_steps << "\n"
     << "min_start = " << cfg.min_start << "\n"
     << "initial_max_start = " << cfg.initial_max_start << "\n"
     << "final_max_start = " << cfg.final_max_start << "\n"
     << "growth_fraction = " << cfg.growth_fraction << "\n"
     << "pixel_lr = " << cfg.pixel_lr << "\n"
     << "label_lr = " << cfg.label_lr << "\n"
     << "lr_lr = " << cfg.lr_lr << "\n"
     << "student_lr = " << cfg.student_lr << "\n"
     << "learn_lr = " << (cfg.learn_lr ? "true" : "false") << "\n"
     << "learn_labels = " << (cfg.learn_labels ? "true" : "false") << "\n"
     << "momentum = " << cfg.momentum << "\n"
     << "batch_syn = " << cfg.batch_syn << "\n"
     << "iterations = " << cfg.iterations << "\n"
     << "epsilon_denom = " << cfg.epsilon_denom << "\n";
  return os.str();
}

int curriculum_max_start(const TmConfig& cfg, int expert_epochs, int iteration) {
  const int last = expert_epochs - cfg.expert_span;
  const int final_max = cfg.final_max_start < 0 ? last : std::min(cfg.final_max_start, last);
  const int initial = std::clamp(cfg.initial_max_start, cfg.min_start, final_max);
  const double grow = cfg.growth_fraction * static_cast<double>(cfg.iterations);
  if (grow <= 0) return final_max;
  const double u = std::clamp(static_cast<double>(iteration) / grow, 0.0, 1.0);
  return initial + static_cast<int>(std::floor(u * static_cast<double>(final_max - initial)));
}

int curriculum_sample(const TmConfig& cfg, int expert_epochs, int iteration, Rng& rng) {
  return rng.uniform_int(cfg.min_start, curriculum_max_start(cfg, expert_epochs, iteration));
}

std::vector<StepBatch> sample_step_batches(const temporal::SamplingPlan& plan, int num_videos, int batch_syn,
                                           int steps, Rng& rng) {
  const int b = batch_syn <= 0 ? num_videos : std::min(batch_syn, num_videos);
  std::vector<StepBatch> out(static_cast<std::size_t>(steps));
  for (auto& batch : out) {
    if (b == num_videos) {
      for (int v = 0; v < num_videos; ++v) batch.videos.push_back(v);
    } else {
      batch.videos = rng.sample_without_replacement(num_videos, b);
    }
    for (std::size_t j = 0; j < batch.videos.size(); ++j) batch.windows.push_back(temporal::sample_window(plan, rng));
  }
  return out;
}

std::vector<std::vector<float>> teacher_logits(const nn::TrainedModel& teacher, const data::CondensedSet& set) {
  const nn::Network net = nn::Network::build(teacher.spec);
  const auto plan = temporal::make_plan(set.plan.stored_length, teacher.spec.input_length, set.plan.interpolation);
  const auto window = temporal::center_window(plan);
  std::vector<Tensor<float>> clips;
  for (const auto& item : set.data.items) clips.push_back(temporal::extract_clip(item.frames, plan, window));
  const Tensor<float> z = nn::predict_logits(net, teacher, clips);
  const std::size_t K = z.dim(1);
  std::vector<std::vector<float>> out(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) out[i].assign(z.ptr() + i * K, z.ptr() + (i + 1) * K);
  return out;
}

namespace {

std::vector<double> probabilities(std::span<const float> logits) {
  const float mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) sum += p[k] = std::exp(static_cast<double>(logits[k] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

data::CondensedSet run_datm(const std::vector<nn::ExpertTrajectory>& trajectories, const TmConfig& cfg,
                            const data::CondensedSet& init, std::uint64_t seed, DatmLog* log) {
  if (trajectories.empty()) throw ConfigError("datm: need at least one expert trajectory");
  data::validate_condensed(init);
  const nn::ModelSpec& spec = trajectories.front().spec;
  for (const auto& t : trajectories) {
    if (t.spec_hash != trajectories.front().spec_hash) throw CompatibilityError("datm: trajectories disagree on model");
    validate(cfg, t.epochs);
  }
  if (spec.num_classes != init.data.num_classes) throw CompatibilityError("datm: class count differs from the model");
  const nn::Network net = nn::Network::build(spec);
  const auto plan = temporal::make_plan(init.plan.stored_length, spec.input_length, init.plan.interpolation);

  const int n = static_cast<int>(init.data.items.size());
  const Shape video_shape = init.data.items.front().frames.shape;
  const std::size_t numel = shape_numel(video_shape);
  const std::size_t K = static_cast<std::size_t>(spec.num_classes);
  const auto teacher = trajectories.front().final_model("datm-teacher");
  const auto init_logits = teacher_logits(teacher, init);

  std::vector<float> phi(static_cast<std::size_t>(n) * (numel + K));
  const std::size_t label_off = static_cast<std::size_t>(n) * numel;
  for (int v = 0; v < n; ++v) {
    const auto& frames = init.data.items[static_cast<std::size_t>(v)].frames.data;
    std::copy(frames.begin(), frames.end(), phi.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(v) * numel));
    std::copy(init_logits[static_cast<std::size_t>(v)].begin(), init_logits[static_cast<std::size_t>(v)].end(),
              phi.begin() + static_cast<std::ptrdiff_t>(label_off + static_cast<std::size_t>(v) * K));
  }
  float lr = static_cast<float>(cfg.student_lr);

  nn::Sgd pixel_opt(cfg.pixel_lr, cfg.momentum);
  nn::Sgd label_opt(cfg.label_lr, cfg.momentum);
  nn::Sgd lr_opt(cfg.lr_lr, cfg.momentum);
  Rng rng = Rng::derive(seed, "datm");
  DatmLog local;
  DatmLog& lg = log ? *log : local;
  lg = DatmLog{};

  for (int it = 0; it < cfg.iterations; ++it) {
    const auto& traj = trajectories[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(trajectories.size()) - 1))];
    const int t = curriculum_sample(cfg, traj.epochs, it, rng);
    const auto batches = sample_step_batches(plan, n, cfg.batch_syn, cfg.student_steps, rng);
    const VideoObjective<float> obj(net, plan, video_shape, n, batches);
    TmLoss<float> res;
    try {
      res = tm_loss<float>(obj, traj.snapshots[static_cast<std::size_t>(t)],
                           traj.snapshots[static_cast<std::size_t>(t + cfg.expert_span)], phi, lr, cfg.student_steps,
                           cfg.epsilon_denom);
    } catch (const DegenerateSegmentError&) {
      ++lg.skipped_segments;
      continue;
    } catch (const UnrollError& e) {
      throw DistillError(std::string("datm: ") + e.what(), it);
    }
    if (!std::isfinite(res.loss)) throw DistillError("datm: non-finite matching loss", it);
    lg.losses.push_back(res.loss);
    lg.starts.push_back(t);

    std::span<float> pixels(phi.data(), label_off);
    pixel_opt.step<float>(pixels, std::span<const float>(res.d_phi.data(), label_off));
    if (cfg.learn_labels) {
      std::span<float> labels(phi.data() + label_off, phi.size() - label_off);
      label_opt.step<float>(labels, std::span<const float>(res.d_phi.data() + label_off, labels.size()));
    }
    if (cfg.learn_lr) {
      float g = res.d_lr;
      std::span<float> lr_span(&lr, 1);
      lr_opt.step<float>(lr_span, std::span<const float>(&g, 1));
      lr = std::max(lr, 1e-6f);
    }
  }
  lg.final_student_lr = lr;

  data::CondensedSet out = init;
  out.labeling = data::LabelingMode::soft;
  out.plan = init.plan;
  for (int v = 0; v < n; ++v) {
    auto& item = out.data.items[static_cast<std::size_t>(v)];
    std::copy_n(phi.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(v) * numel), numel,
                item.frames.data.begin());
    item.soft_label = probabilities(std::span<const float>(phi.data() + label_off + static_cast<std::size_t>(v) * K, K));
  }
  out.provenance.method = "datm";
  out.provenance.config_hash = short_hash(dump_config(cfg) + "seed=" + std::to_string(seed));
  out.provenance.networks = {describe(spec)};
  out.provenance.extra["init"] = init.provenance.method;
  out.provenance.extra["iterations"] = std::to_string(cfg.iterations);
  out.provenance.extra["trajectories"] = std::to_string(trajectories.size());
  out.provenance.extra["skipped_segments"] = std::to_string(lg.skipped_segments);
  return out;
}

}  // namespace vdc::tm
