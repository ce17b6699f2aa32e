#include "vdc/evalproto.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vdc/augment.hpp"
#include "vdc/hash.hpp"
#include "vdc/nn/forward.hpp"
#include "vdc/nn/inference.hpp"
#include "vdc/nn/loss.hpp"
#include "vdc/nn/optim.hpp"
#include "vdc/rng.hpp"

namespace vdc::eval {

std::string to_string(EvalLoss l) { return l == EvalLoss::mse_gt ? "mse_gt" : "kl"; }

EvalLoss parse_eval_loss(const std::string& s) {
  if (s == "mse_gt") return EvalLoss::mse_gt;
  if (s == "kl") return EvalLoss::kl;
  throw ConfigError("unknown evaluation loss '" + s + "' (expected mse_gt or kl)");
}

void validate(const EvalConfig& cfg) {
  if (cfg.base_batch < 1) throw ConfigError("eval: base_batch must be >= 1");
  if (cfg.epochs < 0) throw ConfigError("eval: epochs must be >= 0");
  if (cfg.lr <= 0) throw ConfigError("eval: lr must be positive");
  if (cfg.min_crop_area <= 0 || cfg.min_crop_area > 1) throw ConfigError("eval: min_crop_area must be in (0, 1]");
  if (cfg.seeds.empty()) throw ConfigError("eval: need at least one seed");
  if (cfg.gt_weight < 0) throw ConfigError("eval: gt_weight must be >= 0");
}

EvalConfig eval_config_from(const Config& c, const std::string& s) {
  EvalConfig cfg;
  cfg.labeling = data::parse_labeling_mode(c.get(s + ".labeling", data::to_string(cfg.labeling)));
  cfg.loss = parse_eval_loss(c.get(s + ".loss", to_string(cfg.loss)));
  cfg.cutmix = c.get_bool(s + ".cutmix", cfg.cutmix);
  cfg.base_batch = c.get_int(s + ".base_batch", cfg.base_batch);
  cfg.epochs = c.get_int(s + ".epochs", cfg.epochs);
  cfg.lr = c.get_double(s + ".lr", cfg.lr);
  cfg.weight_decay = c.get_double(s + ".weight_decay", cfg.weight_decay);
  cfg.resized_crop = c.get_bool(s + ".resized_crop", cfg.resized_crop);
  cfg.min_crop_area = c.get_double(s + ".min_crop_area", cfg.min_crop_area);
  cfg.horizontal_flip = c.get_bool(s + ".horizontal_flip", cfg.horizontal_flip);
  cfg.gt_weight = c.get_double(s + ".gt_weight", cfg.gt_weight);
  if (c.has(s + ".seeds")) {
    cfg.seeds.clear();
    for (int v : c.get_int_list(s + ".seeds", {})) cfg.seeds.push_back(static_cast<std::uint64_t>(v));
  }
  return cfg;
}

std::string fingerprint(const EvalConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "labeling=" << data::to_string(cfg.labeling) << ";loss=" << to_string(cfg.loss) << ";cutmix=" << cfg.cutmix
     << ";base=" << cfg.base_batch << ";epochs=" << cfg.epochs << ";lr=" << cfg.lr << ";betas=" << cfg.beta1 << ","
     << cfg.beta2 << ";wd=" << cfg.weight_decay << ";crop=" << cfg.resized_crop << "/" << cfg.min_crop_area
     << ";flip=" << cfg.horizontal_flip << ";gt=" << cfg.gt_weight;
  return os.str();
}

int batch_size(const EvalConfig& cfg, int ipc) {
  if (ipc < 1) throw ConfigError("eval: ipc must be >= 1");
  return cfg.base_batch * ipc;
}

int iterations_per_epoch(int items, int batch) { return (items + batch - 1) / batch; }

double eval_loss(EvalLoss mode, data::LabelingMode labeling, const Tensor<float>& logits,
                 const Tensor<float>& target_logits, std::span<const int> hard, double gt_weight,
                 Tensor<float>* grad) {
  if (logits.shape != target_logits.shape || logits.dim(0) != hard.size()) {
    throw DomainError("eval_loss: logits " + shape_string(logits.shape) + ", targets " +
                      shape_string(target_logits.shape) + " and labels disagree");
  }
  if (labeling == data::LabelingMode::hard) return nn::cross_entropy(logits, hard, grad);
  if (mode == EvalLoss::mse_gt) return nn::mse_gt_loss(logits, target_logits, hard, gt_weight, grad);
  return nn::kl_loss(logits, nn::softmax(target_logits), grad);
}

// ---------------------------------------------------------------------------

LabelProvider::LabelProvider(data::LabelingMode mode, const data::CondensedSet& set, const nn::TrainedModel* teacher)
    : mode_(mode), classes_(set.data.num_classes), teacher_(teacher) {
  for (const auto& item : set.data.items) hard_.push_back(item.hard_label);
  if (mode == data::LabelingMode::hard) return;
  const bool stored = std::all_of(set.data.items.begin(), set.data.items.end(),
                                  [](const data::VideoItem& it) { return it.soft_label.has_value(); });
  if (mode == data::LabelingMode::soft && stored) {
    for (const auto& item : set.data.items) {
      std::vector<float> row;
      double mean = 0;
      for (double p : *item.soft_label) mean += std::log(std::max(p, 1e-12));
      mean /= static_cast<double>(item.soft_label->size());
      for (double p : *item.soft_label) row.push_back(static_cast<float>(std::log(std::max(p, 1e-12)) - mean));
      table_.push_back(std::move(row));
    }
    return;
  }
  if (!teacher) throw ConfigError("labeling '" + data::to_string(mode) + "' requires a teacher");
  if (teacher->spec.num_classes != classes_) throw CompatibilityError("teacher class count differs from the set");
  teacher_net_.emplace(nn::Network::build(teacher->spec));
  if (mode == data::LabelingMode::soft) {
    const auto plan = temporal::make_plan(set.plan.stored_length, teacher->spec.input_length, set.plan.interpolation);
    std::vector<Tensor<float>> clips;
    for (const auto& item : set.data.items) {
      clips.push_back(temporal::extract_clip(item.frames, plan, temporal::center_window(plan)));
    }
    const Tensor<float> z = nn::predict_logits(*teacher_net_, *teacher, clips);
    const std::size_t K = z.dim(1);
    for (std::size_t i = 0; i < clips.size(); ++i) table_.emplace_back(z.ptr() + i * K, z.ptr() + (i + 1) * K);
  }
}

Tensor<float> LabelProvider::targets(std::span<const int> items, const std::vector<Tensor<float>>& views) const {
  const std::size_t B = items.size(), K = static_cast<std::size_t>(classes_);
  Tensor<float> out({B, K});
  if (mode_ == data::LabelingMode::hard) {
    for (std::size_t b = 0; b < B; ++b) out.data[b * K + static_cast<std::size_t>(hard_.at(items[b]))] = 1.0f;
  } else if (mode_ == data::LabelingMode::soft) {
    for (std::size_t b = 0; b < B; ++b) {
      const auto& row = table_.at(static_cast<std::size_t>(items[b]));
      std::copy(row.begin(), row.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * K));
    }
  } else {
    const int L = teacher_->spec.input_length;
    std::vector<Tensor<float>> adj;
    const std::vector<Tensor<float>>* src = &views;
    if (!views.empty() && static_cast<int>(views.front().dim(0)) != L) {
      for (const auto& v : views) adj.push_back(temporal::interpolate(v, L, temporal::Interpolation::linear));
      src = &adj;
    }
    out = nn::predict_logits(*teacher_net_, *teacher_, *src, std::max<std::size_t>(1, B));
  }
  return out;
}

std::vector<float> LabelProvider::label(int item, const Tensor<float>& view) const {
  const int items[1] = {item};
  const Tensor<float> t = targets(items, {view});
  return t.data;
}

std::uint32_t LabelProvider::table_checksum() const {
  if (mode_ != data::LabelingMode::soft) return 0;
  std::vector<float> flat;
  for (const auto& r : table_) flat.insert(flat.end(), r.begin(), r.end());
  return crc32_bytes(std::as_bytes(std::span<const float>(flat)));
}

// ---------------------------------------------------------------------------

namespace {

struct ValSet {
  std::vector<Tensor<float>> clips;
  std::vector<int> labels;
};

ValSet val_clips(const data::Dataset& val, int L) {
  ValSet v;
  for (const auto& item : val.items) {
    const auto video = temporal::extend_by_duplication(item.frames, L);
    const auto plan = temporal::make_plan(static_cast<int>(video.dim(0)), L);
    v.clips.push_back(temporal::extract_clip(video, plan, temporal::center_window(plan)));
    v.labels.push_back(item.hard_label);
  }
  return v;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

EvalReport evaluate(const data::CondensedSet& condensed, const nn::ModelSpec& spec, const EvalConfig& cfg,
                    const data::Dataset& val, const nn::TrainedModel* teacher) {
  validate(cfg);
  data::validate_condensed(condensed);
  if (val.num_classes != condensed.data.num_classes || spec.num_classes != condensed.data.num_classes) {
    throw CompatibilityError("eval: class counts of model, condensed set and val set differ");
  }
  if (val.items.empty()) throw DomainError("eval: empty val set");
  const auto t0 = std::chrono::steady_clock::now();
  const nn::Network net = nn::Network::build(spec);
  const LabelProvider labels(cfg.labeling, condensed, teacher);
  const auto plan = temporal::make_plan(condensed.plan.stored_length, spec.input_length, condensed.plan.interpolation);
  const ValSet vs = val_clips(val, spec.input_length);

  const int n = static_cast<int>(condensed.data.items.size());
  const int bs = batch_size(cfg, condensed.ipc);
  const int per_epoch = iterations_per_epoch(n, bs);
  const long total = static_cast<long>(per_epoch) * cfg.epochs;
  const int K = spec.num_classes;

  EvalReport rep;
  rep.arch = nn::describe(spec);
  rep.config_fingerprint = fingerprint(cfg);
  rep.provenance = condensed.provenance;
  rep.seeds = cfg.seeds;
  rep.metric = K >= 10 ? "top5" : "top1";
  rep.batch_size = bs;
  rep.iterations = static_cast<int>(total);

  for (std::uint64_t seed : cfg.seeds) {
    nn::ParamVector theta = net.init_params(mix_seed(seed, "eval-init"));
    std::vector<float> buffers = net.init_buffers();
    nn::AdamW opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay);
    Rng rng = Rng::derive(seed, "eval");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    std::vector<float> grad(theta.size());
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      rep.label_checksums.push_back(labels.table_checksum());
      for (int it = 0; it < per_epoch; ++it, ++step) {
        std::vector<int> items;
        std::vector<Tensor<float>> views;
        for (int b = 0; b < bs; ++b) {
          if (cursor == order.size()) {
            rng.shuffle(order);
            cursor = 0;
          }
          const int idx = order[cursor++];
          const auto& item = condensed.data.items[static_cast<std::size_t>(idx)];
          Tensor<float> clip = temporal::extract_clip(item.frames, plan, temporal::sample_window(plan, rng));
          if (cfg.resized_crop) {
            clip = aug::resized_crop(
                clip, aug::random_crop_box(static_cast<int>(clip.dim(2)), static_cast<int>(clip.dim(3)),
                                           cfg.min_crop_area, rng));
          }
          if (cfg.horizontal_flip && rng.bernoulli(0.5)) clip = aug::horizontal_flip(clip);
          items.push_back(idx);
          views.push_back(std::move(clip));
        }
        std::vector<int> hard;
        for (int idx : items) hard.push_back(condensed.data.items[static_cast<std::size_t>(idx)].hard_label);

        double lam = 1.0;
        std::vector<int> partner;
        if (cfg.cutmix && bs > 1) {
          partner.resize(static_cast<std::size_t>(bs));
          std::iota(partner.begin(), partner.end(), 0);
          rng.shuffle(partner);
          const auto& s = views.front().shape;
          const auto box = aug::random_mix_box(static_cast<int>(s[0]), static_cast<int>(s[2]),
                                               static_cast<int>(s[3]), rng);
          const auto donors = views;
          for (int b = 0; b < bs; ++b) aug::paste_box(views[static_cast<std::size_t>(b)], donors[static_cast<std::size_t>(partner[static_cast<std::size_t>(b)])], box);
          lam = 1.0 - box.volume_fraction(static_cast<int>(s[0]), static_cast<int>(s[2]), static_cast<int>(s[3]));
        }
        // Multi soft labels are taken on the exact (mixed) views fed to the student.
        const Tensor<float> targets = labels.targets(items, views);

        const auto trace = nn::forward<float>(net, theta, buffers, nn::stack_clips<float>(views), nn::NormMode::batch);
        Tensor<float> gz;
        double loss = 0;
        if (partner.empty() || labels.mode() == data::LabelingMode::multi_sl) {
          loss = eval_loss(cfg.loss, cfg.labeling, trace.logits(), targets, hard, cfg.gt_weight, &gz);
        } else {
          Tensor<float> t2(targets.shape), g2;
          std::vector<int> hard2(hard.size());
          for (int b = 0; b < bs; ++b) {
            const auto p = static_cast<std::size_t>(partner[static_cast<std::size_t>(b)]);
            std::copy_n(targets.ptr() + p * static_cast<std::size_t>(K), K, t2.ptr() + static_cast<std::size_t>(b) * K);
            hard2[static_cast<std::size_t>(b)] = hard[p];
          }
          loss = lam * eval_loss(cfg.loss, cfg.labeling, trace.logits(), targets, hard, cfg.gt_weight, &gz) +
                 (1 - lam) * eval_loss(cfg.loss, cfg.labeling, trace.logits(), t2, hard2, cfg.gt_weight, &g2);
          for (std::size_t i = 0; i < gz.size(); ++i) {
            gz.data[i] = static_cast<float>(lam * gz.data[i] + (1 - lam) * g2.data[i]);
          }
        }
        if (!std::isfinite(loss)) throw EvalError("non-finite evaluation training loss", seed, epoch);
        std::fill(grad.begin(), grad.end(), 0.0f);
        nn::backward<float>(net, theta, trace, nn::NormMode::batch, &gz, grad, nullptr, false);
        opt.set_lr(nn::cosine_lr(cfg.lr, step, total));
        opt.step<float>(theta, grad);
        nn::update_running_stats(net, trace, buffers);
      }
    }

    const nn::TrainedModel model{"eval", spec, theta, buffers};
    const Tensor<float> z = nn::predict_logits(net, model, vs.clips);
    rep.top1.push_back(nn::topk_accuracy(z, vs.labels, 1));
    if (K >= 10) rep.top5.push_back(nn::topk_accuracy(z, vs.labels, 5));
  }
  const auto& metric = K >= 10 ? rep.top5 : rep.top1;
  rep.mean = mean_of(metric);
  rep.stddev = std_of(metric);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::vector<EvalReport> cross_arch_evaluate(const data::CondensedSet& condensed, const std::vector<nn::ModelSpec>& specs,
                                            const EvalConfig& cfg, const data::Dataset& val,
                                            const nn::TrainedModel* teacher) {
  std::vector<EvalReport> out;
  for (const auto& spec : specs) out.push_back(evaluate(condensed, spec, cfg, val, teacher));
  return out;
}

data::CondensedSet full_dataset_set(const data::Dataset& dataset, int input_length) {
  const auto counts = dataset.class_counts();
  if (counts.empty() || std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) != counts.end()) {
    throw DomainError("full_dataset_set: classes must be balanced");
  }
  data::CondensedSet set;
  set.data = dataset;
  set.ipc = counts.front();
  set.labeling = data::LabelingMode::hard;
  const int T = dataset.items.front().num_frames();
  set.plan = temporal::make_plan(T, input_length);
  set.provenance.method = "full";
  set.provenance.config_hash = short_hash("full;" + data::dataset_hash(dataset));
  return set;
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["arch"] = r.arch;
  j["config"] = r.config_fingerprint;
  j["method"] = r.provenance.method;
  j["condensed_config_hash"] = r.provenance.config_hash;
  j["networks"] = r.provenance.networks;
  j["seeds"] = r.seeds;
  j["top1"] = r.top1;
  if (!r.top5.empty()) j["top5"] = r.top5;
  j["metric"] = r.metric;
  j["mean"] = r.mean;
  j["std"] = r.stddev;
  j["batch_size"] = r.batch_size;
  j["iterations"] = r.iterations;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(2);
}

}  // namespace vdc::eval
