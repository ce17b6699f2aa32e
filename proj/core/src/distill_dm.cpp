#include "vdc/distill_dm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vdc/distill_tm.hpp"
#include "vdc/hash.hpp"
#include "vdc/nn/optim.hpp"
#include "vdc/nn/trajectory.hpp"
#include "vdc/rng.hpp"

namespace vdc::dm {

using nlohmann::json;

void ChannelMoments::add(const Tensor<float>& act, std::span<const int> rows) {
  const std::size_t B = act.dim(0), C = act.dim(1), P = act.size() / (B * C);
  if (C != mean_.size()) throw CompatibilityError("ChannelMoments: channel count mismatch");
  std::vector<int> all;
  if (rows.empty()) {
    all.resize(B);
    for (std::size_t b = 0; b < B; ++b) all[b] = static_cast<int>(b);
    rows = all;
  }
  // Two-pass moments of this batch, then a pairwise merge into the totals.
  const double n = static_cast<double>(rows.size() * P);
  std::vector<double> mean(C, 0.0), m2(C, 0.0);
  for (int b : rows) {
    for (std::size_t c = 0; c < C; ++c) {
      const float* p = act.ptr() + (static_cast<std::size_t>(b) * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) mean[c] += p[i];
    }
  }
  for (auto& m : mean) m /= n;
  for (int b : rows) {
    for (std::size_t c = 0; c < C; ++c) {
      const float* p = act.ptr() + (static_cast<std::size_t>(b) * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const double d = p[i] - mean[c];
        m2[c] += d * d;
      }
    }
  }
  merge(n, mean, m2);
}

void ChannelMoments::merge(double count, std::span<const double> mean, std::span<const double> m2) {
  if (count <= 0) return;
  const double total = count_ + count;
  for (std::size_t c = 0; c < mean_.size(); ++c) {
    const double delta = mean[c] - mean_[c];
    mean_[c] += delta * count / total;
    m2_[c] += m2[c] + delta * delta * count_ * count / total;
  }
  count_ = total;
}

std::vector<double> ChannelMoments::variance() const {
  std::vector<double> v(m2_.size(), 0.0);
  if (count_ <= 0) return v;
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = std::max(0.0, m2_[c] / count_);
  return v;
}

std::vector<double> batch_variance_target(std::span<const double> total, std::span<const double> within, std::size_t n) {
  if (within.empty()) return {total.begin(), total.end()};
  if (within.size() != total.size()) throw CompatibilityError("within-clip variance has the wrong channel count");
  if (n == 0) throw DomainError("batch_variance_target: empty batch");
  const double keep = static_cast<double>(n - 1) / static_cast<double>(n);
  std::vector<double> out(total.size());
  for (std::size_t c = 0; c < total.size(); ++c) out[c] = within[c] + keep * (total[c] - within[c]);
  return out;
}

namespace {

// Running sum of per-clip channel variances.
struct WithinSum {
  std::vector<double> sum;
  double clips = 0;

  void add(const Tensor<float>& act, std::span<const int> rows) {
    const std::size_t B = act.dim(0), C = act.dim(1), P = act.size() / (B * C);
    if (sum.empty()) sum.assign(C, 0.0);
    for (int b : rows) {
      for (std::size_t c = 0; c < C; ++c) {
        const float* x = act.ptr() + (static_cast<std::size_t>(b) * C + c) * P;
        double m = 0;
        for (std::size_t p = 0; p < P; ++p) m += x[p];
        m /= static_cast<double>(P);
        double v = 0;
        for (std::size_t p = 0; p < P; ++p) v += (x[p] - m) * (x[p] - m);
        sum[c] += v / static_cast<double>(P);
      }
      clips += 1;
    }
  }
  std::vector<double> mean() const {
    std::vector<double> out(sum);
    for (auto& v : out) v /= clips;
    return out;
  }
};

std::vector<int> all_rows(std::size_t n) {
  std::vector<int> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace

StatTargets collect_stat_targets(const data::Dataset& dataset, const std::vector<nn::TrainedModel>& models,
                                 const CollectOptions& opt) {
  if (models.empty()) throw StatsError("no networks to collect statistics from");
  if (dataset.items.empty()) throw StatsError("empty dataset");
  if (opt.clips_per_video < 1) throw StatsError("clips_per_video must be >= 1");
  const int K = dataset.num_classes;
  if (opt.per_class) {
    const auto counts = dataset.class_counts();
    for (int c = 0; c < K; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) throw StatsError("class " + std::to_string(c) + " has no videos");
    }
  }
  StatTargets out;
  for (std::size_t ni = 0; ni < models.size(); ++ni) {
    const auto& model = models[ni];
    const nn::Network net = nn::Network::build(model.spec);
    const std::vector<int> layers = opt.layers.empty() ? net.stat_layers() : opt.layers;
    if (layers.empty()) throw StatsError("no matched layers");
    const int L = model.spec.input_length;
    std::vector<ChannelMoments> global;
    std::vector<std::vector<ChannelMoments>> per_class;
    std::vector<WithinSum> global_within;
    std::vector<std::vector<WithinSum>> class_within;
    for (int layer : layers) {
      if (layer < 0 || layer >= static_cast<int>(net.layers().size())) throw StatsError("matched layer out of range");
      const std::size_t C = net.output_shape(layer).at(0);
      global.emplace_back(C);
      per_class.emplace_back(static_cast<std::size_t>(K), ChannelMoments(C));
      global_within.emplace_back();
      class_within.emplace_back(static_cast<std::size_t>(K));
    }

    // Fixed-size chunks of clips; windows come from per-item streams so the
    // result does not depend on dataset order beyond float summation.
    constexpr std::size_t kChunk = 32;
    std::vector<Tensor<float>> clips;
    std::vector<int> labels;
    const auto flush = [&] {
      if (clips.empty()) return;
      const auto trace = nn::forward<float>(net, model.params, model.buffers, nn::stack_clips<float>(clips),
                                            nn::NormMode::running);
      for (std::size_t li = 0; li < layers.size(); ++li) {
        const Tensor<float>& act = trace.output(layers[li]);
        global[li].add(act);
        global_within[li].add(act, all_rows(labels.size()));
        if (opt.per_class) {
          for (int c = 0; c < K; ++c) {
            std::vector<int> rows;
            for (std::size_t b = 0; b < labels.size(); ++b) {
              if (labels[b] == c) rows.push_back(static_cast<int>(b));
            }
            if (!rows.empty()) {
              per_class[li][static_cast<std::size_t>(c)].add(act, rows);
              class_within[li][static_cast<std::size_t>(c)].add(act, rows);
            }
          }
        }
      }
      clips.clear();
      labels.clear();
    };
    for (const auto& item : dataset.items) {
      Rng rng = Rng::derive(opt.seed, "dm-collect:" + item.id);
      const auto video = temporal::extend_by_duplication(item.frames, L);
      const auto plan = temporal::make_plan(static_cast<int>(video.dim(0)), L);
      for (int k = 0; k < opt.clips_per_video; ++k) {
        clips.push_back(temporal::extract_clip(video, plan, temporal::sample_window(plan, rng)));
        labels.push_back(item.hard_label);
        if (clips.size() == kChunk) flush();
      }
    }
    flush();

    for (std::size_t li = 0; li < layers.size(); ++li) {
      StatTarget t;
      t.network = static_cast<int>(ni);
      t.network_id = model.id;
      t.layer = layers[li];
      t.mean = global[li].mean();
      t.var = global[li].variance();
      t.within_var = global_within[li].mean();
      if (opt.per_class) {
        for (int c = 0; c < K; ++c) {
          t.class_mean.push_back(per_class[li][static_cast<std::size_t>(c)].mean());
          t.class_var.push_back(per_class[li][static_cast<std::size_t>(c)].variance());
          t.class_within_var.push_back(class_within[li][static_cast<std::size_t>(c)].mean());
        }
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

void save_stat_targets(const StatTargets& targets, const std::filesystem::path& path) {
  json j = json::array();
  for (const auto& t : targets) {
    j.push_back({{"network", t.network},
                 {"network_id", t.network_id},
                 {"layer", t.layer},
                 {"mean", t.mean},
                 {"var", t.var},
                 {"class_mean", t.class_mean},
                 {"class_var", t.class_var},
                 {"within_var", t.within_var},
                 {"class_within_var", t.class_within_var}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw CacheError("cannot write statistics '" + path.string() + "'");
  f << j.dump();
}

StatTargets load_stat_targets(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw CacheError("cannot read statistics '" + path.string() + "'");
  StatTargets out;
  try {
    const json j = json::parse(f);
    for (const auto& e : j) {
      StatTarget t;
      t.network = e.at("network").get<int>();
      t.network_id = e.at("network_id").get<std::string>();
      t.layer = e.at("layer").get<int>();
      t.mean = e.at("mean").get<std::vector<double>>();
      t.var = e.at("var").get<std::vector<double>>();
      t.class_mean = e.at("class_mean").get<std::vector<std::vector<double>>>();
      t.class_var = e.at("class_var").get<std::vector<std::vector<double>>>();
      t.within_var = e.value("within_var", std::vector<double>{});
      t.class_within_var = e.value("class_within_var", std::vector<std::vector<double>>{});
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw CacheError("corrupt statistics cache '" + path.string() + "' (" + e.what() + "); delete it to recompute");
  }
  return out;
}

StatTargets cached_stat_targets(const data::Dataset& dataset, const std::vector<nn::TrainedModel>& models,
                                const CollectOptions& opt, const std::filesystem::path& cache_dir) {
  std::ostringstream key;
  key << "stats2;dataset=" << data::dataset_hash(dataset) << ";per_class=" << opt.per_class
      << ";clips=" << opt.clips_per_video << ";seed=" << opt.seed << ";layers=";
  for (int l : opt.layers) key << l << ",";
  for (const auto& m : models) key << ";model=" << nn::model_fingerprint(m);
  const auto path = cache_dir / "stats" / (short_hash(key.str()) + ".json");
  if (std::filesystem::exists(path)) return load_stat_targets(path);
  StatTargets t = collect_stat_targets(dataset, models, opt);
  save_stat_targets(t, path);
  return t;
}

void validate(const DmConfig& cfg) {
  if (cfg.stat_weight < 0 || cfg.cls_weight < 0) throw ConfigError("edc: loss weights must be >= 0");
  if (cfg.iterations < 0) throw ConfigError("edc: iterations must be >= 0");
  if (cfg.clips_per_video < 1) throw ConfigError("edc: clips_per_video must be >= 1");
  if (cfg.pixel_lr < 0) throw ConfigError("edc: pixel_lr must be >= 0");
}

DmConfig dm_config_from(const Config& c, const std::string& s) {
  DmConfig cfg;
  cfg.category_wise = c.get_bool(s + ".category_wise", cfg.category_wise);
  cfg.stat_weight = c.get_double(s + ".stat_weight", cfg.stat_weight);
  cfg.cls_weight = c.get_double(s + ".cls_weight", cfg.cls_weight);
  cfg.iterations = c.get_int(s + ".iterations", cfg.iterations);
  cfg.pixel_lr = c.get_double(s + ".pixel_lr", cfg.pixel_lr);
  cfg.clips_per_video = c.get_int(s + ".clips_per_video", cfg.clips_per_video);
  cfg.layers = c.get_int_list(s + ".layers", cfg.layers);
  cfg.var_correction = c.get_bool(s + ".var_correction", cfg.var_correction);
  return cfg;
}

std::string dump_config(const DmConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "[edc]\n"
     << "category_wise = " << (cfg.category_wise ? "true" : "false") << "\n"
     << "stat_weight = " << cfg.stat_weight << "\n"
     << "cls_weight = " << cfg.cls_weight << "\n"
     << "iterations = " << cfg.iterations << "\n"
     << "pixel_lr = " << cfg.pixel_lr << "\n"
     << "clips_per_video = " << cfg.clips_per_video << "\n"
     << "layers = ";
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) os << (i ? "," : "") << cfg.layers[i];
  os << "\nvar_correction = " << (cfg.var_correction ? "true" : "false") << "\n";
  return os.str();
}

data::CondensedSet run_edc(const std::vector<nn::TrainedModel>& models, const StatTargets& targets,
                           const DmConfig& cfg, const data::CondensedSet& init, std::uint64_t seed, EdcLog* log) {
  validate(cfg);
  if (models.empty()) throw ConfigError("edc: need at least one network");
  data::validate_condensed(init);
  const int L = models.front().spec.input_length;
  std::vector<nn::Network> networks;
  networks.reserve(models.size());
  for (const auto& m : models) {
    if (m.spec.input_length != L) throw CompatibilityError("edc: networks disagree on input length");
    if (m.spec.num_classes != init.data.num_classes) throw CompatibilityError("edc: class count differs from network");
    networks.push_back(nn::Network::build(m.spec));
  }
  std::vector<DmNet<float>> nets;
  for (std::size_t i = 0; i < models.size(); ++i) nets.push_back({&networks[i], models[i].params, models[i].buffers});

  const auto plan = temporal::make_plan(init.plan.stored_length, L, init.plan.interpolation);
  data::CondensedSet out = init;
  const std::size_t n = out.data.items.size();
  std::vector<int> labels;
  for (const auto& item : out.data.items) labels.push_back(item.hard_label);
  std::vector<nn::AdamW> opts(n, nn::AdamW(cfg.pixel_lr, 0.9, 0.999, 0.0));
  Rng rng = Rng::derive(seed, "edc");
  EdcLog local;
  EdcLog& lg = log ? *log : local;
  lg = EdcLog{};

  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Tensor<float>> clips;
    std::vector<temporal::Window> windows;
    for (const auto& item : out.data.items) {
      windows.push_back(temporal::sample_window(plan, rng));
      clips.push_back(temporal::extract_clip(item.frames, plan, windows.back()));
    }
    const DmLoss<float> res = dm_loss<float>(nets, targets, clips, labels, cfg);
    if (!std::isfinite(res.loss)) throw DistillError("edc: non-finite matching loss", it);
    lg.losses.push_back(res.loss);
    lg.stat_terms.push_back(res.stat);
    lg.cls_terms.push_back(res.cls);
    for (std::size_t v = 0; v < n; ++v) {
      auto& frames = out.data.items[v].frames;
      Tensor<float> g(frames.shape);
      temporal::extract_clip_adjoint(res.d_clips[v], plan, windows[v], g);
      opts[v].step<float>(frames.data, g.data);
    }
  }

  const auto logits = tm::teacher_logits(models.front(), out);
  for (std::size_t v = 0; v < n; ++v) {
    const auto& z = logits[v];
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0;
    for (std::size_t k = 0; k < z.size(); ++k) s += p[k] = std::exp(static_cast<double>(z[k]) - mx);
    for (auto& x : p) x /= s;
    out.data.items[v].soft_label = std::move(p);
  }
  out.labeling = data::LabelingMode::soft;
  out.provenance.method = cfg.category_wise ? "edc" : "edc_nocw";
  out.provenance.config_hash = short_hash(dump_config(cfg) + "seed=" + std::to_string(seed));
  out.provenance.networks.clear();
  for (const auto& m : models) out.provenance.networks.push_back(m.id);
  out.provenance.extra["init"] = init.provenance.method;
  out.provenance.extra["iterations"] = std::to_string(cfg.iterations);
  return out;
}

}  // namespace vdc::dm
