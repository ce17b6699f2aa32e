#include "vdc/select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vdc/hash.hpp"
#include "vdc/nn/inference.hpp"
#include "vdc/rng.hpp"

namespace vdc::select {

namespace {

void check_counts(const data::Dataset& dataset, int ipc) {
  if (ipc < 1) throw SelectionError("ipc must be >= 1");
  const auto counts = dataset.class_counts();
  for (int c = 0; c < dataset.num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] < ipc) {
      throw SelectionError("class " + std::to_string(c) + " has " + std::to_string(counts[static_cast<std::size_t>(c)]) +
                           " videos, fewer than ipc " + std::to_string(ipc));
    }
  }
}

data::CondensedSet empty_set(const data::Dataset& dataset, int ipc, int stored_length, int input_length,
                             const std::string& method) {
  data::CondensedSet set;
  set.data.num_classes = dataset.num_classes;
  set.ipc = ipc;
  set.labeling = data::LabelingMode::hard;
  set.plan = temporal::make_plan(stored_length, input_length);
  set.provenance.method = method;
  return set;
}

data::VideoItem cut(const data::VideoItem& src, int start, int length) {
  data::VideoItem item;
  item.id = src.id;
  item.hard_label = src.hard_label;
  const auto video = temporal::extend_by_duplication(src.frames, length);
  item.frames = temporal::slice_frames(video, start, length);
  return item;
}

int extended_length(const data::VideoItem& item, int stored_length) {
  return static_cast<int>(temporal::extend_by_duplication(item.frames, stored_length).dim(0));
}

}  // namespace

data::CondensedSet select_random(const data::Dataset& dataset, int ipc, int stored_length, std::uint64_t seed,
                                 int input_length) {
  check_counts(dataset, ipc);
  auto set = empty_set(dataset, ipc, stored_length, input_length, "random");
  Rng rng = Rng::derive(seed, "select_random");
  for (int c = 0; c < dataset.num_classes; ++c) {
    const auto members = dataset.indices_of_class(c);
    for (int pick : rng.sample_without_replacement(static_cast<int>(members.size()), ipc)) {
      const auto& src = dataset.items[static_cast<std::size_t>(members[static_cast<std::size_t>(pick)])];
      const int start = rng.uniform_int(0, extended_length(src, stored_length) - stored_length);
      set.data.items.push_back(cut(src, start, stored_length));
    }
  }
  set.provenance.config_hash = short_hash("random;ipc=" + std::to_string(ipc) + ";tc=" + std::to_string(stored_length) +
                                          ";seed=" + std::to_string(seed));
  set.provenance.extra["seed"] = std::to_string(seed);
  data::validate_condensed(set);
  return set;
}

std::vector<int> herding_order(const std::vector<std::vector<double>>& features, int count) {
  const std::size_t n = features.size();
  if (count < 0 || static_cast<std::size_t>(count) > n) throw SelectionError("herding: count exceeds candidates");
  if (n == 0) return {};
  const std::size_t d = features.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& f : features) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += f[k];
  }
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<double> sum(d, 0.0);
  std::vector<bool> used(n, false);
  std::vector<int> order;
  for (int step = 0; step < count; ++step) {
    int best = -1;
    double best_dist = 0;
    const double inv = 1.0 / static_cast<double>(step + 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double dist = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = mean[k] - (sum[k] + features[i][k]) * inv;
        dist += diff * diff;
      }
      if (best < 0 || dist < best_dist) {
        best = static_cast<int>(i);
        best_dist = dist;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    for (std::size_t k = 0; k < d; ++k) sum[k] += features[static_cast<std::size_t>(best)][k];
    order.push_back(best);
  }
  return order;
}

data::CondensedSet select_herding(const data::Dataset& dataset, int ipc, int stored_length,
                                  const nn::TrainedModel& teacher) {
  check_counts(dataset, ipc);
  const nn::Network net = nn::Network::build(teacher.spec);
  const int L = teacher.spec.input_length;
  auto set = empty_set(dataset, ipc, stored_length, L, "herding");

  std::vector<Tensor<float>> clips;
  for (const auto& item : dataset.items) {
    const auto video = temporal::extend_by_duplication(item.frames, L);
    const auto plan = temporal::make_plan(static_cast<int>(video.dim(0)), L);
    clips.push_back(temporal::extract_clip(video, plan, temporal::center_window(plan)));
  }
  const Tensor<float> feats = nn::predict_features(net, teacher, clips);
  const std::size_t F = feats.dim(1);

  for (int c = 0; c < dataset.num_classes; ++c) {
    const auto members = dataset.indices_of_class(c);
    std::vector<std::vector<double>> f;
    for (int m : members) {
      const float* row = feats.ptr() + static_cast<std::size_t>(m) * F;
      f.emplace_back(row, row + F);
    }
    for (int pick : herding_order(f, ipc)) {
      const auto& src = dataset.items[static_cast<std::size_t>(members[static_cast<std::size_t>(pick)])];
      const int T = extended_length(src, stored_length);
      set.data.items.push_back(cut(src, (T - stored_length) / 2, stored_length));
    }
  }
  set.provenance.config_hash = short_hash("herding;ipc=" + std::to_string(ipc) + ";tc=" + std::to_string(stored_length) +
                                          ";teacher=" + teacher.id);
  set.provenance.networks = {teacher.id};
  data::validate_condensed(set);
  return set;
}

std::vector<std::vector<temporal::Window>> rded_candidates(const data::Dataset& dataset, const RdedConfig& cfg) {
  if (cfg.clips_per_video < 1) throw SelectionError("rded: clips_per_video must be >= 1");
  std::vector<std::vector<temporal::Window>> out;
  out.reserve(dataset.items.size());
  for (const auto& item : dataset.items) {
    // Streams keyed by item id keep candidates independent of dataset order.
    Rng rng = Rng::derive(cfg.seed, "rded:" + item.id);
    const int T = extended_length(item, cfg.stored_length);
    std::vector<temporal::Window> windows;
    for (int k = 0; k < cfg.clips_per_video; ++k) {
      windows.push_back({rng.uniform_int(0, T - cfg.stored_length), cfg.stored_length});
    }
    out.push_back(std::move(windows));
  }
  return out;
}

std::vector<std::vector<ScoredClip>> score_candidates(const data::Dataset& dataset,
                                                      const std::vector<std::vector<temporal::Window>>& candidates,
                                                      int stored_length, const nn::TrainedModel& teacher) {
  if (candidates.size() != dataset.items.size()) throw SelectionError("rded: one candidate list per video required");
  const nn::Network net = nn::Network::build(teacher.spec);
  const auto plan = temporal::make_plan(stored_length, teacher.spec.input_length);
  const auto model_window = temporal::center_window(plan);

  std::vector<Tensor<float>> clips;
  std::vector<ScoredClip> flat;
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    const auto& item = dataset.items[i];
    const auto video = temporal::extend_by_duplication(item.frames, stored_length);
    for (const auto& w : candidates[i]) {
      if (w.length != stored_length || w.start < 0 || w.start + w.length > static_cast<int>(video.dim(0))) {
        throw SelectionError("rded: candidate window out of range for '" + item.id + "'");
      }
      const auto stored = temporal::slice_frames(video, w.start, w.length);
      clips.push_back(temporal::extract_clip(stored, plan, model_window));
      flat.push_back({static_cast<int>(i), item.id, w, 0.0, item.hard_label});
    }
  }
  const Tensor<float> z = nn::predict_logits(net, teacher, clips);
  const std::size_t K = z.dim(1);
  for (std::size_t j = 0; j < flat.size(); ++j) {
    const float* row = z.ptr() + j * K;
    double mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(static_cast<double>(row[k]) - mx);
    flat[j].score = static_cast<double>(row[flat[j].label]) - mx - std::log(s);
  }
  std::vector<std::vector<ScoredClip>> out(dataset.items.size());
  for (auto& sc : flat) out[static_cast<std::size_t>(sc.item)].push_back(sc);
  return out;
}

std::vector<ScoredClip> rded_pick(const std::vector<std::vector<ScoredClip>>& scored, int num_classes, int ipc,
                                  int factor) {
  std::vector<std::vector<ScoredClip>> best_by_class(static_cast<std::size_t>(num_classes));
  for (const auto& clips : scored) {
    if (clips.empty()) continue;
    const ScoredClip* best = &clips.front();
    for (const auto& c : clips) {
      if (c.score > best->score) best = &c;
    }
    best_by_class.at(static_cast<std::size_t>(best->label)).push_back(*best);
  }
  std::vector<ScoredClip> out;
  const std::size_t need = static_cast<std::size_t>(ipc) * static_cast<std::size_t>(factor);
  for (int c = 0; c < num_classes; ++c) {
    auto& v = best_by_class[static_cast<std::size_t>(c)];
    if (v.size() < need) {
      throw SelectionError("class " + std::to_string(c) + " has " + std::to_string(v.size()) +
                           " videos, fewer than ipc x factor = " + std::to_string(need));
    }
    std::stable_sort(v.begin(), v.end(), [](const ScoredClip& a, const ScoredClip& b) { return a.score > b.score; });
    out.insert(out.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(need));
  }
  return out;
}

Tensor<float> tile_clips(const std::vector<Tensor<float>>& clips) {
  const int n = static_cast<int>(clips.size());
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (n < 1 || g * g != n) throw SelectionError("tile_clips: clip count must be a perfect square");
  if (n == 1) return clips.front();
  const Shape& s = clips.front().shape;
  const std::size_t T = s[0], C = s[1], H = s[2], W = s[3];
  const auto G = static_cast<std::size_t>(g);
  if (H % G != 0 || W % G != 0) throw SelectionError("tile_clips: frame size not divisible by the grid");
  const std::size_t h = H / G, w = W / G;
  Tensor<float> out(s);
  const float inv = 1.0f / static_cast<float>(G * G);
  for (std::size_t k = 0; k < clips.size(); ++k) {
    if (clips[k].shape != s) throw SelectionError("tile_clips: clips differ in shape");
    const std::size_t gy = k / G, gx = k % G;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const float* src = clips[k].ptr() + (t * C + c) * H * W;
        float* dst = out.ptr() + (t * C + c) * H * W;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            float acc = 0;
            for (std::size_t dy = 0; dy < G; ++dy) {
              for (std::size_t dx = 0; dx < G; ++dx) acc += src[(y * G + dy) * W + x * G + dx];
            }
            dst[(gy * h + y) * W + gx * w + x] = acc * inv;
          }
        }
      }
    }
  }
  return out;
}

data::CondensedSet select_rded_from(const data::Dataset& dataset,
                                    const std::vector<std::vector<temporal::Window>>& candidates,
                                    const RdedConfig& cfg, const nn::TrainedModel& teacher,
                                    std::vector<ScoredClip>* picked) {
  check_counts(dataset, cfg.ipc);
  auto set = empty_set(dataset, cfg.ipc, cfg.stored_length, teacher.spec.input_length, "rded");
  const auto scored = score_candidates(dataset, candidates, cfg.stored_length, teacher);
  const auto chosen = rded_pick(scored, dataset.num_classes, cfg.ipc, cfg.factor);
  const auto per = static_cast<std::size_t>(cfg.factor);
  for (std::size_t j = 0; j < chosen.size(); j += per) {
    std::vector<Tensor<float>> parts;
    std::string id;
    for (std::size_t q = 0; q < per; ++q) {
      const ScoredClip& sc = chosen[j + q];
      parts.push_back(cut(dataset.items[static_cast<std::size_t>(sc.item)], sc.window.start, sc.window.length).frames);
      id += (q ? "+" : "") + sc.source_id;
    }
    data::VideoItem item;
    item.id = id;
    item.hard_label = chosen[j].label;
    item.frames = tile_clips(parts);
    set.data.items.push_back(std::move(item));
  }
  if (picked) *picked = chosen;
  set.provenance.config_hash = short_hash("rded;ipc=" + std::to_string(cfg.ipc) + ";tc=" +
                                          std::to_string(cfg.stored_length) + ";clips=" +
                                          std::to_string(cfg.clips_per_video) + ";factor=" +
                                          std::to_string(cfg.factor) + ";seed=" + std::to_string(cfg.seed) +
                                          ";teacher=" + teacher.id);
  set.provenance.networks = {teacher.id};
  set.provenance.extra["seed"] = std::to_string(cfg.seed);
  set.provenance.extra["factor"] = std::to_string(cfg.factor);
  data::validate_condensed(set);
  return set;
}

data::CondensedSet select_rded(const data::Dataset& dataset, const RdedConfig& cfg, const nn::TrainedModel& teacher,
                               std::vector<ScoredClip>* picked) {
  return select_rded_from(dataset, rded_candidates(dataset, cfg), cfg, teacher, picked);
}

}  // namespace vdc::select
