#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdc/dataio.hpp"
#include "vdc/nn/model.hpp"
#include "vdc/temporal.hpp"

namespace vdc::select {

struct ScoredClip {
  int item = 0;  // index into the dataset
  std::string source_id;
  temporal::Window window;
  double score = 0;
  int label = 0;
};

// Uniform per-class choice without replacement, then a uniformly placed
// T_c-frame window per chosen video.
data::CondensedSet select_random(const data::Dataset& dataset, int ipc, int stored_length, std::uint64_t seed,
                                 int input_length = 8);

// Greedy order: step j picks the candidate minimising
// |mean(features) - mean(selected + candidate)|. Ties go to the lower index.
std::vector<int> herding_order(const std::vector<std::vector<double>>& features, int count);

// Herding on teacher pooled features of each video's center clip; selected
// videos keep their center T_c window.
data::CondensedSet select_herding(const data::Dataset& dataset, int ipc, int stored_length,
                                  const nn::TrainedModel& teacher);

struct RdedConfig {
  int ipc = 1;
  int stored_length = 8;
  int clips_per_video = 10;
  int factor = 1;  // N clips tiled per stored video; a perfect square
  std::uint64_t seed = 0;
};

// Random T_c windows drawn for each video (after duplication-extension).
std::vector<std::vector<temporal::Window>> rded_candidates(const data::Dataset& dataset, const RdedConfig& cfg);

// Realism score of every candidate: minus the teacher cross-entropy of the
// clip against the video's label.
std::vector<std::vector<ScoredClip>> score_candidates(const data::Dataset& dataset,
                                                      const std::vector<std::vector<temporal::Window>>& candidates,
                                                      int stored_length, const nn::TrainedModel& teacher);

// Per class, the ipc * factor videos whose best clip scores highest (ties
// toward the lower index), in descending score order.
std::vector<ScoredClip> rded_pick(const std::vector<std::vector<ScoredClip>>& scored, int num_classes, int ipc,
                                  int factor);

data::CondensedSet select_rded(const data::Dataset& dataset, const RdedConfig& cfg, const nn::TrainedModel& teacher,
                               std::vector<ScoredClip>* picked = nullptr);
data::CondensedSet select_rded_from(const data::Dataset& dataset,
                                    const std::vector<std::vector<temporal::Window>>& candidates,
                                    const RdedConfig& cfg, const nn::TrainedModel& teacher,
                                    std::vector<ScoredClip>* picked = nullptr);

// Tiles factor clips [T, C, H, W] into one clip on a sqrt(factor) grid, each
// downsampled by box averaging.
Tensor<float> tile_clips(const std::vector<Tensor<float>>& clips);

}  // namespace vdc::select
