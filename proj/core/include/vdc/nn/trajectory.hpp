#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vdc/dataio.hpp"
#include "vdc/nn/model.hpp"

namespace vdc::nn {

struct ExpertConfig {
  int epochs = 10;
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
  int batch_size = 16;
  bool horizontal_flip = false;
  double min_crop_area = 1.0;  // below 1 enables random resized crops
};

std::string fingerprint(const ExpertConfig& cfg);

// Parameter snapshots at every epoch boundary of training on real data,
// theta_0 included, plus the running normalization statistics at the end.
struct ExpertTrajectory {
  ModelSpec spec;
  std::string spec_hash;
  int epochs = 0;
  std::uint64_t seed = 0;
  std::string config;
  std::vector<ParamVector> snapshots;
  std::vector<float> running_stats;
  std::vector<double> epoch_accuracy;  // training accuracy per epoch, epochs entries

  // Final snapshot as a deployable model.
  TrainedModel final_model(const std::string& id) const;
};

// Cross-entropy SGD on random input-length windows of each video. Throws
// TrainingError with the epoch index on a non-finite loss.
ExpertTrajectory train_expert(const Network& net, const data::Dataset& dataset, const ExpertConfig& cfg,
                              std::uint64_t seed);

// Text header (arch, spec, spec hash, epochs, seed, sizes) terminated by an
// "end" line, followed by per-snapshot little-endian f32 blocks and then the
// running statistics.
void save_trajectory(const ExpertTrajectory& traj, const std::filesystem::path& path);
// Throws FormatError on malformed or truncated files.
ExpertTrajectory load_trajectory(const std::filesystem::path& path);
// Also throws CompatibilityError when the stored model differs from expected.
ExpertTrajectory load_trajectory(const std::filesystem::path& path, const ModelSpec& expected);

// Trajectory files in a directory, sorted by name.
std::vector<std::filesystem::path> list_trajectories(const std::filesystem::path& dir);

ModelSpec spec_from_description(const std::string& text);

// Content hash of a model's spec, parameters and running statistics.
std::string model_fingerprint(const TrainedModel& model);

}  // namespace vdc::nn
