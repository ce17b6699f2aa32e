#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vdc/config.hpp"
#include "vdc/dataio.hpp"
#include "vdc/nn/model.hpp"

namespace vdc::eval {

enum class EvalLoss { mse_gt, kl };
std::string to_string(EvalLoss l);
EvalLoss parse_eval_loss(const std::string& s);

struct EvalConfig {
  data::LabelingMode labeling = data::LabelingMode::hard;
  EvalLoss loss = EvalLoss::mse_gt;
  bool cutmix = false;
  int base_batch = 10;
  int epochs = 300;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  bool resized_crop = true;
  double min_crop_area = 0.5;
  bool horizontal_flip = true;
  double gt_weight = 0.1;  // weight of the ground-truth term of mse_gt
  std::vector<std::uint64_t> seeds = {0, 1, 2};
};

void validate(const EvalConfig& cfg);
EvalConfig eval_config_from(const Config& c, const std::string& section = "eval");
std::string fingerprint(const EvalConfig& cfg);

// Batch size rule: base_batch x ipc.
int batch_size(const EvalConfig& cfg, int ipc);
// Optimizer steps per epoch: ceil(items / batch size).
int iterations_per_epoch(int items, int batch);

// Training loss for one batch. Hard-label training uses plain cross-entropy
// on the ground truth. With teacher targets, kl is KL(softmax(t) || softmax(z))
// and mse_gt is mean (z - t)^2 + gt_weight * CE(z, hard).
double eval_loss(EvalLoss mode, data::LabelingMode labeling, const Tensor<float>& logits,
                 const Tensor<float>& target_logits, std::span<const int> hard, double gt_weight,
                 Tensor<float>* grad);

// Supplies target vectors per labeling mode: hard -> one-hot; soft -> fixed
// per-item logits (stored soft labels as centered log-probabilities, else the
// teacher on the item's center clip, computed once); multi_sl -> the teacher
// on the exact view shown to the student.
class LabelProvider {
 public:
  LabelProvider(data::LabelingMode mode, const data::CondensedSet& set, const nn::TrainedModel* teacher);

  data::LabelingMode mode() const { return mode_; }
  // Rows of target logits for the given items and views ([L, C, H, W] each).
  Tensor<float> targets(std::span<const int> items, const std::vector<Tensor<float>>& views) const;
  std::vector<float> label(int item, const Tensor<float>& view) const;
  // CRC32 of the fixed soft-label table (0 for other modes).
  std::uint32_t table_checksum() const;

 private:
  data::LabelingMode mode_;
  int classes_ = 0;
  std::vector<int> hard_;
  std::vector<std::vector<float>> table_;
  const nn::TrainedModel* teacher_ = nullptr;
  std::optional<nn::Network> teacher_net_;
};

struct EvalReport {
  std::string arch;
  std::string config_fingerprint;
  data::Provenance provenance;
  std::vector<std::uint64_t> seeds;
  std::vector<double> top1;  // per seed
  std::vector<double> top5;  // per seed, empty when fewer than 10 classes
  double mean = 0;           // of the reported metric
  double stddev = 0;
  std::string metric = "top1";
  double wall_seconds = 0;
  // Soft-label table checksum observed at every epoch of every seed.
  std::vector<std::uint32_t> label_checksums;
  int batch_size = 0;
  int iterations = 0;
};

// Trains a fresh network per seed on the condensed set and reports val
// accuracy on center clips. Throws EvalError with seed and epoch on a
// non-finite loss, ConfigError when a teacher-based labeling lacks a teacher.
EvalReport evaluate(const data::CondensedSet& condensed, const nn::ModelSpec& spec, const EvalConfig& cfg,
                    const data::Dataset& val, const nn::TrainedModel* teacher = nullptr);

std::vector<EvalReport> cross_arch_evaluate(const data::CondensedSet& condensed, const std::vector<nn::ModelSpec>& specs,
                                            const EvalConfig& cfg, const data::Dataset& val,
                                            const nn::TrainedModel* teacher = nullptr);

// The whole real training set as a condensed set (ipc = per-class count),
// for upper-bound runs. Classes must be balanced.
data::CondensedSet full_dataset_set(const data::Dataset& dataset, int input_length);

std::string to_json(const EvalReport& report);

}  // namespace vdc::eval
