#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vdc/temporal.hpp"
#include "vdc/tensor.hpp"

namespace vdc::data {

// One video: frames [T, C, H, W] with values in [0, 1].
struct VideoItem {
  std::string id;
  Tensor<float> frames;
  int hard_label = 0;
  std::optional<std::vector<double>> soft_label;

  int num_frames() const { return static_cast<int>(frames.dim(0)); }
  int channels() const { return static_cast<int>(frames.dim(1)); }
  int height() const { return static_cast<int>(frames.dim(2)); }
  int width() const { return static_cast<int>(frames.dim(3)); }
};

struct Dataset {
  int num_classes = 0;
  std::vector<VideoItem> items;

  std::vector<int> class_counts() const;
  // Indices of items with the given hard label, in dataset order.
  std::vector<int> indices_of_class(int label) const;
};

// Throws DomainError when an item breaks the VideoItem invariants.
void validate_item(const VideoItem& item, int num_classes);
void validate_dataset(const Dataset& dataset);

struct VideoMeta {
  int label = 0;
  int frames = 0;
};

struct DatasetStats {
  std::size_t num_videos = 0;  // N
  int num_classes = 0;         // C
  double mean_frames = 0;      // T_mean
  double median_frames = 0;    // T_median
  double per_class_mean = 0;   // n_mean = N / C
  std::vector<std::size_t> per_class_counts;
};

// Statistics from bare (label, length) records, so corpus manifests can be
// summarized without frames. Throws DomainError on empty input.
DatasetStats compute_stats(std::span<const VideoMeta> videos, int num_classes);
DatasetStats compute_stats(const Dataset& dataset);

struct MicroSpec {
  int classes = 4;
  int per_class = 20;
  int frames = 16;
  int height = 16;
  int width = 16;
  int channels = 3;
  std::uint64_t seed = 0;
};

// Number of distinct motion archetypes the generator knows.
inline constexpr int kMotionArchetypes = 8;
std::string archetype_name(int label);

// Procedural action dataset: a flat static background with one moving
// sprite per video. The class is carried only by the sprite's motion
// (translation direction, scale change, blinking, oscillation); position,
// colour, size and background are random nuisance factors. Horizontal
// motions draw their sign at random so the classes survive horizontal
// flips. Throws ConfigError for invalid dimensions.
Dataset generate_micro_dataset(const MicroSpec& spec);

enum class LabelingMode { hard, soft, multi_sl };
std::string to_string(LabelingMode m);
LabelingMode parse_labeling_mode(const std::string& s);

struct Provenance {
  std::string method;
  std::string config_hash;
  std::vector<std::string> networks;
  std::map<std::string, std::string> extra;
};

// Output of a condensation method: ipc items per class, T_c frames each.
struct CondensedSet {
  Dataset data;
  int ipc = 0;
  LabelingMode labeling = LabelingMode::hard;
  temporal::SamplingPlan plan;
  Provenance provenance;

  int stored_length() const { return plan.stored_length; }
};

// Throws DomainError when |items| != ipc * C, a class count differs from ipc,
// or item lengths differ from T_c.
void validate_condensed(const CondensedSet& set);

// Directory layout: manifest.json plus one <id>.bin per video. Each binary is
// a 16-byte header (magic "VDC1", u32 T, u32 C*H*W, u32 reserved = 0)
// followed by T*C*H*W little-endian f32 values. The manifest records the
// CRC32 of the payload. Throws FormatError naming the offending file.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

void write_condensed(const CondensedSet& set, const std::filesystem::path& dir);
CondensedSet read_condensed(const std::filesystem::path& dir);
bool is_condensed_dir(const std::filesystem::path& dir);

// Deterministic content hash of labels and frame bytes.
std::string dataset_hash(const Dataset& dataset);

// Raw binary encoding of one video file (header + payload).
std::vector<std::byte> encode_video(const Tensor<float>& frames);
Tensor<float> decode_video(std::span<const std::byte> bytes, const std::string& name, int channels, int height,
                           int width);

}  // namespace vdc::data
