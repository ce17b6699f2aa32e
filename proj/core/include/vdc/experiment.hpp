#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vdc/config.hpp"

namespace vdc::pipeline {

struct ResultRow {
  std::string method;
  int ipc = 0;
  int stored_length = 0;
  std::string labeling;
  std::uint64_t seed = 0;
  double accuracy = 0;
};

// "selection", "distillation" or "reference" (upper bounds and unknowns).
std::string method_category(const std::string& method);

// Per-seed rows followed by a summary of mean/std per (method, ipc, T_c,
// labeling). Within each (ipc, T_c, labeling) setting the best mean of each
// category and the overall best are marked; equal means are all marked and
// flagged as tied, the earlier-listed method ranked first. Deterministic.
std::string render_table(const std::vector<ResultRow>& rows);

std::string rows_to_tsv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> rows_from_tsv(const std::string& text);

struct StageRecord {
  std::string stage;   // generate, experts, condense, evaluate
  std::string id;      // unique within the run
  std::string key;     // content address: stage, config hash and input keys
  std::string config_hash;
  std::vector<std::string> inputs;  // ids of upstream stages
  std::string output;               // artifact directory
  std::map<std::string, std::string> checksums;  // file -> crc32
  std::vector<std::uint64_t> seeds;
  double wall_seconds = 0;
  bool cache_hit = false;
};

struct RunManifest {
  std::vector<StageRecord> stages;
};

// Throws StageError when a stage references an unknown or later stage.
void validate_manifest(const RunManifest& manifest);
std::string manifest_json(const RunManifest& manifest);

struct PipelineResult {
  RunManifest manifest;
  std::vector<ResultRow> rows;
  std::string table;
};

// Cache location: VDC_CACHE_DIR, else ".vdc_cache" under the working directory.
std::filesystem::path cache_root();

using Logger = std::function<void(const std::string&)>;

// generate -> experts -> condense -> evaluate, every stage memoized under
// cache_dir by content key. Writes table.txt, results.tsv and manifest.json
// into out_dir. A stage failure is rethrown as StageError naming the stage.
PipelineResult run_pipeline(const Config& config, const std::filesystem::path& out_dir,
                            const std::filesystem::path& cache_dir, const Logger& log = {});

// Documented configuration keys with their defaults, as an INI text.
std::string default_pipeline_config();

}  // namespace vdc::pipeline
