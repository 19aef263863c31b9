#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nfs/config.hpp"
#include "nfs/eval.hpp"

namespace nfs {

// Fixed per-run directory layout.
struct OutputDirs {
  std::filesystem::path root, checkpoints, gates, logs, reports;

  static OutputDirs create(const std::filesystem::path& root);
};

// Dataset split + bilevel search; writes the gates container, gate exports,
// a full checkpoint of the searched state, the search log, and the manifest.
void cmd_search(RunConfig config, const std::filesystem::path& out);

// Training with optional derived gates (absent = baseline); writes the model
// checkpoint, the loss CSV, and the manifest.
void cmd_train(RunConfig config,
               const std::optional<std::filesystem::path>& gates_file,
               const std::filesystem::path& out);

// protocol: visible_to_infrared | infrared_to_visible | both.
std::vector<EvalReport> cmd_eval(const std::filesystem::path& checkpoint,
                                 const std::string& protocol,
                                 const std::filesystem::path& out,
                                 bool dump_ranked_csv = false);

struct AblateOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  bool stage_table = false;  // 15-row stage-subset study instead of B/N/C
};

struct AblateRow {
  std::string variant;
  double rank1_mean = 0.0;
  double map_mean = 0.0;
  int seeds = 0;
};

std::vector<AblateRow> cmd_ablate(RunConfig config, const AblateOptions& options,
                                  const std::filesystem::path& out);

// Dataset manifest as JSON; optionally caches every rendered image into an
// NFS1 container.
void cmd_gen_data(const RunConfig& config, const std::filesystem::path& out,
                  bool cache_images);

nlohmann::json dataset_manifest_to_json(const DatasetManifest& manifest);

}  // namespace nfs
