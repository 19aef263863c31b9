#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfs/dataset.hpp"
#include "nfs/engine.hpp"
#include "nfs/eval.hpp"
#include "nfs/network.hpp"

namespace nfs {

// Everything one run needs; flags override file values, file values override
// the built-in defaults.
struct RunConfig {
  std::uint64_t seed = 7;
  DatasetConfig dataset;
  ModelConfig model;             // num_identities resolved from the dataset
  std::vector<int> stages = {1, 2, 3};
  BilevelConfig bilevel;
  int eval_max_rank = 20;
  RankMetric eval_metric = RankMetric::kCosine;

  // Fills derived fields (classifier size, searched stages when enabled)
  // and validates everything.
  void resolve(bool with_search);

  EvalProtocol protocol(Modality query_modality) const;
};

nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::string order_name(BilevelOrder order);
BilevelOrder order_from_string(const std::string& s);
std::string sampler_name(GateSampler sampler);
GateSampler sampler_from_string(const std::string& s);
std::string metric_name(RankMetric metric);
RankMetric metric_from_string(const std::string& s);

}  // namespace nfs
