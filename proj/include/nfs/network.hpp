#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nfs/batch.hpp"
#include "nfs/ops.hpp"
#include "nfs/search_cell.hpp"

namespace nfs {

struct ModelConfig {
  int input_h = 32;
  int input_w = 16;
  int stem_channels = 16;
  std::vector<int> stage_widths = {16, 32, 64, 128};
  int num_identities = 0;
  std::vector<int> searched_stages;  // 1-based stage indices

  int num_stages() const { return static_cast<int>(stage_widths.size()); }
  void validate() const;
};

enum class RunMode { kSearch, kTrain, kEval };

struct StageBlock {
  ConvBlock conv;
  BatchNormState bn;
};

struct ForwardResult {
  EmbeddingBatch embeddings;
  Tensor logits;  // defined only when requested
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Two-stream network: modality-specific stems, shared gated stages, global
// average pooling, shared batch-norm neck, and a training-only classifier.
// The last shared stage has stride 1, earlier stages stride 2.
class TwoStreamNet {
 public:
  static TwoStreamNet init(const ModelConfig& config, std::uint64_t seed);

  // Re-draws every weight (stems, stages, neck, classifier) from the seed;
  // search cells are left untouched.
  void init_weights(std::uint64_t seed);

  ForwardResult forward(const IdentityBatch& batch, RunMode mode,
                        bool want_logits);

  // Fresh stochastic gates for every active cell (one draw per batch).
  void sample_all_gates(Rng& rng, GateSampler sampler);

  void derive_all_gates();
  bool gates_derived() const;
  // Validates that every active cell carries externally loaded gates and
  // flips the derived flag.
  void mark_gates_loaded();

  // Trainable network weights; search-cell parameters are separate.
  std::vector<NamedTensor> weight_params();
  std::vector<NamedTensor> gate_params();
  std::vector<SearchCell*> active_cells();

  // All state for checkpointing: weights, batch-norm statistics, cell
  // parameters and derived gates.
  std::vector<NamedTensor> state_entries();
  void load_state(const std::vector<NamedTensor>& entries);

  // Every batch-norm state in forward order (stages then neck).
  std::vector<BatchNormState*> bn_states();

  const ModelConfig& config() const { return config_; }
  std::int64_t embedding_dim() const { return config_.stage_widths.back(); }
  bool stage_searched(int stage_index_1based) const;
  StageCells* stage_cells(int stage_index_1based);

  void zero_grad();

 private:
  TwoStreamNet() = default;

  ModelConfig config_;
  ConvBlock rgb_stem_;
  ConvBlock ir_stem_;
  std::vector<StageBlock> stages_;
  std::vector<std::optional<StageCells>> cells_;  // aligned with stages_
  BatchNormState bn_neck_;
  Tensor classifier_w_;
  Tensor classifier_b_;
  bool gates_derived_ = false;
};

}  // namespace nfs
