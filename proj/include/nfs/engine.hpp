#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nfs/dataset.hpp"
#include "nfs/losses.hpp"
#include "nfs/network.hpp"

namespace nfs {

// Per-identity, per-modality 80/20 split of the training set into the
// search-train and search-val subsets.
struct SplitSpec {
  std::vector<int> search_train;  // manifest sample indices
  std::vector<int> search_val;
  std::uint64_t seed = 0;

  std::uint64_t hash() const;  // FNV-1a over both index lists
};

SplitSpec split_search_sets(const DatasetManifest& manifest, std::uint64_t seed);

enum class BilevelOrder { kFirst, kSecond };

struct BilevelConfig {
  double base_lr = 0.1;
  double gate_lr = 0.01;
  double momentum = 0.9;
  BilevelOrder order = BilevelOrder::kFirst;
  int search_epochs = 40;
  int retrain_epochs = 80;
  int batch_p = 8;
  int batch_k = 4;
  // 0 resolves to ceil(#identities / P): one epoch visits every identity once.
  int steps_per_epoch = 0;
  // Inner step size of the lookahead; < 0 resolves to the current weight lr.
  double unroll_xi = -1.0;
  GateSampler sampler = GateSampler::kContinuousBernoulli;
  ContrastiveConfig contrastive;  // lambda 0 disables the contrastive term

  void validate() const;
  int resolved_steps(int n_identities) const;
};

// Warm-up over epochs 0-9 from base_lr/10 to base_lr, then steps down to
// 0.1x at epoch 16 and 0.01x at epoch 50.
double lr_schedule(int epoch, double base_lr = 0.1);

// SGD with momentum: v = mu * v + g, w -= lr * v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<NamedTensor> params, double momentum);
  void step(double lr);
  void zero_grad();
  std::vector<NamedTensor>& params() { return params_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
};

// Plain gradient step on the gate parameters (no momentum).
void gate_sgd_step(std::vector<NamedTensor>& gate_params, double lr);

struct StepLosses {
  double id = 0.0;
  double tri = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

struct SearchEpochLog {
  int epoch = 0;
  double l_train = 0.0;
  double l_val = 0.0;
  std::vector<std::pair<std::string, double>> gate_fractions;  // per cell
};

struct SearchLog {
  std::vector<SearchEpochLog> epochs;
};

struct TrainStepLog {
  int epoch = 0;
  int step = 0;
  StepLosses losses;
  double lr = 0.0;
};

using TrainLogSink = std::function<void(const TrainStepLog&)>;

// Forward + full objective on one batch. Gates must already be sampled when
// mode is kSearch.
std::pair<Tensor, StepLosses> batch_loss(TwoStreamNet& net,
                                         const IdentityBatch& batch, RunMode mode,
                                         const ContrastiveConfig& contrastive,
                                         Rng& pair_rng);

// One bilevel update: (i) one SGD-with-momentum step of the weights on the
// train batch; (ii) one gate step on the val batch — at the current weights
// in first-order mode, at the one-step lookahead W - xi * grad_W L_train in
// second-order mode. Weights are only ever moved by (i), gate parameters
// only by (ii). The pairing seeds fix the cross-modal matchings of the two
// batches so the lookahead recomputation sees the identical train loss.
std::pair<StepLosses, StepLosses> search_step(
    TwoStreamNet& net, SgdMomentum& weight_opt, const IdentityBatch& batch_train,
    const IdentityBatch& batch_val, const BilevelConfig& config, double weight_lr,
    Rng& gate_rng, std::uint64_t pair_train_seed, std::uint64_t pair_val_seed);

// Alg. lines 2-6: alternating optimization over a fixed epoch budget, then
// gate derivation. Returns the per-epoch log.
SearchLog run_search(TwoStreamNet& net, RenderedDataset& data,
                     const SplitSpec& split, const BilevelConfig& config,
                     std::uint64_t run_seed);

// Retraining with frozen gates on the full training set; weights are
// reinitialized from retrain_seed before the first step.
void retrain(TwoStreamNet& net, RenderedDataset& data,
             const BilevelConfig& config, std::uint64_t run_seed,
             std::uint64_t retrain_seed, const TrainLogSink& sink);

// Gate-update channel on a 1-parameter quadratic surrogate
// L(p) = (sigmoid(P) - target)^2; returns sigmoid(P) after each step.
std::vector<double> quadratic_surrogate_trace(double p0, double target,
                                              double gate_lr, int steps);

}  // namespace nfs
