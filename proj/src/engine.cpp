#include "nfs/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "nfs/error.hpp"

namespace nfs {

namespace {

constexpr std::uint64_t kTagSplit = 0x5011;
constexpr std::uint64_t kTagTrainBatch = 0x7ba7;
constexpr std::uint64_t kTagValBatch = 0x7ba8;
constexpr std::uint64_t kTagGates = 0x6a7e;
constexpr std::uint64_t kTagPairTrain = 0x9a12;
constexpr std::uint64_t kTagPairVal = 0x9a13;
constexpr std::uint64_t kTagRetrainBatch = 0x27b1;
constexpr std::uint64_t kTagRetrainPair = 0x27b2;

void check_finite(const StepLosses& losses, const char* phase, int epoch, int step) {
  if (std::isfinite(losses.total)) return;
  throw Error(std::string("loss explosion: non-finite ") + phase +
              " loss at epoch " + std::to_string(epoch) + " step " +
              std::to_string(step) + " (id=" + std::to_string(losses.id) +
              " tri=" + std::to_string(losses.tri) +
              " c=" + std::to_string(losses.contrastive) + ")");
}

std::vector<std::vector<double>> snapshot_values(std::vector<NamedTensor>& params) {
  std::vector<std::vector<double>> copy;
  copy.reserve(params.size());
  for (auto& p : params) copy.push_back(p.tensor.values());
  return copy;
}

void restore_values(std::vector<NamedTensor>& params,
                    const std::vector<std::vector<double>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].tensor.values() = saved[i];
  }
}

}  // namespace

std::uint64_t SplitSpec::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (int i : search_train) eat(static_cast<std::uint64_t>(i));
  eat(0xffffffffffffffffULL);
  for (int i : search_val) eat(static_cast<std::uint64_t>(i));
  return h;
}

SplitSpec split_search_sets(const DatasetManifest& manifest, std::uint64_t seed) {
  SplitSpec split;
  split.seed = seed;
  // id -> modality -> train-set sample indices
  std::map<int, std::map<int, std::vector<int>>> groups;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    if (!manifest.is_train_sample(i)) continue;
    const auto& spec = manifest.samples[i];
    groups[spec.id][spec.modality == Modality::kRgb ? 0 : 1].push_back(
        static_cast<int>(i));
  }
  for (auto& [id, by_modality] : groups) {
    for (auto& [mod, indices] : by_modality) {
      const int n = static_cast<int>(indices.size());
      if (n < 2) {
        throw Error("split_search_sets: identity " + std::to_string(id) +
                    " has only " + std::to_string(n) +
                    " images in one modality, need at least 2");
      }
      int n_train = static_cast<int>(std::lround(0.8 * n));
      n_train = std::clamp(n_train, 1, n - 1);  // both splits keep >= 1 image
      Rng rng(mix64(mix64(mix64(seed, kTagSplit), static_cast<std::uint64_t>(id)),
                    static_cast<std::uint64_t>(mod)));
      std::vector<int> shuffled = indices;
      rng.shuffle(shuffled);
      for (int j = 0; j < n; ++j) {
        (j < n_train ? split.search_train : split.search_val)
            .push_back(shuffled[static_cast<std::size_t>(j)]);
      }
    }
  }
  std::sort(split.search_train.begin(), split.search_train.end());
  std::sort(split.search_val.begin(), split.search_val.end());
  return split;
}

void BilevelConfig::validate() const {
  if (base_lr <= 0.0 || gate_lr < 0.0) throw ConfigError("learning rates out of range");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum out of range");
  if (search_epochs < 0 || retrain_epochs < 0) throw ConfigError("negative epochs");
  if (batch_p < 1 || batch_k < 1) throw ConfigError("batch P/K must be positive");
  if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
  contrastive.validate();
}

int BilevelConfig::resolved_steps(int n_identities) const {
  if (steps_per_epoch > 0) return steps_per_epoch;
  return (n_identities + batch_p - 1) / batch_p;
}

double lr_schedule(int epoch, double base_lr) {
  if (epoch < 0) throw ConfigError("lr_schedule: negative epoch");
  if (epoch < 10) {
    return base_lr * (0.1 + 0.9 * static_cast<double>(epoch) / 9.0);
  }
  if (epoch < 16) return base_lr;
  if (epoch < 50) return 0.1 * base_lr;
  return 0.01 * base_lr;
}

SgdMomentum::SgdMomentum(std::vector<NamedTensor> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    velocity_.emplace_back(p.tensor.values().size(), 0.0);
  }
}

void SgdMomentum::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& values = params_[i].tensor.values();
    const auto& grad = params_[i].tensor.grad();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      vel[j] = momentum_ * vel[j] + grad[j];
      values[j] -= lr * vel[j];
    }
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void gate_sgd_step(std::vector<NamedTensor>& gate_params, double lr) {
  for (auto& p : gate_params) {
    auto& values = p.tensor.values();
    const auto& grad = p.tensor.grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      values[j] -= lr * grad[j];
    }
  }
}

std::pair<Tensor, StepLosses> batch_loss(TwoStreamNet& net,
                                         const IdentityBatch& batch, RunMode mode,
                                         const ContrastiveConfig& contrastive,
                                         Rng& pair_rng) {
  ForwardResult fwd = net.forward(batch, mode, true);
  Tensor l_id = id_loss(fwd.logits, fwd.embeddings.identities);
  Tensor l_tri = wrt_triplet(fwd.embeddings);

  StepLosses losses;
  losses.id = l_id.item();
  losses.tri = l_tri.item();

  Tensor total;
  if (contrastive.lambda_weight > 0.0) {
    CrossModalPairSet pairs = pair_up(fwd.embeddings, pair_rng);
    Tensor l_c = contrastive_loss(pairs, fwd.embeddings, contrastive);
    losses.contrastive = l_c.item();
    total = total_loss(l_id, l_tri, l_c, contrastive);
  } else {
    total = add(l_id, l_tri);
  }
  losses.total = total.item();
  return {total, losses};
}

std::pair<StepLosses, StepLosses> search_step(
    TwoStreamNet& net, SgdMomentum& weight_opt, const IdentityBatch& batch_train,
    const IdentityBatch& batch_val, const BilevelConfig& config, double weight_lr,
    Rng& gate_rng, std::uint64_t pair_train_seed, std::uint64_t pair_val_seed) {
  net.zero_grad();

  // (i) weight step on the train batch with freshly sampled gates.
  net.sample_all_gates(gate_rng, config.sampler);
  StepLosses l_train;
  {
    Rng pair_rng(pair_train_seed);
    auto [loss, reported] = batch_loss(net, batch_train, RunMode::kSearch,
                                       config.contrastive, pair_rng);
    l_train = reported;
    backward(loss);
  }
  weight_opt.step(weight_lr);
  // Gate grads deposited by the train pass are discarded: the train loss
  // never moves P.
  net.zero_grad();

  auto weights = net.weight_params();
  std::vector<std::vector<double>> saved_weights;
  if (config.order == BilevelOrder::kSecond) {
    // Lookahead: evaluate the val gradient at W - xi * grad_W L_train,
    // recomputed with the same gates and pairing as the train pass. The
    // batch-norm running statistics perturbed by the recomputation are
    // restored so only the lookahead weights distinguish the two orders.
    saved_weights = snapshot_values(weights);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> saved_stats;
    for (BatchNormState* bn : net.bn_states()) {
      saved_stats.emplace_back(bn->running_mean, bn->running_var);
    }
    {
      Rng pair_rng(pair_train_seed);
      auto [loss, reported] = batch_loss(net, batch_train, RunMode::kSearch,
                                         config.contrastive, pair_rng);
      (void)reported;
      backward(loss);
    }
    {
      auto states = net.bn_states();
      for (std::size_t i = 0; i < states.size(); ++i) {
        states[i]->running_mean = saved_stats[i].first;
        states[i]->running_var = saved_stats[i].second;
      }
    }
    const double xi = config.unroll_xi >= 0.0 ? config.unroll_xi : weight_lr;
    for (auto& w : weights) {
      auto& values = w.tensor.values();
      const auto& grad = w.tensor.grad();
      for (std::size_t j = 0; j < values.size(); ++j) values[j] -= xi * grad[j];
    }
    net.zero_grad();
  }

  // (ii) gate step on the val batch with freshly sampled gates.
  net.sample_all_gates(gate_rng, config.sampler);
  StepLosses l_val;
  {
    Rng pair_rng(pair_val_seed);
    auto [loss, reported] = batch_loss(net, batch_val, RunMode::kSearch,
                                       config.contrastive, pair_rng);
    l_val = reported;
    backward(loss);
  }
  if (config.order == BilevelOrder::kSecond) {
    restore_values(weights, saved_weights);
  }
  auto gates = net.gate_params();
  gate_sgd_step(gates, config.gate_lr);
  // Weight grads deposited by the val pass are discarded: the val loss
  // never moves W.
  net.zero_grad();

  return {l_train, l_val};
}

SearchLog run_search(TwoStreamNet& net, RenderedDataset& data,
                     const SplitSpec& split, const BilevelConfig& config,
                     std::uint64_t run_seed) {
  config.validate();
  const auto& manifest = data.manifest();
  SamplePool train_pool = SamplePool::from_indices(manifest, split.search_train);
  SamplePool val_pool = SamplePool::from_indices(manifest, split.search_val);
  if (train_pool.ids.empty() || val_pool.ids.empty()) {
    throw Error("run_search: empty search split");
  }
  const int steps = config.resolved_steps(static_cast<int>(train_pool.ids.size()));
  const int k_val = std::min(config.batch_k, val_pool.min_images_per_modality());

  SgdMomentum weight_opt(net.weight_params(), config.momentum);
  Rng train_batch_rng(mix64(run_seed, kTagTrainBatch));
  Rng val_batch_rng(mix64(run_seed, kTagValBatch));
  Rng gate_rng(mix64(run_seed, kTagGates));

  SearchLog log;
  for (int epoch = 0; epoch < config.search_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config.base_lr);
    double sum_train = 0.0, sum_val = 0.0;
    for (int step = 0; step < steps; ++step) {
      IdentityBatch batch_train =
          sample_batch(data, train_pool, config.batch_p, config.batch_k,
                       train_batch_rng);
      IdentityBatch batch_val =
          sample_batch(data, val_pool, config.batch_p, k_val, val_batch_rng);
      const std::uint64_t step_key =
          mix64(static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step));
      auto [l_train, l_val] = search_step(
          net, weight_opt, batch_train, batch_val, config, lr, gate_rng,
          mix64(mix64(run_seed, kTagPairTrain), step_key),
          mix64(mix64(run_seed, kTagPairVal), step_key));
      check_finite(l_train, "search-train", epoch, step);
      check_finite(l_val, "search-val", epoch, step);
      sum_train += l_train.total;
      sum_val += l_val.total;
    }
    SearchEpochLog entry;
    entry.epoch = epoch;
    entry.l_train = sum_train / std::max(1, steps);
    entry.l_val = sum_val / std::max(1, steps);
    for (SearchCell* cell : net.active_cells()) {
      const auto probs = cell->probabilities();
      double on = 0.0;
      for (double p : probs) on += p >= 0.5 ? 1.0 : 0.0;
      entry.gate_fractions.emplace_back(cell->name(),
                                        on / static_cast<double>(probs.size()));
    }
    log.epochs.push_back(std::move(entry));
  }

  net.derive_all_gates();
  return log;
}

void retrain(TwoStreamNet& net, RenderedDataset& data,
             const BilevelConfig& config, std::uint64_t run_seed,
             std::uint64_t retrain_seed, const TrainLogSink& sink) {
  config.validate();
  net.init_weights(retrain_seed);
  SamplePool pool =
      SamplePool::from_indices(data.manifest(), data.manifest().train_indices());
  if (pool.ids.empty()) throw Error("retrain: empty training pool");
  const int steps = config.resolved_steps(static_cast<int>(pool.ids.size()));

  SgdMomentum opt(net.weight_params(), config.momentum);
  Rng batch_rng(mix64(run_seed, kTagRetrainBatch));

  for (int epoch = 0; epoch < config.retrain_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config.base_lr);
    for (int step = 0; step < steps; ++step) {
      IdentityBatch batch =
          sample_batch(data, pool, config.batch_p, config.batch_k, batch_rng);
      net.zero_grad();
      Rng pair_rng(mix64(mix64(run_seed, kTagRetrainPair),
                         mix64(static_cast<std::uint64_t>(epoch),
                               static_cast<std::uint64_t>(step))));
      auto [loss, losses] =
          batch_loss(net, batch, RunMode::kTrain, config.contrastive, pair_rng);
      check_finite(losses, "train", epoch, step);
      backward(loss);
      opt.step(lr);
      net.zero_grad();
      if (sink) {
        TrainStepLog row;
        row.epoch = epoch;
        row.step = step;
        row.losses = losses;
        row.lr = lr;
        sink(row);
      }
    }
  }
}

std::vector<double> quadratic_surrogate_trace(double p0, double target,
                                              double gate_lr, int steps) {
  Tensor p = Tensor::scalar(p0, true);
  std::vector<NamedTensor> params{{"surrogate.P", p}};
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    p.zero_grad();
    Tensor loss = sum(square(add_scalar(sigmoid(p), -target)));
    backward(loss);
    gate_sgd_step(params, gate_lr);
    trace.push_back(1.0 / (1.0 + std::exp(-p.values()[0])));
  }
  return trace;
}

}  // namespace nfs
