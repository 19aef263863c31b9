#include "nfs/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "nfs/error.hpp"
#include "nfs/rng.hpp"

namespace nfs {

namespace {

constexpr int kKernel = 3;
constexpr int kPad = 1;

void kaiming_fill(Tensor& weights, std::int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : weights.values()) v = rng.normal() * stddev;
}

struct StageDims {
  std::int64_t h, w;
};

// Spatial size after the stem (stride 1) and each stage (stride 2 except the
// last, which keeps stride 1).
std::vector<StageDims> stage_output_dims(const ModelConfig& config) {
  std::vector<StageDims> dims;
  std::int64_t h = config.input_h, w = config.input_w;
  const int n = config.num_stages();
  for (int i = 0; i < n; ++i) {
    const int stride = (i == n - 1) ? 1 : 2;
    h = (h + 2 * kPad - kKernel) / stride + 1;
    w = (w + 2 * kPad - kKernel) / stride + 1;
    if (h < 1 || w < 1) {
      throw ConfigError("stage " + std::to_string(i + 1) +
                        " output collapses to zero spatial size");
    }
    dims.push_back({h, w});
  }
  return dims;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_identities < 1) {
    throw ConfigError("model config needs at least one identity, got " +
                      std::to_string(num_identities));
  }
  if (stage_widths.empty()) throw ConfigError("model config needs at least one stage");
  for (int w : stage_widths) {
    if (w < 1) throw ConfigError("stage widths must be positive");
  }
  if (input_h < 4 || input_w < 4) {
    throw ConfigError("input size too small: " + std::to_string(input_h) + "x" +
                      std::to_string(input_w));
  }
  if (stem_channels < 1) throw ConfigError("stem channels must be positive");
  for (int s : searched_stages) {
    if (s < 1 || s > num_stages()) {
      throw ConfigError("searched stage " + std::to_string(s) + " outside 1.." +
                        std::to_string(num_stages()));
    }
  }
  stage_output_dims(*this);  // throws if the stack collapses
}

TwoStreamNet TwoStreamNet::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  TwoStreamNet net;
  net.config_ = config;

  net.rgb_stem_ = make_conv_block(config.stem_channels, 3, kKernel, 1, kPad);
  net.ir_stem_ = make_conv_block(config.stem_channels, 1, kKernel, 1, kPad);

  const auto dims = stage_output_dims(config);
  std::int64_t c_in = config.stem_channels;
  const int n = config.num_stages();
  for (int i = 0; i < n; ++i) {
    const int stride = (i == n - 1) ? 1 : 2;
    StageBlock block;
    block.conv = make_conv_block(config.stage_widths[static_cast<std::size_t>(i)],
                                 c_in, kKernel, stride, kPad);
    block.bn = BatchNormState::create(config.stage_widths[static_cast<std::size_t>(i)]);
    net.stages_.push_back(std::move(block));
    c_in = config.stage_widths[static_cast<std::size_t>(i)];
  }
  net.bn_neck_ = BatchNormState::create(c_in);
  net.classifier_w_ = Tensor::zeros({c_in, config.num_identities}, true);
  net.classifier_b_ = Tensor::zeros({config.num_identities}, true);

  net.cells_.resize(static_cast<std::size_t>(n));
  for (int s : config.searched_stages) {
    const auto i = static_cast<std::size_t>(s - 1);
    const std::int64_t c = config.stage_widths[i];
    const Shape pixel_shape{c, dims[i].h, dims[i].w};
    Rng cell_rng(mix64(seed, 0xce11 + static_cast<std::uint64_t>(s)));
    StageCells cells;
    cells.pixel_rgb = SearchCell::create(Level::kPixel, Modality::kRgb, s,
                                         pixel_shape, cell_rng);
    cells.pixel_ir = SearchCell::create(Level::kPixel, Modality::kIr, s,
                                        pixel_shape, cell_rng);
    cells.channel_rgb = SearchCell::create(Level::kChannel, Modality::kRgb, s,
                                           Shape{c}, cell_rng);
    cells.channel_ir = SearchCell::create(Level::kChannel, Modality::kIr, s,
                                          Shape{c}, cell_rng);
    net.cells_[i] = std::move(cells);
  }

  net.init_weights(seed);
  return net;
}

void TwoStreamNet::init_weights(std::uint64_t seed) {
  Rng rng(mix64(seed, 0x77e1647));
  auto init_conv = [&rng](ConvBlock& block) {
    kaiming_fill(block.weights,
                 block.in_channels() * block.kernel() * block.kernel(), rng);
    std::fill(block.bias.values().begin(), block.bias.values().end(), 0.0);
  };
  auto reset_bn = [](BatchNormState& bn) {
    std::fill(bn.gamma.values().begin(), bn.gamma.values().end(), 1.0);
    std::fill(bn.beta.values().begin(), bn.beta.values().end(), 0.0);
    std::fill(bn.running_mean.begin(), bn.running_mean.end(), 0.0);
    std::fill(bn.running_var.begin(), bn.running_var.end(), 1.0);
  };
  init_conv(rgb_stem_);
  init_conv(ir_stem_);
  for (auto& stage : stages_) {
    init_conv(stage.conv);
    reset_bn(stage.bn);
  }
  reset_bn(bn_neck_);
  kaiming_fill(classifier_w_, classifier_w_.dim(0), rng);
  std::fill(classifier_b_.values().begin(), classifier_b_.values().end(), 0.0);
}

ForwardResult TwoStreamNet::forward(const IdentityBatch& batch, RunMode mode,
                                    bool want_logits) {
  if (batch.rows() == 0) throw Error("forward: empty batch");
  Tensor rgb_out, ir_out;
  if (batch.rgb_images.defined()) {
    if (batch.rgb_images.dim(1) != 3) {
      throw ShapeError("rgb stem expects 3-channel input, got " +
                       shape_str(batch.rgb_images.shape()));
    }
    rgb_out = relu(conv2d(batch.rgb_images, rgb_stem_));
  }
  if (batch.ir_images.defined()) {
    if (batch.ir_images.dim(1) != 1) {
      throw ShapeError("ir stem expects 1-channel input, got " +
                       shape_str(batch.ir_images.shape()));
    }
    ir_out = relu(conv2d(batch.ir_images, ir_stem_));
  }

  Tensor x = concat_batch(rgb_out, ir_out);
  const auto mods = batch.row_modalities();
  const bool train_stats = mode != RunMode::kEval;

  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = relu(batch_norm(conv2d(x, stages_[i].conv), stages_[i].bn, train_stats));
    if (cells_[i].has_value()) {
      GateSource source;
      if (mode == RunMode::kSearch) {
        source = GateSource::kSampled;
      } else {
        if (!gates_derived_) {
          throw Error("forward: stage " + std::to_string(i + 1) +
                      " has underived gates; run the search phase first");
        }
        source = GateSource::kDerived;
      }
      x = apply_gates(x, *cells_[i], mods, source);
    }
  }

  Tensor pooled = global_avg_pool(x);
  Tensor embedding = batch_norm(pooled, bn_neck_, train_stats);

  ForwardResult result;
  result.embeddings.vectors = embedding;
  result.embeddings.identities = batch.row_labels();
  result.embeddings.modalities = mods;
  if (want_logits) {
    result.logits = affine(embedding, classifier_w_, classifier_b_);
  }
  return result;
}

void TwoStreamNet::sample_all_gates(Rng& rng, GateSampler sampler) {
  for (SearchCell* cell : active_cells()) sample_gates(*cell, rng, sampler);
}

void TwoStreamNet::derive_all_gates() {
  for (SearchCell* cell : active_cells()) derive_gates(*cell);
  gates_derived_ = true;
}

bool TwoStreamNet::gates_derived() const { return gates_derived_; }

void TwoStreamNet::mark_gates_loaded() {
  for (SearchCell* cell : active_cells()) {
    if (cell->derived_gate.size() != cell->P.values().size()) {
      throw Error("cell " + cell->name() + " has no loaded gates");
    }
  }
  gates_derived_ = true;
}

std::vector<NamedTensor> TwoStreamNet::weight_params() {
  std::vector<NamedTensor> params;
  params.push_back({"rgb_stem.weight", rgb_stem_.weights});
  params.push_back({"rgb_stem.bias", rgb_stem_.bias});
  params.push_back({"ir_stem.weight", ir_stem_.weights});
  params.push_back({"ir_stem.bias", ir_stem_.bias});
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i + 1) + ".";
    params.push_back({prefix + "conv.weight", stages_[i].conv.weights});
    params.push_back({prefix + "conv.bias", stages_[i].conv.bias});
    params.push_back({prefix + "bn.gamma", stages_[i].bn.gamma});
    params.push_back({prefix + "bn.beta", stages_[i].bn.beta});
  }
  params.push_back({"bn_neck.gamma", bn_neck_.gamma});
  params.push_back({"bn_neck.beta", bn_neck_.beta});
  params.push_back({"classifier.weight", classifier_w_});
  params.push_back({"classifier.bias", classifier_b_});
  return params;
}

std::vector<NamedTensor> TwoStreamNet::gate_params() {
  std::vector<NamedTensor> params;
  for (SearchCell* cell : active_cells()) {
    if (!cell->frozen) params.push_back({cell->name() + ".P", cell->P});
  }
  return params;
}

std::vector<SearchCell*> TwoStreamNet::active_cells() {
  std::vector<SearchCell*> cells;
  for (auto& maybe : cells_) {
    if (maybe.has_value()) {
      for (SearchCell* cell : maybe->all()) cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<NamedTensor> TwoStreamNet::state_entries() {
  std::vector<NamedTensor> entries = weight_params();
  auto push_stats = [&entries](const std::string& prefix, const BatchNormState& bn) {
    const auto c = static_cast<std::int64_t>(bn.running_mean.size());
    entries.push_back({prefix + ".running_mean",
                       Tensor::from_values({c}, bn.running_mean)});
    entries.push_back({prefix + ".running_var",
                       Tensor::from_values({c}, bn.running_var)});
  };
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    push_stats("stage" + std::to_string(i + 1) + ".bn", stages_[i].bn);
  }
  push_stats("bn_neck", bn_neck_);
  for (SearchCell* cell : active_cells()) {
    entries.push_back({cell->name() + ".P", cell->P});
    if (!cell->derived_gate.empty()) {
      entries.push_back({cell->name() + ".G",
                         Tensor::from_values(cell->P.shape(), cell->derived_gate)});
    }
  }
  return entries;
}

void TwoStreamNet::load_state(const std::vector<NamedTensor>& entries) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;

  auto copy_into = [&by_name](const std::string& name, std::vector<double>& dst,
                              bool required) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (required) throw IoError("checkpoint is missing tensor '" + name + "'");
      return false;
    }
    const auto& src = it->second->tensor.values();
    if (src.size() != dst.size()) {
      throw IoError("checkpoint tensor '" + name + "' has " +
                    std::to_string(src.size()) + " values, expected " +
                    std::to_string(dst.size()));
    }
    std::copy(src.begin(), src.end(), dst.begin());
    return true;
  };

  for (auto& param : weight_params()) {
    copy_into(param.name, param.tensor.values(), true);
  }
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i + 1) + ".bn";
    copy_into(prefix + ".running_mean", stages_[i].bn.running_mean, true);
    copy_into(prefix + ".running_var", stages_[i].bn.running_var, true);
  }
  copy_into("bn_neck.running_mean", bn_neck_.running_mean, true);
  copy_into("bn_neck.running_var", bn_neck_.running_var, true);

  bool all_derived = !active_cells().empty();
  for (SearchCell* cell : active_cells()) {
    copy_into(cell->name() + ".P", cell->P.values(), true);
    std::vector<double> gates(cell->P.values().size());
    if (copy_into(cell->name() + ".G", gates, false)) {
      cell->derived_gate = std::move(gates);
      cell->frozen = true;
      cell->P.set_requires_grad(false);
    } else {
      all_derived = false;
    }
  }
  gates_derived_ = all_derived;
}

std::vector<BatchNormState*> TwoStreamNet::bn_states() {
  std::vector<BatchNormState*> states;
  for (auto& stage : stages_) states.push_back(&stage.bn);
  states.push_back(&bn_neck_);
  return states;
}

bool TwoStreamNet::stage_searched(int stage_index_1based) const {
  const auto i = static_cast<std::size_t>(stage_index_1based - 1);
  return i < cells_.size() && cells_[i].has_value();
}

StageCells* TwoStreamNet::stage_cells(int stage_index_1based) {
  const auto i = static_cast<std::size_t>(stage_index_1based - 1);
  if (i >= cells_.size() || !cells_[i].has_value()) return nullptr;
  return &*cells_[i];
}

void TwoStreamNet::zero_grad() {
  for (auto& param : weight_params()) param.tensor.zero_grad();
  for (SearchCell* cell : active_cells()) cell->P.zero_grad();
}

}  // namespace nfs
