#include <doctest.h>

#include <cmath>

#include "nfs/error.hpp"
#include "nfs/network.hpp"
#include "nfs/rng.hpp"

using namespace nfs;

namespace {

ModelConfig toy_config(std::vector<int> searched = {}) {
  ModelConfig config;
  config.input_h = 32;
  config.input_w = 16;
  config.stem_channels = 16;
  config.stage_widths = {16, 32, 64, 128};
  config.num_identities = 8;
  config.searched_stages = std::move(searched);
  return config;
}

IdentityBatch random_batch(int n_rgb, int n_ir, int h, int w, Rng& rng) {
  IdentityBatch batch;
  auto fill = [&rng](Shape shape) {
    std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : values) v = rng.uniform01();
    return Tensor::from_values(std::move(shape), std::move(values));
  };
  if (n_rgb > 0) {
    batch.rgb_images = fill({n_rgb, 3, h, w});
    for (int i = 0; i < n_rgb; ++i) batch.rgb_labels.push_back(i % 4);
  }
  if (n_ir > 0) {
    batch.ir_images = fill({n_ir, 1, h, w});
    for (int i = 0; i < n_ir; ++i) batch.ir_labels.push_back(i % 4);
  }
  return batch;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("default toy config yields a 128-dim embedding") {
  TwoStreamNet net = TwoStreamNet::init(toy_config(), 1);
  CHECK(net.embedding_dim() == 128);
  Rng rng(2);
  IdentityBatch batch = random_batch(2, 2, 32, 16, rng);
  ForwardResult result = net.forward(batch, RunMode::kEval, true);
  CHECK(result.embeddings.vectors.shape() == Shape{4, 128});
  CHECK(result.logits.shape() == Shape{4, 8});
  CHECK(result.embeddings.modalities[0] == Modality::kRgb);
  CHECK(result.embeddings.modalities[3] == Modality::kIr);
}

TEST_CASE("config validation") {
  ModelConfig config = toy_config();
  config.num_identities = 0;
  CHECK_THROWS_AS(TwoStreamNet::init(config, 1), ConfigError);
  config = toy_config();
  config.searched_stages = {5};
  CHECK_THROWS_AS(TwoStreamNet::init(config, 1), ConfigError);
  config = toy_config();
  config.stage_widths = {};
  CHECK_THROWS_AS(TwoStreamNet::init(config, 1), ConfigError);
}

TEST_CASE("modality/channel mismatches are rejected, never coerced") {
  TwoStreamNet net = TwoStreamNet::init(toy_config(), 1);
  Rng rng(3);
  IdentityBatch swapped;
  swapped.rgb_images = Tensor::zeros({2, 1, 32, 16});  // ir-shaped into rgb stem
  swapped.rgb_labels = {0, 1};
  CHECK_THROWS_WITH_AS(net.forward(swapped, RunMode::kEval, false),
                       doctest::Contains("rgb stem expects 3-channel"), ShapeError);

  IdentityBatch swapped_ir;
  swapped_ir.ir_images = Tensor::zeros({2, 3, 32, 16});
  swapped_ir.ir_labels = {0, 1};
  CHECK_THROWS_WITH_AS(net.forward(swapped_ir, RunMode::kEval, false),
                       doctest::Contains("ir stem expects 1-channel"), ShapeError);
}

TEST_CASE("too-small spatial input is rejected at validation") {
  ModelConfig config = toy_config();
  config.input_h = 2;
  config.input_w = 2;
  CHECK_THROWS_AS(TwoStreamNet::init(config, 1), ConfigError);
}

TEST_CASE("same seed gives byte-identical initialization") {
  TwoStreamNet a = TwoStreamNet::init(toy_config({1, 2}), 99);
  TwoStreamNet b = TwoStreamNet::init(toy_config({1, 2}), 99);
  auto ea = a.state_entries();
  auto eb = b.state_entries();
  REQUIRE(ea.size() == eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) {
    CHECK(ea[i].name == eb[i].name);
    CHECK(ea[i].tensor.values() == eb[i].tensor.values());
  }
}

TEST_CASE("fixed seed and weights give bit-identical embeddings across runs") {
  TwoStreamNet net = TwoStreamNet::init(toy_config(), 5);
  Rng rng(6);
  IdentityBatch batch = random_batch(3, 3, 32, 16, rng);
  ForwardResult first = net.forward(batch, RunMode::kEval, false);
  ForwardResult second = net.forward(batch, RunMode::kEval, false);
  CHECK(first.embeddings.vectors.values() == second.embeddings.vectors.values());
}

TEST_CASE("kaiming init variance is about 2/fan_in on large conv layers") {
  TwoStreamNet net = TwoStreamNet::init(toy_config(), 13);
  for (auto& param : net.weight_params()) {
    if (param.name.find("conv.weight") == std::string::npos) continue;
    const auto& values = param.tensor.values();
    if (values.size() < 1000) continue;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    // fan_in = C_in * k * k = numel / C_out
    const double fan_in =
        static_cast<double>(param.tensor.numel() / param.tensor.dim(0));
    const double expected = 2.0 / fan_in;
    CHECK(var > 0.8 * expected);
    CHECK(var < 1.2 * expected);
  }
}

TEST_CASE("all-ones derived gates reproduce the gate-free network exactly") {
  const std::uint64_t seed = 21;
  TwoStreamNet gated = TwoStreamNet::init(toy_config({1, 2, 3}), seed);
  TwoStreamNet plain = TwoStreamNet::init(toy_config(), seed);

  for (SearchCell* cell : gated.active_cells()) {
    cell->derived_gate.assign(cell->P.values().size(), 1.0);
    cell->frozen = true;
  }
  gated.mark_gates_loaded();

  Rng rng(22);
  IdentityBatch batch = random_batch(2, 2, 32, 16, rng);
  ForwardResult a = gated.forward(batch, RunMode::kEval, false);
  ForwardResult b = plain.forward(batch, RunMode::kEval, false);
  CHECK(a.embeddings.vectors.values() == b.embeddings.vectors.values());
}

TEST_CASE("train mode with underived gates is an error") {
  TwoStreamNet net = TwoStreamNet::init(toy_config({1}), 31);
  Rng rng(32);
  IdentityBatch batch = random_batch(2, 2, 32, 16, rng);
  CHECK_THROWS_WITH_AS(net.forward(batch, RunMode::kTrain, false),
                       doctest::Contains("underived gates"), Error);
}

TEST_CASE("search mode forwards with sampled gates and finite outputs") {
  TwoStreamNet net = TwoStreamNet::init(toy_config({1, 2, 3}), 41);
  Rng rng(42);
  net.sample_all_gates(rng, GateSampler::kContinuousBernoulli);
  IdentityBatch batch = random_batch(4, 4, 32, 16, rng);
  ForwardResult result = net.forward(batch, RunMode::kSearch, true);
  for (double v : result.embeddings.vectors.values()) CHECK(std::isfinite(v));
  for (double v : result.logits.values()) CHECK(std::isfinite(v));
}

}  // TEST_SUITE
