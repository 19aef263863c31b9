#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "nfs/batch.hpp"
#include "nfs/modality.hpp"
#include "nfs/rng.hpp"
#include "nfs/tensor.hpp"

namespace nfs {

struct DatasetConfig {
  std::uint64_t seed = 1;
  int n_train_ids = 64;
  int n_test_ids = 32;
  int images_per_modality = 20;
  int signature_dim = 16;
  int height = 32;
  int width = 16;
  double noise_sigma = 0.05;
  double jitter = 2.0;   // translation range, px
  int max_clutter = 3;   // background rectangles per image
  double stripe_gain = 0.22;

  void validate() const;
};

// One rendered capture; the image is a pure function of this plus the
// dataset seed.
struct SampleSpec {
  int id = 0;
  Modality modality = Modality::kRgb;
  int instance = 0;
  double dx = 0.0, dy = 0.0;
  std::uint64_t noise_seed = 0;
  std::uint64_t clutter_seed = 0;
};

struct DatasetManifest {
  DatasetConfig config;
  std::vector<SampleSpec> samples;

  // Train identities are [0, n_train_ids), test identities follow.
  bool is_train_sample(std::size_t index) const {
    return samples[index].id < config.n_train_ids;
  }
  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
  std::vector<int> test_indices(Modality m) const;
};

// The latent identity vector shared by both modality renderings.
std::vector<double> identity_signature(std::uint64_t dataset_seed, int id,
                                       int signature_dim);

// Renders one 3x H x W (rgb) or 1 x H x W (ir) image in [0,1].
Tensor render(const SampleSpec& spec, const DatasetConfig& config);

DatasetManifest build_dataset(const DatasetConfig& config);

// Manifest plus a lazy render cache; images are rendered once.
class RenderedDataset {
 public:
  explicit RenderedDataset(DatasetManifest manifest)
      : manifest_(std::move(manifest)) {}

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<double>& image(int sample_index);

  // Assembles an IdentityBatch (rows grouped per id, K rgb + K ir each)
  // from explicit sample indices.
  IdentityBatch assemble(const std::vector<int>& rgb_samples,
                         const std::vector<int>& ir_samples);

 private:
  DatasetManifest manifest_;
  std::unordered_map<int, std::vector<double>> cache_;
};

// P distinct identities, K rgb + K ir images each, drawn without
// replacement from the per-identity pools (pool = map id -> sample indices
// per modality).
struct SamplePool {
  // id -> indices into manifest.samples
  std::unordered_map<int, std::vector<int>> rgb;
  std::unordered_map<int, std::vector<int>> ir;
  std::vector<int> ids;  // deterministic iteration order

  static SamplePool from_indices(const DatasetManifest& manifest,
                                 const std::vector<int>& sample_indices);
  int min_images_per_modality() const;
};

IdentityBatch sample_batch(RenderedDataset& data, const SamplePool& pool, int p,
                           int k, Rng& rng);

}  // namespace nfs
