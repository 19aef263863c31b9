#include "nfs/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nfs/error.hpp"

namespace nfs {

namespace {

// Stream tags for deriving per-purpose seeds from the dataset seed.
constexpr std::uint64_t kTagSignature = 0x5160;
constexpr std::uint64_t kTagJitter = 0x71e7;
constexpr std::uint64_t kTagNoise = 0x0153;
constexpr std::uint64_t kTagClutter = 0xc107;

constexpr int kStripeBands = 16;
constexpr double kBackground = 0.1;

// The stripe maps are fixed constants of the generator, independent of the
// dataset seed: every dataset shares the same modality geometry.
constexpr std::uint64_t kRgbMapSeed = 0xa11ce;
constexpr std::uint64_t kIrMapSeed = 0xbeef1;

std::uint64_t modality_code(Modality m) { return m == Modality::kRgb ? 1 : 2; }

// Rows of the band-intensity map for one channel, unit L2 norm each, so a
// standard-normal signature maps to standard-normal band coefficients.
std::vector<double> stripe_map(std::uint64_t map_seed, int channel, int dim) {
  Rng rng(mix64(map_seed, static_cast<std::uint64_t>(channel)));
  std::vector<double> map(static_cast<std::size_t>(kStripeBands * dim));
  for (int s = 0; s < kStripeBands; ++s) {
    double norm_sq = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double v = rng.normal();
      map[static_cast<std::size_t>(s * dim + j)] = v;
      norm_sq += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int j = 0; j < dim; ++j) map[static_cast<std::size_t>(s * dim + j)] *= inv;
  }
  return map;
}

}  // namespace

void DatasetConfig::validate() const {
  if (n_train_ids < 1 || n_test_ids < 1) {
    throw ConfigError("dataset needs positive train and test identity counts");
  }
  if (images_per_modality < 1) {
    throw ConfigError("dataset needs at least one image per modality");
  }
  if (signature_dim < 1) throw ConfigError("signature dimension must be positive");
  if (height < 8 || width < 8) {
    throw ConfigError("dataset image size too small: " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
  if (noise_sigma < 0.0 || jitter < 0.0 || max_clutter < 0 || stripe_gain <= 0.0) {
    throw ConfigError("dataset noise/jitter/clutter/gain out of range");
  }
}

std::vector<double> identity_signature(std::uint64_t dataset_seed, int id,
                                       int signature_dim) {
  Rng rng(mix64(mix64(dataset_seed, kTagSignature), static_cast<std::uint64_t>(id)));
  std::vector<double> sig(static_cast<std::size_t>(signature_dim));
  for (auto& v : sig) v = rng.normal();
  return sig;
}

Tensor render(const SampleSpec& spec, const DatasetConfig& config) {
  const int H = config.height, W = config.width;
  const int channels = spec.modality == Modality::kRgb ? 3 : 1;
  const auto sig = identity_signature(config.seed, spec.id, config.signature_dim);

  // Band intensity per channel from the fixed modality map.
  std::vector<double> bands(static_cast<std::size_t>(channels * kStripeBands));
  for (int c = 0; c < channels; ++c) {
    const auto map = spec.modality == Modality::kRgb
                         ? stripe_map(kRgbMapSeed, c, config.signature_dim)
                         : stripe_map(kIrMapSeed, c, config.signature_dim);
    for (int s = 0; s < kStripeBands; ++s) {
      double acc = 0.0;
      for (int j = 0; j < config.signature_dim; ++j) {
        acc += map[static_cast<std::size_t>(s * config.signature_dim + j)] *
               sig[static_cast<std::size_t>(j)];
      }
      bands[static_cast<std::size_t>(c * kStripeBands + s)] =
          0.5 + config.stripe_gain * acc;
    }
  }

  std::vector<double> img(static_cast<std::size_t>(channels * H * W), kBackground);

  // Background clutter, drawn before (so never over) the body.
  Rng clutter_rng(spec.clutter_seed);
  const int n_rects = static_cast<int>(clutter_rng.uniform_int(config.max_clutter + 1));
  for (int r = 0; r < n_rects; ++r) {
    const int x0 = static_cast<int>(clutter_rng.uniform_int(W));
    const int y0 = static_cast<int>(clutter_rng.uniform_int(H));
    const int rw = 2 + static_cast<int>(clutter_rng.uniform_int(6));
    const int rh = 2 + static_cast<int>(clutter_rng.uniform_int(8));
    for (int c = 0; c < channels; ++c) {
      const double intensity = clutter_rng.uniform(0.1, 0.9);
      for (int y = y0; y < std::min(y0 + rh, H); ++y) {
        for (int x = x0; x < std::min(x0 + rw, W); ++x) {
          img[static_cast<std::size_t>((c * H + y) * W + x)] = intensity;
        }
      }
    }
  }

  // Body: vertical ellipse filled with signature-driven stripe bands.
  const double cx = (W - 1) / 2.0 + spec.dx;
  const double cy = (H - 1) / 2.0 + spec.dy;
  const double a = 0.32 * W;
  const double b = 0.40 * H;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double ex = (x - cx) / a;
      const double ey = (y - cy) / b;
      if (ex * ex + ey * ey > 1.0) continue;
      int band = static_cast<int>(std::floor((y - (cy - b)) / (2.0 * b) * kStripeBands));
      band = std::clamp(band, 0, kStripeBands - 1);
      for (int c = 0; c < channels; ++c) {
        img[static_cast<std::size_t>((c * H + y) * W + x)] =
            bands[static_cast<std::size_t>(c * kStripeBands + band)];
      }
    }
  }

  Rng noise_rng(spec.noise_seed);
  for (auto& v : img) {
    v = std::clamp(v + config.noise_sigma * noise_rng.normal(), 0.0, 1.0);
  }

  return Tensor::from_values({1, channels, H, W}, std::move(img));
}

DatasetManifest build_dataset(const DatasetConfig& config) {
  config.validate();
  DatasetManifest manifest;
  manifest.config = config;
  const int total_ids = config.n_train_ids + config.n_test_ids;
  for (int id = 0; id < total_ids; ++id) {
    for (Modality m : {Modality::kRgb, Modality::kIr}) {
      for (int inst = 0; inst < config.images_per_modality; ++inst) {
        SampleSpec spec;
        spec.id = id;
        spec.modality = m;
        spec.instance = inst;
        const std::uint64_t key =
            mix64(mix64(static_cast<std::uint64_t>(id), modality_code(m)),
                  static_cast<std::uint64_t>(inst));
        Rng jitter_rng(mix64(mix64(config.seed, kTagJitter), key));
        spec.dx = jitter_rng.uniform(-config.jitter, config.jitter);
        spec.dy = jitter_rng.uniform(-config.jitter, config.jitter);
        spec.noise_seed = mix64(mix64(config.seed, kTagNoise), key);
        spec.clutter_seed = mix64(mix64(config.seed, kTagClutter), key);
        manifest.samples.push_back(spec);
      }
    }
  }
  return manifest;
}

std::vector<int> DatasetManifest::train_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (is_train_sample(i)) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> DatasetManifest::test_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!is_train_sample(i)) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> DatasetManifest::test_indices(Modality m) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!is_train_sample(i) && samples[i].modality == m) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

const std::vector<double>& RenderedDataset::image(int sample_index) {
  auto it = cache_.find(sample_index);
  if (it != cache_.end()) return it->second;
  const auto& spec = manifest_.samples.at(static_cast<std::size_t>(sample_index));
  Tensor img = render(spec, manifest_.config);
  auto [pos, inserted] = cache_.emplace(sample_index, std::move(img.values()));
  return pos->second;
}

IdentityBatch RenderedDataset::assemble(const std::vector<int>& rgb_samples,
                                        const std::vector<int>& ir_samples) {
  const int H = manifest_.config.height, W = manifest_.config.width;
  IdentityBatch batch;
  auto fill = [&](const std::vector<int>& indices, int channels,
                  std::vector<int>& labels) -> Tensor {
    if (indices.empty()) return Tensor();
    const std::size_t per = static_cast<std::size_t>(channels * H * W);
    std::vector<double> buf(indices.size() * per);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& spec = manifest_.samples.at(static_cast<std::size_t>(indices[i]));
      const int expect_channels = spec.modality == Modality::kRgb ? 3 : 1;
      if (expect_channels != channels) {
        throw Error("assemble: sample " + std::to_string(indices[i]) +
                    " has the wrong modality");
      }
      const auto& px = image(indices[i]);
      std::copy(px.begin(), px.end(), buf.begin() + static_cast<std::ptrdiff_t>(i * per));
      labels.push_back(spec.id);
    }
    return Tensor::from_values(
        {static_cast<std::int64_t>(indices.size()), channels, H, W}, std::move(buf));
  };
  batch.rgb_images = fill(rgb_samples, 3, batch.rgb_labels);
  batch.ir_images = fill(ir_samples, 1, batch.ir_labels);
  return batch;
}

SamplePool SamplePool::from_indices(const DatasetManifest& manifest,
                                    const std::vector<int>& sample_indices) {
  SamplePool pool;
  for (int idx : sample_indices) {
    const auto& spec = manifest.samples.at(static_cast<std::size_t>(idx));
    auto& slot = spec.modality == Modality::kRgb ? pool.rgb : pool.ir;
    slot[spec.id].push_back(idx);
  }
  for (const auto& [id, list] : pool.rgb) {
    if (pool.ir.count(id)) pool.ids.push_back(id);
  }
  std::sort(pool.ids.begin(), pool.ids.end());
  return pool;
}

int SamplePool::min_images_per_modality() const {
  int lo = std::numeric_limits<int>::max();
  for (int id : ids) {
    lo = std::min(lo, static_cast<int>(rgb.at(id).size()));
    lo = std::min(lo, static_cast<int>(ir.at(id).size()));
  }
  return ids.empty() ? 0 : lo;
}

IdentityBatch sample_batch(RenderedDataset& data, const SamplePool& pool, int p,
                           int k, Rng& rng) {
  if (p < 1 || k < 1) throw ConfigError("sample_batch: P and K must be positive");
  if (p > static_cast<int>(pool.ids.size())) {
    throw Error("sample_batch: insufficient identities, want " + std::to_string(p) +
                " of " + std::to_string(pool.ids.size()));
  }
  std::vector<int> ids = pool.ids;
  rng.shuffle(ids);
  ids.resize(static_cast<std::size_t>(p));

  std::vector<int> rgb_rows, ir_rows;
  for (int id : ids) {
    auto pick = [&](const std::vector<int>& avail, std::vector<int>& out) {
      if (static_cast<int>(avail.size()) < k) {
        throw Error("sample_batch: insufficient images for identity " +
                    std::to_string(id) + ", want " + std::to_string(k) + " of " +
                    std::to_string(avail.size()));
      }
      std::vector<int> copy = avail;
      rng.shuffle(copy);
      out.insert(out.end(), copy.begin(), copy.begin() + k);
    };
    pick(pool.rgb.at(id), rgb_rows);
    pick(pool.ir.at(id), ir_rows);
  }
  return data.assemble(rgb_rows, ir_rows);
}

}  // namespace nfs
