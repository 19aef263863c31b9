#pragma once

#include <vector>

#include "nfs/modality.hpp"
#include "nfs/tensor.hpp"

namespace nfs {

// P identities x K images per modality. Images of the two modalities have
// different channel counts, so each block is its own tensor; the logical row
// order is rgb rows first, then ir rows.
struct IdentityBatch {
  Tensor rgb_images;  // [Nr,3,H,W], undefined when the batch has no rgb rows
  Tensor ir_images;   // [Ni,1,H,W]
  std::vector<int> rgb_labels;
  std::vector<int> ir_labels;

  std::int64_t rows() const {
    return static_cast<std::int64_t>(rgb_labels.size() + ir_labels.size());
  }

  std::vector<Modality> row_modalities() const {
    std::vector<Modality> mods;
    mods.insert(mods.end(), rgb_labels.size(), Modality::kRgb);
    mods.insert(mods.end(), ir_labels.size(), Modality::kIr);
    return mods;
  }

  std::vector<int> row_labels() const {
    std::vector<int> labels = rgb_labels;
    labels.insert(labels.end(), ir_labels.begin(), ir_labels.end());
    return labels;
  }
};

// Final representations after the shared batch-norm neck.
struct EmbeddingBatch {
  Tensor vectors;  // [B,D]
  std::vector<int> identities;
  std::vector<Modality> modalities;
};

}  // namespace nfs
