#pragma once

#include <cstdint>
#include <vector>

#include "nfs/batch.hpp"
#include "nfs/ops.hpp"
#include "nfs/rng.hpp"

namespace nfs {

struct ContrastiveConfig {
  double margin_t = 15.0;
  double lambda_weight = 0.04;

  void validate() const;
};

struct CrossModalPair {
  std::int64_t rgb_index;  // row in the embedding batch
  std::int64_t ir_index;
  int label;  // 1 iff identities match
};

struct CrossModalPairSet {
  std::vector<CrossModalPair> pairs;
};

// Mean softmax cross-entropy over the batch.
Tensor id_loss(const Tensor& logits, const std::vector<int>& labels);

// Weighted regularization triplet: per anchor, positive and negative
// distances are combined with softmax weights (negatives weighted by the
// softmax of their negated distances) inside a softplus, then averaged.
Tensor wrt_triplet(const EmbeddingBatch& batch);

// One uniformly random perfect matching between the rgb and ir rows.
CrossModalPairSet pair_up(const EmbeddingBatch& batch, Rng& rng);

// Mean over pairs of label * D^2 + (1 - label) * max(0, T - D)^2 with D the
// Euclidean distance between the paired embeddings.
Tensor contrastive_loss(const CrossModalPairSet& pairs,
                        const EmbeddingBatch& batch,
                        const ContrastiveConfig& config);

// L_id + L_tri + lambda * L_c.
Tensor total_loss(const Tensor& l_id, const Tensor& l_tri, const Tensor& l_c,
                  const ContrastiveConfig& config);

}  // namespace nfs
