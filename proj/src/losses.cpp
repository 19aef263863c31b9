#include "nfs/losses.hpp"

#include <string>

#include "nfs/error.hpp"

namespace nfs {

void ContrastiveConfig::validate() const {
  if (margin_t < 0.0) throw ConfigError("contrastive margin must be >= 0");
  if (lambda_weight < 0.0) throw ConfigError("contrastive lambda must be >= 0");
}

Tensor id_loss(const Tensor& logits, const std::vector<int>& labels) {
  return cross_entropy(logits, labels);
}

Tensor wrt_triplet(const EmbeddingBatch& batch) {
  const auto B = batch.vectors.dim(0);
  if (static_cast<std::int64_t>(batch.identities.size()) != B) {
    throw ShapeError("wrt_triplet: " + std::to_string(batch.identities.size()) +
                     " identities for " + std::to_string(B) + " rows");
  }
  if (B < 2) throw Error("wrt_triplet: degenerate batch, need at least 2 rows");

  Tensor dist = pairwise_euclidean(batch.vectors);
  Tensor total;
  for (std::int64_t i = 0; i < B; ++i) {
    std::vector<std::pair<std::int64_t, std::int64_t>> pos, neg;
    for (std::int64_t j = 0; j < B; ++j) {
      if (j == i) continue;
      if (batch.identities[static_cast<std::size_t>(j)] ==
          batch.identities[static_cast<std::size_t>(i)]) {
        pos.emplace_back(i, j);
      } else {
        neg.emplace_back(i, j);
      }
    }
    if (pos.empty() || neg.empty()) {
      throw Error("wrt_triplet: degenerate batch, anchor " + std::to_string(i) +
                  " has " + (pos.empty() ? "no positive" : "no negative"));
    }
    Tensor d_pos = gather2d(dist, pos);
    Tensor d_neg = gather2d(dist, neg);
    Tensor w_pos = softmax1d(d_pos);
    Tensor w_neg = softmax1d(scale(d_neg, -1.0));
    Tensor anchor_loss = softplus(sub(dot(w_pos, d_pos), dot(w_neg, d_neg)));
    total = total.defined() ? add(total, anchor_loss) : anchor_loss;
  }
  return scale(total, 1.0 / static_cast<double>(B));
}

CrossModalPairSet pair_up(const EmbeddingBatch& batch, Rng& rng) {
  std::vector<std::int64_t> rgb_rows, ir_rows;
  for (std::size_t i = 0; i < batch.modalities.size(); ++i) {
    (batch.modalities[i] == Modality::kRgb ? rgb_rows : ir_rows)
        .push_back(static_cast<std::int64_t>(i));
  }
  if (rgb_rows.empty() || rgb_rows.size() != ir_rows.size()) {
    throw Error("pair_up: unbalanced modalities, " +
                std::to_string(rgb_rows.size()) + " rgb vs " +
                std::to_string(ir_rows.size()) + " ir rows");
  }
  rng.shuffle(ir_rows);
  CrossModalPairSet set;
  set.pairs.reserve(rgb_rows.size());
  for (std::size_t i = 0; i < rgb_rows.size(); ++i) {
    const auto r = rgb_rows[i];
    const auto s = ir_rows[i];
    const int label = batch.identities[static_cast<std::size_t>(r)] ==
                              batch.identities[static_cast<std::size_t>(s)]
                          ? 1
                          : 0;
    set.pairs.push_back({r, s, label});
  }
  return set;
}

Tensor contrastive_loss(const CrossModalPairSet& pairs,
                        const EmbeddingBatch& batch,
                        const ContrastiveConfig& config) {
  config.validate();
  if (pairs.pairs.empty()) throw Error("contrastive_loss: empty pair set");
  const auto B = batch.vectors.dim(0);
  std::vector<std::pair<std::int64_t, std::int64_t>> pos_idx, neg_idx;
  for (const auto& pair : pairs.pairs) {
    if (pair.rgb_index < 0 || pair.rgb_index >= B || pair.ir_index < 0 ||
        pair.ir_index >= B) {
      throw ShapeError("contrastive_loss: pair index outside the batch");
    }
    (pair.label == 1 ? pos_idx : neg_idx).emplace_back(pair.rgb_index, pair.ir_index);
  }

  Tensor dist = pairwise_euclidean(batch.vectors);
  Tensor total;
  if (!pos_idx.empty()) {
    total = sum(square(gather2d(dist, pos_idx)));
  }
  if (!neg_idx.empty()) {
    // max(0, T - D)^2 through relu, whose subgradient at the kink is 0
    Tensor hinge = relu(add_scalar(scale(gather2d(dist, neg_idx), -1.0),
                                   config.margin_t));
    Tensor neg_term = sum(square(hinge));
    total = total.defined() ? add(total, neg_term) : neg_term;
  }
  return scale(total, 1.0 / static_cast<double>(pairs.pairs.size()));
}

Tensor total_loss(const Tensor& l_id, const Tensor& l_tri, const Tensor& l_c,
                  const ContrastiveConfig& config) {
  config.validate();
  return add(add(l_id, l_tri), scale(l_c, config.lambda_weight));
}

}  // namespace nfs
