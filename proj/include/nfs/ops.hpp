#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "nfs/tensor.hpp"

namespace nfs {

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);       // subgradient at 0 is 0
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
Tensor softplus(const Tensor& a);

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// input [B,D] x weights [D,K] + bias [K] -> [B,K].
Tensor affine(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct ConvBlock {
  Tensor weights;  // [C_out, C_in, k, k], k odd
  Tensor bias;     // [C_out]
  int stride = 1;
  int padding = 0;

  std::int64_t out_channels() const { return weights.dim(0); }
  std::int64_t in_channels() const { return weights.dim(1); }
  std::int64_t kernel() const { return weights.dim(2); }
};

ConvBlock make_conv_block(std::int64_t c_out, std::int64_t c_in, std::int64_t k,
                          int stride, int padding);

// input [B,C_in,H,W] -> [B,C_out,H',W'] with
// H' = (H + 2*padding - k)/stride + 1 (floor), same for W'.
Tensor conv2d(const Tensor& input, const ConvBlock& block);

// [B,C,H,W] -> [B,C], mean over spatial positions.
Tensor global_avg_pool(const Tensor& input);

// Batch normalization state shared by every input routed through it.
struct BatchNormState {
  Tensor gamma;  // [C], learned scale
  Tensor beta;   // [C], learned shift
  std::vector<double> running_mean;
  std::vector<double> running_var;

  static BatchNormState create(std::int64_t channels);
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Normalizes per channel (dim 1) over all remaining dims. Accepts [B,C]
// and [B,C,H,W]. Train mode uses batch statistics and updates the running
// ones; eval mode uses the running statistics.
Tensor batch_norm(const Tensor& input, BatchNormState& state, bool train);

// Concatenate along dim 0; either side may be undefined (passes the other
// through).
Tensor concat_batch(const Tensor& a, const Tensor& b);

// Pick entries (row, col) out of a [R,C] matrix into a vector [n].
Tensor gather2d(const Tensor& matrix,
                const std::vector<std::pair<std::int64_t, std::int64_t>>& idx);

// Softmax over a 1-D tensor.
Tensor softmax1d(const Tensor& v);

Tensor dot(const Tensor& a, const Tensor& b);

// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// [B,D] -> [B,B] matrix of Euclidean distances; diagonal is 0. Entries with
// zero upstream gradient contribute nothing in backward, so the diagonal can
// stay untouched.
Tensor pairwise_euclidean(const Tensor& embeddings);

}  // namespace nfs
