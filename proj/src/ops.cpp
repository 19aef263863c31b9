#include "nfs/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "nfs/error.hpp"

namespace nfs {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;
template <class M>
using Map = Eigen::Map<M>;
template <class M>
using ConstMap = Eigen::Map<const M>;

namespace {

Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name,
                          double (*fwd)(double, double),
                          void (*bwd)(double av, double bv, double go,
                                      double& ga, double& gb)) {
  check_same_shape(a, b, name);
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(a.values()[i], b.values()[i]);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op(a.shape(), std::move(out), {ai, bi},
                 [ai, bi, bwd](TensorImpl& self) {
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     double ga = 0.0, gb = 0.0;
                     bwd(ai->values[i], bi->values[i], self.grad[i], ga, gb);
                     if (ai->requires_grad) ai->grad[i] += ga;
                     if (bi->requires_grad) bi->grad[i] += gb;
                   }
                 });
}

Tensor elementwise_unary(const Tensor& a, double (*fwd)(double),
                         double (*dfdx)(double x, double y)) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
  auto ai = a.impl();
  return make_op(a.shape(), std::move(out), {ai},
                 [ai, dfdx](TensorImpl& self) {
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     ai->grad[i] += dfdx(ai->values[i], self.values[i]) * self.grad[i];
                   }
                 });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double go, double& ga, double& gb) {
        ga = go;
        gb = go;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double go, double& ga, double& gb) {
        ga = go;
        gb = -go;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double av, double bv, double go, double& ga, double& gb) {
        ga = go * bv;
        gb = go * av;
      });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  auto ai = a.impl();
  return make_op(a.shape(), std::move(out), {ai}, [ai, c](TensorImpl& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ai->grad[i] += c * self.grad[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  auto ai = a.impl();
  return make_op(a.shape(), std::move(out), {ai}, [ai](TensorImpl& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ai->grad[i] += self.grad[i];
    }
  });
}

Tensor relu(const Tensor& a) {
  return elementwise_unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return elementwise_unary(a, &stable_sigmoid,
                           [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& a) {
  return elementwise_unary(a, [](double x) { return x * x; },
                           [](double x, double) { return 2.0 * x; });
}

Tensor softplus(const Tensor& a) {
  return elementwise_unary(
      a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  auto ai = a.impl();
  return make_op({1}, {total}, {ai}, [ai](TensorImpl& self) {
    double go = self.grad[0];
    for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += go;
  });
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  double inv_n = 1.0 / static_cast<double>(a.numel());
  auto ai = a.impl();
  return make_op({1}, {total * inv_n}, {ai}, [ai, inv_n](TensorImpl& self) {
    double go = self.grad[0] * inv_n;
    for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += go;
  });
}

Tensor affine(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.ndim() != 2 || weights.ndim() != 2 || bias.ndim() != 1) {
    throw ShapeError("affine: expected input [B,D], weights [D,K], bias [K], got " +
                     shape_str(input.shape()) + ", " + shape_str(weights.shape()) +
                     ", " + shape_str(bias.shape()));
  }
  if (input.dim(1) != weights.dim(0)) {
    throw ShapeError("affine: inner dimension mismatch, input dim 1 is " +
                     std::to_string(input.dim(1)) + " but weights dim 0 is " +
                     std::to_string(weights.dim(0)));
  }
  if (bias.dim(0) != weights.dim(1)) {
    throw ShapeError("affine: bias dim 0 is " + std::to_string(bias.dim(0)) +
                     " but weights dim 1 is " + std::to_string(weights.dim(1)));
  }
  const auto B = input.dim(0), D = input.dim(1), K = weights.dim(1);
  std::vector<double> out(static_cast<std::size_t>(B * K));
  {
    ConstMap<RowMat> x(input.values().data(), B, D);
    ConstMap<RowMat> w(weights.values().data(), D, K);
    Map<RowMat> y(out.data(), B, K);
    y.noalias() = x * w;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t k = 0; k < K; ++k) {
        out[static_cast<std::size_t>(b * K + k)] += bias.values()[static_cast<std::size_t>(k)];
      }
    }
  }
  auto xi = input.impl();
  auto wi = weights.impl();
  auto bi = bias.impl();
  return make_op({B, K}, std::move(out), {xi, wi, bi},
                 [xi, wi, bi, B, D, K](TensorImpl& self) {
                   ConstMap<RowMat> gy(self.grad.data(), B, K);
                   if (xi->requires_grad) {
                     ConstMap<RowMat> w(wi->values.data(), D, K);
                     Map<RowMat> gx(xi->grad.data(), B, D);
                     gx.noalias() += gy * w.transpose();
                   }
                   if (wi->requires_grad) {
                     ConstMap<RowMat> x(xi->values.data(), B, D);
                     Map<RowMat> gw(wi->grad.data(), D, K);
                     gw.noalias() += x.transpose() * gy;
                   }
                   if (bi->requires_grad) {
                     for (std::int64_t b = 0; b < B; ++b) {
                       for (std::int64_t k = 0; k < K; ++k) {
                         bi->grad[static_cast<std::size_t>(k)] +=
                             self.grad[static_cast<std::size_t>(b * K + k)];
                       }
                     }
                   }
                 });
}

ConvBlock make_conv_block(std::int64_t c_out, std::int64_t c_in, std::int64_t k,
                          int stride, int padding) {
  if (k <= 0 || k % 2 == 0) {
    throw ConfigError("conv kernel size must be odd and positive, got " +
                      std::to_string(k));
  }
  if (stride < 1 || padding < 0 || c_out < 1 || c_in < 1) {
    throw ConfigError("invalid conv block configuration");
  }
  ConvBlock block;
  block.weights = Tensor::zeros({c_out, c_in, k, k}, true);
  block.bias = Tensor::zeros({c_out}, true);
  block.stride = stride;
  block.padding = padding;
  return block;
}

namespace {

struct ConvDims {
  std::int64_t B, C_in, H, W, C_out, k, H_out, W_out;
  int stride, padding;
};

ConvDims conv_dims(const Tensor& input, const ConvBlock& block) {
  if (input.ndim() != 4) {
    throw ShapeError("conv2d: expected 4-D input [B,C,H,W], got " +
                     shape_str(input.shape()));
  }
  ConvDims d;
  d.B = input.dim(0);
  d.C_in = input.dim(1);
  d.H = input.dim(2);
  d.W = input.dim(3);
  d.C_out = block.out_channels();
  d.k = block.kernel();
  d.stride = block.stride;
  d.padding = block.padding;
  if (d.C_in != block.in_channels()) {
    throw ShapeError("conv2d: input channel dimension (dim 1) is " +
                     std::to_string(d.C_in) + " but the block expects " +
                     std::to_string(block.in_channels()));
  }
  d.H_out = (d.H + 2 * d.padding - d.k) / d.stride + 1;
  d.W_out = (d.W + 2 * d.padding - d.k) / d.stride + 1;
  if (d.H + 2 * d.padding < d.k || d.W + 2 * d.padding < d.k || d.H_out < 1 ||
      d.W_out < 1) {
    throw ShapeError("conv2d: degenerate output " + std::to_string(d.H_out) + "x" +
                     std::to_string(d.W_out) + " for input " +
                     shape_str(input.shape()) + " with kernel " +
                     std::to_string(d.k));
  }
  return d;
}

// col(C_in*k*k, B*H_out*W_out); column index is b*(H_out*W_out) + oh*W_out + ow.
void im2col(const std::vector<double>& x, const ConvDims& d, ColMat& col) {
  const std::int64_t spatial = d.H_out * d.W_out;
  col.resize(d.C_in * d.k * d.k, d.B * spatial);
  for (std::int64_t b = 0; b < d.B; ++b) {
    for (std::int64_t oh = 0; oh < d.H_out; ++oh) {
      for (std::int64_t ow = 0; ow < d.W_out; ++ow) {
        const std::int64_t c_idx = b * spatial + oh * d.W_out + ow;
        std::int64_t r = 0;
        for (std::int64_t c = 0; c < d.C_in; ++c) {
          const std::int64_t base = (b * d.C_in + c) * d.H * d.W;
          for (std::int64_t ki = 0; ki < d.k; ++ki) {
            const std::int64_t ih = oh * d.stride - d.padding + ki;
            for (std::int64_t kj = 0; kj < d.k; ++kj, ++r) {
              const std::int64_t iw = ow * d.stride - d.padding + kj;
              col(r, c_idx) = (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W)
                                  ? x[static_cast<std::size_t>(base + ih * d.W + iw)]
                                  : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_accumulate(const ColMat& col, const ConvDims& d, std::vector<double>& gx) {
  const std::int64_t spatial = d.H_out * d.W_out;
  for (std::int64_t b = 0; b < d.B; ++b) {
    for (std::int64_t oh = 0; oh < d.H_out; ++oh) {
      for (std::int64_t ow = 0; ow < d.W_out; ++ow) {
        const std::int64_t c_idx = b * spatial + oh * d.W_out + ow;
        std::int64_t r = 0;
        for (std::int64_t c = 0; c < d.C_in; ++c) {
          const std::int64_t base = (b * d.C_in + c) * d.H * d.W;
          for (std::int64_t ki = 0; ki < d.k; ++ki) {
            const std::int64_t ih = oh * d.stride - d.padding + ki;
            for (std::int64_t kj = 0; kj < d.k; ++kj, ++r) {
              const std::int64_t iw = ow * d.stride - d.padding + kj;
              if (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W) {
                gx[static_cast<std::size_t>(base + ih * d.W + iw)] += col(r, c_idx);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvBlock& block) {
  const ConvDims d = conv_dims(input, block);
  const std::int64_t spatial = d.H_out * d.W_out;
  const std::int64_t kk = d.C_in * d.k * d.k;

  ColMat col;
  im2col(input.values(), d, col);
  ConstMap<RowMat> w(block.weights.values().data(), d.C_out, kk);
  ColMat out_mat = w * col;  // [C_out, B*spatial]

  std::vector<double> out(static_cast<std::size_t>(d.B * d.C_out * spatial));
  for (std::int64_t b = 0; b < d.B; ++b) {
    for (std::int64_t c = 0; c < d.C_out; ++c) {
      const double bias_c = block.bias.values()[static_cast<std::size_t>(c)];
      double* dst = out.data() + (b * d.C_out + c) * spatial;
      for (std::int64_t s = 0; s < spatial; ++s) {
        dst[s] = out_mat(c, b * spatial + s) + bias_c;
      }
    }
  }

  auto xi = input.impl();
  auto wi = block.weights.impl();
  auto bi = block.bias.impl();
  return make_op(
      {d.B, d.C_out, d.H_out, d.W_out}, std::move(out), {xi, wi, bi},
      [xi, wi, bi, d, spatial, kk](TensorImpl& self) {
        ColMat gy(d.C_out, d.B * spatial);
        for (std::int64_t b = 0; b < d.B; ++b) {
          for (std::int64_t c = 0; c < d.C_out; ++c) {
            const double* src = self.grad.data() + (b * d.C_out + c) * spatial;
            for (std::int64_t s = 0; s < spatial; ++s) {
              gy(c, b * spatial + s) = src[s];
            }
          }
        }
        if (bi->requires_grad) {
          for (std::int64_t c = 0; c < d.C_out; ++c) {
            bi->grad[static_cast<std::size_t>(c)] += gy.row(c).sum();
          }
        }
        if (wi->requires_grad) {
          ColMat col;
          im2col(xi->values, d, col);  // rebuilt instead of cached
          Map<RowMat> gw(wi->grad.data(), d.C_out, kk);
          gw.noalias() += gy * col.transpose();
        }
        if (xi->requires_grad) {
          ConstMap<RowMat> w(wi->values.data(), d.C_out, kk);
          ColMat gcol = w.transpose() * gy;
          col2im_accumulate(gcol, d, xi->grad);
        }
      });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.ndim() != 4) {
    throw ShapeError("global_avg_pool: expected 4-D input, got " +
                     shape_str(input.shape()));
  }
  const auto B = input.dim(0), C = input.dim(1);
  const auto spatial = input.dim(2) * input.dim(3);
  const double inv = 1.0 / static_cast<double>(spatial);
  std::vector<double> out(static_cast<std::size_t>(B * C));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const double* src = input.values().data() + (b * C + c) * spatial;
      double total = 0.0;
      for (std::int64_t s = 0; s < spatial; ++s) total += src[s];
      out[static_cast<std::size_t>(b * C + c)] = total * inv;
    }
  }
  auto xi = input.impl();
  return make_op({B, C}, std::move(out), {xi},
                 [xi, B, C, spatial, inv](TensorImpl& self) {
                   for (std::int64_t b = 0; b < B; ++b) {
                     for (std::int64_t c = 0; c < C; ++c) {
                       const double g = self.grad[static_cast<std::size_t>(b * C + c)] * inv;
                       double* dst = xi->grad.data() + (b * C + c) * spatial;
                       for (std::int64_t s = 0; s < spatial; ++s) dst[s] += g;
                     }
                   }
                 });
}

BatchNormState BatchNormState::create(std::int64_t channels) {
  BatchNormState state;
  state.gamma = Tensor::full({channels}, 1.0, true);
  state.beta = Tensor::zeros({channels}, true);
  state.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
  state.running_var.assign(static_cast<std::size_t>(channels), 1.0);
  return state;
}

Tensor batch_norm(const Tensor& input, BatchNormState& state, bool train) {
  if (input.ndim() != 2 && input.ndim() != 4) {
    throw ShapeError("batch_norm: expected [B,C] or [B,C,H,W], got " +
                     shape_str(input.shape()));
  }
  const auto B = input.dim(0);
  const auto C = input.dim(1);
  const auto spatial = input.ndim() == 4 ? input.dim(2) * input.dim(3) : 1;
  const auto N = B * spatial;  // samples per channel
  if (C != state.gamma.dim(0)) {
    throw ShapeError("batch_norm: channel dimension (dim 1) is " +
                     std::to_string(C) + " but the state holds " +
                     std::to_string(state.gamma.dim(0)) + " channels");
  }
  if (train && B < 2) {
    throw Error("batch_norm: degenerate batch, train mode needs B >= 2, got B = " +
                std::to_string(B));
  }

  std::vector<double> mean_c(static_cast<std::size_t>(C), 0.0);
  std::vector<double> inv_std(static_cast<std::size_t>(C), 0.0);
  const auto& x = input.values();
  auto at = [C, spatial](std::int64_t b, std::int64_t c, std::int64_t s) {
    return static_cast<std::size_t>((b * C + c) * spatial + s);
  };

  if (train) {
    for (std::int64_t c = 0; c < C; ++c) {
      double total = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t s = 0; s < spatial; ++s) total += x[at(b, c, s)];
      }
      mean_c[static_cast<std::size_t>(c)] = total / static_cast<double>(N);
    }
    for (std::int64_t c = 0; c < C; ++c) {
      double total = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t s = 0; s < spatial; ++s) {
          const double dlt = x[at(b, c, s)] - mean_c[static_cast<std::size_t>(c)];
          total += dlt * dlt;
        }
      }
      const double var = total / static_cast<double>(N);
      inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + kBatchNormEps);
      const double unbiased = N > 1 ? total / static_cast<double>(N - 1) : var;
      auto ci = static_cast<std::size_t>(c);
      state.running_mean[ci] = (1.0 - kBatchNormMomentum) * state.running_mean[ci] +
                               kBatchNormMomentum * mean_c[ci];
      state.running_var[ci] = (1.0 - kBatchNormMomentum) * state.running_var[ci] +
                              kBatchNormMomentum * unbiased;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      auto ci = static_cast<std::size_t>(c);
      mean_c[ci] = state.running_mean[ci];
      inv_std[ci] = 1.0 / std::sqrt(state.running_var[ci] + kBatchNormEps);
    }
  }

  std::vector<double> xhat(x.size());
  std::vector<double> out(x.size());
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      auto ci = static_cast<std::size_t>(c);
      const double g = state.gamma.values()[ci];
      const double bta = state.beta.values()[ci];
      for (std::int64_t s = 0; s < spatial; ++s) {
        const auto i = at(b, c, s);
        xhat[i] = (x[i] - mean_c[ci]) * inv_std[ci];
        out[i] = g * xhat[i] + bta;
      }
    }
  }

  auto xi = input.impl();
  auto gi = state.gamma.impl();
  auto bi = state.beta.impl();
  return make_op(
      input.shape(), std::move(out), {xi, gi, bi},
      [xi, gi, bi, B, C, spatial, N, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std), at](TensorImpl& self) {
        for (std::int64_t c = 0; c < C; ++c) {
          auto ci = static_cast<std::size_t>(c);
          double sum_go = 0.0, sum_go_xhat = 0.0;
          for (std::int64_t b = 0; b < B; ++b) {
            for (std::int64_t s = 0; s < spatial; ++s) {
              const auto i = at(b, c, s);
              sum_go += self.grad[i];
              sum_go_xhat += self.grad[i] * xhat[i];
            }
          }
          if (gi->requires_grad) gi->grad[ci] += sum_go_xhat;
          if (bi->requires_grad) bi->grad[ci] += sum_go;
          if (xi->requires_grad) {
            const double g = gi->values[ci];
            const double k = g * inv_std[ci];
            if (train) {
              const double mean_go = sum_go / static_cast<double>(N);
              const double mean_go_xhat = sum_go_xhat / static_cast<double>(N);
              for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t s = 0; s < spatial; ++s) {
                  const auto i = at(b, c, s);
                  xi->grad[i] += k * (self.grad[i] - mean_go - xhat[i] * mean_go_xhat);
                }
              }
            } else {
              for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t s = 0; s < spatial; ++s) {
                  const auto i = at(b, c, s);
                  xi->grad[i] += k * self.grad[i];
                }
              }
            }
          }
        }
      });
}

Tensor concat_batch(const Tensor& a, const Tensor& b) {
  if (!a.defined()) return b;
  if (!b.defined()) return a;
  if (a.ndim() != b.ndim()) {
    throw ShapeError("concat_batch: rank mismatch, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  for (int i = 1; i < a.ndim(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("concat_batch: dimension " + std::to_string(i) +
                       " mismatch, " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  Shape shape = a.shape();
  shape[0] = a.dim(0) + b.dim(0);
  std::vector<double> out;
  out.reserve(a.values().size() + b.values().size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  auto ai = a.impl();
  auto bi = b.impl();
  const std::size_t na = a.values().size();
  return make_op(std::move(shape), std::move(out), {ai, bi},
                 [ai, bi, na](TensorImpl& self) {
                   if (ai->requires_grad) {
                     for (std::size_t i = 0; i < na; ++i) ai->grad[i] += self.grad[i];
                   }
                   if (bi->requires_grad) {
                     for (std::size_t i = na; i < self.grad.size(); ++i) {
                       bi->grad[i - na] += self.grad[i];
                     }
                   }
                 });
}

Tensor gather2d(const Tensor& matrix,
                const std::vector<std::pair<std::int64_t, std::int64_t>>& idx) {
  if (matrix.ndim() != 2) {
    throw ShapeError("gather2d: expected a matrix, got " + shape_str(matrix.shape()));
  }
  const auto R = matrix.dim(0), C = matrix.dim(1);
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto [r, c] = idx[i];
    if (r < 0 || r >= R || c < 0 || c >= C) {
      throw ShapeError("gather2d: index (" + std::to_string(r) + "," +
                       std::to_string(c) + ") outside " + shape_str(matrix.shape()));
    }
    out[i] = matrix.values()[static_cast<std::size_t>(r * C + c)];
  }
  auto mi = matrix.impl();
  auto indices = idx;
  return make_op({static_cast<std::int64_t>(idx.size())}, std::move(out), {mi},
                 [mi, C, indices = std::move(indices)](TensorImpl& self) {
                   for (std::size_t i = 0; i < indices.size(); ++i) {
                     auto [r, c] = indices[i];
                     mi->grad[static_cast<std::size_t>(r * C + c)] += self.grad[i];
                   }
                 });
}

Tensor softmax1d(const Tensor& v) {
  if (v.ndim() != 1) {
    throw ShapeError("softmax1d: expected a vector, got " + shape_str(v.shape()));
  }
  double hi = v.values()[0];
  for (double x : v.values()) hi = std::max(hi, x);
  std::vector<double> out(v.values().size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(v.values()[i] - hi);
    total += out[i];
  }
  for (double& x : out) x /= total;
  auto vi = v.impl();
  return make_op(v.shape(), std::move(out), {vi}, [vi](TensorImpl& self) {
    double weighted = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      weighted += self.grad[i] * self.values[i];
    }
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      vi->grad[i] += self.values[i] * (self.grad[i] - weighted);
    }
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double total = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    total += a.values()[i] * b.values()[i];
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op({1}, {total}, {ai, bi}, [ai, bi](TensorImpl& self) {
    const double go = self.grad[0];
    for (std::size_t i = 0; i < ai->values.size(); ++i) {
      if (ai->requires_grad) ai->grad[i] += go * bi->values[i];
      if (bi->requires_grad) bi->grad[i] += go * ai->values[i];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) {
    throw ShapeError("cross_entropy: expected [B,K] logits, got " +
                     shape_str(logits.shape()));
  }
  const auto B = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(B) + " rows");
  }
  std::vector<double> probs(logits.values().size());
  double loss = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const int label = labels[static_cast<std::size_t>(b)];
    if (label < 0 || label >= K) {
      throw DomainError("cross_entropy: label " + std::to_string(label) +
                        " outside [0," + std::to_string(K) + ")");
    }
    const double* row = logits.values().data() + b * K;
    double hi = row[0];
    for (std::int64_t k = 1; k < K; ++k) hi = std::max(hi, row[k]);
    double total = 0.0;
    for (std::int64_t k = 0; k < K; ++k) total += std::exp(row[k] - hi);
    const double lse = hi + std::log(total);
    loss += lse - row[label];
    for (std::int64_t k = 0; k < K; ++k) {
      probs[static_cast<std::size_t>(b * K + k)] = std::exp(row[k] - lse);
    }
  }
  loss /= static_cast<double>(B);
  auto li = logits.impl();
  auto labels_copy = labels;
  return make_op({1}, {loss}, {li},
                 [li, B, K, probs = std::move(probs),
                  labels = std::move(labels_copy)](TensorImpl& self) {
                   const double go = self.grad[0] / static_cast<double>(B);
                   for (std::int64_t b = 0; b < B; ++b) {
                     const int label = labels[static_cast<std::size_t>(b)];
                     for (std::int64_t k = 0; k < K; ++k) {
                       const auto i = static_cast<std::size_t>(b * K + k);
                       li->grad[i] += go * (probs[i] - (k == label ? 1.0 : 0.0));
                     }
                   }
                 });
}

Tensor pairwise_euclidean(const Tensor& embeddings) {
  if (embeddings.ndim() != 2) {
    throw ShapeError("pairwise_euclidean: expected [B,D], got " +
                     shape_str(embeddings.shape()));
  }
  const auto B = embeddings.dim(0), D = embeddings.dim(1);
  std::vector<double> out(static_cast<std::size_t>(B * B), 0.0);
  const auto& e = embeddings.values();
  for (std::int64_t i = 0; i < B; ++i) {
    for (std::int64_t j = i + 1; j < B; ++j) {
      double sq = 0.0;
      for (std::int64_t k = 0; k < D; ++k) {
        const double dlt = e[static_cast<std::size_t>(i * D + k)] -
                           e[static_cast<std::size_t>(j * D + k)];
        sq += dlt * dlt;
      }
      const double dist = std::sqrt(sq);
      out[static_cast<std::size_t>(i * B + j)] = dist;
      out[static_cast<std::size_t>(j * B + i)] = dist;
    }
  }
  auto ei = embeddings.impl();
  return make_op({B, B}, std::move(out), {ei}, [ei, B, D](TensorImpl& self) {
    for (std::int64_t i = 0; i < B; ++i) {
      for (std::int64_t j = 0; j < B; ++j) {
        if (i == j) continue;
        const double go = self.grad[static_cast<std::size_t>(i * B + j)];
        if (go == 0.0) continue;
        const double dist = self.values[static_cast<std::size_t>(i * B + j)];
        if (dist == 0.0) continue;  // subgradient 0 at coincident points
        const double coef = go / dist;
        for (std::int64_t k = 0; k < D; ++k) {
          const double dlt = ei->values[static_cast<std::size_t>(i * D + k)] -
                             ei->values[static_cast<std::size_t>(j * D + k)];
          ei->grad[static_cast<std::size_t>(i * D + k)] += coef * dlt;
          ei->grad[static_cast<std::size_t>(j * D + k)] -= coef * dlt;
        }
      }
    }
  });
}

}  // namespace nfs
