#include "nfs/search_cell.hpp"

#include <cmath>

#include "nfs/error.hpp"

namespace nfs {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kInitRange = 0.01;  // P ~ U[-0.01, 0.01], probabilities near 0.5

}  // namespace

SearchCell SearchCell::create(Level level, Modality modality, int stage_index,
                              Shape shape, Rng& rng) {
  SearchCell cell;
  cell.level = level;
  cell.modality = modality;
  cell.stage_index = stage_index;
  const auto n = shape_numel(shape);
  std::vector<double> init(static_cast<std::size_t>(n));
  for (auto& v : init) v = rng.uniform(-kInitRange, kInitRange);
  cell.P = Tensor::from_values(std::move(shape), std::move(init), true);
  return cell;
}

std::vector<double> SearchCell::probabilities() const {
  std::vector<double> probs(P.values().size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = sigmoid(P.values()[i]);
  return probs;
}

std::string SearchCell::name() const {
  return "stage" + std::to_string(stage_index) + "." + level_name(level) + "." +
         modality_name(modality);
}

const std::vector<double>& sample_gates(SearchCell& cell, Rng& rng,
                                        GateSampler sampler) {
  const auto probs = cell.probabilities();
  cell.sampled_gate.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (sampler == GateSampler::kContinuousBernoulli) {
      cell.sampled_gate[i] = cb_sample(probs[i], rng) >= 0.5 ? 1.0 : 0.0;
    } else {
      cell.sampled_gate[i] = rng.uniform01() < probs[i] ? 1.0 : 0.0;
    }
  }
  return cell.sampled_gate;
}

const std::vector<double>& derive_gates(SearchCell& cell) {
  const auto probs = cell.probabilities();
  cell.derived_gate.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cell.derived_gate[i] = probs[i] >= 0.5 ? 1.0 : 0.0;  // ties open the gate
  }
  cell.frozen = true;
  cell.P.set_requires_grad(false);
  return cell.derived_gate;
}

SteGrads ste_backward(const SearchCell& cell,
                      const std::vector<double>& grad_wrt_gate) {
  if (cell.sampled_gate.size() != cell.P.values().size() &&
      cell.derived_gate.size() != cell.P.values().size()) {
    throw Error("ste_backward: no forward state recorded for cell " + cell.name());
  }
  if (grad_wrt_gate.size() != cell.P.values().size()) {
    throw ShapeError("ste_backward: gate grad size " +
                     std::to_string(grad_wrt_gate.size()) +
                     " does not match P of cell " + cell.name());
  }
  SteGrads grads;
  grads.wrt_prob = grad_wrt_gate;
  grads.wrt_param.resize(grad_wrt_gate.size());
  for (std::size_t i = 0; i < grad_wrt_gate.size(); ++i) {
    const double p = sigmoid(cell.P.values()[i]);
    grads.wrt_param[i] = grads.wrt_prob[i] * p * (1.0 - p);
  }
  return grads;
}

namespace {

const std::vector<double>& gate_of(SearchCell& cell, GateSource source) {
  switch (source) {
    case GateSource::kSampled:
      if (cell.sampled_gate.empty()) {
        throw Error("apply_gates: cell " + cell.name() + " has no sampled gates");
      }
      return cell.sampled_gate;
    case GateSource::kDerived:
      if (cell.derived_gate.empty()) {
        throw Error("apply_gates: cell " + cell.name() + " has no derived gates");
      }
      return cell.derived_gate;
    case GateSource::kRelaxed:
      // The soft mask doubles as the recorded forward state.
      cell.sampled_gate = cell.probabilities();
      return cell.sampled_gate;
  }
  throw Error("apply_gates: bad gate source");
}

}  // namespace

Tensor apply_gates(const Tensor& features, StageCells& cells,
                   const std::vector<Modality>& row_modality, GateSource source) {
  if (features.ndim() != 4) {
    throw ShapeError("apply_gates: expected [B,C,H,W] features, got " +
                     shape_str(features.shape()));
  }
  const auto B = features.dim(0), C = features.dim(1);
  const auto H = features.dim(2), W = features.dim(3);
  const auto spatial = H * W;
  if (static_cast<std::int64_t>(row_modality.size()) != B) {
    throw ShapeError("apply_gates: " + std::to_string(row_modality.size()) +
                     " modality tags for " + std::to_string(B) + " rows");
  }
  for (SearchCell* cell : cells.all()) {
    const Shape expected = cell->level == Level::kChannel ? Shape{C} : Shape{C, H, W};
    if (cell->P.shape() != expected) {
      throw ShapeError("apply_gates: cell " + cell->name() + " has P shape " +
                       shape_str(cell->P.shape()) + ", features need " +
                       shape_str(expected));
    }
  }

  const std::vector<double>& ch_rgb = gate_of(cells.channel_rgb, source);
  const std::vector<double>& ch_ir = gate_of(cells.channel_ir, source);
  const std::vector<double>& px_rgb = gate_of(cells.pixel_rgb, source);
  const std::vector<double>& px_ir = gate_of(cells.pixel_ir, source);

  std::vector<double> out(features.values().size());
  const auto& x = features.values();
  for (std::int64_t b = 0; b < B; ++b) {
    const bool rgb = row_modality[static_cast<std::size_t>(b)] == Modality::kRgb;
    const auto& ch = rgb ? ch_rgb : ch_ir;
    const auto& px = rgb ? px_rgb : px_ir;
    for (std::int64_t c = 0; c < C; ++c) {
      const double g_ch = ch[static_cast<std::size_t>(c)];
      const double* src = x.data() + (b * C + c) * spatial;
      double* dst = out.data() + (b * C + c) * spatial;
      const double* g_px = px.data() + c * spatial;
      for (std::int64_t s = 0; s < spatial; ++s) {
        dst[s] = src[s] * g_ch * g_px[s];
      }
    }
  }

  auto fi = features.impl();
  std::vector<TensorImplPtr> parents = {fi};
  for (SearchCell* cell : cells.all()) {
    if (cell->P.requires_grad()) parents.push_back(cell->P.impl());
  }

  // Copies of the masks used in this pass; backward must see exactly them.
  struct Saved {
    std::vector<double> ch_rgb, ch_ir, px_rgb, px_ir;
  };
  auto saved = std::make_shared<Saved>(Saved{ch_rgb, ch_ir, px_rgb, px_ir});
  auto mods = row_modality;
  StageCells* cells_ptr = &cells;

  return make_op(
      features.shape(), std::move(out), std::move(parents),
      [fi, saved, mods = std::move(mods), cells_ptr, B, C, spatial](TensorImpl& self) {
        auto& cs = *cells_ptr;
        const bool want_ch_rgb = cs.channel_rgb.P.requires_grad();
        const bool want_ch_ir = cs.channel_ir.P.requires_grad();
        const bool want_px_rgb = cs.pixel_rgb.P.requires_grad();
        const bool want_px_ir = cs.pixel_ir.P.requires_grad();
        std::vector<double> g_ch_rgb(want_ch_rgb ? saved->ch_rgb.size() : 0, 0.0);
        std::vector<double> g_ch_ir(want_ch_ir ? saved->ch_ir.size() : 0, 0.0);
        std::vector<double> g_px_rgb(want_px_rgb ? saved->px_rgb.size() : 0, 0.0);
        std::vector<double> g_px_ir(want_px_ir ? saved->px_ir.size() : 0, 0.0);

        for (std::int64_t b = 0; b < B; ++b) {
          const bool rgb = mods[static_cast<std::size_t>(b)] == Modality::kRgb;
          const auto& ch = rgb ? saved->ch_rgb : saved->ch_ir;
          const auto& px = rgb ? saved->px_rgb : saved->px_ir;
          auto* g_ch = rgb ? (want_ch_rgb ? &g_ch_rgb : nullptr)
                           : (want_ch_ir ? &g_ch_ir : nullptr);
          auto* g_px = rgb ? (want_px_rgb ? &g_px_rgb : nullptr)
                           : (want_px_ir ? &g_px_ir : nullptr);
          for (std::int64_t c = 0; c < C; ++c) {
            const double gate_ch = ch[static_cast<std::size_t>(c)];
            const double* go = self.grad.data() + (b * C + c) * spatial;
            const double* xv = fi->values.data() + (b * C + c) * spatial;
            const double* gate_px = px.data() + c * spatial;
            if (fi->requires_grad) {
              double* gx = fi->grad.data() + (b * C + c) * spatial;
              for (std::int64_t s = 0; s < spatial; ++s) {
                gx[s] += go[s] * gate_ch * gate_px[s];
              }
            }
            if (g_px) {
              double* gp = g_px->data() + c * spatial;
              for (std::int64_t s = 0; s < spatial; ++s) {
                gp[s] += go[s] * xv[s] * gate_ch;
              }
            }
            if (g_ch) {
              double acc = 0.0;
              for (std::int64_t s = 0; s < spatial; ++s) {
                acc += go[s] * xv[s] * gate_px[s];
              }
              (*g_ch)[static_cast<std::size_t>(c)] += acc;
            }
          }
        }

        auto route = [](SearchCell& cell, const std::vector<double>& g_gate) {
          if (g_gate.empty()) return;
          const SteGrads grads = ste_backward(cell, g_gate);
          for (std::size_t i = 0; i < grads.wrt_param.size(); ++i) {
            cell.P.grad()[i] += grads.wrt_param[i];
          }
        };
        route(cs.channel_rgb, g_ch_rgb);
        route(cs.channel_ir, g_ch_ir);
        route(cs.pixel_rgb, g_px_rgb);
        route(cs.pixel_ir, g_px_ir);
      });
}

}  // namespace nfs
