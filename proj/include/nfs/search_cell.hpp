#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfs/bernoulli.hpp"
#include "nfs/modality.hpp"
#include "nfs/rng.hpp"
#include "nfs/tensor.hpp"

namespace nfs {

enum class Level { kPixel, kChannel };

inline const char* level_name(Level l) {
  return l == Level::kPixel ? "pixel" : "channel";
}

enum class GateSampler { kContinuousBernoulli, kDiscreteBernoulli };

// Which mask a forward pass applies.
enum class GateSource {
  kSampled,  // last stochastic draw (search phase)
  kDerived,  // thresholded gates (retrain / eval)
  kRelaxed,  // probabilities themselves, no binarization (gradient checks)
};

// Per-stage, per-modality gate state. P are the raw parameters, the
// probability field is sigmoid(P), and gates are binary masks over the
// stage output (pixel level: [C,H,W]; channel level: [C]).
struct SearchCell {
  Level level = Level::kPixel;
  Modality modality = Modality::kRgb;
  int stage_index = 0;
  Tensor P;
  std::vector<double> sampled_gate;
  std::vector<double> derived_gate;
  bool frozen = false;

  static SearchCell create(Level level, Modality modality, int stage_index,
                           Shape shape, Rng& rng);

  std::vector<double> probabilities() const;  // sigmoid(P), elementwise
  std::string name() const;
};

// Draws g = 1{cb_sample(p) >= 0.5} per entry (or a plain Bernoulli(p) draw
// with the discrete sampler) and stores it on the cell.
const std::vector<double>& sample_gates(SearchCell& cell, Rng& rng,
                                        GateSampler sampler);

// Deterministic gates g = 1{p >= 0.5}; freezes the cell.
const std::vector<double>& derive_gates(SearchCell& cell);

struct SteGrads {
  std::vector<double> wrt_prob;   // = upstream grad wrt G (pass-through)
  std::vector<double> wrt_param;  // chained through sigmoid'(P)
};

// Straight-through surrogate: grad wrt the probability field is the grad wrt
// the binary gate unchanged, then the sigmoid chain rule maps it onto P.
SteGrads ste_backward(const SearchCell& cell,
                      const std::vector<double>& grad_wrt_gate);

// The four cells of one searched stage.
struct StageCells {
  SearchCell pixel_rgb, pixel_ir, channel_rgb, channel_ir;

  std::vector<SearchCell*> all() {
    return {&channel_rgb, &channel_ir, &pixel_rgb, &pixel_ir};
  }
};

// Masks features [B,C,H,W] with each row's modality gates: channel gate
// first, then pixel gate. Tape backward routes feature grads normally and
// gate grads onto P through ste_backward (skipped for frozen cells).
Tensor apply_gates(const Tensor& features, StageCells& cells,
                   const std::vector<Modality>& row_modality, GateSource source);

}  // namespace nfs
