#pragma once

#include "silot/core.hpp"
#include "silot/geometry.hpp"
#include "silot/nn.hpp"

namespace silot {

// Where a selected row came from: a propagated row, a discovery grid cell,
// or degenerate padding.
struct Provenance {
  enum Kind { Propagated, Discovered, Padded } kind = Padded;
  int index = -1;  // propagated row / cell index
};

// Indices of the K highest-pres rows, original order preserved among the
// selected; ties go to the lower index. Rows beyond the candidate count are
// reported as -1 (padding).
std::vector<int> top_k_indices(const Tensor& pres, int K);

// Value-level selection; pads with degenerate objects when candidates.K < K.
ObjectSet select_top_k(const ObjectSet& candidates, int K, const ModelConfig& cfg, double frame_h,
                       double frame_w, const Tensor* default_hidden = nullptr);

struct SelectResult {
  ObjectSetVar objects;
  std::vector<Provenance> provenance;
};

SelectResult select_top_k(Graph& g, const ObjectSetVar& candidates,
                          const std::vector<Provenance>& cand_prov, int K, const ModelConfig& cfg,
                          const GridSpec& grid, Var default_hidden);

struct RenderParams {
  Mlp obj_appearance;  // what -> (beta logits HWC, xi logits), (H_obj*W_obj*4)
};

// Softmax-over-importance compositing of per-object appearance/transparency
// maps. beta {K, mh*mw*3} and xi {K, mh*mw} are already in (0,1); returns a
// planar {1, 3*out_h*out_w} frame.
Var composite_objects(Graph& g, Var beta, Var xi, Var where, Var depth, Var pres, int map_h,
                      int map_w, int out_h, int out_w, double lambda);

// Full rendering pipeline: appearance net, scalar offsets, compositing.
// K = 0 renders a black frame.
Var render(Graph& g, const ObjectSetVar& objects, int out_h, int out_w, const RenderParams& rp,
           const ModelConfig& cfg);

// Sum over pixels/channels of x log x̂ + (1-x) log(1-x̂), x̂ clamped to
// [1e-6, 1-1e-6]. Both frames planar {1, 3*H*W}.
Var frame_log_likelihood(Graph& g, Var frame, Var rendered);

Tensor frame_to_planar(const Tensor& hwc);  // {H,W,C} -> {1, C*H*W}
Tensor planar_to_hwc(const Tensor& planar, int H, int W, int C);

}  // namespace silot
