#pragma once

#include "silot/attention.hpp"
#include "silot/core.hpp"
#include "silot/geometry.hpp"
#include "silot/latents.hpp"

namespace silot {

// Convolutional discovery: backbone features, top-down fusion, and the
// autoregressive attribute heads, one candidate object per grid cell. The
// head convolutions all have width/stride 1, so they are plain MLPs applied
// per cell.
struct DiscoveryParams {
  std::vector<ConvLayer> backbone;
  Mlp fuse;   // (v_bu, v_td) -> v
  Mlp where;  // v -> 8 (mu, sigma raw)
  Mlp obj;    // glimpse -> v_obj
  Mlp what;   // (v, v_obj, where_feat) -> 2A
  Mlp depth;  // (..., what) -> 2
  Mlp pres;   // (..., depth) -> 1
};

struct DiscLatents {
  NormalLatent where, what, depth;
  LogisticLatent pres;
};

struct DiscoverResult {
  ObjectSetVar objects;  // H*W candidates, row-major cell order
  DiscLatents latents;
  Var where_feat;  // scale-free (b_y, b_x, h/a, w/a), head conditioning
};

// Frame -> {H, W, F} cell features; pads per the grid spec and checks the
// output spatial dims match the grid.
Var run_backbone(Graph& g, Var frame, const GridSpec& grid, const DiscoveryParams& dp);

DiscoverResult discover_step(Graph& g, Var frame, const ObjectSetVar& propagated,
                             const GridSpec& grid, const DiscoveryParams& dp,
                             const AttentionParams& ap, const ModelConfig& cfg,
                             Var default_hidden, RunMode mode, RandomStream* rng,
                             bool warmup_detach);

}  // namespace silot
