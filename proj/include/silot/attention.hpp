#pragma once

#include "silot/core.hpp"
#include "silot/geometry.hpp"
#include "silot/nn.hpp"

namespace silot {

// The Gaussian-kernel spatial attention feature builders. Offsets are
// normalized by the anchor box before both the kernel and the MLPs, so
// sigma is in anchor units and the features stay scale-free.
struct AttentionParams {
  Mlp d_spatial;  // discovery: per (cell, object) features
  Mlp p_td;       // propagation: per-object base features
  Mlp p_spatial;  // propagation: per object-pair features
  double sigma = 0.1;
};

// Non-position object attributes as MLP inputs: (h/a_h, w/a_w, what, depth,
// pres[, hidden]). Absolute positions never enter the nets.
Var object_attr_features(Graph& g, const ObjectSetVar& o, const GridSpec& grid,
                         bool include_hidden);

// Per grid cell, kernel-weighted sum over propagated objects of
// d_spatial(attrs_k, dy, dx), dy/dx the object offset from the cell center.
// Returns {H*W, F}; all zeros when there are no objects.
Var discovery_attention(Graph& g, const ObjectSetVar& propagated, const GridSpec& grid,
                        const Mlp& d_spatial, double sigma);

// u_td[l] = p_td(attrs_l) + sum_k G(offset_lk, sigma) *
//           p_spatial(attrs_k, dy_lk, dx_lk, p_td(attrs_l)); self-term included.
Var propagation_attention(Graph& g, const ObjectSetVar& objects, const GridSpec& grid,
                          const Mlp& p_td, const Mlp& p_spatial, double sigma);

}  // namespace silot
