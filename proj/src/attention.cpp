#include "silot/attention.hpp"

#include <cmath>

namespace silot {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;

Var gauss_kernel(Graph& g, Var dy, Var dx, double sigma) {
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  Var q = g.add(g.square(dy), g.square(dx));
  return g.scale(g.exp_(g.scale(q, -inv2s2)), 1.0 / (kTwoPi * sigma * sigma));
}
}  // namespace

Var object_attr_features(Graph& g, const ObjectSetVar& o, const GridSpec& grid,
                         bool include_hidden) {
  Var h = g.scale(g.slice_cols(o.where, 2, 1), 1.0 / grid.anchor_h);
  Var w = g.scale(g.slice_cols(o.where, 3, 1), 1.0 / grid.anchor_w);
  std::vector<Var> parts{h, w, o.what, o.depth, o.pres};
  if (include_hidden) parts.push_back(o.hidden);
  return g.concat_cols(parts);
}

Var discovery_attention(Graph& g, const ObjectSetVar& propagated, const GridSpec& grid,
                        const Mlp& d_spatial, double sigma) {
  const int HW = grid.cells();
  const int K = propagated.K;
  if (K == 0) return g.constant(Tensor({HW, d_spatial.out_dim}));

  Var attrs = object_attr_features(g, propagated, grid, /*include_hidden=*/false);
  Var oy = g.slice_cols(propagated.where, 0, 1);
  Var ox = g.slice_cols(propagated.where, 1, 1);

  // one row per (cell, object), cell-major
  std::vector<int> obj_idx(HW * K);
  Tensor cy({HW * K, 1}), cx({HW * K, 1});
  for (int i = 0; i < grid.grid_h; ++i)
    for (int j = 0; j < grid.grid_w; ++j) {
      const int cell = i * grid.grid_w + j;
      for (int k = 0; k < K; ++k) {
        obj_idx[cell * K + k] = k;
        cy.data[cell * K + k] = grid.cell_center_y(i);
        cx.data[cell * K + k] = grid.cell_center_x(j);
      }
    }

  Var dy = g.scale(g.sub(g.gather_rows(oy, obj_idx), g.constant(cy)), 1.0 / grid.anchor_h);
  Var dx = g.scale(g.sub(g.gather_rows(ox, obj_idx), g.constant(cx)), 1.0 / grid.anchor_w);
  Var inp = g.concat_cols({g.gather_rows(attrs, obj_idx), dy, dx});
  Var feat = d_spatial.forward(g, inp);
  Var weighted = g.mul(feat, gauss_kernel(g, dy, dx, sigma));
  return g.group_row_sum(weighted, K);
}

Var propagation_attention(Graph& g, const ObjectSetVar& objects, const GridSpec& grid,
                          const Mlp& p_td, const Mlp& p_spatial, double sigma) {
  const int K = objects.K;
  Var attrs = object_attr_features(g, objects, grid, /*include_hidden=*/true);
  Var base = p_td.forward(g, attrs);  // {K, F}
  Var oy = g.slice_cols(objects.where, 0, 1);
  Var ox = g.slice_cols(objects.where, 1, 1);

  std::vector<int> idx_k(K * K), idx_l(K * K);
  for (int l = 0; l < K; ++l)
    for (int k = 0; k < K; ++k) {
      idx_k[l * K + k] = k;
      idx_l[l * K + k] = l;
    }

  Var dy = g.scale(g.sub(g.gather_rows(oy, idx_k), g.gather_rows(oy, idx_l)), 1.0 / grid.anchor_h);
  Var dx = g.scale(g.sub(g.gather_rows(ox, idx_k), g.gather_rows(ox, idx_l)), 1.0 / grid.anchor_w);
  Var inp = g.concat_cols({g.gather_rows(attrs, idx_k), dy, dx, g.gather_rows(base, idx_l)});
  Var feat = p_spatial.forward(g, inp);
  Var weighted = g.mul(feat, gauss_kernel(g, dy, dx, sigma));
  return g.add(base, g.group_row_sum(weighted, K));
}

}  // namespace silot
