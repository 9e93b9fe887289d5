#include "silot/discovery.hpp"

#include <cmath>
#include <stdexcept>

namespace silot {

Var run_backbone(Graph& g, Var frame, const GridSpec& grid, const DiscoveryParams& dp) {
  Var x = g.pad2d(frame, grid.pad_top, grid.pad_bottom, grid.pad_left, grid.pad_right, 0.0);
  for (const ConvLayer& l : dp.backbone) {
    x = g.conv2d(x, use(g, l.w), use(g, l.b), l.stride, l.stride);
    if (l.relu) x = g.relu(x);
  }
  const Tensor& v = g.val(x);
  if (v.shape[0] != grid.grid_h || v.shape[1] != grid.grid_w)
    throw std::runtime_error("backbone: output spatial dims " + std::to_string(v.shape[0]) + "x" +
                             std::to_string(v.shape[1]) + " do not match grid " +
                             std::to_string(grid.grid_h) + "x" + std::to_string(grid.grid_w));
  return g.reshape(x, {grid.cells(), v.shape[2]});
}

DiscoverResult discover_step(Graph& g, Var frame, const ObjectSetVar& propagated,
                             const GridSpec& grid, const DiscoveryParams& dp,
                             const AttentionParams& ap, const ModelConfig& cfg,
                             Var default_hidden, RunMode mode, RandomStream* rng,
                             bool warmup_detach) {
  const int HW = grid.cells();

  Var v_bu = run_backbone(g, frame, grid, dp);
  Var v_td = discovery_attention(g, propagated, grid, ap.d_spatial, ap.sigma);
  Var v = dp.fuse.forward(g, g.concat_cols({v_bu, v_td}));

  DiscLatents lat;
  lat.where = normal_head(g, dp.where, v, 4, mode, rng);
  Var o_where = decode_where_disc(g, lat.where.z, grid);
  Var where_used = maybe_detach(g, o_where, warmup_detach);

  Var glimpse = g.glimpse_extract(frame, where_used, cfg.obj_h, cfg.obj_w);
  Var v_obj = dp.obj.forward(g, glimpse);

  // scale-free conditioning features derived from the same sample
  const double span = grid.b_max - grid.b_min;
  Var zy = g.slice_cols(lat.where.z, 0, 1);
  Var zx = g.slice_cols(lat.where.z, 1, 1);
  Var zh = g.slice_cols(lat.where.z, 2, 1);
  Var zw = g.slice_cols(lat.where.z, 3, 1);
  Var where_feat = g.concat_cols({g.add_const(g.scale(g.sigmoid(zy), span), grid.b_min),
                                  g.add_const(g.scale(g.sigmoid(zx), span), grid.b_min),
                                  g.sigmoid(zh), g.sigmoid(zw)});
  where_feat = maybe_detach(g, where_feat, warmup_detach);

  lat.what = normal_head(g, dp.what, g.concat_cols({v, v_obj, where_feat}), cfg.A, mode, rng);
  Var o_what = lat.what.z;

  lat.depth = normal_head(g, dp.depth, g.concat_cols({v, v_obj, where_feat, o_what}), 1, mode, rng);
  Var o_depth = g.sigmoid(lat.depth.z);
  Var depth_used = maybe_detach(g, o_depth, warmup_detach);

  lat.pres = logistic_head(g, dp.pres, g.concat_cols({v, v_obj, where_feat, o_what, depth_used}),
                           cfg.tau_pres, mode, rng);
  Var o_pres = g.sigmoid(lat.pres.z);

  DiscoverResult res;
  res.objects.where = where_used;
  res.objects.what = o_what;
  res.objects.depth = depth_used;
  res.objects.pres = maybe_detach(g, o_pres, warmup_detach);
  res.objects.hidden = g.repeat_rows(default_hidden, HW);
  res.objects.K = HW;
  res.latents = lat;
  res.where_feat = where_feat;
  return res;
}

}  // namespace silot
