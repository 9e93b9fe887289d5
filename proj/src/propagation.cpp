#include "silot/propagation.hpp"

namespace silot {

namespace {
constexpr double kLogitEps = 1e-6;

Var logit(Graph& g, Var p) {
  Var c = g.clamp(p, kLogitEps, 1.0 - kLogitEps);
  return g.log_(g.div(c, g.add_const(g.neg(c), 1.0)));
}
}  // namespace

Var apply_where_update(Graph& g, Var prev_where, Var z_where, const GridSpec& grid) {
  Var py = g.slice_cols(prev_where, 0, 1), px = g.slice_cols(prev_where, 1, 1);
  Var ph = g.slice_cols(prev_where, 2, 1), pw = g.slice_cols(prev_where, 3, 1);
  Var zy = g.slice_cols(z_where, 0, 1), zx = g.slice_cols(z_where, 1, 1);
  Var zh = g.slice_cols(z_where, 2, 1), zw = g.slice_cols(z_where, 3, 1);
  Var ny = g.add(py, g.scale(g.tanh_(zy), grid.cell_h));
  Var nx = g.add(px, g.scale(g.tanh_(zx), grid.cell_w));
  Var nh = g.scale(g.sigmoid(g.add(logit(g, g.scale(ph, 1.0 / grid.anchor_h)), zh)), grid.anchor_h);
  Var nw = g.scale(g.sigmoid(g.add(logit(g, g.scale(pw, 1.0 / grid.anchor_w)), zw)), grid.anchor_w);
  return g.concat_cols({ny, nx, nh, nw});
}

Var apply_what_update(Graph& g, Var prev_what, Var z_what) {
  return g.add(prev_what, g.tanh_(z_what));
}

Var apply_depth_update(Graph& g, Var prev_depth, Var z_depth) {
  return g.sigmoid(g.add(logit(g, prev_depth), z_depth));
}

Tensor apply_where_update(const Tensor& prev_where, const Tensor& z_where, const GridSpec& grid) {
  Graph g;
  return g.val(apply_where_update(g, g.constant(prev_where), g.constant(z_where), grid));
}
Tensor apply_what_update(const Tensor& prev_what, const Tensor& z_what) {
  Graph g;
  return g.val(apply_what_update(g, g.constant(prev_what), g.constant(z_what)));
}
Tensor apply_depth_update(const Tensor& prev_depth, const Tensor& z_depth) {
  Graph g;
  return g.val(apply_depth_update(g, g.constant(prev_depth), g.constant(z_depth)));
}

Var update_hidden(Graph& g, const GruCell& rnn, Var hidden, Var where_feat, Var what, Var depth,
                  Var pres) {
  Var inp = g.concat_cols({where_feat, what, depth, pres});
  return rnn.forward(g, inp, hidden);
}

namespace {

// Everything downstream of u: the autoregressive head chain shared by the
// posterior step and the prior rollout. u_obj is invalid for the prior.
PropagateResult head_chain(Graph& g, Var frame, const ObjectSetVar& prev, Var u,
                           const Mlp& where_head, const Mlp* obj_net, const Mlp& what_head,
                           const Mlp& depth_head, const Mlp& pres_head, const GruCell& rnn,
                           const GridSpec& grid, const ModelConfig& cfg, RunMode mode,
                           RandomStream* rng, bool warmup_detach) {
  PropagateResult res;
  res.latents.where = normal_head(g, where_head, u, 4, mode, rng);
  Var o_where = apply_where_update(g, prev.where, res.latents.where.z, grid);
  Var where_used = maybe_detach(g, o_where, warmup_detach);

  Var zy = g.slice_cols(res.latents.where.z, 0, 1);
  Var zx = g.slice_cols(res.latents.where.z, 1, 1);
  Var where_feat = g.concat_cols({g.tanh_(zy), g.tanh_(zx),
                                  g.scale(g.slice_cols(o_where, 2, 1), 1.0 / grid.anchor_h),
                                  g.scale(g.slice_cols(o_where, 3, 1), 1.0 / grid.anchor_w)});
  where_feat = maybe_detach(g, where_feat, warmup_detach);

  std::vector<Var> ctx{u};
  if (obj_net) {
    Var glimpse2 = g.glimpse_extract(frame, where_used, cfg.obj_h, cfg.obj_w);
    ctx.push_back(obj_net->forward(g, glimpse2));
  }
  ctx.push_back(where_feat);

  res.latents.what = normal_head(g, what_head, g.concat_cols(ctx), cfg.A, mode, rng);
  Var o_what = apply_what_update(g, prev.what, res.latents.what.z);
  ctx.push_back(o_what);

  res.latents.depth = normal_head(g, depth_head, g.concat_cols(ctx), 1, mode, rng);
  Var o_depth = apply_depth_update(g, prev.depth, res.latents.depth.z);
  Var depth_used = maybe_detach(g, o_depth, warmup_detach);
  ctx.push_back(depth_used);

  res.latents.pres = logistic_head(g, pres_head, g.concat_cols(ctx), cfg.tau_pres, mode, rng);
  Var o_pres = g.mul(prev.pres, g.sigmoid(res.latents.pres.z));

  res.objects.where = where_used;
  res.objects.what = o_what;
  res.objects.depth = depth_used;
  res.objects.pres = maybe_detach(g, o_pres, warmup_detach);
  res.objects.hidden =
      update_hidden(g, rnn, prev.hidden, where_feat, o_what, depth_used, res.objects.pres);
  res.objects.K = prev.K;
  res.where_feat = where_feat;
  return res;
}

}  // namespace

Var propagation_glimpse_box(Graph& g, Var prev_where, Var u_td, const Mlp& glimpse_offset,
                            const GridSpec& grid, const ModelConfig& cfg) {
  Tensor units = Tensor::row({grid.anchor_h, grid.anchor_w, grid.anchor_h, grid.anchor_w});
  Var offset = g.mul(glimpse_offset.forward(g, u_td), g.constant(units));
  Var u_where = g.add(prev_where, g.scale(offset, cfg.glimpse_offset_scale));
  return g.concat_cols(
      {g.slice_cols(u_where, 0, 2), g.clamp(g.slice_cols(u_where, 2, 2), 1.0, 1e9)});
}

PropagateResult propagate_step(Graph& g, Var frame, const ObjectSetVar& prev,
                               const PropagationParams& pp, const AttentionParams& ap,
                               const GridSpec& grid, const ModelConfig& cfg, RunMode mode,
                               RandomStream* rng, bool warmup_detach) {
  Var u_td = propagation_attention(g, prev, grid, ap.p_td, ap.p_spatial, ap.sigma);

  // first glimpse near the object's previous location
  Var u_where_safe = propagation_glimpse_box(g, prev.where, u_td, pp.glimpse_offset, grid, cfg);
  Var glimpse1 = g.glimpse_extract(frame, u_where_safe, cfg.obj_h, cfg.obj_w);
  Var u_bu = pp.bu.forward(g, glimpse1);
  Var u = pp.fuse.forward(g, g.concat_cols({u_bu, u_td}));

  return head_chain(g, frame, prev, u, pp.where, &pp.obj, pp.what, pp.depth, pp.pres,
                    pp.rnn, grid, cfg, mode, rng, warmup_detach);
}

PriorStepParams prior_propagate_density(Graph& g, const ObjectSetVar& prev,
                                        const PropPriorParams& qp, const GridSpec& grid,
                                        const ModelConfig& cfg, Var tf_where_feat, Var tf_what,
                                        Var tf_depth) {
  Var u_td = propagation_attention(g, prev, grid, qp.td, qp.spatial, cfg.sigma);
  Var u = qp.fuse.forward(g, u_td);

  PriorStepParams out;
  out.where = normal_head(g, qp.where, u, 4, RunMode::Mean, nullptr);
  Var c1 = g.concat_cols({u, tf_where_feat});
  out.what = normal_head(g, qp.what, c1, cfg.A, RunMode::Mean, nullptr);
  Var c2 = g.concat_cols({u, tf_where_feat, tf_what});
  out.depth = normal_head(g, qp.depth, c2, 1, RunMode::Mean, nullptr);
  Var c3 = g.concat_cols({u, tf_where_feat, tf_what, tf_depth});
  out.pres_mu = qp.pres.forward(g, c3);
  return out;
}

PropagateResult prior_propagate_step(Graph& g, const ObjectSetVar& prev,
                                     const PropPriorParams& qp, const GruCell& rnn,
                                     const GridSpec& grid, const ModelConfig& cfg, RunMode mode,
                                     RandomStream* rng) {
  Var u_td = propagation_attention(g, prev, grid, qp.td, qp.spatial, cfg.sigma);
  Var u = qp.fuse.forward(g, u_td);
  return head_chain(g, Var{}, prev, u, qp.where, nullptr, qp.what, qp.depth, qp.pres, rnn,
                    grid, cfg, mode, rng, /*warmup_detach=*/false);
}

}  // namespace silot
