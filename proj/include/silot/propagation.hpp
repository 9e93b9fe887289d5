#pragma once

#include "silot/attention.hpp"
#include "silot/core.hpp"
#include "silot/geometry.hpp"
#include "silot/latents.hpp"

namespace silot {

// Parallel per-object attribute updates from the current frame, plus the
// learned prior variant that never sees the frame.
struct PropagationParams {
  Mlp glimpse_offset;  // u_td -> 4, anchor units
  Mlp bu;              // first glimpse -> features
  Mlp fuse;            // (u_bu, u_td) -> u
  Mlp where;           // u -> 8
  Mlp obj;             // second glimpse -> features
  Mlp what;            // (u, u_obj, where_feat) -> 2A
  Mlp depth;           // (..., what) -> 2
  Mlp pres;            // (..., depth) -> 1
  GruCell rnn;         // deterministic hidden update, shared with the prior
};

// Learned prior propagation: duplicates of the attention and head networks,
// omitting every component that reads the frame.
struct PropPriorParams {
  Mlp td, spatial;  // its own attention nets
  Mlp fuse;         // u_td -> u
  Mlp where, what, depth, pres;
};

struct PropLatents {
  NormalLatent where, what, depth;
  LogisticLatent pres;
};

struct PropagateResult {
  ObjectSetVar objects;
  PropLatents latents;
  Var where_feat;  // (tanh z_y, tanh z_x, h'/a_h, w'/a_w): head conditioning
};

// Standalone attribute update functions (App-style f_where / f_what /
// f_depth), unit-testable on plain tensors.
//   y' = y + c_h * tanh(z_y)           x' analogous with c_w
//   h' = a_h * sigm(sigm^-1(h / a_h) + z_h)   w' analogous
//   depth' = sigm(sigm^-1(depth) + z_depth)
//   what' = what + tanh(z_what)
// Logit inputs are clamped to [1e-6, 1 - 1e-6].
Var apply_where_update(Graph& g, Var prev_where, Var z_where, const GridSpec& grid);
Var apply_what_update(Graph& g, Var prev_what, Var z_what);
Var apply_depth_update(Graph& g, Var prev_depth, Var z_depth);
Tensor apply_where_update(const Tensor& prev_where, const Tensor& z_where, const GridSpec& grid);
Tensor apply_what_update(const Tensor& prev_what, const Tensor& z_what);
Tensor apply_depth_update(const Tensor& prev_depth, const Tensor& z_depth);

// One recurrent step per object; inputs are the new attribute values in
// scale-free form.
Var update_hidden(Graph& g, const GruCell& rnn, Var hidden, Var where_feat, Var what, Var depth,
                  Var pres);

// Box for the first propagation glimpse: prev.where nudged by the predicted
// offset (anchor units, scaled by cfg.glimpse_offset_scale); sizes floored
// at one pixel for the sampler.
Var propagation_glimpse_box(Graph& g, Var prev_where, Var u_td, const Mlp& glimpse_offset,
                            const GridSpec& grid, const ModelConfig& cfg);

PropagateResult propagate_step(Graph& g, Var frame, const ObjectSetVar& prev,
                               const PropagationParams& pp, const AttentionParams& ap,
                               const GridSpec& grid, const ModelConfig& cfg, RunMode mode,
                               RandomStream* rng, bool warmup_detach);

// Prior distribution parameters for the propagation latents of one step,
// conditioned on prev and (teacher-forced) on the posterior's decoded
// attributes. Used to score posterior samples during training.
struct PriorStepParams {
  NormalLatent where, what, depth;  // z left invalid
  Var pres_mu;
};
PriorStepParams prior_propagate_density(Graph& g, const ObjectSetVar& prev,
                                        const PropPriorParams& qp, const GridSpec& grid,
                                        const ModelConfig& cfg, Var tf_where_feat, Var tf_what,
                                        Var tf_depth);

// Autonomous rollout step from the learned prior (no frame access). The
// hidden state is advanced with the shared recurrent cell.
PropagateResult prior_propagate_step(Graph& g, const ObjectSetVar& prev,
                                     const PropPriorParams& qp, const GruCell& rnn,
                                     const GridSpec& grid, const ModelConfig& cfg, RunMode mode,
                                     RandomStream* rng);

}  // namespace silot
