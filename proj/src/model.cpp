#include "silot/model.hpp"

#include <stdexcept>

namespace silot {

SilotModel::SilotModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RandomStream rng(splitmix64(seed ^ 0x5157u));
  const int A = cfg_.A, Dh = cfg_.hidden_dim;
  const int attr = A + 4;            // (h, w, what, depth, pres)
  const int attr_h = attr + Dh;      // + hidden
  const int glimpse_dim = cfg_.obj_h * cfg_.obj_w * 3;
  const std::vector<int> head_h{cfg_.head_hidden, cfg_.head_hidden};
  const std::vector<int> fuse_h{cfg_.fuse_hidden, cfg_.fuse_hidden};
  const std::vector<int> attn_h{cfg_.attn_hidden, cfg_.attn_hidden};
  const std::vector<int> obj_h{cfg_.obj_hidden1, cfg_.obj_hidden2};

  // discovery
  {
    auto layers = default_backbone(cfg_.backbone_filters);
    int in_ch = 3;
    for (size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      auto& w = ps_.add("disc.backbone.w" + std::to_string(i), {l.size, l.size, in_ch, l.filters});
      auto& b = ps_.add("disc.backbone.b" + std::to_string(i), {1, l.filters});
      init_xavier(w.value, l.size * l.size * in_ch, l.filters, rng);
      disc.backbone.push_back(ConvLayer{&w, &b, l.stride, l.relu});
      in_ch = l.filters;
    }
    disc.fuse = Mlp::build(ps_, "disc.fuse", cfg_.backbone_filters + cfg_.attn_out, fuse_h,
                           cfg_.fuse_out, rng);
    disc.where = Mlp::build(ps_, "disc.where", cfg_.fuse_out, head_h, 8, rng);
    disc.obj = Mlp::build(ps_, "disc.obj", glimpse_dim, obj_h, cfg_.obj_out, rng);
    disc.what =
        Mlp::build(ps_, "disc.what", cfg_.fuse_out + cfg_.obj_out + 4, head_h, 2 * A, rng);
    disc.depth =
        Mlp::build(ps_, "disc.depth", cfg_.fuse_out + cfg_.obj_out + 4 + A, head_h, 2, rng);
    disc.pres =
        Mlp::build(ps_, "disc.pres", cfg_.fuse_out + cfg_.obj_out + 4 + A + 1, head_h, 1, rng);
  }

  // spatial attention
  attn.sigma = cfg_.sigma;
  attn.d_spatial = Mlp::build(ps_, "attn.d_spatial", attr + 2, attn_h, cfg_.attn_out, rng);
  attn.p_td = Mlp::build(ps_, "attn.p_td", attr_h, attn_h, cfg_.attn_out, rng);
  attn.p_spatial =
      Mlp::build(ps_, "attn.p_spatial", attr_h + 2 + cfg_.attn_out, attn_h, cfg_.attn_out, rng);

  // propagation
  prop.glimpse_offset = Mlp::build(ps_, "prop.glimpse", cfg_.attn_out, head_h, 4, rng);
  prop.bu = Mlp::build(ps_, "prop.bu", glimpse_dim, obj_h, cfg_.obj_out, rng);
  prop.fuse =
      Mlp::build(ps_, "prop.fuse", cfg_.obj_out + cfg_.attn_out, fuse_h, cfg_.fuse_out, rng);
  prop.where = Mlp::build(ps_, "prop.where", cfg_.fuse_out, head_h, 8, rng);
  prop.obj = Mlp::build(ps_, "prop.obj", glimpse_dim, obj_h, cfg_.obj_out, rng);
  prop.what = Mlp::build(ps_, "prop.what", cfg_.fuse_out + cfg_.obj_out + 4, head_h, 2 * A, rng);
  prop.depth =
      Mlp::build(ps_, "prop.depth", cfg_.fuse_out + cfg_.obj_out + 4 + A, head_h, 2, rng);
  prop.pres =
      Mlp::build(ps_, "prop.pres", cfg_.fuse_out + cfg_.obj_out + 4 + A + 1, head_h, 1, rng);
  prop.rnn = GruCell::build(ps_, "prop.rnn", 4 + A + 2, Dh, rng);

  // learned prior propagation: no glimpse components, heads condition on u
  // and the decoded attributes only
  prior.td = Mlp::build(ps_, "prior.td", attr_h, attn_h, cfg_.attn_out, rng);
  prior.spatial =
      Mlp::build(ps_, "prior.spatial", attr_h + 2 + cfg_.attn_out, attn_h, cfg_.attn_out, rng);
  prior.fuse = Mlp::build(ps_, "prior.fuse", cfg_.attn_out, fuse_h, cfg_.fuse_out, rng);
  prior.where = Mlp::build(ps_, "prior.where", cfg_.fuse_out, head_h, 8, rng);
  prior.what = Mlp::build(ps_, "prior.what", cfg_.fuse_out + 4, head_h, 2 * A, rng);
  prior.depth = Mlp::build(ps_, "prior.depth", cfg_.fuse_out + 4 + A, head_h, 2, rng);
  prior.pres = Mlp::build(ps_, "prior.pres", cfg_.fuse_out + 4 + A + 1, head_h, 1, rng);

  // rendering
  rend.obj_appearance = Mlp::build(ps_, "rend.obj", A, {cfg_.robj_hidden1, cfg_.robj_hidden2},
                                   cfg_.obj_h * cfg_.obj_w * 4, rng);

  default_hidden = &ps_.add("default_hidden", {1, Dh});
}

std::string check_capacity(const ModelConfig& cfg, int max_expected_objects) {
  if (cfg.K >= 1.25 * max_expected_objects) return "";
  return "K = " + std::to_string(cfg.K) + " is below 1.25 x max expected objects (" +
         std::to_string(max_expected_objects) + "); low-pres objects may be starved of slots";
}

GridSpec SilotModel::grid_for(int frame_h, int frame_w) const {
  return compute_grid_spec(frame_h, frame_w, default_backbone(cfg_.backbone_filters), cfg_);
}

VideoRollout run_video_graph(Graph& g, SilotModel& m, const FrameSource& src, int T,
                             VideoMode vmode, RunMode rmode, RandomStream* rng,
                             const std::vector<bool>& dropout_mask, bool warmup_detach,
                             bool with_prior_density, int prior_context) {
  const ModelConfig& cfg = m.config();
  VideoRollout out;
  out.grid = m.grid_for(src.H, src.W);
  if (!dropout_mask.empty() && !dropout_mask[0])
    throw std::runtime_error("run_video: discovery must be on at t=0");

  Var default_hidden = use(g, m.default_hidden);
  ObjectSetVar prev;
  std::vector<int64_t> prev_ids(cfg.K, -1);
  int64_t next_id = 0;

  for (int t = 0; t < T; ++t) {
    StepTrace st;
    const bool use_prior = vmode == VideoMode::PriorRollout && t >= prior_context;
    st.discovery_on = !use_prior && (dropout_mask.empty() || dropout_mask[t]);

    if (!use_prior) {
      st.frame = g.constant(src.get(t));
      st.has_frame = true;
    }

    if (t == 0) {
      ObjectSet degen = empty_object_set(cfg.K, cfg, src.H, src.W, nullptr);
      st.propagated.where = g.constant(degen.where);
      st.propagated.what = g.constant(degen.what);
      st.propagated.depth = g.constant(degen.depth);
      st.propagated.pres = g.constant(degen.pres);
      st.propagated.hidden = g.repeat_rows(default_hidden, cfg.K);
      st.propagated.K = cfg.K;
    } else if (use_prior) {
      PropagateResult res =
          prior_propagate_step(g, prev, m.prior, m.prop.rnn, out.grid, cfg, rmode, rng);
      st.propagated = res.objects;
      st.prop_latents = res.latents;
      st.has_prop = true;
    } else {
      PropagateResult res = propagate_step(g, st.frame, prev, m.prop, m.attn, out.grid, cfg,
                                           rmode, rng, warmup_detach);
      st.propagated = res.objects;
      st.prop_latents = res.latents;
      st.has_prop = true;
      if (with_prior_density) {
        st.prior_params = prior_propagate_density(g, prev, m.prior, out.grid, cfg, res.where_feat,
                                                  res.objects.what, res.objects.depth);
        st.has_prior_params = true;
      }
    }

    ObjectSetVar candidates = st.propagated;
    std::vector<Provenance> prov;
    for (int k = 0; k < st.propagated.K; ++k) prov.push_back({Provenance::Propagated, k});
    if (st.discovery_on) {
      DiscoverResult dres = discover_step(g, st.frame, st.propagated, out.grid, m.disc, m.attn,
                                          cfg, default_hidden, rmode, rng, warmup_detach);
      st.discovered = dres.objects;
      st.disc_latents = dres.latents;
      candidates = concat_object_sets(g, candidates, dres.objects);
      for (int c = 0; c < dres.objects.K; ++c) prov.push_back({Provenance::Discovered, c});
    }

    SelectResult sel = select_top_k(g, candidates, prov, cfg.K, cfg, out.grid, default_hidden);
    st.selected = sel.objects;
    st.provenance = sel.provenance;

    st.track_ids.assign(cfg.K, -1);
    for (int r = 0; r < cfg.K; ++r) {
      const Provenance& p = sel.provenance[r];
      if (p.kind == Provenance::Propagated)
        st.track_ids[r] = prev_ids[p.index];
      else if (p.kind == Provenance::Discovered)
        st.track_ids[r] = next_id++;
    }
    prev_ids = st.track_ids;
    prev = st.selected;

    st.rendered = render(g, st.selected, src.H, src.W, m.rend, cfg);
    out.steps.push_back(std::move(st));
  }
  return out;
}

RolloutTrace run_video(SilotModel& m, const FrameSource& src, VideoMode vmode, RunMode rmode,
                       RandomStream rng, const std::vector<bool>& dropout_mask,
                       int prior_context) {
  Graph g;
  VideoRollout roll = run_video_graph(g, m, src, src.T(), vmode, rmode, &rng, dropout_mask,
                                      /*warmup_detach=*/false, /*with_prior_density=*/false,
                                      prior_context);
  RolloutTrace out;
  out.grid = roll.grid;
  for (StepTrace& st : roll.steps) {
    TimestepTrace tt;
    tt.propagated = from_graph(st.propagated);
    tt.discovered = st.discovery_on ? from_graph(st.discovered) : ObjectSet{};
    tt.selected = from_graph(st.selected);
    tt.rendered = g.val(st.rendered);
    tt.provenance = st.provenance;
    tt.track_ids = st.track_ids;
    tt.discovery_on = st.discovery_on;
    out.steps.push_back(std::move(tt));
  }
  return out;
}

}  // namespace silot
