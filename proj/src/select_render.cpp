#include "silot/select_render.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace silot {

std::vector<int> top_k_indices(const Tensor& pres, int K) {
  const int n = pres.rows();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return pres.data[a] > pres.data[b]; });
  order.resize(std::min(K, n));
  std::sort(order.begin(), order.end());  // keep original relative order
  std::vector<int> out(order.begin(), order.end());
  while ((int)out.size() < K) out.push_back(-1);
  return out;
}

ObjectSet select_top_k(const ObjectSet& candidates, int K, const ModelConfig& cfg, double frame_h,
                       double frame_w, const Tensor* default_hidden) {
  if (candidates.size() < 1) throw std::runtime_error("select_top_k: needs at least 1 candidate");
  std::vector<int> idx = top_k_indices(candidates.pres, K);
  ObjectSet pad = empty_object_set(1, cfg, frame_h, frame_w, default_hidden);
  ObjectSet out;
  auto take = [&](const Tensor& src, const Tensor& pad_src) {
    Tensor t({K, (int)src.cols()});
    for (int r = 0; r < K; ++r) {
      const double* from = idx[r] >= 0 ? src.ptr() + (int64_t)idx[r] * src.cols() : pad_src.ptr();
      std::copy(from, from + src.cols(), t.ptr() + (int64_t)r * src.cols());
    }
    return t;
  };
  out.where = take(candidates.where, pad.where);
  out.what = take(candidates.what, pad.what);
  out.depth = take(candidates.depth, pad.depth);
  out.pres = take(candidates.pres, pad.pres);
  out.hidden = take(candidates.hidden, pad.hidden);
  return out;
}

SelectResult select_top_k(Graph& g, const ObjectSetVar& candidates,
                          const std::vector<Provenance>& cand_prov, int K, const ModelConfig& cfg,
                          const GridSpec& grid, Var default_hidden) {
  std::vector<int> idx = top_k_indices(g.val(candidates.pres), K);
  const int kept = (int)std::count_if(idx.begin(), idx.end(), [](int i) { return i >= 0; });

  SelectResult res;
  std::vector<int> keep(idx.begin(), idx.begin() + kept);
  ObjectSetVar sel = gather_objects(g, candidates, keep);
  if (kept < K) {
    const int pad_n = K - kept;
    ObjectSet pad =
        empty_object_set(pad_n, cfg, grid.frame_h, grid.frame_w, /*default_hidden=*/nullptr);
    ObjectSetVar padv;
    padv.where = g.constant(pad.where);
    padv.what = g.constant(pad.what);
    padv.depth = g.constant(pad.depth);
    padv.pres = g.constant(pad.pres);
    padv.hidden = g.repeat_rows(default_hidden, pad_n);
    padv.K = pad_n;
    sel = concat_object_sets(g, sel, padv);
  }
  res.objects = sel;
  for (int r = 0; r < K; ++r)
    res.provenance.push_back(idx[r] >= 0 ? cand_prov[idx[r]] : Provenance{Provenance::Padded, -1});
  return res;
}

Var composite_objects(Graph& g, Var beta, Var xi, Var where, Var depth, Var pres, int map_h,
                      int map_w, int out_h, int out_w, double lambda) {
  const int64_t plane = (int64_t)out_h * out_w;
  Var alpha = g.mul(xi, pres);    // {K, mh*mw} * {K,1}
  Var gamma = g.mul(alpha, depth);
  Var beta_c = g.inverse_place(beta, map_h, map_w, 3, where, out_h, out_w, {0.0, 0.0, 0.0});
  Var alpha_c = g.inverse_place(alpha, map_h, map_w, 1, where, out_h, out_w, {0.0});
  Var gamma_c = g.inverse_place(gamma, map_h, map_w, 1, where, out_h, out_w, {kNegInf});

  Var m = g.col_max_const(gamma_c);                      // {1, plane}
  Var e = g.exp_(g.scale(g.sub(gamma_c, m), 1.0 / lambda));
  Var denom = g.col_sum(e);                              // {1, plane}
  Var ae = g.mul(alpha_c, e);
  std::vector<Var> channels;
  for (int c = 0; c < 3; ++c) {
    Var num = g.col_sum(g.mul(g.slice_cols(beta_c, c * plane, plane), ae));
    channels.push_back(g.div(num, denom));
  }
  return g.concat_cols(channels);  // {1, 3*plane}
}

Var render(Graph& g, const ObjectSetVar& objects, int out_h, int out_w, const RenderParams& rp,
           const ModelConfig& cfg) {
  if (objects.K == 0) return g.constant(Tensor({1, 3 * out_h * out_w}));
  const int64_t mp = (int64_t)cfg.obj_h * cfg.obj_w;
  Var logits = rp.obj_appearance.forward(g, objects.what);  // {K, mp*4}
  Var beta = g.sigmoid(g.add_const(g.scale(g.slice_cols(logits, 0, mp * 3), cfg.sigma_beta),
                                   cfg.mu_beta));
  Var xi = g.sigmoid(g.add_const(g.scale(g.slice_cols(logits, mp * 3, mp), cfg.sigma_xi),
                                 cfg.mu_xi));
  return composite_objects(g, beta, xi, objects.where, objects.depth, objects.pres, cfg.obj_h,
                           cfg.obj_w, out_h, out_w, cfg.lambda);
}

Var frame_log_likelihood(Graph& g, Var frame, Var rendered) {
  if (g.val(frame).numel() != g.val(rendered).numel())
    throw std::runtime_error("frame_log_likelihood: shape mismatch");
  Var xh = g.clamp(rendered, 1e-6, 1.0 - 1e-6);
  Var ll = g.add(g.mul(frame, g.log_(xh)),
                 g.mul(g.add_const(g.neg(frame), 1.0), g.log_(g.add_const(g.neg(xh), 1.0))));
  return g.sum_all(ll);
}

Tensor frame_to_planar(const Tensor& hwc) {
  const int H = hwc.shape[0], W = hwc.shape[1], C = hwc.shape[2];
  Tensor out({1, C * H * W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        out.data[(int64_t)c * H * W + (int64_t)y * W + x] = hwc.data[((int64_t)y * W + x) * C + c];
  return out;
}

Tensor planar_to_hwc(const Tensor& planar, int H, int W, int C) {
  Tensor out({H, W, C});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out.data[((int64_t)y * W + x) * C + c] = planar.data[(int64_t)c * H * W + (int64_t)y * W + x];
  return out;
}

}  // namespace silot
