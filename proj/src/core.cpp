#include "silot/core.hpp"

#include <cstring>
#include <set>
#include <stdexcept>

namespace silot {

void VideoSample::check_invariants() const {
  std::set<std::pair<int64_t, int>> seen;
  for (const Annotation& a : annotations) {
    if (a.t < 0 || a.t >= T) throw std::runtime_error("VideoSample: annotation t out of range");
    if (a.box.top() < -1e-6 || a.box.left() < -1e-6 || a.box.bottom() > H + 1e-6 ||
        a.box.right() > W + 1e-6)
      throw std::runtime_error("VideoSample: annotated box outside frame bounds");
    if (!seen.insert({a.track_id, a.t}).second)
      throw std::runtime_error("VideoSample: duplicate (track, t) annotation");
  }
}

void ObjectSet::check_invariants() const {
  const int K = size();
  if (what.rows() != K || depth.rows() != K || pres.rows() != K || hidden.rows() != K)
    throw std::runtime_error("ObjectSet: attribute row counts differ");
  for (int k = 0; k < K; ++k) {
    if (!(depth(k, 0) >= 0.0 && depth(k, 0) <= 1.0))
      throw std::runtime_error("ObjectSet: depth outside [0,1]");
    if (!(pres(k, 0) >= 0.0 && pres(k, 0) <= 1.0))
      throw std::runtime_error("ObjectSet: pres outside [0,1]");
    if (!(where(k, 2) > 0.0 && where(k, 3) > 0.0))
      throw std::runtime_error("ObjectSet: nonpositive box size");
  }
}

ObjectSet empty_object_set(int K, const ModelConfig& cfg, double frame_h, double frame_w,
                           const Tensor* default_hidden) {
  if (K < 0) throw std::runtime_error("empty_object_set: K must be >= 0");
  ObjectSet o;
  o.where = Tensor({K, 4});
  o.what = Tensor({K, cfg.A});
  o.depth = Tensor({K, 1}, 0.5);
  o.pres = Tensor({K, 1}, 0.0);
  o.hidden = Tensor({K, cfg.hidden_dim});
  for (int k = 0; k < K; ++k) {
    o.where(k, 0) = frame_h / 2.0;
    o.where(k, 1) = frame_w / 2.0;
    o.where(k, 2) = cfg.anchor_h;
    o.where(k, 3) = cfg.anchor_w;
    if (default_hidden) {
      if (default_hidden->numel() != cfg.hidden_dim)
        throw std::runtime_error("empty_object_set: default hidden size mismatch");
      std::memcpy(o.hidden.ptr() + (int64_t)k * cfg.hidden_dim, default_hidden->ptr(),
                  cfg.hidden_dim * sizeof(double));
    }
  }
  return o;
}

namespace {
Tensor concat_rows_t(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::runtime_error("concat_object_sets: dimension mismatch");
  Tensor out({a.rows() + b.rows(), (int)a.cols()});
  std::memcpy(out.ptr(), a.ptr(), a.numel() * sizeof(double));
  std::memcpy(out.ptr() + a.numel(), b.ptr(), b.numel() * sizeof(double));
  return out;
}
}  // namespace

ObjectSet concat_object_sets(const ObjectSet& a, const ObjectSet& b) {
  ObjectSet o;
  o.where = concat_rows_t(a.where, b.where);
  o.what = concat_rows_t(a.what, b.what);
  o.depth = concat_rows_t(a.depth, b.depth);
  o.pres = concat_rows_t(a.pres, b.pres);
  o.hidden = concat_rows_t(a.hidden, b.hidden);
  return o;
}

std::pair<ObjectSet, ObjectSet> split_object_set(const ObjectSet& o, int k) {
  auto take = [&](const Tensor& t, int r0, int len) {
    Tensor out({len, (int)t.cols()});
    std::memcpy(out.ptr(), t.ptr() + (int64_t)r0 * t.cols(), (int64_t)len * t.cols() * sizeof(double));
    return out;
  };
  const int rest = o.size() - k;
  ObjectSet a{take(o.where, 0, k), take(o.what, 0, k), take(o.depth, 0, k), take(o.pres, 0, k),
              take(o.hidden, 0, k)};
  ObjectSet b{take(o.where, k, rest), take(o.what, k, rest), take(o.depth, k, rest),
              take(o.pres, k, rest), take(o.hidden, k, rest)};
  return {a, b};
}

ObjectSetVar to_graph(Graph& g, const ObjectSet& o) {
  return ObjectSetVar{g.constant(o.where), g.constant(o.what), g.constant(o.depth),
                      g.constant(o.pres), g.constant(o.hidden), o.size()};
}

ObjectSet from_graph(const ObjectSetVar& o) {
  Graph& g = *o.where.g;
  return ObjectSet{g.val(o.where), g.val(o.what), g.val(o.depth), g.val(o.pres), g.val(o.hidden)};
}

ObjectSetVar concat_object_sets(Graph& g, const ObjectSetVar& a, const ObjectSetVar& b) {
  if (a.K == 0) return b;
  if (b.K == 0) return a;
  return ObjectSetVar{g.concat_rows({a.where, b.where}), g.concat_rows({a.what, b.what}),
                      g.concat_rows({a.depth, b.depth}), g.concat_rows({a.pres, b.pres}),
                      g.concat_rows({a.hidden, b.hidden}), a.K + b.K};
}

ObjectSetVar gather_objects(Graph& g, const ObjectSetVar& o, const std::vector<int>& idx) {
  return ObjectSetVar{g.gather_rows(o.where, idx), g.gather_rows(o.what, idx),
                      g.gather_rows(o.depth, idx), g.gather_rows(o.pres, idx),
                      g.gather_rows(o.hidden, idx), (int)idx.size()};
}

}  // namespace silot
