#pragma once

#include <utility>
#include <vector>

#include "silot/config.hpp"
#include "silot/graph.hpp"
#include "silot/tensor.hpp"

namespace silot {

// Axis-aligned box, center + size in pixels, same convention as the where
// attribute.
struct Box {
  double y = 0, x = 0, h = 0, w = 0;
  double top() const { return y - h / 2; }
  double left() const { return x - w / 2; }
  double bottom() const { return y + h / 2; }
  double right() const { return x + w / 2; }
};

// One video with ground-truth tracks. Frames are dense 8-bit RGB, T*H*W*3
// row-major; annotations list per-frame boxes keyed by persistent track id
// (a track simply has no entry at frames where it is absent).
struct VideoSample {
  int T = 0, H = 0, W = 0;
  std::vector<unsigned char> frames;
  struct Annotation {
    int64_t track_id;
    int t;
    Box box;
  };
  std::vector<Annotation> annotations;

  int64_t frame_bytes() const { return (int64_t)H * W * 3; }
  const unsigned char* frame(int t) const { return frames.data() + (int64_t)t * frame_bytes(); }
  // every annotated box inside frame bounds, one box per (track, t)
  void check_invariants() const;
};

// A batch of K objects, one matrix per attribute. The universal currency
// between modules. where rows are (y, x, h, w): center + size in frame
// pixels. Immutable by convention after construction.
struct ObjectSet {
  Tensor where;   // K x 4
  Tensor what;    // K x A
  Tensor depth;   // K x 1, in [0, 1]
  Tensor pres;    // K x 1, in [0, 1]
  Tensor hidden;  // K x D_h, deterministic recurrent state

  int size() const { return where.rows(); }

  // Throws if depth/pres leave [0,1] or any h/w is nonpositive.
  void check_invariants() const;
};

// Degenerate objects for the initial timestep and for selection padding:
// pres = 0, depth = 0.5, what = 0, where = frame center at anchor size.
// The hidden rows replicate default_hidden (a trainable parameter held by
// the model); pass nullptr for zeros.
ObjectSet empty_object_set(int K, const ModelConfig& cfg, double frame_h, double frame_w,
                           const Tensor* default_hidden = nullptr);

// Rows of a first, then rows of b. Attribute dimensions must match.
ObjectSet concat_object_sets(const ObjectSet& a, const ObjectSet& b);

// Inverse of concat: first k rows and the rest.
std::pair<ObjectSet, ObjectSet> split_object_set(const ObjectSet& o, int k);

// Graph-resident counterpart used inside the model forward pass.
struct ObjectSetVar {
  Var where, what, depth, pres, hidden;
  int K = 0;
};

ObjectSetVar to_graph(Graph& g, const ObjectSet& o);
ObjectSet from_graph(const ObjectSetVar& o);
ObjectSetVar concat_object_sets(Graph& g, const ObjectSetVar& a, const ObjectSetVar& b);
ObjectSetVar gather_objects(Graph& g, const ObjectSetVar& o, const std::vector<int>& idx);

}  // namespace silot
