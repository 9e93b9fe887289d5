#pragma once

#include <functional>
#include <vector>

#include "silot/tensor.hpp"

namespace silot {

class Graph;

// Handle to a node in a Graph. Cheap to copy; only valid for the graph that
// created it.
struct Var {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
};

// Reverse-mode autodiff tape. One Graph per forward pass; parameter leaves
// push their accumulated gradients into external sinks when backward() runs.
//
// Shape conventions: most ops view a tensor as 2-D (rows() x cols()).
// Elementwise binary ops broadcast a dimension when one operand has extent 1
// there. Image tensors are {H, W, C} row-major; conv weights {fh, fw, IC, OC}.
class Graph {
 public:
  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  Var scalar_const(double v) { return constant(Tensor::scalar(v)); }
  // Parameter leaf. The value is copied; after backward() the gradient is
  // added into *grad_sink. Repeated calls with the same sink reuse the node.
  Var param(const Tensor& value, Tensor* grad_sink);

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  double item(Var v) const { return nodes_[v.id].value.data[0]; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // elementwise binary, with scalar/row/column broadcasting
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);

  Var scale(Var a, double c);
  Var add_const(Var a, double c);

  Var neg(Var a) { return scale(a, -1.0); }
  Var relu(Var a);
  Var tanh_(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var exp_(Var a);
  Var log_(Var a);
  Var square(Var a);
  Var clamp(Var a, double lo, double hi);
  Var stop_grad(Var a);

  Var sum_all(Var a);  // -> 1x1
  Var row_sum(Var a);  // RxC -> Rx1
  Var col_sum(Var a);  // RxC -> 1xC
  // (G*R)xC -> GxC, summing each consecutive block of R rows
  Var group_row_sum(Var a, int rows_per_group);

  // Column-wise max as a non-differentiable constant (for stable softmax /
  // logsumexp shifts, which are exact for any fixed shift).
  Var col_max_const(Var a);
  Var emax_const(Var a, Var b);

  Var matmul(Var a, Var b);
  Var affine(Var x, Var w, Var b) { return add(matmul(x, w), b); }

  Var reshape(Var a, std::vector<int> shape);
  Var concat_rows(const std::vector<Var>& xs);
  Var concat_cols(const std::vector<Var>& xs);
  Var slice_rows(Var a, int r0, int len);
  Var slice_cols(Var a, int64_t c0, int64_t len);
  Var gather_rows(Var a, std::vector<int> idx);
  Var repeat_rows(Var a, int r);  // 1xC -> rxC

  // image ops; x is {H, W, C}
  Var pad2d(Var x, int top, int bottom, int left, int right, double value = 0.0);
  Var conv2d(Var x, Var w, Var b, int stride_h, int stride_w);

  // Spatial transformer primitives. Boxes are rows of (y, x, h, w): pixel
  // center + size in frame coordinates. A pixel with index i spans the
  // continuous interval [i, i+1), its center at i + 0.5; bilinear samples
  // outside the source read 0 (glimpse) or the per-channel default (place).
  Var glimpse_extract(Var frame, Var where, int out_h, int out_w);
  // maps: {K, mh*mw*C} with HWC layout per row; result {K, C*out_h*out_w}
  // with planar (channel-major) layout per row.
  Var inverse_place(Var maps, int map_h, int map_w, int map_c, Var where, int out_h, int out_w,
                    const std::vector<double>& channel_default);

  void backward(Var scalar_loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::function<void()> back;
    Tensor* sink = nullptr;
  };

  int push(Tensor value, bool needs_grad, std::function<void()> back = nullptr);
  Tensor& grad_ref(int id);
  void accumulate(int id, const double* g, int64_t n);

  Var binary_op(Var a, Var b, int op);

  std::vector<Node> nodes_;
  std::vector<std::pair<Tensor*, int>> param_nodes_;

  friend struct GraphDetailAccess;
};

// readable expression helpers
inline Var operator+(Var a, Var b) { return a.g->add(a, b); }
inline Var operator-(Var a, Var b) { return a.g->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.g->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.g->div(a, b); }
inline Var operator-(Var a) { return a.g->neg(a); }
inline Var operator*(Var a, double c) { return a.g->scale(a, c); }
inline Var operator*(double c, Var a) { return a.g->scale(a, c); }
inline Var operator+(Var a, double c) { return a.g->add_const(a, c); }
inline Var operator+(double c, Var a) { return a.g->add_const(a, c); }
inline Var operator-(Var a, double c) { return a.g->add_const(a, -c); }
inline Var operator-(double c, Var a) { return a.g->add_const(a.g->neg(a), c); }

}  // namespace silot
