#include "silot/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace silot {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

MapConst as_mat(const Tensor& t, int64_t r, int64_t c) { return MapConst(t.ptr(), r, c); }
MapMat as_mat(Tensor& t, int64_t r, int64_t c) { return MapMat(t.ptr(), r, c); }

}  // namespace

int Graph::push(Tensor value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_ref(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape);
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::accumulate(int id, const double* g, int64_t n) {
  Tensor& dst = grad_ref(id);
  for (int64_t i = 0; i < n; ++i) dst.data[i] += g[i];
}

Var Graph::constant(Tensor t) { return Var{this, push(std::move(t), false)}; }

Var Graph::param(const Tensor& value, Tensor* grad_sink) {
  for (const auto& [sink, id] : param_nodes_)
    if (sink == grad_sink) return Var{this, id};
  int id = push(value, true);
  nodes_[id].sink = grad_sink;
  param_nodes_.emplace_back(grad_sink, id);
  return Var{this, id};
}

// ---------------------------------------------------------------------------
// elementwise binary with broadcasting

Var Graph::binary_op(Var a, Var b, int op) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  const int64_t ra = ta.rows(), ca = ta.cols();
  const int64_t rb = tb.rows(), cb = tb.cols();
  const int64_t R = std::max(ra, rb), C = std::max(ca, cb);
  if ((ra != R && ra != 1) || (rb != R && rb != 1) || (ca != C && ca != 1) || (cb != C && cb != 1))
    throw std::runtime_error("binary op: incompatible shapes");

  // strides (0 when broadcast)
  const int64_t ars = (ra == 1) ? 0 : ca, acs = (ca == 1) ? 0 : 1;
  const int64_t brs = (rb == 1) ? 0 : cb, bcs = (cb == 1) ? 0 : 1;

  Tensor out = (ra == R && ca == C) ? Tensor(ta.shape) : Tensor({(int)R, (int)C});
  const double* pa = ta.ptr();
  const double* pb = tb.ptr();
  double* po = out.ptr();
  for (int64_t r = 0; r < R; ++r) {
    for (int64_t c = 0; c < C; ++c) {
      const double x = pa[r * ars + c * acs];
      const double y = pb[r * brs + c * bcs];
      double v;
      switch (op) {
        case 0: v = x + y; break;
        case 1: v = x - y; break;
        case 2: v = x * y; break;
        default: v = x / y; break;
      }
      po[r * C + c] = v;
    }
  }

  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  int aid = a.id, bid = b.id;
  int out_id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[out_id].back = [this, aid, bid, out_id, op, R, C, ars, acs, brs, bcs]() {
      const Tensor& g = nodes_[out_id].grad;
      const Tensor& ta2 = nodes_[aid].value;
      const Tensor& tb2 = nodes_[bid].value;
      const double* pg = g.ptr();
      const double* pa = ta2.ptr();
      const double* pb = tb2.ptr();
      const bool na = nodes_[aid].needs_grad, nb = nodes_[bid].needs_grad;
      double* ga = na ? grad_ref(aid).ptr() : nullptr;
      double* gb = nb ? grad_ref(bid).ptr() : nullptr;
      for (int64_t r = 0; r < R; ++r) {
        for (int64_t c = 0; c < C; ++c) {
          const double gv = pg[r * C + c];
          const int64_t ia = r * ars + c * acs, ib = r * brs + c * bcs;
          switch (op) {
            case 0:
              if (na) ga[ia] += gv;
              if (nb) gb[ib] += gv;
              break;
            case 1:
              if (na) ga[ia] += gv;
              if (nb) gb[ib] -= gv;
              break;
            case 2:
              if (na) ga[ia] += gv * pb[ib];
              if (nb) gb[ib] += gv * pa[ia];
              break;
            default: {
              const double y = pb[ib];
              if (na) ga[ia] += gv / y;
              if (nb) gb[ib] -= gv * pa[ia] / (y * y);
            }
          }
        }
      }
    };
  }
  return Var{this, out_id};
}

Var Graph::add(Var a, Var b) { return binary_op(a, b, 0); }
Var Graph::sub(Var a, Var b) { return binary_op(a, b, 1); }
Var Graph::mul(Var a, Var b) { return binary_op(a, b, 2); }
Var Graph::div(Var a, Var b) { return binary_op(a, b, 3); }

// ---------------------------------------------------------------------------
// unary

Var Graph::scale(Var a, double c) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out.data[i] = ta.data[i] * c;
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, c]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& ga = grad_ref(aid);
      for (int64_t i = 0; i < go.numel(); ++i) ga.data[i] += go.data[i] * c;
    };
  return Var{this, id};
}

Var Graph::add_const(Var a, double c) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out.data[i] = ta.data[i] + c;
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id]() {
      const Tensor& go = nodes_[id].grad;
      accumulate(aid, go.ptr(), go.numel());
    };
  return Var{this, id};
}

#define SILOT_UNARY(NAME, FWD, BWD)                                              \
  Var Graph::NAME(Var a) {                                                       \
    const Tensor& ta = nodes_[a.id].value;                                       \
    Tensor out(ta.shape);                                                        \
    for (int64_t i = 0; i < ta.numel(); ++i) {                                   \
      const double x = ta.data[i];                                               \
      out.data[i] = (FWD);                                                       \
    }                                                                            \
    bool ng = nodes_[a.id].needs_grad;                                           \
    int aid = a.id;                                                              \
    int id = push(std::move(out), ng);                                           \
    if (ng)                                                                      \
      nodes_[id].back = [this, aid, id]() {                                      \
        const Tensor& go = nodes_[id].grad;                                      \
        const Tensor& ti = nodes_[aid].value;                                    \
        const Tensor& to = nodes_[id].value;                                     \
        Tensor& ga = grad_ref(aid);                                              \
        for (int64_t i = 0; i < go.numel(); ++i) {                               \
          const double x = ti.data[i];                                           \
          const double y = to.data[i];                                           \
          (void)x;                                                               \
          (void)y;                                                               \
          ga.data[i] += go.data[i] * (BWD);                                      \
        }                                                                        \
      };                                                                         \
    return Var{this, id};                                                        \
  }

SILOT_UNARY(relu, x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0)
SILOT_UNARY(tanh_, std::tanh(x), 1.0 - y * y)
SILOT_UNARY(sigmoid, 1.0 / (1.0 + std::exp(-x)), y * (1.0 - y))
SILOT_UNARY(softplus, (x > 30.0 ? x : std::log1p(std::exp(x))), 1.0 / (1.0 + std::exp(-x)))
SILOT_UNARY(exp_, std::exp(x), y)
SILOT_UNARY(log_, std::log(x), 1.0 / x)
SILOT_UNARY(square, x* x, 2.0 * x)

#undef SILOT_UNARY

Var Graph::clamp(Var a, double lo, double hi) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out.data[i] = std::min(hi, std::max(lo, ta.data[i]));
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, lo, hi]() {
      const Tensor& go = nodes_[id].grad;
      const Tensor& ti = nodes_[aid].value;
      Tensor& ga = grad_ref(aid);
      for (int64_t i = 0; i < go.numel(); ++i)
        if (ti.data[i] > lo && ti.data[i] < hi) ga.data[i] += go.data[i];
    };
  return Var{this, id};
}

Var Graph::stop_grad(Var a) { return Var{this, push(nodes_[a.id].value, false)}; }

// ---------------------------------------------------------------------------
// reductions

Var Graph::sum_all(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  double s = 0.0;
  for (double v : ta.data) s += v;
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(Tensor::scalar(s), ng);
  if (ng)
    nodes_[id].back = [this, aid, id]() {
      const double g = nodes_[id].grad.data[0];
      Tensor& ga = grad_ref(aid);
      for (double& v : ga.data) v += g;
    };
  return Var{this, id};
}

Var Graph::row_sum(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  const int R = ta.rows();
  const int64_t C = ta.cols();
  Tensor out({R, 1});
  for (int r = 0; r < R; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) s += ta.data[r * C + c];
    out.data[r] = s;
  }
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, R, C]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& ga = grad_ref(aid);
      for (int r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) ga.data[r * C + c] += go.data[r];
    };
  return Var{this, id};
}

Var Graph::col_sum(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  const int R = ta.rows();
  const int64_t C = ta.cols();
  Tensor out({1, (int)C});
  for (int r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out.data[c] += ta.data[r * C + c];
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, R, C]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& ga = grad_ref(aid);
      for (int r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) ga.data[r * C + c] += go.data[c];
    };
  return Var{this, id};
}

Var Graph::group_row_sum(Var a, int rows_per_group) {
  const Tensor& ta = nodes_[a.id].value;
  const int R = ta.rows();
  const int64_t C = ta.cols();
  if (R % rows_per_group != 0) throw std::runtime_error("group_row_sum: rows not divisible");
  const int G = R / rows_per_group;
  Tensor out({G, (int)C});
  for (int r = 0; r < R; ++r) {
    const int g = r / rows_per_group;
    for (int64_t c = 0; c < C; ++c) out.data[g * C + c] += ta.data[r * C + c];
  }
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, rows_per_group, R, C]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& ga = grad_ref(aid);
      for (int r = 0; r < R; ++r) {
        const int g = r / rows_per_group;
        for (int64_t c = 0; c < C; ++c) ga.data[r * C + c] += go.data[g * C + c];
      }
    };
  return Var{this, id};
}

Var Graph::col_max_const(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  const int R = ta.rows();
  const int64_t C = ta.cols();
  Tensor out({1, (int)C});
  for (int64_t c = 0; c < C; ++c) {
    double m = ta.data[c];
    for (int r = 1; r < R; ++r) m = std::max(m, ta.data[r * C + c]);
    out.data[c] = m;
  }
  return constant(std::move(out));
}

Var Graph::emax_const(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out.data[i] = std::max(ta.data[i], tb.data[i]);
  return constant(std::move(out));
}

// ---------------------------------------------------------------------------
// matmul

Var Graph::matmul(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  const int64_t M = ta.rows(), K = ta.cols();
  const int64_t K2 = tb.rows(), N = tb.cols();
  if (K != K2) throw std::runtime_error("matmul: inner dims differ");
  Tensor out({(int)M, (int)N});
  as_mat(out, M, N).noalias() = as_mat(ta, M, K) * as_mat(tb, K, N);
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  int aid = a.id, bid = b.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, bid, id, M, K, N]() {
      const Tensor& go = nodes_[id].grad;
      const Tensor& ta2 = nodes_[aid].value;
      const Tensor& tb2 = nodes_[bid].value;
      auto G = as_mat(go, M, N);
      if (nodes_[aid].needs_grad) as_mat(grad_ref(aid), M, K).noalias() += G * as_mat(tb2, K, N).transpose();
      if (nodes_[bid].needs_grad) as_mat(grad_ref(bid), K, N).noalias() += as_mat(ta2, M, K).transpose() * G;
    };
  return Var{this, id};
}

// ---------------------------------------------------------------------------
// shape ops

Var Graph::reshape(Var a, std::vector<int> shape) {
  const Tensor& ta = nodes_[a.id].value;
  if (Tensor::numel_of(shape) != ta.numel()) throw std::runtime_error("reshape: numel mismatch");
  Tensor out = ta.reshaped(std::move(shape));
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id]() {
      const Tensor& go = nodes_[id].grad;
      accumulate(aid, go.ptr(), go.numel());
    };
  return Var{this, id};
}

Var Graph::concat_rows(const std::vector<Var>& xs) {
  int64_t C = nodes_[xs[0].id].value.cols();
  int R = 0;
  bool ng = false;
  for (Var x : xs) {
    const Tensor& t = nodes_[x.id].value;
    if (t.cols() != C) throw std::runtime_error("concat_rows: col mismatch");
    R += t.rows();
    ng = ng || nodes_[x.id].needs_grad;
  }
  Tensor out({R, (int)C});
  int64_t off = 0;
  for (Var x : xs) {
    const Tensor& t = nodes_[x.id].value;
    std::memcpy(out.ptr() + off, t.ptr(), t.numel() * sizeof(double));
    off += t.numel();
  }
  std::vector<int> ids;
  for (Var x : xs) ids.push_back(x.id);
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, ids, id]() {
      const Tensor& go = nodes_[id].grad;
      int64_t off = 0;
      for (int xid : ids) {
        const int64_t n = nodes_[xid].value.numel();
        if (nodes_[xid].needs_grad) accumulate(xid, go.ptr() + off, n);
        off += n;
      }
    };
  return Var{this, id};
}

Var Graph::concat_cols(const std::vector<Var>& xs) {
  const int R = nodes_[xs[0].id].value.rows();
  int64_t C = 0;
  bool ng = false;
  for (Var x : xs) {
    const Tensor& t = nodes_[x.id].value;
    if (t.rows() != R) throw std::runtime_error("concat_cols: row mismatch");
    C += t.cols();
    ng = ng || nodes_[x.id].needs_grad;
  }
  Tensor out({R, (int)C});
  int64_t coff = 0;
  for (Var x : xs) {
    const Tensor& t = nodes_[x.id].value;
    const int64_t c = t.cols();
    for (int r = 0; r < R; ++r)
      std::memcpy(out.ptr() + r * C + coff, t.ptr() + r * c, c * sizeof(double));
    coff += c;
  }
  std::vector<int> ids;
  for (Var x : xs) ids.push_back(x.id);
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, ids, id, R, C]() {
      const Tensor& go = nodes_[id].grad;
      int64_t coff = 0;
      for (int xid : ids) {
        const int64_t c = nodes_[xid].value.cols();
        if (nodes_[xid].needs_grad) {
          Tensor& ga = grad_ref(xid);
          for (int r = 0; r < R; ++r)
            for (int64_t j = 0; j < c; ++j) ga.data[r * c + j] += go.data[r * C + coff + j];
        }
        coff += c;
      }
    };
  return Var{this, id};
}

Var Graph::slice_rows(Var a, int r0, int len) {
  const Tensor& ta = nodes_[a.id].value;
  const int64_t C = ta.cols();
  Tensor out({len, (int)C});
  std::memcpy(out.ptr(), ta.ptr() + (int64_t)r0 * C, (int64_t)len * C * sizeof(double));
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, r0, len, C]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& ga = grad_ref(aid);
      for (int64_t i = 0; i < (int64_t)len * C; ++i) ga.data[(int64_t)r0 * C + i] += go.data[i];
    };
  return Var{this, id};
}

Var Graph::slice_cols(Var a, int64_t c0, int64_t len) {
  const Tensor& ta = nodes_[a.id].value;
  const int R = ta.rows();
  const int64_t C = ta.cols();
  Tensor out({R, (int)len});
  for (int r = 0; r < R; ++r)
    std::memcpy(out.ptr() + r * len, ta.ptr() + r * C + c0, len * sizeof(double));
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, c0, len, R, C]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& ga = grad_ref(aid);
      for (int r = 0; r < R; ++r)
        for (int64_t j = 0; j < len; ++j) ga.data[r * C + c0 + j] += go.data[r * len + j];
    };
  return Var{this, id};
}

Var Graph::gather_rows(Var a, std::vector<int> idx) {
  const Tensor& ta = nodes_[a.id].value;
  const int64_t C = ta.cols();
  Tensor out({(int)idx.size(), (int)C});
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.ptr() + i * C, ta.ptr() + (int64_t)idx[i] * C, C * sizeof(double));
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, idx = std::move(idx), C]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& ga = grad_ref(aid);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int64_t c = 0; c < C; ++c) ga.data[(int64_t)idx[i] * C + c] += go.data[i * C + c];
    };
  return Var{this, id};
}

Var Graph::repeat_rows(Var a, int r) {
  const Tensor& ta = nodes_[a.id].value;
  if (ta.rows() != 1) throw std::runtime_error("repeat_rows: expects a row vector");
  const int64_t C = ta.cols();
  Tensor out({r, (int)C});
  for (int i = 0; i < r; ++i) std::memcpy(out.ptr() + i * C, ta.ptr(), C * sizeof(double));
  bool ng = nodes_[a.id].needs_grad;
  int aid = a.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, aid, id, r, C]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& ga = grad_ref(aid);
      for (int i = 0; i < r; ++i)
        for (int64_t c = 0; c < C; ++c) ga.data[c] += go.data[i * C + c];
    };
  return Var{this, id};
}

// ---------------------------------------------------------------------------
// image ops

Var Graph::pad2d(Var x, int top, int bottom, int left, int right, double value) {
  const Tensor& tx = nodes_[x.id].value;
  const int H = tx.shape[0], W = tx.shape[1], C = tx.shape[2];
  const int OH = H + top + bottom, OW = W + left + right;
  Tensor out({OH, OW, C}, value);
  for (int y = 0; y < H; ++y)
    std::memcpy(out.ptr() + ((int64_t)(y + top) * OW + left) * C, tx.ptr() + (int64_t)y * W * C,
                (int64_t)W * C * sizeof(double));
  bool ng = nodes_[x.id].needs_grad;
  int xid = x.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, xid, id, top, left, H, W, C, OW]() {
      const Tensor& go = nodes_[id].grad;
      Tensor& gx = grad_ref(xid);
      for (int y = 0; y < H; ++y)
        for (int64_t i = 0; i < (int64_t)W * C; ++i)
          gx.data[(int64_t)y * W * C + i] += go.data[((int64_t)(y + top) * OW + left) * C + i];
    };
  return Var{this, id};
}

Var Graph::conv2d(Var x, Var w, Var b, int stride_h, int stride_w) {
  const Tensor& tx = nodes_[x.id].value;
  const Tensor& tw = nodes_[w.id].value;
  const int H = tx.shape[0], W = tx.shape[1], C = tx.shape[2];
  const int FH = tw.shape[0], FW = tw.shape[1], IC = tw.shape[2], OC = tw.shape[3];
  if (IC != C) throw std::runtime_error("conv2d: channel mismatch");
  const int OH = (H - FH) / stride_h + 1;
  const int OW = (W - FW) / stride_w + 1;
  if (OH <= 0 || OW <= 0) throw std::runtime_error("conv2d: input smaller than filter");

  const int64_t patch = (int64_t)FH * FW * C;
  Tensor col({OH * OW, (int)patch});
  {
    double* pc = col.ptr();
    const double* px = tx.ptr();
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        const int iy = oy * stride_h, ix = ox * stride_w;
        for (int dy = 0; dy < FH; ++dy) {
          std::memcpy(pc, px + ((int64_t)(iy + dy) * W + ix) * C, (int64_t)FW * C * sizeof(double));
          pc += FW * C;
        }
      }
  }

  Tensor out({OH, OW, OC});
  as_mat(out, (int64_t)OH * OW, OC).noalias() =
      as_mat(col, (int64_t)OH * OW, patch) * as_mat(tw, patch, OC);
  {
    const Tensor& tb = nodes_[b.id].value;
    double* po = out.ptr();
    for (int64_t p = 0; p < (int64_t)OH * OW; ++p)
      for (int c = 0; c < OC; ++c) po[p * OC + c] += tb.data[c];
  }

  bool ng = nodes_[x.id].needs_grad || nodes_[w.id].needs_grad || nodes_[b.id].needs_grad;
  int xid = x.id, wid = w.id, bid = b.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, xid, wid, bid, id, col = std::move(col), H, W, C, FH, FW, OC, OH, OW,
                       stride_h, stride_w, patch]() {
      const Tensor& go = nodes_[id].grad;
      auto G = as_mat(go, (int64_t)OH * OW, OC);
      if (nodes_[bid].needs_grad) {
        Tensor& gb = grad_ref(bid);
        for (int64_t p = 0; p < (int64_t)OH * OW; ++p)
          for (int c = 0; c < OC; ++c) gb.data[c] += go.data[p * OC + c];
      }
      if (nodes_[wid].needs_grad)
        as_mat(grad_ref(wid), patch, OC).noalias() +=
            as_mat(col, (int64_t)OH * OW, patch).transpose() * G;
      if (nodes_[xid].needs_grad) {
        const Tensor& tw2 = nodes_[wid].value;
        Tensor dcol({OH * OW, (int)patch});
        as_mat(dcol, (int64_t)OH * OW, patch).noalias() = G * as_mat(tw2, patch, OC).transpose();
        Tensor& gx = grad_ref(xid);
        const double* pc = dcol.ptr();
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            const int iy = oy * stride_h, ix = ox * stride_w;
            for (int dy = 0; dy < FH; ++dy) {
              double* dst = gx.ptr() + ((int64_t)(iy + dy) * W + ix) * C;
              for (int64_t i = 0; i < (int64_t)FW * C; ++i) dst[i] += pc[i];
              pc += FW * C;
            }
          }
      }
    };
  return Var{this, id};
}

// ---------------------------------------------------------------------------
// spatial transformer primitives

Var Graph::glimpse_extract(Var frame, Var where, int out_h, int out_w) {
  const Tensor& tf = nodes_[frame.id].value;
  const Tensor& twh = nodes_[where.id].value;
  const int H = tf.shape[0], W = tf.shape[1], C = tf.shape[2];
  const int K = twh.rows();
  Tensor out({K, out_h * out_w * C});

  auto sample_axis = [](double center, double size, int n_out, int i) {
    return center - 0.5 * size + (i + 0.5) * size / n_out;
  };

  const double* pf = tf.ptr();
  for (int k = 0; k < K; ++k) {
    const double cy = twh(k, 0), cx = twh(k, 1), bh = twh(k, 2), bw = twh(k, 3);
    if (!(bh > 0.0) || !(bw > 0.0)) throw std::runtime_error("glimpse_extract: nonpositive box size");
    double* po = out.ptr() + (int64_t)k * out_h * out_w * C;
    for (int p = 0; p < out_h; ++p) {
      const double y = sample_axis(cy, bh, out_h, p);
      const double uy = y - 0.5;
      const int iy0 = (int)std::floor(uy);
      const double fy = uy - iy0;
      for (int q = 0; q < out_w; ++q) {
        const double x = sample_axis(cx, bw, out_w, q);
        const double ux = x - 0.5;
        const int ix0 = (int)std::floor(ux);
        const double fx = ux - ix0;
        for (int c = 0; c < C; ++c) {
          auto rd = [&](int iy, int ix) -> double {
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) return 0.0;
            return pf[((int64_t)iy * W + ix) * C + c];
          };
          po[((int64_t)p * out_w + q) * C + c] =
              (1 - fy) * ((1 - fx) * rd(iy0, ix0) + fx * rd(iy0, ix0 + 1)) +
              fy * ((1 - fx) * rd(iy0 + 1, ix0) + fx * rd(iy0 + 1, ix0 + 1));
        }
      }
    }
  }

  bool ng = nodes_[frame.id].needs_grad || nodes_[where.id].needs_grad;
  int fid = frame.id, wid = where.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, fid, wid, id, H, W, C, out_h, out_w]() {
      const Tensor& go = nodes_[id].grad;
      const Tensor& tf2 = nodes_[fid].value;
      const Tensor& twh2 = nodes_[wid].value;
      const int K = twh2.rows();
      const bool nf = nodes_[fid].needs_grad, nw = nodes_[wid].needs_grad;
      Tensor* gf = nf ? &grad_ref(fid) : nullptr;
      Tensor* gw = nw ? &grad_ref(wid) : nullptr;
      const double* pf = tf2.ptr();
      for (int k = 0; k < K; ++k) {
        const double cy = twh2(k, 0), cx = twh2(k, 1), bh = twh2(k, 2), bw = twh2(k, 3);
        const double* pg = go.ptr() + (int64_t)k * out_h * out_w * C;
        for (int p = 0; p < out_h; ++p) {
          const double y = cy - 0.5 * bh + (p + 0.5) * bh / out_h;
          const double uy = y - 0.5;
          const int iy0 = (int)std::floor(uy);
          const double fy = uy - iy0;
          const double dy_dh = -0.5 + (p + 0.5) / out_h;
          for (int q = 0; q < out_w; ++q) {
            const double x = cx - 0.5 * bw + (q + 0.5) * bw / out_w;
            const double ux = x - 0.5;
            const int ix0 = (int)std::floor(ux);
            const double fx = ux - ix0;
            const double dx_dw = -0.5 + (q + 0.5) / out_w;
            for (int c = 0; c < C; ++c) {
              const double g = pg[((int64_t)p * out_w + q) * C + c];
              if (g == 0.0) continue;
              auto rd = [&](int iy, int ix) -> double {
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) return 0.0;
                return pf[((int64_t)iy * W + ix) * C + c];
              };
              if (nf) {
                auto acc = [&](int iy, int ix, double wgt) {
                  if (iy < 0 || iy >= H || ix < 0 || ix >= W) return;
                  gf->data[((int64_t)iy * W + ix) * C + c] += wgt;
                };
                acc(iy0, ix0, g * (1 - fy) * (1 - fx));
                acc(iy0, ix0 + 1, g * (1 - fy) * fx);
                acc(iy0 + 1, ix0, g * fy * (1 - fx));
                acc(iy0 + 1, ix0 + 1, g * fy * fx);
              }
              if (nw) {
                const double v00 = rd(iy0, ix0), v01 = rd(iy0, ix0 + 1);
                const double v10 = rd(iy0 + 1, ix0), v11 = rd(iy0 + 1, ix0 + 1);
                const double dv_dy = (1 - fx) * (v10 - v00) + fx * (v11 - v01);
                const double dv_dx = (1 - fy) * (v01 - v00) + fy * (v11 - v10);
                gw->data[k * 4 + 0] += g * dv_dy;
                gw->data[k * 4 + 1] += g * dv_dx;
                gw->data[k * 4 + 2] += g * dv_dy * dy_dh;
                gw->data[k * 4 + 3] += g * dv_dx * dx_dw;
              }
            }
          }
        }
      }
    };
  return Var{this, id};
}

Var Graph::inverse_place(Var maps, int map_h, int map_w, int map_c, Var where, int out_h,
                         int out_w, const std::vector<double>& channel_default) {
  const Tensor& tm = nodes_[maps.id].value;
  const Tensor& twh = nodes_[where.id].value;
  const int K = twh.rows();
  if ((int)channel_default.size() != map_c) throw std::runtime_error("inverse_place: default size");
  const int64_t plane = (int64_t)out_h * out_w;
  Tensor out({K, (int)(map_c * plane)});
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < map_c; ++c) {
      double* po = out.ptr() + (int64_t)k * map_c * plane + (int64_t)c * plane;
      std::fill(po, po + plane, channel_default[c]);
    }

  // Map reads outside the object's patch blend toward the channel default,
  // so a canvas pixel only partially inside the box fades to the default.
  auto rd = [&](const double* pm, int iy, int ix, int c) -> double {
    if (iy < 0 || iy >= map_h || ix < 0 || ix >= map_w) return channel_default[c];
    return pm[((int64_t)iy * map_w + ix) * map_c + c];
  };

  for (int k = 0; k < K; ++k) {
    const double cy = twh(k, 0), cx = twh(k, 1), bh = twh(k, 2), bw = twh(k, 3);
    if (!(bh > 0.0) || !(bw > 0.0)) throw std::runtime_error("inverse_place: nonpositive box size");
    const double sy = map_h / bh, sx = map_w / bw;  // canvas px -> map px
    const double y0 = cy - 0.5 * bh, x0 = cx - 0.5 * bw;
    // canvas rows whose sample falls inside (-1, map_h): beyond that the
    // value is exactly the default
    int Ylo = (int)std::floor(y0 - 1.0 / sy), Yhi = (int)std::ceil(cy + 0.5 * bh + 1.0 / sy);
    Ylo = std::max(0, Ylo);
    Yhi = std::min(out_h, Yhi);
    int Xlo = std::max(0, (int)std::floor(x0 - 1.0 / sx));
    int Xhi = std::min(out_w, (int)std::ceil(cx + 0.5 * bw + 1.0 / sx));
    const double* pm = tm.ptr() + (int64_t)k * map_h * map_w * map_c;
    double* pok = out.ptr() + (int64_t)k * map_c * plane;
    for (int Y = Ylo; Y < Yhi; ++Y) {
      const double vy = (Y + 0.5 - y0) * sy;
      const double uy = vy - 0.5;
      if (uy <= -1.0 || uy >= map_h) continue;
      const int iy0 = (int)std::floor(uy);
      const double fy = uy - iy0;
      for (int X = Xlo; X < Xhi; ++X) {
        const double vx = (X + 0.5 - x0) * sx;
        const double ux = vx - 0.5;
        if (ux <= -1.0 || ux >= map_w) continue;
        const int ix0 = (int)std::floor(ux);
        const double fx = ux - ix0;
        for (int c = 0; c < map_c; ++c) {
          pok[(int64_t)c * plane + (int64_t)Y * out_w + X] =
              (1 - fy) * ((1 - fx) * rd(pm, iy0, ix0, c) + fx * rd(pm, iy0, ix0 + 1, c)) +
              fy * ((1 - fx) * rd(pm, iy0 + 1, ix0, c) + fx * rd(pm, iy0 + 1, ix0 + 1, c));
        }
      }
    }
  }

  bool ng = nodes_[maps.id].needs_grad || nodes_[where.id].needs_grad;
  int mid = maps.id, wid = where.id;
  int id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [this, mid, wid, id, map_h, map_w, map_c, out_h, out_w,
                       channel_default]() {
      const Tensor& go = nodes_[id].grad;
      const Tensor& tm2 = nodes_[mid].value;
      const Tensor& twh2 = nodes_[wid].value;
      const int K = twh2.rows();
      const int64_t plane = (int64_t)out_h * out_w;
      const bool nm = nodes_[mid].needs_grad, nw = nodes_[wid].needs_grad;
      Tensor* gm = nm ? &grad_ref(mid) : nullptr;
      Tensor* gw = nw ? &grad_ref(wid) : nullptr;
      auto rd = [&](const double* pm, int iy, int ix, int c) -> double {
        if (iy < 0 || iy >= map_h || ix < 0 || ix >= map_w) return channel_default[c];
        return pm[((int64_t)iy * map_w + ix) * map_c + c];
      };
      for (int k = 0; k < K; ++k) {
        const double cy = twh2(k, 0), cx = twh2(k, 1), bh = twh2(k, 2), bw = twh2(k, 3);
        const double sy = map_h / bh, sx = map_w / bw;
        const double y0 = cy - 0.5 * bh, x0 = cx - 0.5 * bw;
        const double* pm = tm2.ptr() + (int64_t)k * map_h * map_w * map_c;
        const double* pg = go.ptr() + (int64_t)k * map_c * plane;
        double* gmk = nm ? gm->data.data() + (int64_t)k * map_h * map_w * map_c : nullptr;
        const int Ylo = std::max(0, (int)std::floor(y0 - 1.0 / sy));
        const int Yhi = std::min(out_h, (int)std::ceil(cy + 0.5 * bh + 1.0 / sy));
        const int Xlo = std::max(0, (int)std::floor(x0 - 1.0 / sx));
        const int Xhi = std::min(out_w, (int)std::ceil(cx + 0.5 * bw + 1.0 / sx));
        for (int Y = Ylo; Y < Yhi; ++Y) {
          const double vy = (Y + 0.5 - y0) * sy;
          const double uy = vy - 0.5;
          if (uy <= -1.0 || uy >= map_h) continue;
          const int iy0 = (int)std::floor(uy);
          const double fy = uy - iy0;
          for (int X = Xlo; X < Xhi; ++X) {
            const double vx = (X + 0.5 - x0) * sx;
            const double ux = vx - 0.5;
            if (ux <= -1.0 || ux >= map_w) continue;
            const int ix0 = (int)std::floor(ux);
            const double fx = ux - ix0;
            for (int c = 0; c < map_c; ++c) {
              const double g = pg[(int64_t)c * plane + (int64_t)Y * out_w + X];
              if (g == 0.0) continue;
              const double v00 = rd(pm, iy0, ix0, c), v01 = rd(pm, iy0, ix0 + 1, c);
              const double v10 = rd(pm, iy0 + 1, ix0, c), v11 = rd(pm, iy0 + 1, ix0 + 1, c);
              if (nm) {
                auto acc = [&](int iy, int ix, double wgt) {
                  if (iy < 0 || iy >= map_h || ix < 0 || ix >= map_w) return;
                  gmk[((int64_t)iy * map_w + ix) * map_c + c] += wgt;
                };
                acc(iy0, ix0, g * (1 - fy) * (1 - fx));
                acc(iy0, ix0 + 1, g * (1 - fy) * fx);
                acc(iy0 + 1, ix0, g * fy * (1 - fx));
                acc(iy0 + 1, ix0 + 1, g * fy * fx);
              }
              if (nw) {
                const double dv_duy = (1 - fx) * (v10 - v00) + fx * (v11 - v01);
                const double dv_dux = (1 - fy) * (v01 - v00) + fy * (v11 - v10);
                // uy = (Y + 0.5 - cy + bh/2) * map_h / bh - 0.5
                const double duy_dbh = 0.5 * sy - (Y + 0.5 - y0) * map_h / (bh * bh);
                const double dux_dbw = 0.5 * sx - (X + 0.5 - x0) * map_w / (bw * bw);
                gw->data[k * 4 + 0] += g * dv_duy * -sy;
                gw->data[k * 4 + 1] += g * dv_dux * -sx;
                gw->data[k * 4 + 2] += g * dv_duy * duy_dbh;
                gw->data[k * 4 + 3] += g * dv_dux * dux_dbw;
              }
            }
          }
        }
      }
    };
  return Var{this, id};
}

// ---------------------------------------------------------------------------

void Graph::backward(Var scalar_loss) {
  Node& top = nodes_[scalar_loss.id];
  if (top.value.numel() != 1) throw std::runtime_error("backward: loss must be scalar");
  grad_ref(scalar_loss.id).data[0] = 1.0;
  for (int i = scalar_loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.back) n.back();
  }
  for (const auto& [sink, id] : param_nodes_) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    for (int64_t i = 0; i < n.grad.numel(); ++i) sink->data[i] += n.grad.data[i];
  }
}

}  // namespace silot
