#include "silot/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace silot {

ParamStore::Entry& ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (by_name_.count(name)) throw std::runtime_error("duplicate parameter: " + name);
  auto e = std::make_unique<Entry>();
  e->name = name;
  e->value = Tensor(shape);
  e->grad = Tensor(shape);
  e->m = Tensor(shape);
  e->v = Tensor(std::move(shape));
  Entry* p = e.get();
  order_.push_back(std::move(e));
  by_name_[name] = p;
  return *p;
}

ParamStore::Entry* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  Entry* e = find(name);
  if (!e) throw std::runtime_error("unknown parameter: " + name);
  return *e;
}

void ParamStore::zero_grad() {
  for (auto& e : order_) std::fill(e->grad.data.begin(), e->grad.data.end(), 0.0);
}

int64_t ParamStore::num_params() const {
  int64_t n = 0;
  for (const auto& e : order_) n += e->value.numel();
  return n;
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& e : order_)
    for (double g : e->grad.data) s += g * g;
  return std::sqrt(s);
}

void init_uniform(Tensor& t, double lo, double hi, RandomStream& rng) {
  for (double& v : t.data) v = rng.uniform(lo, hi);
}

void init_xavier(Tensor& t, int fan_in, int fan_out, RandomStream& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  init_uniform(t, -limit, limit, rng);
}

Mlp Mlp::build(ParamStore& ps, const std::string& prefix, int in, const std::vector<int>& hidden,
               int out, RandomStream& rng) {
  Mlp m;
  m.in_dim = in;
  m.out_dim = out;
  std::vector<int> dims;
  dims.push_back(in);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    auto& w = ps.add(prefix + ".w" + std::to_string(i), {dims[i], dims[i + 1]});
    auto& b = ps.add(prefix + ".b" + std::to_string(i), {1, dims[i + 1]});
    init_xavier(w.value, dims[i], dims[i + 1], rng);
    m.w.push_back(&w);
    m.b.push_back(&b);
  }
  return m;
}

Var Mlp::forward(Graph& g, Var x) const {
  Var h = x;
  for (size_t i = 0; i < w.size(); ++i) {
    h = g.affine(h, use(g, w[i]), use(g, b[i]));
    if (i + 1 < w.size()) h = g.relu(h);
  }
  return h;
}

GruCell GruCell::build(ParamStore& ps, const std::string& prefix, int in, int hidden,
                       RandomStream& rng) {
  GruCell c;
  c.in_dim = in;
  c.hidden_dim = hidden;
  auto mk = [&](const std::string& n, int r, int co, bool init) -> ParamStore::Entry* {
    auto& e = ps.add(prefix + "." + n, {r, co});
    if (init) init_xavier(e.value, r, co, rng);
    return &e;
  };
  c.w_r = mk("w_r", in, hidden, true);
  c.u_r = mk("u_r", hidden, hidden, true);
  c.b_r = mk("b_r", 1, hidden, false);
  c.w_z = mk("w_z", in, hidden, true);
  c.u_z = mk("u_z", hidden, hidden, true);
  c.b_z = mk("b_z", 1, hidden, false);
  c.w_n = mk("w_n", in, hidden, true);
  c.u_n = mk("u_n", hidden, hidden, true);
  c.b_in = mk("b_in", 1, hidden, false);
  c.b_hn = mk("b_hn", 1, hidden, false);
  return c;
}

Var GruCell::forward(Graph& g, Var x, Var h) const {
  Var r = g.sigmoid(g.add(g.affine(x, use(g, w_r), use(g, b_r)), g.matmul(h, use(g, u_r))));
  Var z = g.sigmoid(g.add(g.affine(x, use(g, w_z), use(g, b_z)), g.matmul(h, use(g, u_z))));
  Var n = g.tanh_(g.add(g.affine(x, use(g, w_n), use(g, b_in)),
                        g.mul(r, g.affine(h, use(g, u_n), use(g, b_hn)))));
  // h' = (1 - z) * n + z * h
  return g.add(g.mul(g.add_const(g.neg(z), 1.0), n), g.mul(z, h));
}

void Adam::step(ParamStore& ps, double lr, double max_norm) {
  if (max_norm > 0.0) {
    const double norm = ps.grad_norm();
    if (norm > max_norm) {
      const double s = max_norm / norm;
      for (auto& e : ps.entries())
        for (double& g : e->grad.data) g *= s;
    }
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, (double)t);
  const double bc2 = 1.0 - std::pow(beta2, (double)t);
  for (const auto& e : ps.entries()) {
    Tensor& val = e->value;
    Tensor& grd = e->grad;
    Tensor& m = e->m;
    Tensor& v = e->v;
    for (int64_t i = 0; i < val.numel(); ++i) {
      const double g = grd.data[i];
      m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
      v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      val.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace silot
