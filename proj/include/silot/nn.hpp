#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "silot/graph.hpp"
#include "silot/random.hpp"
#include "silot/tensor.hpp"

namespace silot {

// Named parameter tensors plus their gradient and optimizer-state buffers.
// Entries have stable addresses for the lifetime of the store.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;  // Adam first moment
    Tensor v;  // Adam second moment
  };

  Entry& add(const std::string& name, std::vector<int> shape);
  Entry* find(const std::string& name);
  const Entry* find(const std::string& name) const;
  Entry& at(const std::string& name);

  void zero_grad();
  int64_t num_params() const;
  double grad_norm() const;

  const std::vector<std::unique_ptr<Entry>>& entries() const { return order_; }

 private:
  std::vector<std::unique_ptr<Entry>> order_;
  std::map<std::string, Entry*> by_name_;
};

inline Var use(Graph& g, ParamStore::Entry* e) { return g.param(e->value, &e->grad); }

void init_uniform(Tensor& t, double lo, double hi, RandomStream& rng);
// Glorot-style fan average init for a weight with the given fan-in/out.
void init_xavier(Tensor& t, int fan_in, int fan_out, RandomStream& rng);

// Fully connected stack: hidden layers with ReLU, linear output (the output
// layer is left unconstrained).
struct Mlp {
  std::vector<ParamStore::Entry*> w;
  std::vector<ParamStore::Entry*> b;
  int in_dim = 0;
  int out_dim = 0;

  static Mlp build(ParamStore& ps, const std::string& prefix, int in,
                   const std::vector<int>& hidden, int out, RandomStream& rng);
  Var forward(Graph& g, Var x) const;
};

// Gated recurrent cell; one step per call, row-wise over the batch.
struct GruCell {
  ParamStore::Entry *w_r, *u_r, *b_r;
  ParamStore::Entry *w_z, *u_z, *b_z;
  ParamStore::Entry *w_n, *u_n, *b_in, *b_hn;
  int in_dim = 0, hidden_dim = 0;

  static GruCell build(ParamStore& ps, const std::string& prefix, int in, int hidden,
                       RandomStream& rng);
  Var forward(Graph& g, Var x, Var h) const;
};

struct ConvLayer {
  ParamStore::Entry* w;  // {fh, fw, ic, oc}
  ParamStore::Entry* b;  // {1, oc}
  int stride = 1;
  bool relu = true;
};

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;

  // Clips the summed gradient to max_norm (when > 0), then takes one
  // descent step at the given rate.
  void step(ParamStore& ps, double lr, double max_norm);
};

}  // namespace silot
