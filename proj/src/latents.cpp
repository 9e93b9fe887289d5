#include "silot/latents.hpp"

#include <stdexcept>

namespace silot {

NormalLatent normal_head(Graph& g, const Mlp& head, Var input, int dim, RunMode mode,
                         RandomStream* rng) {
  Var out = head.forward(g, input);
  if (g.val(out).cols() != 2 * dim) throw std::runtime_error("normal_head: output dim mismatch");
  Var mu = g.slice_cols(out, 0, dim);
  Var sigma = g.add_const(g.softplus(g.slice_cols(out, dim, dim)), 1e-4);
  Var z;
  if (mode == RunMode::Sample) {
    if (!rng) throw std::runtime_error("normal_head: sample mode needs an rng");
    Tensor eps({g.val(mu).rows(), dim});
    for (double& e : eps.data) e = rng->normal();
    z = g.add(mu, g.mul(sigma, g.constant(std::move(eps))));
  } else {
    z = mu;
  }
  return {mu, sigma, z};
}

LogisticLatent logistic_head(Graph& g, const Mlp& head, Var input, double tau, RunMode mode,
                             RandomStream* rng) {
  Var mu = head.forward(g, input);
  if (g.val(mu).cols() != 1) throw std::runtime_error("logistic_head: output must be 1-dim");
  Var z;
  if (mode == RunMode::Sample) {
    if (!rng) throw std::runtime_error("logistic_head: sample mode needs an rng");
    Tensor noise({g.val(mu).rows(), 1});
    for (double& e : noise.data) e = tau * rng->logistic();
    z = g.add(mu, g.constant(std::move(noise)));
  } else {
    z = mu;  // logistic mean equals its location
  }
  return {mu, z};
}

}  // namespace silot
