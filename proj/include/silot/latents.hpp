#pragma once

#include "silot/nn.hpp"

namespace silot {

// Sample mode draws reparameterized samples; mean mode substitutes the
// distribution means (deterministic, used for tests, eval and viz).
enum class RunMode { Sample, Mean };

struct NormalLatent {
  Var mu, sigma, z;
};

struct LogisticLatent {
  Var mu, z;  // scale is the configured temperature
};

// Head emitting (mu, softplus sigma + 1e-4) and a reparameterized sample.
NormalLatent normal_head(Graph& g, const Mlp& head, Var input, int dim, RunMode mode,
                         RandomStream* rng);

LogisticLatent logistic_head(Graph& g, const Mlp& head, Var input, double tau, RunMode mode,
                             RandomStream* rng);

inline Var maybe_detach(Graph& g, Var v, bool detach) { return detach ? g.stop_grad(v) : v; }

}  // namespace silot
