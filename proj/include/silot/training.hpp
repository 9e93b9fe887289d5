#pragma once

#include <map>
#include <memory>
#include <string>

#include "silot/model.hpp"

namespace silot {

// density / divergence building blocks (elementwise; caller reduces)
Var kl_normal(Graph& g, Var mu_q, Var sigma_q, double mu_p, double sigma_p);
Var normal_logpdf(Graph& g, Var z, Var mu, Var sigma);
Var normal_logpdf(Graph& g, Var z, double mu, double sigma);
Var logistic_logpdf(Graph& g, Var z, Var mu, double scale);
// log(w e^la + (1-w) e^lb), elementwise, stable
Var log_mix2(Graph& g, Var la, Var lb, double w);

// Annealed object-count target: geometric interpolation from count_start to
// count_end over count_anneal_steps. Negative config values resolve to
// 0.5 * cells and cells / 50.
double count_target(int64_t step, const PriorConfig& pc, int grid_cells);
// KL-style count-matching log-density on the pres values of one timestep's
// discovered+propagated union; maximized when the pres mass equals the
// annealed target.
Var pres_prior_logprob(Graph& g, Var pres_union, int64_t step, const PriorConfig& pc,
                       int grid_cells);

// min(T, 2 + 2 * floor(step / n_curric))
int curriculum_frames(int64_t step, int T, int64_t n_curric);
// mask[0] always on; later steps off with probability p_dd
std::vector<bool> discovery_dropout_mask(int T, double p_dd, RandomStream& rng);

struct ElboResult {
  Var loss;  // -(elbo + auxiliary prior fit), minimized by the trainer
  Var elbo;  // single-sample estimate of the bound
  std::map<std::string, double> diagnostics;
};

// Single-sample ELBO over the first T frames. Samples latents, scores
// discovery latents against the static priors (closed-form Normal KL),
// propagation latents against the even static/learned mixture, and the pres
// latents of each timestep's union against the annealed count prior.
// Gradients through where/depth/pres values are blocked while
// step < warmup_steps. The learned prior's pres head is fitted through a
// stop-gradient auxiliary term.
ElboResult elbo_estimate(Graph& g, SilotModel& m, const FrameSource& video, int T,
                         RandomStream& rng, int64_t step, const std::vector<bool>& dropout_mask,
                         RunMode mode = RunMode::Sample);

// --- checkpoints -----------------------------------------------------------
// Versioned container: JSON header (config, step, tensor directory) plus raw
// little-endian doubles; optimizer moments included when opt != nullptr.
void save_checkpoint(const std::string& path, const SilotModel& m, int64_t step,
                     const Adam* opt = nullptr);
std::unique_ptr<SilotModel> load_checkpoint(const std::string& path, int64_t* step_out = nullptr,
                                            Adam* opt = nullptr, uint64_t model_seed = 0);

}  // namespace silot
