#pragma once

#include <cstdint>
#include <string>

namespace silot {

// Static per-latent Normal priors plus the annealed object-count prior on
// pres. Count targets < 0 are resolved against the grid at model build time.
struct PriorConfig {
  double disc_hw_mu = -2.2, disc_hw_sigma = 0.5;
  double disc_yx_mu = 0.0, disc_yx_sigma = 1.0;
  double disc_what_mu = 0.0, disc_what_sigma = 1.0;
  double disc_depth_mu = 0.0, disc_depth_sigma = 1.0;

  double prop_hw_mu = 0.0, prop_hw_sigma = 0.3;
  double prop_yx_mu = 0.0, prop_yx_sigma = 0.3;
  double prop_what_mu = 0.0, prop_what_sigma = 0.4;
  double prop_depth_mu = 0.0, prop_depth_sigma = 1.0;

  double count_start = -1.0;          // default: 0.5 * H * W
  double count_end = -1.0;            // default: H * W / 50
  int64_t count_anneal_steps = 120000;
  double count_weight = 1.0;
  double learned_prior_mix = 0.5;     // even mixture of static and learned
};

struct TrainSchedule {
  double learning_rate = 1e-4;
  int batch_size = 16;
  double max_grad_norm = 10.0;
  int64_t n_curric = 40000;
  int64_t patience = 30000;
  double lr_divisor = 3.0;
  int max_early_stops = 3;
  int64_t warmup_steps = 1000;
  double p_dd = 0.5;
  int64_t eval_interval = 1000;
  int n_val_videos = 32;
};

struct ModelConfig {
  // capacity
  int K = 16;          // propagated/selected objects
  int A = 64;          // what dimension
  int hidden_dim = 128;  // per-object recurrent state

  // grid / box geometry
  double anchor_h = 48.0, anchor_w = 48.0;
  int cell_h = 12, cell_w = 12;
  double b_min = -0.5, b_max = 1.5;
  double sigma = 0.1;  // attention kernel std, in anchor units

  // rendering
  double lambda = 0.25;
  int obj_h = 14, obj_w = 14;
  double mu_beta = 0.0, sigma_beta = 2.0;
  double mu_xi = 5.0, sigma_xi = 0.1;

  // sampling / updates
  double tau_pres = 1.0;            // logistic scale for pres latents
  double glimpse_offset_scale = 0.1;

  // component network sizes
  int backbone_filters = 128;
  int fuse_hidden = 100, fuse_out = 100;
  int head_hidden = 100;
  int attn_hidden = 64, attn_out = 64;
  int obj_hidden1 = 256, obj_hidden2 = 128, obj_out = 128;
  int robj_hidden1 = 128, robj_hidden2 = 256;

  PriorConfig prior;
  TrainSchedule train;

  void validate() const;  // throws on inconsistent values
};

// Flat "key = value" config file; keys follow the hyperparameter table
// symbols (K, A, a_h, c_h, b_min, sigma, lambda, H_obj, mu_beta, p_dd,
// N_curric, ...). Unknown keys are an error.
ModelConfig load_config(const std::string& path);
void apply_config_line(ModelConfig& cfg, const std::string& key, const std::string& value);
std::string config_to_text(const ModelConfig& cfg);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json_text);

}  // namespace silot
