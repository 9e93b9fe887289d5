#include "silot/training.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace silot {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

Var kl_normal(Graph& g, Var mu_q, Var sigma_q, double mu_p, double sigma_p) {
  // log(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2
  Var a = g.add_const(g.neg(g.log_(sigma_q)), std::log(sigma_p));
  Var b = g.scale(g.add(g.square(sigma_q), g.square(g.add_const(mu_q, -mu_p))),
                  1.0 / (2.0 * sigma_p * sigma_p));
  return g.add_const(g.add(a, b), -0.5);
}

Var normal_logpdf(Graph& g, Var z, Var mu, Var sigma) {
  Var q = g.div(g.square(g.sub(z, mu)), g.scale(g.square(sigma), 2.0));
  return g.add_const(g.neg(g.add(g.log_(sigma), q)), -0.5 * kLog2Pi);
}

Var normal_logpdf(Graph& g, Var z, double mu, double sigma) {
  Var q = g.scale(g.square(g.add_const(z, -mu)), 1.0 / (2.0 * sigma * sigma));
  return g.add_const(g.neg(q), -0.5 * kLog2Pi - std::log(sigma));
}

Var logistic_logpdf(Graph& g, Var z, Var mu, double scale) {
  Var u = g.scale(g.sub(z, mu), 1.0 / scale);
  return g.sub(g.add_const(g.neg(u), -std::log(scale)),
               g.scale(g.softplus(g.neg(u)), 2.0));
}

Var log_mix2(Graph& g, Var la, Var lb, double w) {
  if (w >= 1.0) return la;
  if (w <= 0.0) return lb;
  Var sa = g.add_const(la, std::log(w));
  Var sb = g.add_const(lb, std::log(1.0 - w));
  Var m = g.emax_const(sa, sb);
  return g.add(m, g.log_(g.add(g.exp_(g.sub(sa, m)), g.exp_(g.sub(sb, m)))));
}

namespace {
void resolve_counts(const PriorConfig& pc, int grid_cells, double* c_start, double* c_end) {
  *c_start = pc.count_start > 0 ? pc.count_start : 0.5 * grid_cells;
  *c_end = pc.count_end > 0 ? pc.count_end : grid_cells / 50.0;
}
}  // namespace

double count_target(int64_t step, const PriorConfig& pc, int grid_cells) {
  double c_start, c_end;
  resolve_counts(pc, grid_cells, &c_start, &c_end);
  const double frac =
      pc.count_anneal_steps <= 0
          ? 1.0
          : std::min(1.0, (double)step / (double)pc.count_anneal_steps);
  return c_start * std::pow(c_end / c_start, frac);
}

Var pres_prior_logprob(Graph& g, Var pres_union, int64_t step, const PriorConfig& pc,
                       int grid_cells) {
  const int n = g.val(pres_union).rows();
  const double c = count_target(step, pc, grid_cells);
  const double p = std::min(1.0 - 1e-6, std::max(1e-6, c / n));
  Var phat = g.clamp(g.scale(g.sum_all(pres_union), 1.0 / n), 1e-6, 1.0 - 1e-6);
  Var q = g.add_const(g.neg(phat), 1.0);
  // -n * KL(Bernoulli(phat) || Bernoulli(p))
  Var kl = g.add(g.mul(phat, g.add_const(g.log_(phat), -std::log(p))),
                 g.mul(q, g.add_const(g.log_(q), -std::log(1.0 - p))));
  return g.scale(kl, -double(n) * pc.count_weight);
}

int curriculum_frames(int64_t step, int T, int64_t n_curric) {
  if (n_curric <= 0) return T;
  const int64_t frames = 2 + 2 * (step / n_curric);
  return (int)std::min<int64_t>(T, frames);
}

std::vector<bool> discovery_dropout_mask(int T, double p_dd, RandomStream& rng) {
  std::vector<bool> mask(T, true);
  for (int t = 1; t < T; ++t) mask[t] = !rng.bernoulli(p_dd);
  return mask;
}

namespace {

struct PropPriorTerms {
  Var log_prior;  // mixture density of the posterior samples
  Var log_post;   // posterior density of its own samples
  Var aux;        // learned-prior pres fit (stop-grad samples)
};

PropPriorTerms prop_terms(Graph& g, const StepTrace& st, const PriorConfig& pc, double tau) {
  const PropLatents& q = st.prop_latents;
  const PriorStepParams& pr = st.prior_params;
  const double mix = pc.learned_prior_mix;

  auto group = [&](const NormalLatent& lat, const NormalLatent& learned, int64_t c0, int64_t len,
                   double mu_s, double sigma_s) {
    Var z = g.slice_cols(lat.z, c0, len);
    Var ls = normal_logpdf(g, z, mu_s, sigma_s);
    Var ll = normal_logpdf(g, z, g.slice_cols(learned.mu, c0, len),
                           g.slice_cols(learned.sigma, c0, len));
    Var prior = g.sum_all(log_mix2(g, ll, ls, mix));
    Var post = g.sum_all(
        normal_logpdf(g, z, g.slice_cols(lat.mu, c0, len), g.slice_cols(lat.sigma, c0, len)));
    return std::pair<Var, Var>{prior, post};
  };

  const int A = (int)g.val(q.what.z).cols();
  auto [p_yx, q_yx] = group(q.where, pr.where, 0, 2, pc.prop_yx_mu, pc.prop_yx_sigma);
  auto [p_hw, q_hw] = group(q.where, pr.where, 2, 2, pc.prop_hw_mu, pc.prop_hw_sigma);
  auto [p_what, q_what] = group(q.what, pr.what, 0, A, pc.prop_what_mu, pc.prop_what_sigma);
  auto [p_depth, q_depth] = group(q.depth, pr.depth, 0, 1, pc.prop_depth_mu, pc.prop_depth_sigma);

  PropPriorTerms out;
  out.log_prior = g.add(g.add(p_yx, p_hw), g.add(p_what, p_depth));
  Var q_pres = g.sum_all(logistic_logpdf(g, q.pres.z, q.pres.mu, tau));
  out.log_post = g.add(g.add(g.add(q_yx, q_hw), g.add(q_what, q_depth)), q_pres);
  out.aux = g.sum_all(logistic_logpdf(g, g.stop_grad(q.pres.z), pr.pres_mu, tau));
  return out;
}

Var disc_kl(Graph& g, const DiscLatents& lat, const PriorConfig& pc, double tau, Var* pres_post) {
  Var yx = g.sum_all(kl_normal(g, g.slice_cols(lat.where.mu, 0, 2),
                               g.slice_cols(lat.where.sigma, 0, 2), pc.disc_yx_mu,
                               pc.disc_yx_sigma));
  Var hw = g.sum_all(kl_normal(g, g.slice_cols(lat.where.mu, 2, 2),
                               g.slice_cols(lat.where.sigma, 2, 2), pc.disc_hw_mu,
                               pc.disc_hw_sigma));
  Var what = g.sum_all(kl_normal(g, lat.what.mu, lat.what.sigma, pc.disc_what_mu,
                                 pc.disc_what_sigma));
  Var depth = g.sum_all(kl_normal(g, lat.depth.mu, lat.depth.sigma, pc.disc_depth_mu,
                                  pc.disc_depth_sigma));
  *pres_post = g.sum_all(logistic_logpdf(g, lat.pres.z, lat.pres.mu, tau));
  return g.add(g.add(yx, hw), g.add(what, depth));
}

}  // namespace

ElboResult elbo_estimate(Graph& g, SilotModel& m, const FrameSource& video, int T,
                         RandomStream& rng, int64_t step, const std::vector<bool>& dropout_mask,
                         RunMode mode) {
  const ModelConfig& cfg = m.config();
  const bool warmup = step < cfg.train.warmup_steps;
  VideoRollout roll = run_video_graph(g, m, video, T, VideoMode::Posterior, mode, &rng,
                                      dropout_mask, warmup, /*with_prior_density=*/true);
  const int cells = roll.grid.cells();

  Var elbo = g.scalar_const(0.0);
  Var aux = g.scalar_const(0.0);
  double d_ll = 0, d_kl_disc = 0, d_prop_prior = 0, d_prop_post = 0, d_count = 0;

  for (int t = 0; t < T; ++t) {
    StepTrace& st = roll.steps[t];
    Var frame_planar = g.constant(frame_to_planar(g.val(st.frame)));
    Var ll = frame_log_likelihood(g, frame_planar, st.rendered);
    elbo = g.add(elbo, ll);
    d_ll += g.item(ll);

    Var pres_union = st.discovery_on && st.discovered.K > 0
                         ? g.concat_rows({st.propagated.pres, st.discovered.pres})
                         : st.propagated.pres;
    Var count = pres_prior_logprob(g, pres_union, step, cfg.prior, cells);
    elbo = g.add(elbo, count);
    d_count += g.item(count);

    if (st.discovery_on) {
      Var pres_post;
      Var kl = disc_kl(g, st.disc_latents, cfg.prior, cfg.tau_pres, &pres_post);
      elbo = g.sub(elbo, g.add(kl, pres_post));
      d_kl_disc += g.item(kl);
    }

    if (st.has_prop) {
      PropPriorTerms terms = prop_terms(g, st, cfg.prior, cfg.tau_pres);
      elbo = g.add(elbo, g.sub(terms.log_prior, terms.log_post));
      aux = g.add(aux, terms.aux);
      d_prop_prior += g.item(terms.log_prior);
      d_prop_post += g.item(terms.log_post);
    }

    if (!std::isfinite(g.item(elbo)))
      throw std::runtime_error("elbo: non-finite value at timestep " + std::to_string(t));
  }

  ElboResult res;
  res.elbo = elbo;
  res.loss = g.neg(g.add(elbo, aux));
  res.diagnostics = {{"elbo", g.item(elbo)},       {"likelihood", d_ll},
                     {"kl_disc", d_kl_disc},       {"prop_prior", d_prop_prior},
                     {"prop_post", d_prop_post},   {"count_prior", d_count},
                     {"aux_prior", g.item(aux)}};
  return res;
}

// --- checkpoints -------------------------------------------------------------

void save_checkpoint(const std::string& path, const SilotModel& m, int64_t step,
                     const Adam* opt) {
  nlohmann::json header;
  header["version"] = 1;
  header["byte_order"] = "little-endian";
  header["config"] = nlohmann::json::parse(config_to_json(m.config()));
  header["step"] = step;
  header["has_moments"] = opt != nullptr;
  if (opt) header["adam_t"] = opt->t;

  int64_t offset = 0;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : m.params().entries()) {
    nlohmann::json t;
    t["name"] = e->name;
    t["shape"] = e->value.shape;
    t["offset"] = offset;
    tensors.push_back(t);
    offset += e->value.numel() * (opt ? 3 : 1);
  }
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write("SLTCKPT1", 8);
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), hs.size());
  for (const auto& e : m.params().entries()) {
    out.write(reinterpret_cast<const char*>(e->value.ptr()), e->value.numel() * 8);
    if (opt) {
      out.write(reinterpret_cast<const char*>(e->m.ptr()), e->m.numel() * 8);
      out.write(reinterpret_cast<const char*>(e->v.ptr()), e->v.numel() * 8);
    }
  }
}

std::unique_ptr<SilotModel> load_checkpoint(const std::string& path, int64_t* step_out,
                                            Adam* opt, uint64_t model_seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::string(magic, 8) != "SLTCKPT1") throw std::runtime_error("checkpoint: bad magic");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  nlohmann::json header = nlohmann::json::parse(hs);

  ModelConfig cfg = config_from_json(header["config"].dump());
  auto model = std::make_unique<SilotModel>(cfg, model_seed);
  const bool moments = header["has_moments"].get<bool>();
  if (opt && moments) opt->t = header["adam_t"].get<int64_t>();

  for (const auto& t : header["tensors"]) {
    ParamStore::Entry* e = model->params().find(t["name"].get<std::string>());
    if (!e) throw std::runtime_error("checkpoint: unknown tensor " + t["name"].get<std::string>());
    in.read(reinterpret_cast<char*>(e->value.ptr()), e->value.numel() * 8);
    if (moments) {
      in.read(reinterpret_cast<char*>(e->m.ptr()), e->m.numel() * 8);
      in.read(reinterpret_cast<char*>(e->v.ptr()), e->v.numel() * 8);
    }
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  if (step_out) *step_out = header["step"].get<int64_t>();
  return model;
}

}  // namespace silot
