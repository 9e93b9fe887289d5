#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "silot/training.hpp"
#include "test_util.hpp"

using namespace silot;

TEST_CASE("closed-form normal KL against Monte Carlo") {
  RandomStream rng(61);
  // 20 random (mu, sigma) pairs vs Normal(0, 1), 1e5 samples, 3 standard errors
  for (int trial = 0; trial < 20; ++trial) {
    const double mu = rng.uniform(-2.0, 2.0);
    const double sigma = rng.uniform(0.3, 2.0);

    Graph g;
    Var vmu = g.constant(Tensor::scalar(mu));
    Var vsig = g.constant(Tensor::scalar(sigma));
    const double closed = g.item(kl_normal(g, vmu, vsig, 0.0, 1.0));

    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = mu + sigma * rng.normal();
      // log q(z) - log p(z)
      const double lq = -0.5 * std::log(2 * M_PI) - std::log(sigma) -
                        (z - mu) * (z - mu) / (2 * sigma * sigma);
      const double lp = -0.5 * std::log(2 * M_PI) - z * z / 2;
      const double d = lq - lp;
      sum += d;
      sum2 += d * d;
    }
    const double mc = sum / n;
    const double se = std::sqrt((sum2 / n - mc * mc) / n);
    CHECK(std::fabs(closed - mc) < 3 * se + 1e-12);
  }

  SUBCASE("KL(p || p) = 0") {
    Graph g;
    Var mu = g.constant(Tensor::scalar(0.7));
    Var sig = g.constant(Tensor::scalar(0.4));
    CHECK(g.item(kl_normal(g, mu, sig, 0.7, 0.4)) == doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("normal and logistic log-densities") {
  Graph g;
  // N(z=0.5; mu=0, sigma=1) = exp(-0.125)/sqrt(2 pi)
  Var z = g.constant(Tensor::scalar(0.5));
  CHECK(g.item(normal_logpdf(g, z, 0.0, 1.0)) ==
        doctest::Approx(std::log(std::exp(-0.125) / std::sqrt(2 * M_PI))).epsilon(1e-12));
  // logistic density at the location is 1/(4 s)
  Var mu = g.constant(Tensor::scalar(1.3));
  Var zl = g.constant(Tensor::scalar(1.3));
  CHECK(g.item(logistic_logpdf(g, zl, mu, 2.0)) == doctest::Approx(std::log(0.125)).epsilon(1e-12));
}

TEST_CASE("log_mix2 is the mixture density") {
  Graph g;
  const double la = std::log(0.3), lb = std::log(0.05);
  Var a = g.constant(Tensor::scalar(la));
  Var b = g.constant(Tensor::scalar(lb));
  CHECK(g.item(log_mix2(g, a, b, 0.5)) ==
        doctest::Approx(std::log(0.5 * 0.3 + 0.5 * 0.05)).epsilon(1e-12));
  CHECK(g.item(log_mix2(g, a, b, 1.0)) == doctest::Approx(la));
  // stability with very different magnitudes
  Var tiny = g.constant(Tensor::scalar(-2000.0));
  CHECK(g.item(log_mix2(g, a, tiny, 0.5)) == doctest::Approx(la + std::log(0.5)).epsilon(1e-9));
}

TEST_CASE("count target annealing") {
  PriorConfig pc;
  pc.count_start = 8.0;
  pc.count_end = 0.5;
  pc.count_anneal_steps = 1000;
  CHECK(count_target(0, pc, 16) == doctest::Approx(8.0));
  CHECK(count_target(1000, pc, 16) == doctest::Approx(0.5));
  CHECK(count_target(5000, pc, 16) == doctest::Approx(0.5));  // clamps at the end
  CHECK(count_target(500, pc, 16) == doctest::Approx(2.0));   // geometric midpoint

  SUBCASE("constant schedule when start == end") {
    pc.count_start = pc.count_end = 3.0;
    for (int64_t s : {int64_t(0), int64_t(100), int64_t(100000)})
      CHECK(count_target(s, pc, 16) == doctest::Approx(3.0));
  }

  SUBCASE("defaults derive from the grid") {
    PriorConfig d;
    CHECK(count_target(0, d, 16) == doctest::Approx(8.0));
    CHECK(count_target(d.count_anneal_steps, d, 100) == doctest::Approx(2.0));
  }
}

TEST_CASE("pres prior is maximized when pres mass hits the target count") {
  PriorConfig pc;
  pc.count_start = pc.count_end = 3.0;
  const int n = 20;
  auto logprob = [&](double total) {
    Graph g;
    Tensor pres({n, 1}, total / n);
    return g.item(pres_prior_logprob(g, g.constant(pres), 0, pc, 16));
  };
  const double at_target = logprob(3.0);
  double best = -1e100;
  double best_c = -1;
  for (double c = 0.25; c <= 10.0; c += 0.25) {
    const double v = logprob(c);
    if (v > best) {
      best = v;
      best_c = c;
    }
    CHECK(v <= at_target + 1e-9);
  }
  CHECK(best_c == doctest::Approx(3.0));
  CHECK(at_target == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("curriculum frame schedule") {
  CHECK(curriculum_frames(0, 8, 1000) == 2);
  CHECK(curriculum_frames(999, 8, 1000) == 2);
  CHECK(curriculum_frames(1000, 8, 1000) == 4);
  CHECK(curriculum_frames(2500, 8, 1000) == 6);
  CHECK(curriculum_frames(3000, 8, 1000) == 8);  // (ceil(8/2)-1)*N = full videos
  CHECK(curriculum_frames(99999, 8, 1000) == 8);
  // monotone nondecreasing, capped at T
  int prev = 0;
  for (int64_t s = 0; s < 5000; s += 37) {
    const int f = curriculum_frames(s, 8, 700);
    CHECK(f >= prev);
    CHECK(f <= 8);
    prev = f;
  }
}

TEST_CASE("discovery dropout mask") {
  RandomStream rng(62);
  auto all_on = discovery_dropout_mask(6, 0.0, rng);
  for (bool b : all_on) CHECK(b);

  auto only_first = discovery_dropout_mask(6, 1.0, rng);
  CHECK(only_first[0]);
  for (int t = 1; t < 6; ++t) CHECK(!only_first[t]);

  // empirical off-rate over 1e4 draws at p_dd = 0.5 within [0.48, 0.52]
  int64_t off = 0, total = 0;
  for (int i = 0; i < 10000 / 5; ++i) {
    auto m = discovery_dropout_mask(6, 0.5, rng);
    CHECK(m[0]);
    for (int t = 1; t < 6; ++t) {
      ++total;
      if (!m[t]) ++off;
    }
  }
  const double rate = (double)off / total;
  CHECK(rate > 0.48);
  CHECK(rate < 0.52);
}

namespace {

FrameSource tiny_video(int T, int H, int W) {
  FrameSource src;
  src.H = H;
  src.W = W;
  for (int t = 0; t < T; ++t) {
    Tensor f({H, W, 3});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (y >= 10 + 2 * t && y < 20 + 2 * t && x >= 14 && x < 24)
          for (int c = 0; c < 3; ++c) f.data[(y * W + x) * 3 + c] = c == 0 ? 1.0 : 0.0;
    src.frames.push_back(std::move(f));
  }
  return src;
}

}  // namespace

TEST_CASE("elbo estimate: structure and dropped-discovery bookkeeping") {
  ModelConfig cfg = test::small_config();
  SilotModel model(cfg, 7);
  FrameSource video = tiny_video(3, 48, 48);
  RandomStream rng(63);

  SUBCASE("finite, with likelihood dominating on an untrained net") {
    Graph g;
    RandomStream r = rng.child(1);
    ElboResult res = elbo_estimate(g, model, video, 3, r, 2000, {true, true, true});
    CHECK(std::isfinite(g.item(res.elbo)));
    CHECK(res.diagnostics.at("likelihood") < 0.0);
  }

  SUBCASE("dropped timesteps contribute zero discovery KL") {
    Graph g;
    RandomStream r = rng.child(2);
    ElboResult on = elbo_estimate(g, model, video, 3, r, 2000, {true, true, true});
    Graph g2;
    RandomStream r2 = rng.child(3);
    ElboResult off = elbo_estimate(g2, model, video, 3, r2, 2000, {true, false, false});
    CHECK(off.diagnostics.at("kl_disc") < on.diagnostics.at("kl_disc"));
    Graph g3;
    RandomStream r3 = rng.child(4);
    ElboResult t1 = elbo_estimate(g3, model, video, 1, r3, 2000, {true});
    Graph g4;
    RandomStream r4 = rng.child(4);
    // T=1: single frame, no propagation terms at all
    CHECK(t1.diagnostics.at("prop_prior") == 0.0);
    CHECK(t1.diagnostics.at("prop_post") == 0.0);
  }

  SUBCASE("posterior equal to prior gives zero discovery KL contribution") {
    Graph g;
    Var mu = g.constant(Tensor({4, 2}, cfg.prior.disc_yx_mu));
    Var sig = g.constant(Tensor({4, 2}, cfg.prior.disc_yx_sigma));
    CHECK(g.item(g.sum_all(kl_normal(g, mu, sig, cfg.prior.disc_yx_mu, cfg.prior.disc_yx_sigma)))
          == doctest::Approx(0.0).epsilon(1e-13));
  }

  SUBCASE("loss backward produces finite parameter gradients") {
    model.params().zero_grad();
    Graph g;
    RandomStream r = rng.child(5);
    ElboResult res = elbo_estimate(g, model, video, 2, r, 2000, {true, true});
    g.backward(res.loss);
    double norm = model.params().grad_norm();
    CHECK(std::isfinite(norm));
    CHECK(norm > 0.0);
  }
}

TEST_CASE("warmup blocks likelihood gradients into where/depth/pres heads") {
  ModelConfig cfg = test::small_config();
  SilotModel model(cfg, 8);
  FrameSource video = tiny_video(2, 48, 48);

  auto likelihood_grad = [&](bool warmup, const char* param) {
    model.params().zero_grad();
    Graph g;
    RandomStream r(64);
    VideoRollout roll = run_video_graph(g, model, video, 2, VideoMode::Posterior,
                                        RunMode::Sample, &r, {true, true}, warmup,
                                        /*with_prior_density=*/false);
    Var ll = g.scalar_const(0.0);
    for (auto& st : roll.steps) {
      Var planar = g.constant(frame_to_planar(g.val(st.frame)));
      ll = g.add(ll, frame_log_likelihood(g, planar, st.rendered));
    }
    g.backward(g.neg(ll));
    double norm = 0.0;
    for (double v : model.params().at(param).grad.data) norm += v * v;
    return std::sqrt(norm);
  };

  // during warmup the decoded where/depth/pres values are detached, so the
  // reconstruction cannot reach their heads; appearance still trains
  CHECK(likelihood_grad(true, "disc.where.w0") == 0.0);
  CHECK(likelihood_grad(true, "disc.depth.w0") == 0.0);
  CHECK(likelihood_grad(true, "disc.pres.w0") == 0.0);
  CHECK(likelihood_grad(true, "prop.where.w0") == 0.0);
  CHECK(likelihood_grad(true, "rend.obj.w0") > 0.0);
  CHECK(likelihood_grad(true, "disc.what.w0") > 0.0);

  // after warmup all heads see the reconstruction
  CHECK(likelihood_grad(false, "disc.where.w0") > 0.0);
  CHECK(likelihood_grad(false, "disc.pres.w0") > 0.0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  ModelConfig cfg = test::small_config();
  SilotModel model(cfg, 9);
  Adam opt;
  opt.t = 17;
  // give the moments distinctive values
  for (auto& e : model.params().entries())
    for (int64_t i = 0; i < e->m.numel(); ++i) {
      e->m.data[i] = 0.01 * (double)(i % 7);
      e->v.data[i] = 0.001 * (double)(i % 5);
    }
  const std::string path = "/tmp/silot_test_ckpt.bin";
  save_checkpoint(path, model, 1234, &opt);

  Adam opt2;
  int64_t step = 0;
  auto loaded = load_checkpoint(path, &step, &opt2);
  CHECK(step == 1234);
  CHECK(opt2.t == 17);
  CHECK(loaded->config().K == cfg.K);
  CHECK(loaded->params().num_params() == model.params().num_params());
  for (const auto& e : model.params().entries()) {
    const auto* o = loaded->params().find(e->name);
    REQUIRE(o != nullptr);
    CHECK(o->value.data == e->value.data);
    CHECK(o->m.data == e->m.data);
    CHECK(o->v.data == e->v.data);
  }
  std::remove(path.c_str());
}
