#include <doctest.h>

#include <set>

#include "silot/metrics.hpp"
#include "silot/training.hpp"
#include "test_util.hpp"

using namespace silot;

namespace {

struct ModelFixture {
  ModelConfig cfg = test::small_config();
  SilotModel model{cfg, 77};

  FrameSource moving_blob(int T) const {
    FrameSource src;
    src.H = src.W = 48;
    for (int t = 0; t < T; ++t) {
      Tensor f({48, 48, 3});
      const int oy = 12 + 3 * t, ox = 20;
      for (int y = oy; y < oy + 10; ++y)
        for (int x = ox; x < ox + 10; ++x) f.data[(y * 48 + x) * 3 + 1] = 1.0;
      src.frames.push_back(std::move(f));
    }
    return src;
  }
};

}  // namespace

TEST_CASE("run_video: T=1 has no propagation and discovery at t=0") {
  ModelFixture f;
  FrameSource src = f.moving_blob(1);
  RolloutTrace trace = run_video(f.model, src, VideoMode::Posterior, RunMode::Mean,
                                 RandomStream(1));
  REQUIRE(trace.steps.size() == 1);
  CHECK(trace.steps[0].discovery_on);
  CHECK(trace.steps[0].discovered.size() == 16);
  // t=0 "propagated" set is the degenerate one: all pres 0
  for (int k = 0; k < f.cfg.K; ++k) CHECK(trace.steps[0].propagated.pres(k, 0) == 0.0);
  CHECK(trace.steps[0].selected.size() == f.cfg.K);
}

TEST_CASE("run_video: selected.K is constant and invariants hold at every t") {
  ModelFixture f;
  FrameSource src = f.moving_blob(4);
  RolloutTrace trace = run_video(f.model, src, VideoMode::Posterior, RunMode::Sample,
                                 RandomStream(2));
  CHECK(trace.steps.size() == 4);
  for (const auto& st : trace.steps) {
    CHECK(st.selected.size() == f.cfg.K);
    st.selected.check_invariants();
    CHECK((int)st.track_ids.size() == f.cfg.K);
    CHECK(st.rendered.numel() == 3 * 48 * 48);
    for (double v : st.rendered.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("run_video: with discovery off after t=0, pres can only shrink") {
  ModelFixture f;
  FrameSource src = f.moving_blob(5);
  RolloutTrace trace = run_video(f.model, src, VideoMode::Posterior, RunMode::Mean,
                                 RandomStream(3), {true, false, false, false, false});
  for (int t = 1; t < 5; ++t) {
    CHECK(!trace.steps[t].discovery_on);
    CHECK(trace.steps[t].discovered.size() == 0);
    // every selected row is propagated; pres bounded by its source row
    for (int k = 0; k < f.cfg.K; ++k) {
      const Provenance& p = trace.steps[t].provenance[k];
      CHECK(p.kind == Provenance::Propagated);
      CHECK(trace.steps[t].selected.pres(k, 0) <=
            trace.steps[t - 1].selected.pres(p.index, 0) + 1e-12);
    }
  }
}

TEST_CASE("run_video: track ids persist through propagation and never merge") {
  ModelFixture f;
  FrameSource src = f.moving_blob(4);
  RolloutTrace trace = run_video(f.model, src, VideoMode::Posterior, RunMode::Mean,
                                 RandomStream(4));
  for (const auto& st : trace.steps) {
    std::set<int64_t> seen;
    for (int64_t id : st.track_ids)
      if (id >= 0) CHECK(seen.insert(id).second);  // unique within a frame
  }
  // a propagated row keeps the id of its source row
  for (int t = 1; t < 4; ++t)
    for (int k = 0; k < f.cfg.K; ++k) {
      const Provenance& p = trace.steps[t].provenance[k];
      if (p.kind == Provenance::Propagated)
        CHECK(trace.steps[t].track_ids[k] == trace.steps[t - 1].track_ids[p.index]);
    }
}

TEST_CASE("prior rollout reads no frame pixels after the context prefix") {
  ModelFixture f;
  FrameSource src = f.moving_blob(8);
  RolloutTrace trace = run_video(f.model, src, VideoMode::PriorRollout, RunMode::Mean,
                                 RandomStream(5), {}, /*prior_context=*/3);
  REQUIRE((int)src.reads.size() == 8);
  for (int t = 0; t < 3; ++t) CHECK(src.reads[t] > 0);
  for (int t = 3; t < 8; ++t) CHECK(src.reads[t] == 0);
  for (int t = 3; t < 8; ++t) {
    CHECK(!trace.steps[t].discovery_on);
    CHECK(trace.steps[t].selected.size() == f.cfg.K);
    trace.steps[t].selected.check_invariants();
  }
}

TEST_CASE("prior rollout evaluation scores only the rollout frames") {
  ModelFixture f;
  // synthetic videos via the shapes generator
  SceneConfig scfg;
  scfg.frame_h = scfg.frame_w = 48;
  scfg.n_min = scfg.n_max = 2;
  scfg.speed = 3.0;
  ShapeStencils st = load_stencils();
  std::vector<VideoSample> videos;
  for (int i = 0; i < 2; ++i) videos.push_back(gen_scattered_shapes(scfg, st, RandomStream(90 + i)));

  TrackingReport rep = prior_rollout_eval(f.model, videos, 11, 3);
  CHECK(rep.eval_t0 == 3);
  CHECK(rep.eval_t1 == 8);
  CHECK(rep.diagnostics.gt_total == 2 * 2 * 5);  // 2 videos, 2 objects, frames 3..7
  CHECK(rep.n_videos == 2);
}

TEST_CASE("extract_tracks applies the report threshold and retirement rule") {
  RolloutTrace trace;
  ModelConfig cfg = test::small_config();
  auto step_with = [&](std::vector<double> pres, std::vector<int64_t> ids) {
    TimestepTrace tt;
    tt.selected = empty_object_set((int)pres.size(), cfg, 48, 48, nullptr);
    for (size_t k = 0; k < pres.size(); ++k) tt.selected.pres((int)k, 0) = pres[k];
    tt.track_ids = ids;
    tt.provenance.assign(pres.size(), {Provenance::Propagated, 0});
    return tt;
  };
  trace.steps.push_back(step_with({0.9, 0.3}, {0, 1}));
  trace.steps.push_back(step_with({0.8, 0.6}, {0, 1}));
  trace.steps.push_back(step_with({0.2, 0.7}, {0, 1}));
  trace.steps.push_back(step_with({0.1, 0.7}, {0, 1}));
  trace.steps.push_back(step_with({0.9, 0.7}, {0, 1}));  // id 0 comes back after retirement

  TrackSet ts = extract_tracks(trace, 0.5, 2);
  // track for id 0 spans t=0,1 then retires; its comeback is a new id
  CHECK(ts.tracks.size() == 3);
  CHECK(ts.at_frame(0).size() == 1);
  CHECK(ts.at_frame(1).size() == 2);
  CHECK(ts.at_frame(4).size() == 2);
}

TEST_CASE("elbo runs through run_video with dropout and stays finite") {
  ModelFixture f;
  FrameSource src = f.moving_blob(3);
  Graph g;
  RandomStream rng(6);
  ElboResult res = elbo_estimate(g, f.model, src, 3, rng, 1500, {true, false, true});
  CHECK(std::isfinite(g.item(res.elbo)));
  g.backward(res.loss);
  CHECK(std::isfinite(f.model.params().grad_norm()));
}
