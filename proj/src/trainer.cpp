#include "silot/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace silot {

double validate_mota(SilotModel& m, const VideoDataset& data, int n, uint64_t seed,
                     double pres_thresh) {
  n = std::min(n, data.size());
  std::vector<TrackSet> pred, gt;
  RandomStream rng(seed);
  for (int i = 0; i < n; ++i) {
    VideoSample v = data.load(i);
    FrameSource src = to_frame_source(v);
    RolloutTrace trace = run_video(m, src, VideoMode::Posterior, RunMode::Mean, rng.child(i));
    pred.push_back(extract_tracks(trace, pres_thresh));
    gt.push_back(gt_tracks(v));
  }
  return evaluate_tracks(pred, gt).mota;
}

namespace {

double validate_elbo(SilotModel& m, const VideoDataset& data, int n, uint64_t seed) {
  n = std::min(n, data.size());
  double total = 0.0;
  RandomStream rng(seed);
  for (int i = 0; i < n; ++i) {
    FrameSource src = data.frames(i);
    Graph g;
    RandomStream r = rng.child(i);
    std::vector<bool> mask(src.T(), true);
    ElboResult res = elbo_estimate(g, m, src, src.T(), r, /*step=*/1 << 20, mask);
    total += g.item(res.elbo);
  }
  return total / std::max(1, n);
}

}  // namespace

TrainResult train(SilotModel& m, const VideoDataset& train_data, const VideoDataset* val_data,
                  const TrainOptions& opts, int64_t start_step, Adam* resume_opt) {
  const TrainSchedule& sched = m.config().train;
  const int T = train_data.frames_per_video();
  const int64_t curric_end =
      sched.n_curric * std::max<int64_t>(0, (T + 1) / 2 - 1);  // full videos reached

  std::filesystem::create_directories(opts.out_dir);
  std::ofstream log(opts.out_dir + "/train_log.jsonl", std::ios::app);

  Adam opt;
  if (resume_opt) opt = *resume_opt;
  double lr = sched.learning_rate;
  // a resumed run keeps the schedule position implied by its step counter

  TrainResult result;
  result.best_checkpoint = opts.out_dir + "/best.ckpt";
  EarlyStopController stopper;
  stopper.patience = sched.patience;
  stopper.divisor = sched.lr_divisor;
  stopper.max_triggers = sched.max_early_stops;
  stopper.lr = lr;

  for (int64_t step = start_step; step < opts.max_steps; ++step) {
    const int n_frames = curriculum_frames(step, T, sched.n_curric);
    RandomStream batch_rng(splitmix64(opts.seed ^ splitmix64(0xba7c0deULL ^ (uint64_t)step)));

    m.params().zero_grad();
    std::map<std::string, double> diag;
    bool nan = false;
    for (int b = 0; b < sched.batch_size && !nan; ++b) {
      const int idx = (int)batch_rng.uniform_int(train_data.size());
      FrameSource video = train_data.frames(idx);
      RandomStream vid_rng = batch_rng.child(1000 + b);
      std::vector<bool> mask = discovery_dropout_mask(n_frames, sched.p_dd, vid_rng);
      try {
        Graph g;
        ElboResult res = elbo_estimate(g, m, video, n_frames, vid_rng, step, mask);
        g.backward(g.scale(res.loss, 1.0 / sched.batch_size));
        for (const auto& [k, v] : res.diagnostics) diag[k] += v / sched.batch_size;
      } catch (const std::exception& e) {
        std::fprintf(stderr, "[train] step %lld: %s\n", (long long)step, e.what());
        nan = true;
      }
    }
    if (nan) {
      result.aborted_nan = true;
      result.steps_run = step - start_step;
      return result;  // the last periodic checkpoint on disk stays usable
    }

    const double grad_norm = m.params().grad_norm();
    opt.step(m.params(), lr, sched.max_grad_norm);

    if (!opts.quiet && step % opts.log_interval == 0) {
      std::printf("step %6lld  T=%d  elbo %12.1f  ll %12.1f  lr %.2e  |g| %.3f\n",
                  (long long)step, n_frames, diag["elbo"], diag["likelihood"], lr, grad_norm);
      std::fflush(stdout);
    }
    if (log && step % opts.log_interval == 0) {
      nlohmann::json j;
      j["step"] = step;
      j["frames"] = n_frames;
      j["lr"] = lr;
      j["grad_norm"] = grad_norm;
      for (const auto& [k, v] : diag) j[k] = v;
      log << j.dump() << "\n";
      log.flush();
    }

    const bool last_step = step + 1 >= opts.max_steps;
    if (val_data && ((step + 1) % sched.eval_interval == 0 || last_step)) {
      double val;
      if (opts.val_metric == "elbo")
        val = validate_elbo(m, *val_data, sched.n_val_videos, opts.seed ^ 0xe1b0);
      else
        val = validate_mota(m, *val_data, sched.n_val_videos, opts.seed ^ 0x307a);
      if (log) {
        nlohmann::json j;
        j["step"] = step + 1;
        j["val_" + opts.val_metric] = val;
        log << j.dump() << "\n";
        log.flush();
      }
      if (!opts.quiet)
        std::printf("step %6lld  val %s %.4f (best %s)\n", (long long)(step + 1),
                    opts.val_metric.c_str(), val,
                    result.best_step < 0 ? "none" : std::to_string(result.best_val).c_str());
      // the patience clock arms once the curriculum reaches full videos
      const auto action =
          stopper.on_validation(val, sched.eval_interval, step + 1 >= curric_end);
      if (action == EarlyStopController::NewBest) {
        result.best_val = val;
        result.best_step = step + 1;
        save_checkpoint(result.best_checkpoint, m, step + 1, &opt);
      } else if (action == EarlyStopController::Trigger ||
                 action == EarlyStopController::Stop) {
        ++result.early_stops;
        lr = stopper.lr;
        if (std::filesystem::exists(result.best_checkpoint)) {
          int64_t st = 0;
          auto best = load_checkpoint(result.best_checkpoint, &st, &opt);
          for (const auto& e : best->params().entries())
            m.params().find(e->name)->value = e->value;
        }
        if (!opts.quiet)
          std::printf("early stop %d: lr -> %.3e, weights restored from %s\n",
                      result.early_stops, lr, result.best_checkpoint.c_str());
        if (action == EarlyStopController::Stop) {
          result.steps_run = step + 1 - start_step;
          break;
        }
      }
    }

    if ((step + 1) % opts.checkpoint_interval == 0 || last_step)
      save_checkpoint(opts.out_dir + "/last.ckpt", m, step + 1, &opt);
    result.steps_run = step + 1 - start_step;
  }

  // final best checkpoint exists even without a validation set
  if (!val_data) {
    save_checkpoint(result.best_checkpoint, m, start_step + result.steps_run, &opt);
    result.best_step = start_step + result.steps_run;
    result.best_val = 0.0;
  }
  return result;
}

}  // namespace silot
