#pragma once

#include "silot/datagen.hpp"
#include "silot/metrics.hpp"
#include "silot/training.hpp"

namespace silot {

struct TrainOptions {
  int64_t max_steps = 20000;
  uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::string val_metric = "mota";  // or "elbo"
  int64_t log_interval = 50;
  int64_t checkpoint_interval = 2000;
  bool quiet = false;
};

// Early-stopping bookkeeping: patience on a validation metric, restore-best
// plus learning-rate division on trigger, stop after max_triggers.
struct EarlyStopController {
  int64_t patience = 30000;
  double divisor = 3.0;
  int max_triggers = 3;

  double lr = 1e-4;
  double best = -1e300;
  int64_t since_best = 0;
  int triggers = 0;

  enum Action { Continue, NewBest, Trigger, Stop };
  Action on_validation(double val, int64_t steps_since_last, bool patience_armed) {
    if (val > best) {
      best = val;
      since_best = 0;
      return NewBest;
    }
    since_best += steps_since_last;
    if (!patience_armed || since_best < patience) return Continue;
    since_best = 0;
    lr /= divisor;
    ++triggers;
    return triggers >= max_triggers ? Stop : Trigger;
  }
};

struct TrainResult {
  int64_t steps_run = 0;
  double best_val = -1e300;
  int64_t best_step = -1;
  std::string best_checkpoint;
  bool aborted_nan = false;
  int early_stops = 0;
};

// Validation MOTA over the first n videos of a dataset, mean-mode inference.
double validate_mota(SilotModel& m, const VideoDataset& data, int n, uint64_t seed,
                     double pres_thresh = 0.5);

// Gradient ascent on the ELBO: curriculum over frame count, discovery
// dropout, warmup gating, global-norm clipping, periodic validation with
// best-checkpoint tracking, and the early-stopping regime (restore best,
// divide the learning rate, stop after the configured trigger count).
TrainResult train(SilotModel& m, const VideoDataset& train_data, const VideoDataset* val_data,
                  const TrainOptions& opts, int64_t start_step = 0, Adam* resume_opt = nullptr);

}  // namespace silot
