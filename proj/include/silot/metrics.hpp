#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "silot/core.hpp"
#include "silot/datagen.hpp"
#include "silot/model.hpp"

namespace silot {

// Tracks over one video: per (track, frame) at most one box, with a
// confidence (1.0 for ground truth and ConnComp).
struct TrackSet {
  int T = 0;
  struct Entry {
    Box box;
    double confidence = 1.0;
  };
  std::map<int64_t, std::map<int, Entry>> tracks;  // track_id -> t -> entry

  void add(int64_t id, int t, const Box& b, double conf = 1.0);
  std::vector<std::pair<int64_t, Entry>> at_frame(int t) const;
  int64_t total_boxes(int t0 = 0, int t1 = -1) const;
};

TrackSet gt_tracks(const VideoSample& v);

double iou(const Box& a, const Box& b);

// Minimum-cost assignment on an n x m cost matrix; entries >= kUnmatchable
// are never assigned. Returns row -> column (-1 when unassigned).
inline constexpr double kUnmatchable = 1e17;
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

// --- ConnComp baseline -------------------------------------------------------
// Per frame, 4-connected components of identically colored non-background
// pixels are detections; successive frames linked by Hungarian matching on
// centroid distance with an infinite cost for color mismatches.
TrackSet conncomp_track(const VideoSample& v);

// --- CLEAR-MOT ---------------------------------------------------------------
struct MotaDiagnostics {
  int64_t false_negatives = 0;
  int64_t false_positives = 0;
  int64_t id_switches = 0;
  int64_t matches = 0;
  int64_t gt_total = 0;
  int eval_t0 = 0, eval_t1 = 0;  // [t0, t1) frames scored
};

// Matches persist from the previous frame while IoU stays above the
// threshold; the remainder is matched by Hungarian on IoU. An ID switch is
// counted when a ground-truth track's matched prediction id changes.
// Frames outside [t0, t1) are ignored. Empty ground truth is an error.
double mota(const TrackSet& pred, const TrackSet& gt, double iou_thresh = 0.5,
            MotaDiagnostics* diag = nullptr, int t0 = 0, int t1 = -1);

// Detection AP, greedy-by-confidence matching, interpolated precision,
// averaged over IoU thresholds 0.1:0.1:0.9 by default.
double average_precision(const std::vector<TrackSet>& pred, const std::vector<TrackSet>& gt,
                         const std::vector<double>& thresholds = {}, int t0 = 0, int t1 = -1);

// Mean over frames of |#pred - #gt|.
double count_abs_error(const TrackSet& pred, const TrackSet& gt, int t0 = 0, int t1 = -1);

// --- model-facing glue ---------------------------------------------------------
// An object is reported as a detection while pres > pres_thresh; its box is
// the where attribute and its confidence the pres value. A track retires
// after retire_after consecutive sub-threshold frames.
TrackSet extract_tracks(const RolloutTrace& trace, double pres_thresh = 0.5,
                        int retire_after = 2);

struct TrackingReport {
  double mota = 0;
  double ap = 0;
  double count_abs_error = 0;
  MotaDiagnostics diagnostics;
  int n_videos = 0;
  int eval_t0 = 0, eval_t1 = 0;
};

// Pooled metrics over a set of videos (predictions parallel to truths).
TrackingReport evaluate_tracks(const std::vector<TrackSet>& pred, const std::vector<TrackSet>& gt,
                               int t0 = 0, int t1 = -1);

// App-style prior rollout protocol: posterior for the first context frames,
// then discovery off and the learned prior in place of propagation; metrics
// are computed on the remaining frames only.
TrackingReport prior_rollout_eval(SilotModel& m, const std::vector<VideoSample>& videos,
                                  uint64_t seed, int context = 3, double pres_thresh = 0.5);

std::string report_to_json(const std::map<std::string, TrackingReport>& buckets);
std::string report_to_csv(const std::map<std::string, TrackingReport>& buckets);

}  // namespace silot
