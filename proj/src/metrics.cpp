#include "silot/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace silot {

void TrackSet::add(int64_t id, int t, const Box& b, double conf) {
  auto [it, fresh] = tracks[id].emplace(t, Entry{b, conf});
  if (!fresh) throw std::runtime_error("TrackSet: duplicate box for (track, t)");
  T = std::max(T, t + 1);
}

std::vector<std::pair<int64_t, TrackSet::Entry>> TrackSet::at_frame(int t) const {
  std::vector<std::pair<int64_t, Entry>> out;
  for (const auto& [id, frames] : tracks) {
    auto it = frames.find(t);
    if (it != frames.end()) out.emplace_back(id, it->second);
  }
  return out;
}

int64_t TrackSet::total_boxes(int t0, int t1) const {
  int64_t n = 0;
  for (const auto& [id, frames] : tracks)
    for (const auto& [t, e] : frames)
      if (t >= t0 && (t1 < 0 || t < t1)) ++n;
  return n;
}

TrackSet gt_tracks(const VideoSample& v) {
  TrackSet ts;
  ts.T = v.T;
  for (const auto& a : v.annotations) ts.add(a.track_id, a.t, a.box);
  return ts;
}

double iou(const Box& a, const Box& b) {
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top()));
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left(), b.left()));
  const double inter = iy * ix;
  const double uni = a.h * a.w + b.h * b.w - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

// O(n^3) shortest augmenting path assignment (potentials form), rectangular,
// entries >= kUnmatchable stay unassigned.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = (int)cost.size();
  if (n == 0) return {};
  const int m = (int)cost[0].size();
  const int dim = std::max(n, m);
  // Unmatchable and padding entries map to a surrogate that dominates any
  // full set of real edges lexicographically while keeping the potentials
  // small; mixing 1e17-scale values into the arithmetic would round real
  // costs away (ulp(1e17) = 16).
  double max_finite = 0.0;
  for (const auto& row : cost)
    for (double v : row)
      if (v < kUnmatchable) max_finite = std::max(max_finite, v);
  const double BIG = (max_finite + 1.0) * (dim + 1);
  auto C = [&](int r, int c) -> double {
    if (r < n && c < m) return cost[r][c] < kUnmatchable ? cost[r][c] : BIG;
    return BIG;
  };

  std::vector<double> u(dim + 1, 0), v(dim + 1, 0);
  std::vector<int> p(dim + 1, 0), way(dim + 1, 0);
  for (int i = 1; i <= dim; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(dim + 1, 1e30);
    std::vector<char> used(dim + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = 1e30;
      int j1 = -1;
      for (int j = 1; j <= dim; ++j) {
        if (used[j]) continue;
        const double cur = C(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= dim; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> match(n, -1);
  for (int j = 1; j <= dim; ++j) {
    const int i = p[j];
    if (i >= 1 && i <= n && j <= m && cost[i - 1][j - 1] < kUnmatchable) match[i - 1] = j - 1;
  }
  return match;
}

// --- ConnComp ------------------------------------------------------------------

namespace {

struct Component {
  Box box;
  double cy, cx;
  uint32_t color;
  int pixels;
};

std::vector<Component> components_of_frame(const unsigned char* rgb, int H, int W) {
  // palette-quantize each channel to {0, 255}; background is exact black
  std::vector<uint32_t> color((size_t)H * W);
  for (int64_t i = 0; i < (int64_t)H * W; ++i) {
    const unsigned char r = rgb[i * 3] >= 128 ? 255 : 0;
    const unsigned char g = rgb[i * 3 + 1] >= 128 ? 255 : 0;
    const unsigned char b = rgb[i * 3 + 2] >= 128 ? 255 : 0;
    color[i] = (uint32_t(r) << 16) | (uint32_t(g) << 8) | b;
  }
  std::vector<int> label((size_t)H * W, -1);
  std::vector<Component> comps;
  std::vector<int64_t> stack;
  for (int64_t s = 0; s < (int64_t)H * W; ++s) {
    if (color[s] == 0 || label[s] >= 0) continue;
    const int id = (int)comps.size();
    Component comp{};
    comp.color = color[s];
    int r0 = 1 << 30, r1 = -1, c0 = 1 << 30, c1 = -1;
    double sy = 0, sx = 0;
    int n = 0;
    stack.assign(1, s);
    label[s] = id;
    while (!stack.empty()) {
      const int64_t p = stack.back();
      stack.pop_back();
      const int y = (int)(p / W), x = (int)(p % W);
      r0 = std::min(r0, y);
      r1 = std::max(r1, y);
      c0 = std::min(c0, x);
      c1 = std::max(c1, x);
      sy += y + 0.5;
      sx += x + 0.5;
      ++n;
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        const int ny = y + dy[d], nx = x + dx[d];
        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
        const int64_t q = (int64_t)ny * W + nx;
        if (label[q] >= 0 || color[q] != comp.color) continue;
        label[q] = id;
        stack.push_back(q);
      }
    }
    comp.box = Box{(r0 + r1 + 1) / 2.0, (c0 + c1 + 1) / 2.0, double(r1 - r0 + 1),
                   double(c1 - c0 + 1)};
    comp.cy = sy / n;
    comp.cx = sx / n;
    comp.pixels = n;
    comps.push_back(comp);
  }
  return comps;
}

}  // namespace

TrackSet conncomp_track(const VideoSample& v) {
  TrackSet out;
  out.T = v.T;
  struct Live {
    int64_t id;
    Component comp;
  };
  std::vector<Live> prev;
  int64_t next_id = 0;
  for (int t = 0; t < v.T; ++t) {
    std::vector<Component> comps = components_of_frame(v.frame(t), v.H, v.W);
    std::vector<int64_t> ids(comps.size(), -1);
    if (!prev.empty() && !comps.empty()) {
      std::vector<std::vector<double>> cost(prev.size(), std::vector<double>(comps.size()));
      for (size_t i = 0; i < prev.size(); ++i)
        for (size_t j = 0; j < comps.size(); ++j) {
          if (prev[i].comp.color != comps[j].color) {
            cost[i][j] = kUnmatchable;
          } else {
            const double dy = prev[i].comp.cy - comps[j].cy;
            const double dx = prev[i].comp.cx - comps[j].cx;
            cost[i][j] = std::sqrt(dy * dy + dx * dx);
          }
        }
      std::vector<int> match = hungarian(cost);
      for (size_t i = 0; i < prev.size(); ++i)
        if (match[i] >= 0) ids[match[i]] = prev[i].id;
    }
    std::vector<Live> cur;
    for (size_t j = 0; j < comps.size(); ++j) {
      if (ids[j] < 0) ids[j] = next_id++;
      out.add(ids[j], t, comps[j].box, 1.0);
      cur.push_back({ids[j], comps[j]});
    }
    prev = std::move(cur);
  }
  return out;
}

// --- CLEAR-MOT -------------------------------------------------------------------

namespace {
MotaDiagnostics mota_diag(const TrackSet& pred, const TrackSet& gt, double iou_thresh, int t0,
                          int t1) {
  const int T = std::max(pred.T, gt.T);
  if (t1 < 0) t1 = T;
  MotaDiagnostics d;
  d.eval_t0 = t0;
  d.eval_t1 = t1;
  std::map<int64_t, int64_t> active;      // gt id -> pred id matched at t-1
  std::map<int64_t, int64_t> last_match;  // gt id -> most recent pred id ever
  for (int t = t0; t < t1; ++t) {
    auto gts = gt.at_frame(t);
    auto prs = pred.at_frame(t);
    d.gt_total += (int64_t)gts.size();

    std::vector<char> gt_done(gts.size(), 0), pr_done(prs.size(), 0);
    std::map<int64_t, int64_t> now;

    // carry over matches that still overlap
    for (size_t i = 0; i < gts.size(); ++i) {
      auto it = active.find(gts[i].first);
      if (it == active.end()) continue;
      for (size_t j = 0; j < prs.size(); ++j) {
        if (prs[j].first != it->second || pr_done[j]) continue;
        if (iou(gts[i].second.box, prs[j].second.box) >= iou_thresh) {
          gt_done[i] = 1;
          pr_done[j] = 1;
          now[gts[i].first] = prs[j].first;
          ++d.matches;
        }
        break;
      }
    }

    // Hungarian on the rest, maximizing IoU above the threshold
    std::vector<size_t> gi, pj;
    for (size_t i = 0; i < gts.size(); ++i)
      if (!gt_done[i]) gi.push_back(i);
    for (size_t j = 0; j < prs.size(); ++j)
      if (!pr_done[j]) pj.push_back(j);
    if (!gi.empty() && !pj.empty()) {
      std::vector<std::vector<double>> cost(gi.size(), std::vector<double>(pj.size()));
      for (size_t a = 0; a < gi.size(); ++a)
        for (size_t b = 0; b < pj.size(); ++b) {
          const double v = iou(gts[gi[a]].second.box, prs[pj[b]].second.box);
          cost[a][b] = v >= iou_thresh ? 1.0 - v : kUnmatchable;
        }
      std::vector<int> match = hungarian(cost);
      for (size_t a = 0; a < gi.size(); ++a) {
        if (match[a] < 0) continue;
        const int64_t gid = gts[gi[a]].first;
        const int64_t pid = prs[pj[match[a]]].first;
        gt_done[gi[a]] = 1;
        pr_done[pj[match[a]]] = 1;
        now[gid] = pid;
        ++d.matches;
        auto lm = last_match.find(gid);
        if (lm != last_match.end() && lm->second != pid) ++d.id_switches;
      }
    }

    for (size_t i = 0; i < gts.size(); ++i)
      if (!gt_done[i]) ++d.false_negatives;
    for (size_t j = 0; j < prs.size(); ++j)
      if (!pr_done[j]) ++d.false_positives;

    for (const auto& [gid, pid] : now) last_match[gid] = pid;
    active = std::move(now);
  }
  return d;
}
}  // namespace

double mota(const TrackSet& pred, const TrackSet& gt, double iou_thresh, MotaDiagnostics* diag,
            int t0, int t1) {
  MotaDiagnostics d = mota_diag(pred, gt, iou_thresh, t0, t1);
  if (d.gt_total == 0) throw std::runtime_error("mota: empty ground truth");
  if (diag) *diag = d;
  return 1.0 - double(d.false_negatives + d.false_positives + d.id_switches) / d.gt_total;
}

double average_precision(const std::vector<TrackSet>& pred, const std::vector<TrackSet>& gt,
                         const std::vector<double>& thresholds_in, int t0, int t1) {
  std::vector<double> thresholds = thresholds_in;
  if (thresholds.empty())
    for (int i = 1; i <= 9; ++i) thresholds.push_back(0.1 * i);

  struct Det {
    double conf;
    int video, t;
    Box box;
  };
  std::vector<Det> dets;
  int64_t n_gt = 0;
  for (size_t v = 0; v < pred.size(); ++v) {
    const int T = std::max(pred[v].T, gt[v].T);
    const int hi = t1 < 0 ? T : t1;
    for (int t = t0; t < hi; ++t) {
      for (const auto& [id, e] : pred[v].at_frame(t)) dets.push_back({e.confidence, (int)v, t, e.box});
      n_gt += (int64_t)gt[v].at_frame(t).size();
    }
  }
  if (n_gt == 0) throw std::runtime_error("average_precision: empty ground truth");
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Det& a, const Det& b) { return a.conf > b.conf; });

  double ap_sum = 0.0;
  for (double thresh : thresholds) {
    // greedy match in confidence order
    std::map<std::pair<int, int>, std::vector<char>> used;
    std::vector<char> is_tp(dets.size(), 0);
    for (size_t k = 0; k < dets.size(); ++k) {
      const Det& d = dets[k];
      auto gts = gt[d.video].at_frame(d.t);
      auto& flags = used[{d.video, d.t}];
      if (flags.empty()) flags.assign(gts.size(), 0);
      int best = -1;
      double best_iou = thresh;
      for (size_t i = 0; i < gts.size(); ++i) {
        if (flags[i]) continue;
        const double v = iou(d.box, gts[i].second.box);
        if (v >= best_iou) {
          best_iou = v;
          best = (int)i;
        }
      }
      if (best >= 0) {
        flags[best] = 1;
        is_tp[k] = 1;
      }
    }
    // interpolated precision over the PR curve
    std::vector<double> precision, recall;
    int64_t tp = 0;
    for (size_t k = 0; k < dets.size(); ++k) {
      if (is_tp[k]) ++tp;
      precision.push_back(double(tp) / double(k + 1));
      recall.push_back(double(tp) / double(n_gt));
    }
    for (int k = (int)precision.size() - 2; k >= 0; --k)
      precision[k] = std::max(precision[k], precision[k + 1]);
    double ap = 0.0, prev_r = 0.0;
    for (size_t k = 0; k < precision.size(); ++k) {
      ap += (recall[k] - prev_r) * precision[k];
      prev_r = recall[k];
    }
    ap_sum += ap;
  }
  return ap_sum / thresholds.size();
}

double count_abs_error(const TrackSet& pred, const TrackSet& gt, int t0, int t1) {
  const int T = std::max(pred.T, gt.T);
  if (t1 < 0) t1 = T;
  double sum = 0.0;
  int n = 0;
  for (int t = t0; t < t1; ++t) {
    sum += std::fabs(double(pred.at_frame(t).size()) - double(gt.at_frame(t).size()));
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

// --- model-facing glue -------------------------------------------------------------

TrackSet extract_tracks(const RolloutTrace& trace, double pres_thresh, int retire_after) {
  TrackSet out;
  out.T = (int)trace.steps.size();
  std::map<int64_t, int> below;    // consecutive sub-threshold frames
  std::map<int64_t, int64_t> rename;  // internal id -> emitted id (re-mint after retirement)
  int64_t next_emit = 0;
  for (int t = 0; t < (int)trace.steps.size(); ++t) {
    const TimestepTrace& st = trace.steps[t];
    for (int k = 0; k < st.selected.size(); ++k) {
      const int64_t id = st.track_ids[k];
      if (id < 0) continue;
      const double pres = st.selected.pres(k, 0);
      if (pres > pres_thresh) {
        auto it = rename.find(id);
        if (it == rename.end()) it = rename.emplace(id, next_emit++).first;
        Box b{st.selected.where(k, 0), st.selected.where(k, 1), st.selected.where(k, 2),
              st.selected.where(k, 3)};
        out.add(it->second, t, b, pres);
        below[id] = 0;
      } else if (rename.count(id)) {
        if (++below[id] >= retire_after) {
          rename.erase(id);  // track retired; a comeback gets a fresh id
          below.erase(id);
        }
      }
    }
  }
  return out;
}

TrackingReport evaluate_tracks(const std::vector<TrackSet>& pred, const std::vector<TrackSet>& gt,
                               int t0, int t1) {
  TrackingReport rep;
  rep.n_videos = (int)pred.size();
  MotaDiagnostics total;
  for (size_t v = 0; v < pred.size(); ++v) {
    MotaDiagnostics d = mota_diag(pred[v], gt[v], 0.5, t0, t1);
    total.false_negatives += d.false_negatives;
    total.false_positives += d.false_positives;
    total.id_switches += d.id_switches;
    total.matches += d.matches;
    total.gt_total += d.gt_total;
  }
  total.eval_t0 = t0;
  total.eval_t1 = t1;
  rep.diagnostics = total;
  rep.mota = 1.0 - double(total.false_negatives + total.false_positives + total.id_switches) /
                       std::max<int64_t>(1, total.gt_total);
  rep.ap = average_precision(pred, gt, {}, t0, t1);
  double cae = 0.0;
  for (size_t v = 0; v < pred.size(); ++v) cae += count_abs_error(pred[v], gt[v], t0, t1);
  rep.count_abs_error = pred.empty() ? 0.0 : cae / pred.size();
  rep.eval_t0 = t0;
  rep.eval_t1 = t1 < 0 ? 0 : t1;
  return rep;
}

TrackingReport prior_rollout_eval(SilotModel& m, const std::vector<VideoSample>& videos,
                                  uint64_t seed, int context, double pres_thresh) {
  std::vector<TrackSet> pred, gt;
  RandomStream rng(seed);
  for (size_t i = 0; i < videos.size(); ++i) {
    FrameSource src = to_frame_source(videos[i]);
    RolloutTrace trace = run_video(m, src, VideoMode::PriorRollout, RunMode::Mean,
                                   rng.child(i), {}, context);
    for (int t = context; t < (int)src.frames.size(); ++t)
      if (src.reads.empty() ? false : src.reads[t] != 0)
        throw std::runtime_error("prior_rollout_eval: frame pixels read at t >= context");
    pred.push_back(extract_tracks(trace, pres_thresh));
    gt.push_back(gt_tracks(videos[i]));
  }
  const int T = videos.empty() ? 0 : videos[0].T;
  return evaluate_tracks(pred, gt, context, T);
}

std::string report_to_json(const std::map<std::string, TrackingReport>& buckets) {
  nlohmann::json j;
  for (const auto& [name, r] : buckets) {
    nlohmann::json b;
    b["mota"] = r.mota;
    b["ap"] = r.ap;
    b["count_abs_error"] = r.count_abs_error;
    b["n_videos"] = r.n_videos;
    b["false_negatives"] = r.diagnostics.false_negatives;
    b["false_positives"] = r.diagnostics.false_positives;
    b["id_switches"] = r.diagnostics.id_switches;
    b["matches"] = r.diagnostics.matches;
    b["gt_total"] = r.diagnostics.gt_total;
    b["eval_frames"] = {r.eval_t0, r.eval_t1};
    j[name] = b;
  }
  return j.dump(2);
}

std::string report_to_csv(const std::map<std::string, TrackingReport>& buckets) {
  std::ostringstream out;
  out << "bucket,mota,ap,count_abs_error,n_videos,fn,fp,idsw,gt_total\n";
  for (const auto& [name, r] : buckets)
    out << name << "," << r.mota << "," << r.ap << "," << r.count_abs_error << "," << r.n_videos
        << "," << r.diagnostics.false_negatives << "," << r.diagnostics.false_positives << ","
        << r.diagnostics.id_switches << "," << r.diagnostics.gt_total << "\n";
  return out.str();
}

}  // namespace silot
