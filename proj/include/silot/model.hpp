#pragma once

#include <cstdint>
#include <vector>

#include "silot/discovery.hpp"
#include "silot/propagation.hpp"
#include "silot/select_render.hpp"

namespace silot {

// Frames of one video, normalized to [0,1], {H,W,3} each. Reads are counted
// per timestep so protocol tests can prove which frames were touched.
struct FrameSource {
  int H = 0, W = 0;
  std::vector<Tensor> frames;
  mutable std::vector<int64_t> reads;

  int T() const { return (int)frames.size(); }
  const Tensor& get(int t) const {
    if (reads.size() != frames.size()) reads.assign(frames.size(), 0);
    ++reads[t];
    return frames[t];
  }
};

// All parameters and module wiring for one SILOT network.
class SilotModel {
 public:
  SilotModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  GridSpec grid_for(int frame_h, int frame_w) const;

  DiscoveryParams disc;
  AttentionParams attn;
  PropagationParams prop;
  PropPriorParams prior;
  RenderParams rend;
  ParamStore::Entry* default_hidden = nullptr;

 private:
  ModelConfig cfg_;
  ParamStore ps_;
};

enum class VideoMode { Posterior, PriorRollout };

// Graph-resident rollout of one video (kept alive for ELBO assembly).
struct StepTrace {
  ObjectSetVar propagated, discovered, selected;
  bool has_prop = false;     // false at t = 0
  bool discovery_on = true;
  PropLatents prop_latents;
  DiscLatents disc_latents;
  PriorStepParams prior_params;
  bool has_prior_params = false;
  Var frame;  // invalid on prior-rollout steps
  bool has_frame = false;
  Var rendered;  // planar {1, 3*H*W}
  std::vector<Provenance> provenance;
  std::vector<int64_t> track_ids;  // -1 for degenerate rows
};

struct VideoRollout {
  std::vector<StepTrace> steps;
  GridSpec grid;
};

// Runs the per-timestep dataflow: propagate -> discover -> select -> render.
// In PriorRollout mode the first prior_context steps run the posterior, the
// rest use the learned prior with discovery off and no frame access.
VideoRollout run_video_graph(Graph& g, SilotModel& m, const FrameSource& src, int T,
                             VideoMode vmode, RunMode rmode, RandomStream* rng,
                             const std::vector<bool>& dropout_mask, bool warmup_detach,
                             bool with_prior_density, int prior_context = 3);

// Value-level trace for evaluation and visualization.
struct TimestepTrace {
  ObjectSet propagated, discovered, selected;
  Tensor rendered;  // planar {1, 3*H*W}
  std::vector<Provenance> provenance;
  std::vector<int64_t> track_ids;
  bool discovery_on = true;
};

struct RolloutTrace {
  std::vector<TimestepTrace> steps;
  GridSpec grid;
};

RolloutTrace run_video(SilotModel& m, const FrameSource& src, VideoMode vmode, RunMode rmode,
                       RandomStream rng, const std::vector<bool>& dropout_mask = {},
                       int prior_context = 3);

// Advisory rule of thumb: K should be roughly 25% larger than the expected
// per-frame object count. Returns a warning string, empty when fine.
std::string check_capacity(const ModelConfig& cfg, int max_expected_objects);

}  // namespace silot
