#pragma once

#include <array>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "silot/core.hpp"
#include "silot/model.hpp"
#include "silot/random.hpp"

namespace silot {

struct SceneConfig {
  int frame_h = 48, frame_w = 48;
  int T = 8;
  int n_min = 1, n_max = 6;
  double speed = 2.0;             // px/frame, fixed magnitude
  double sprite_size = 14.0;      // px; shapes sample each axis from
  double sprite_size_std = 0.0;   //   Normal(sprite_size, sprite_size_std)
  double overlap_threshold = 98.0;  // cumulative sprite-mask pixels at t=0
  int max_place_attempts = 1000;
  int crop_h = 0, crop_w = 0;       // > 0: random crop of each video
  double crop_keep_fraction = 0.25;  // min mask fraction inside the crop
  std::string stencil_path;          // empty: repo asset default
};

// Straight-line motion with elastic reflection of the sprite bounding box at
// the frame borders; returns T center positions. No object interaction.
std::vector<std::array<double, 2>> simulate(double y0, double x0, double vy, double vx, double h,
                                            double w, double frame_h, double frame_w, int T);

// Rasterized sprite: per-pixel alpha in [0,1] plus a solid color.
struct Sprite {
  int h = 0, w = 0;
  std::vector<double> alpha;
  std::array<unsigned char, 3> color{255, 255, 255};
};

struct ShapeStencil {
  bool ellipse = false;
  std::vector<std::array<double, 2>> vertices;  // (x, y) in [-1,1]^2
};
using ShapeStencils = std::map<std::string, ShapeStencil>;

ShapeStencils load_stencils(const std::string& path = "");
Sprite rasterize_stencil(const ShapeStencil& s, int h, int w,
                         const std::array<unsigned char, 3>& color);

inline constexpr std::array<std::array<unsigned char, 3>, 6> kShapePalette{{
    {255, 0, 0},    // red
    {0, 255, 0},    // green
    {0, 0, 255},    // blue
    {0, 255, 255},  // cyan
    {255, 255, 0},  // yellow
    {255, 0, 255},  // magenta
}};
inline const std::array<std::string, 5> kShapeNames{"circle", "diamond", "star", "cross", "x"};

// Grayscale digit sprites, resized to sprite_size; split into
// train/val/test pools before any sampling so test digits stay unseen.
struct DigitBank {
  int h = 14, w = 14;
  std::vector<std::vector<double>> train, val, test;
  const std::vector<std::vector<double>>& split(const std::string& name) const;
};

// Reads IDX-format image files (the classic 28x28 digit archive) and
// resizes to out px per side; 80/10/10 split in file order.
DigitBank load_digit_bank_idx(const std::string& images_path, int out = 14);

// A fully constructed scene: sprites with trajectories (used directly by
// tests that need controlled layouts).
struct SceneObject {
  Sprite sprite;
  double y0, x0, vy, vx;
};
VideoSample render_scene(const std::vector<SceneObject>& objects, const SceneConfig& cfg,
                         RandomStream* crop_rng = nullptr);

VideoSample gen_scattered_mnist(const SceneConfig& cfg, const DigitBank& bank,
                                const std::string& split, RandomStream rng);
VideoSample gen_scattered_shapes(const SceneConfig& cfg, const ShapeStencils& stencils,
                                 RandomStream rng);

// --- dataset on disk ---------------------------------------------------------
// manifest.json + frames.bin (+ frames.json sidecar) + annotations.jsonl
class DatasetWriter {
 public:
  DatasetWriter(const std::string& dir, const std::string& dataset_name, const SceneConfig& cfg,
                uint64_t seed);
  void append(const VideoSample& v, int n_objects);
  void finish();

 private:
  std::string dir_, name_;
  SceneConfig cfg_;
  uint64_t seed_;
  int64_t offset_ = 0;
  int n_ = 0;
  std::vector<std::pair<int64_t, int>> index_;  // (byte offset, n_objects)
  int out_h_ = 0, out_w_ = 0;
  std::ofstream frames_out_, ann_out_;
};

class VideoDataset {
 public:
  explicit VideoDataset(const std::string& dir);
  int size() const { return n_videos_; }
  int frame_h() const { return H_; }
  int frame_w() const { return W_; }
  int frames_per_video() const { return T_; }
  int max_objects() const { return max_objects_; }
  VideoSample load(int index) const;
  FrameSource frames(int index) const;  // normalized to [0,1]

 private:
  std::string dir_;
  int n_videos_ = 0, T_ = 0, H_ = 0, W_ = 0;
  std::vector<int64_t> offsets_;
  int max_objects_ = 0;
  std::map<int, std::vector<VideoSample::Annotation>> annotations_;
};

FrameSource to_frame_source(const VideoSample& v);

}  // namespace silot
