#pragma once

#include <string>
#include <vector>

#include "silot/metrics.hpp"
#include "silot/model.hpp"

namespace silot {

// Minimal truecolor PNG writer (zlib-compressed, filter 0 scanlines).
void write_png(const std::string& path, const std::vector<unsigned char>& rgb, int h, int w);

struct RgbImage {
  int h = 0, w = 0;
  std::vector<unsigned char> rgb;
  static RgbImage black(int h, int w) { return {h, w, std::vector<unsigned char>((size_t)h * w * 3, 0)}; }
  void blit(const RgbImage& src, int y0, int x0);
  // 1-px rectangle outline; dashed boxes mark freshly discovered objects
  void draw_box(const Box& b, const std::array<unsigned char, 3>& color, bool dashed);
};

RgbImage frame_to_image(const Tensor& planar, int h, int w);          // model output
RgbImage frame_to_image(const unsigned char* rgb, int h, int w);      // dataset frame

std::array<unsigned char, 3> track_color(int64_t id);

// Figure-style panel: ground truth with predicted boxes / per-object
// appearances / reconstruction with boxes, one column per frame.
RgbImage render_panel(const VideoSample& video, const RolloutTrace& trace, SilotModel& m,
                      double pres_thresh = 0.5);

}  // namespace silot
