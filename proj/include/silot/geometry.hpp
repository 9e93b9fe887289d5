#pragma once

#include <vector>

#include "silot/config.hpp"
#include "silot/graph.hpp"

namespace silot {

struct BackboneLayer {
  int filters;
  int size;
  int stride;
  bool relu;
};

// The stack from the base hyperparameters: strides 3*2*2 = cell size 12,
// three 1x1 layers on top, no pooling, last layer linear.
std::vector<BackboneLayer> default_backbone(int filters);

// Discovery grid geometry: cell size, grid dims by ceiling division, and the
// input padding that centers each output cell's receptive field on its cell.
struct GridSpec {
  int cell_h = 0, cell_w = 0;
  int grid_h = 0, grid_w = 0;
  int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
  double anchor_h = 0, anchor_w = 0;
  double b_min = 0, b_max = 0;
  int frame_h = 0, frame_w = 0;

  int cells() const { return grid_h * grid_w; }
  double cell_center_y(int i) const { return (i + 0.5) * cell_h; }
  double cell_center_x(int j) const { return (j + 0.5) * cell_w; }
};

GridSpec compute_grid_spec(int frame_h, int frame_w, const std::vector<BackboneLayer>& backbone,
                           const ModelConfig& cfg);

// z rows (z_y, z_x, z_h, z_w), one per grid cell in row-major cell order,
// decoded to pixel boxes:
//   b = b_min + sigmoid(z) * (b_max - b_min);  o_y = (i + b) * c_h
//   o_h = sigmoid(z_h) * a_h                   (x, w analogous)
Var decode_where_disc(Graph& g, Var z_where, const GridSpec& grid);
Tensor decode_where_disc(const Tensor& z_where, const GridSpec& grid);

// Value-level spatial transformer wrappers (same kernels as the graph ops).
// frame is {H, W, C}; where rows are (y, x, h, w) center+size in pixels.
Tensor extract_glimpse(const Tensor& frame, const Tensor& where, int out_h, int out_w);
Tensor inverse_place(const Tensor& maps, int map_h, int map_w, int map_c, const Tensor& where,
                     int out_h, int out_w, const std::vector<double>& channel_default);

// Finite stand-in for the -inf importance default; exp((x - max)/lambda)
// underflows to exactly 0 for any realistic lambda.
inline constexpr double kNegInf = -1e6;

}  // namespace silot
