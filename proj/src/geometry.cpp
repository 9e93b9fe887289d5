#include "silot/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace silot {

std::vector<BackboneLayer> default_backbone(int filters) {
  return {
      {filters, 4, 3, true}, {filters, 4, 2, true}, {filters, 4, 2, true},
      {filters, 1, 1, true}, {filters, 1, 1, true}, {filters, 1, 1, false},
  };
}

GridSpec compute_grid_spec(int frame_h, int frame_w, const std::vector<BackboneLayer>& backbone,
                           const ModelConfig& cfg) {
  int stride = 1;
  int rf = 1;  // receptive field of one output cell, in input pixels
  for (const BackboneLayer& l : backbone) {
    rf += (l.size - 1) * stride;
    stride *= l.stride;
  }
  if (stride != cfg.cell_h || stride != cfg.cell_w)
    throw std::runtime_error("grid: backbone stride product " + std::to_string(stride) +
                             " != configured cell size");

  GridSpec gs;
  gs.cell_h = cfg.cell_h;
  gs.cell_w = cfg.cell_w;
  gs.anchor_h = cfg.anchor_h;
  gs.anchor_w = cfg.anchor_w;
  gs.b_min = cfg.b_min;
  gs.b_max = cfg.b_max;
  gs.frame_h = frame_h;
  gs.frame_w = frame_w;
  gs.grid_h = (frame_h + cfg.cell_h - 1) / cfg.cell_h;
  gs.grid_w = (frame_w + cfg.cell_w - 1) / cfg.cell_w;

  // Receptive field of output cell i spans [i*stride - pad_top, ... + rf);
  // centering it on (i + 0.5) * cell gives pad = (rf - cell) / 2, rounded
  // down when rf and cell have different parities.
  const int pad_y = (rf - cfg.cell_h) / 2;
  const int pad_x = (rf - cfg.cell_w) / 2;
  gs.pad_top = pad_y;
  gs.pad_left = pad_x;
  gs.pad_bottom = (gs.grid_h - 1) * cfg.cell_h + rf - frame_h - pad_y;
  gs.pad_right = (gs.grid_w - 1) * cfg.cell_w + rf - frame_w - pad_x;
  if (gs.pad_bottom < 0 || gs.pad_right < 0)
    throw std::runtime_error("grid: negative padding, backbone spec inconsistent");
  return gs;
}

Var decode_where_disc(Graph& g, Var z_where, const GridSpec& grid) {
  const int n = g.val(z_where).rows();
  if (n != grid.cells()) throw std::runtime_error("decode_where_disc: row count != grid cells");
  Tensor cell_y({n, 1}), cell_x({n, 1});
  for (int i = 0; i < grid.grid_h; ++i)
    for (int j = 0; j < grid.grid_w; ++j) {
      cell_y.data[i * grid.grid_w + j] = i;
      cell_x.data[i * grid.grid_w + j] = j;
    }
  Var zy = g.slice_cols(z_where, 0, 1);
  Var zx = g.slice_cols(z_where, 1, 1);
  Var zh = g.slice_cols(z_where, 2, 1);
  Var zw = g.slice_cols(z_where, 3, 1);
  const double span = grid.b_max - grid.b_min;
  Var by = g.add_const(g.scale(g.sigmoid(zy), span), grid.b_min);
  Var bx = g.add_const(g.scale(g.sigmoid(zx), span), grid.b_min);
  Var oy = g.scale(g.add(by, g.constant(cell_y)), grid.cell_h);
  Var ox = g.scale(g.add(bx, g.constant(cell_x)), grid.cell_w);
  Var oh = g.scale(g.sigmoid(zh), grid.anchor_h);
  Var ow = g.scale(g.sigmoid(zw), grid.anchor_w);
  return g.concat_cols({oy, ox, oh, ow});
}

Tensor decode_where_disc(const Tensor& z_where, const GridSpec& grid) {
  Graph g;
  return g.val(decode_where_disc(g, g.constant(z_where), grid));
}

Tensor extract_glimpse(const Tensor& frame, const Tensor& where, int out_h, int out_w) {
  Graph g;
  return g.val(g.glimpse_extract(g.constant(frame), g.constant(where), out_h, out_w));
}

Tensor inverse_place(const Tensor& maps, int map_h, int map_w, int map_c, const Tensor& where,
                     int out_h, int out_w, const std::vector<double>& channel_default) {
  Graph g;
  return g.val(
      g.inverse_place(g.constant(maps), map_h, map_w, map_c, g.constant(where), out_h, out_w, channel_default));
}

}  // namespace silot
