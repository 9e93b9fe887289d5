#include "silot/viz.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "silot/select_render.hpp"

namespace silot {

namespace {
void put_be32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back((unsigned char)(v >> 24));
  out.push_back((unsigned char)(v >> 16));
  out.push_back((unsigned char)(v >> 8));
  out.push_back((unsigned char)v);
}

void put_chunk(std::ofstream& out, const char type[4], const std::vector<unsigned char>& data) {
  std::vector<unsigned char> len;
  put_be32(len, (uint32_t)data.size());
  out.write(reinterpret_cast<const char*>(len.data()), 4);
  out.write(type, 4);
  if (!data.empty()) out.write(reinterpret_cast<const char*>(data.data()), data.size());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), (uInt)data.size());
  std::vector<unsigned char> tail;
  put_be32(tail, (uint32_t)crc);
  out.write(reinterpret_cast<const char*>(tail.data()), 4);
}
}  // namespace

void write_png(const std::string& path, const std::vector<unsigned char>& rgb, int h, int w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("png: cannot write " + path);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr;
  put_be32(ihdr, (uint32_t)w);
  put_be32(ihdr, (uint32_t)h);
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);

  std::vector<unsigned char> raw((size_t)h * (w * 3 + 1));
  for (int y = 0; y < h; ++y) {
    raw[(size_t)y * (w * 3 + 1)] = 0;  // filter none
    std::memcpy(raw.data() + (size_t)y * (w * 3 + 1) + 1, rgb.data() + (size_t)y * w * 3,
                (size_t)w * 3);
  }
  uLongf comp_len = compressBound((uLong)raw.size());
  std::vector<unsigned char> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), (uLong)raw.size(), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  comp.resize(comp_len);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", {});
}

void RgbImage::blit(const RgbImage& src, int y0, int x0) {
  for (int y = 0; y < src.h; ++y) {
    if (y + y0 < 0 || y + y0 >= h) continue;
    for (int x = 0; x < src.w; ++x) {
      if (x + x0 < 0 || x + x0 >= w) continue;
      std::memcpy(rgb.data() + (((size_t)(y + y0) * w) + (x + x0)) * 3,
                  src.rgb.data() + ((size_t)y * src.w + x) * 3, 3);
    }
  }
}

void RgbImage::draw_box(const Box& b, const std::array<unsigned char, 3>& color, bool dashed) {
  const int y0 = (int)std::lround(b.top()), y1 = (int)std::lround(b.bottom()) - 1;
  const int x0 = (int)std::lround(b.left()), x1 = (int)std::lround(b.right()) - 1;
  auto plot = [&](int y, int x, int k) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    if (dashed && (k / 3) % 2) return;  // 3-px dashes
    std::memcpy(rgb.data() + ((size_t)y * w + x) * 3, color.data(), 3);
  };
  int k = 0;
  for (int x = x0; x <= x1; ++x, ++k) plot(y0, x, k);
  for (int y = y0; y <= y1; ++y, ++k) plot(y, x1, k);
  for (int x = x1; x >= x0; --x, ++k) plot(y1, x, k);
  for (int y = y1; y >= y0; --y, ++k) plot(y, x0, k);
}

RgbImage frame_to_image(const Tensor& planar, int h, int w) {
  RgbImage img = RgbImage::black(h, w);
  for (int c = 0; c < 3; ++c)
    for (int64_t p = 0; p < (int64_t)h * w; ++p) {
      const double v = planar.data[(int64_t)c * h * w + p];
      img.rgb[p * 3 + c] = (unsigned char)std::lround(255.0 * std::min(1.0, std::max(0.0, v)));
    }
  return img;
}

RgbImage frame_to_image(const unsigned char* rgb, int h, int w) {
  RgbImage img;
  img.h = h;
  img.w = w;
  img.rgb.assign(rgb, rgb + (size_t)h * w * 3);
  return img;
}

std::array<unsigned char, 3> track_color(int64_t id) {
  static const std::array<std::array<unsigned char, 3>, 10> palette{{
      {230, 60, 60},
      {60, 200, 60},
      {80, 120, 255},
      {240, 200, 40},
      {60, 220, 220},
      {230, 80, 230},
      {255, 150, 50},
      {160, 230, 90},
      {190, 110, 255},
      {255, 120, 160},
  }};
  return palette[(size_t)(id % (int64_t)palette.size())];
}

RgbImage render_panel(const VideoSample& video, const RolloutTrace& trace, SilotModel& m,
                      double pres_thresh) {
  const int H = video.H, W = video.W, T = video.T;
  const int pad = 2;
  RgbImage panel = RgbImage::black(3 * H + 4 * pad, T * (W + pad) + pad);

  const ModelConfig& cfg = m.config();
  for (int t = 0; t < T; ++t) {
    const TimestepTrace& st = trace.steps[t];
    const int x0 = pad + t * (W + pad);

    // detected objects: box + id color; dashed when freshly discovered
    struct Det {
      int row;
      Box box;
      int64_t id;
      bool discovered;
      double depth;
    };
    std::vector<Det> dets;
    for (int k = 0; k < st.selected.size(); ++k) {
      if (st.selected.pres(k, 0) <= pres_thresh || st.track_ids[k] < 0) continue;
      dets.push_back({k,
                      Box{st.selected.where(k, 0), st.selected.where(k, 1),
                          st.selected.where(k, 2), st.selected.where(k, 3)},
                      st.track_ids[k], st.provenance[k].kind == Provenance::Discovered,
                      st.selected.depth(k, 0)});
    }

    RgbImage gt = frame_to_image(video.frame(t), H, W);
    for (const Det& d : dets) gt.draw_box(d.box, track_color(d.id), d.discovered);
    panel.blit(gt, pad, x0);

    // appearance row: beta maps alpha-composited on black in depth order
    RgbImage app = RgbImage::black(H, W);
    if (!dets.empty()) {
      Graph g;
      Var logits = m.rend.obj_appearance.forward(g, g.constant(st.selected.what));
      const int64_t mp = (int64_t)cfg.obj_h * cfg.obj_w;
      Var beta = g.sigmoid(
          g.add_const(g.scale(g.slice_cols(logits, 0, mp * 3), cfg.sigma_beta), cfg.mu_beta));
      Var xi = g.sigmoid(
          g.add_const(g.scale(g.slice_cols(logits, mp * 3, mp), cfg.sigma_xi), cfg.mu_xi));
      std::vector<Det> order = dets;
      std::sort(order.begin(), order.end(),
                [](const Det& a, const Det& b) { return a.depth < b.depth; });
      std::vector<double> canvas((size_t)H * W * 3, 0.0);
      for (const Det& d : order) {
        Tensor bmap = g.val(g.slice_rows(beta, d.row, 1));
        Tensor amap = g.val(g.slice_rows(xi, d.row, 1));
        Graph g2;
        Tensor placed_b = g2.val(g2.inverse_place(g2.constant(bmap), cfg.obj_h, cfg.obj_w, 3,
                                                  g2.constant(Tensor::of(
                                                      {1, 4}, {d.box.y, d.box.x, d.box.h, d.box.w})),
                                                  H, W, {0, 0, 0}));
        Tensor placed_a = g2.val(g2.inverse_place(g2.constant(amap), cfg.obj_h, cfg.obj_w, 1,
                                                  g2.constant(Tensor::of(
                                                      {1, 4}, {d.box.y, d.box.x, d.box.h, d.box.w})),
                                                  H, W, {0}));
        for (int64_t p = 0; p < (int64_t)H * W; ++p) {
          const double a = placed_a.data[p];
          for (int c = 0; c < 3; ++c)
            canvas[p * 3 + c] =
                (1 - a) * canvas[p * 3 + c] + a * placed_b.data[(int64_t)c * H * W + p];
        }
      }
      for (int64_t i = 0; i < (int64_t)H * W * 3; ++i)
        app.rgb[i] = (unsigned char)std::lround(255.0 * std::min(1.0, std::max(0.0, canvas[i])));
    }
    for (const Det& d : dets) app.draw_box(d.box, track_color(d.id), d.discovered);
    panel.blit(app, 2 * pad + H, x0);

    RgbImage recon = frame_to_image(st.rendered, H, W);
    for (const Det& d : dets) recon.draw_box(d.box, track_color(d.id), d.discovered);
    panel.blit(recon, 3 * pad + 2 * H, x0);
  }
  return panel;
}

}  // namespace silot
