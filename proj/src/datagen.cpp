#include "silot/datagen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <stdexcept>

namespace silot {

namespace {
constexpr double kMaskThreshold = 0.5;  // solid-ink cutoff for masks and boxes

#ifndef SILOT_SOURCE_DIR
#define SILOT_SOURCE_DIR "."
#endif
}  // namespace

std::vector<std::array<double, 2>> simulate(double y0, double x0, double vy, double vx, double h,
                                            double w, double frame_h, double frame_w, int T) {
  const double ylo = h / 2, yhi = frame_h - h / 2;
  const double xlo = w / 2, xhi = frame_w - w / 2;
  if (ylo >= yhi || xlo >= xhi)
    throw std::runtime_error("simulate: sprite larger than the frame");

  // positions from folding the unreflected straight line into the valid
  // center interval; exact for any number of bounces per step
  auto fold = [](double c, double lo, double hi) {
    const double span = hi - lo;
    double u = std::fmod(c - lo, 2 * span);
    if (u < 0) u += 2 * span;
    return u <= span ? lo + u : lo + 2 * span - u;
  };

  std::vector<std::array<double, 2>> out(T);
  for (int t = 0; t < T; ++t)
    out[t] = {fold(y0 + vy * t, ylo, yhi), fold(x0 + vx * t, xlo, xhi)};
  return out;
}

ShapeStencils load_stencils(const std::string& path) {
  std::string p = path.empty() ? std::string(SILOT_SOURCE_DIR) + "/assets/shape_stencils.json"
                               : path;
  std::ifstream in(p);
  if (!in) throw std::runtime_error("stencils: cannot open " + p);
  nlohmann::json j;
  in >> j;
  ShapeStencils out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    ShapeStencil s;
    if (it.value()["type"] == "ellipse") {
      s.ellipse = true;
    } else {
      for (const auto& v : it.value()["vertices"])
        s.vertices.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    out[it.key()] = s;
  }
  return out;
}

namespace {
bool point_in_polygon(const std::vector<std::array<double, 2>>& poly, double x, double y) {
  bool inside = false;
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const double xi = poly[i][0], yi = poly[i][1];
    const double xj = poly[j][0], yj = poly[j][1];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}
}  // namespace

Sprite rasterize_stencil(const ShapeStencil& s, int h, int w,
                         const std::array<unsigned char, 3>& color) {
  Sprite sp;
  sp.h = h;
  sp.w = w;
  sp.color = color;
  sp.alpha.assign((size_t)h * w, 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double y = 2.0 * (i + 0.5) / h - 1.0;
      const double x = 2.0 * (j + 0.5) / w - 1.0;
      const bool in = s.ellipse ? (x * x + y * y <= 1.0) : point_in_polygon(s.vertices, x, y);
      if (in) sp.alpha[(size_t)i * w + j] = 1.0;
    }
  return sp;
}

const std::vector<std::vector<double>>& DigitBank::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::runtime_error("digit bank: unknown split " + name);
}

DigitBank load_digit_bank_idx(const std::string& images_path, int out) {
  std::ifstream in(images_path, std::ios::binary);
  if (!in) throw std::runtime_error("idx: cannot open " + images_path);
  auto read_be32 = [&]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | b[3];
  };
  if (read_be32() != 0x803) throw std::runtime_error("idx: not an image file");
  const uint32_t n = read_be32(), rows = read_be32(), cols = read_be32();
  std::vector<unsigned char> raw((size_t)rows * cols);

  DigitBank bank;
  bank.h = bank.w = out;
  for (uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(raw.data()), raw.size());
    std::vector<double> d((size_t)out * out);
    for (int y = 0; y < out; ++y)
      for (int x = 0; x < out; ++x) {
        // bilinear resample at pixel centers
        const double sy = (y + 0.5) * rows / out - 0.5;
        const double sx = (x + 0.5) * cols / out - 0.5;
        const int iy = (int)std::floor(sy), ix = (int)std::floor(sx);
        const double fy = sy - iy, fx = sx - ix;
        auto rd = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= (int)rows || xx < 0 || xx >= (int)cols) return 0.0;
          return raw[(size_t)yy * cols + xx] / 255.0;
        };
        d[(size_t)y * out + x] = (1 - fy) * ((1 - fx) * rd(iy, ix) + fx * rd(iy, ix + 1)) +
                                 fy * ((1 - fx) * rd(iy + 1, ix) + fx * rd(iy + 1, ix + 1));
      }
    // 80/10/10 split in file order; test digits never seen in training
    if (i < n * 8 / 10)
      bank.train.push_back(std::move(d));
    else if (i < n * 9 / 10)
      bank.val.push_back(std::move(d));
    else
      bank.test.push_back(std::move(d));
  }
  return bank;
}

namespace {

struct DrawnMask {
  int r0 = 1 << 30, r1 = -1, c0 = 1 << 30, c1 = -1;
  int pixels = 0;
  bool any() const { return r1 >= 0; }
  Box box() const {
    return Box{(r0 + r1 + 1) / 2.0, (c0 + c1 + 1) / 2.0, double(r1 - r0 + 1), double(c1 - c0 + 1)};
  }
};

// tight bounds of a sprite's solid-ink pixels drawn at center (cy, cx),
// restricted to the given window
DrawnMask mask_stats(int H, int W, const Sprite& sp, double cy, double cx, int wy0 = 0,
                     int wx0 = 0, int wy1 = -1, int wx1 = -1) {
  if (wy1 < 0) wy1 = H;
  if (wx1 < 0) wx1 = W;
  const int oy = (int)std::lround(cy - sp.h / 2.0);
  const int ox = (int)std::lround(cx - sp.w / 2.0);
  DrawnMask m;
  for (int i = 0; i < sp.h; ++i)
    for (int j = 0; j < sp.w; ++j) {
      const double a = sp.alpha[(size_t)i * sp.w + j];
      if (a <= 0.0) continue;
      const int y = oy + i, x = ox + j;
      if (y < 0 || y >= H || x < 0 || x >= W) continue;
      if (a > kMaskThreshold && y >= wy0 && y < wy1 && x >= wx0 && x < wx1) {
        m.r0 = std::min(m.r0, y);
        m.r1 = std::max(m.r1, y);
        m.c0 = std::min(m.c0, x);
        m.c1 = std::max(m.c1, x);
        ++m.pixels;
      }
    }
  return m;
}

}  // namespace

VideoSample render_scene(const std::vector<SceneObject>& objects, const SceneConfig& cfg,
                         RandomStream* crop_rng) {
  const int H = cfg.frame_h, W = cfg.frame_w;
  VideoSample v;
  v.T = cfg.T;
  v.H = H;
  v.W = W;
  v.frames.assign((size_t)cfg.T * H * W * 3, 0);

  std::vector<std::vector<std::array<double, 2>>> paths;
  for (const SceneObject& o : objects)
    paths.push_back(
        simulate(o.y0, o.x0, o.vy, o.vx, o.sprite.h, o.sprite.w, H, W, cfg.T));

  const bool crop = cfg.crop_h > 0 && cfg.crop_w > 0;
  int cy0 = 0, cx0 = 0;
  if (crop) {
    if (!crop_rng) throw std::runtime_error("render_scene: crop mode needs an rng");
    cy0 = (int)crop_rng->uniform_int(H - cfg.crop_h + 1);
    cx0 = (int)crop_rng->uniform_int(W - cfg.crop_w + 1);
  }

  for (int t = 0; t < cfg.T; ++t) {
    std::vector<unsigned char> full((size_t)H * W * 3, 0);
    for (size_t k = 0; k < objects.size(); ++k) {
      const Sprite& sp = objects[k].sprite;
      const auto [py, px] = paths[k][t];
      const int oy = (int)std::lround(py - sp.h / 2.0);
      const int ox = (int)std::lround(px - sp.w / 2.0);
      for (int i = 0; i < sp.h; ++i)
        for (int j = 0; j < sp.w; ++j) {
          const double a = sp.alpha[(size_t)i * sp.w + j];
          if (a <= 0.0) continue;
          const int y = oy + i, x = ox + j;
          if (y < 0 || y >= H || x < 0 || x >= W) continue;
          unsigned char* px3 = full.data() + ((size_t)y * W + x) * 3;
          for (int c = 0; c < 3; ++c)
            px3[c] = (unsigned char)std::lround((1.0 - a) * px3[c] + a * sp.color[c]);
        }

      // annotation: tight solid-ink bounds, clipped to the crop window
      DrawnMask m = mask_stats(H, W, sp, py, px, crop ? cy0 : 0, crop ? cx0 : 0,
                               crop ? cy0 + cfg.crop_h : H, crop ? cx0 + cfg.crop_w : W);
      if (m.any()) {
        bool keep = true;
        if (crop) {
          DrawnMask whole = mask_stats(H, W, sp, py, px);
          keep = whole.pixels > 0 &&
                 (double)m.pixels / whole.pixels >= cfg.crop_keep_fraction;
        }
        if (keep) {
          Box b = m.box();
          if (crop) {
            b.y -= cy0;
            b.x -= cx0;
          }
          v.annotations.push_back({(int64_t)k, t, b});
        }
      }
    }

    if (crop) {
      for (int y = 0; y < cfg.crop_h; ++y)
        std::memcpy(v.frames.data() + ((size_t)t * cfg.crop_h + y) * cfg.crop_w * 3,
                    full.data() + ((size_t)(y + cy0) * W + cx0) * 3, (size_t)cfg.crop_w * 3);
    } else {
      std::memcpy(v.frames.data() + (size_t)t * H * W * 3, full.data(), full.size());
    }
  }
  if (crop) {
    v.H = cfg.crop_h;
    v.W = cfg.crop_w;
  }
  v.check_invariants();
  return v;
}

namespace {

// rejection-sample initial centers so cumulative solid-mask overlap with the
// union of already placed sprites stays within the threshold
std::vector<std::array<double, 2>> place_sprites(const std::vector<Sprite>& sprites,
                                                 const SceneConfig& cfg, RandomStream& rng) {
  const int H = cfg.frame_h, W = cfg.frame_w;
  std::vector<unsigned char> occupied((size_t)H * W, 0);
  std::vector<std::array<double, 2>> centers;
  for (const Sprite& sp : sprites) {
    if (sp.h >= H || sp.w >= W) throw std::runtime_error("datagen: sprite larger than frame");
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_place_attempts && !placed; ++attempt) {
      const double cy = rng.uniform(sp.h / 2.0, H - sp.h / 2.0);
      const double cx = rng.uniform(sp.w / 2.0, W - sp.w / 2.0);
      const int oy = (int)std::lround(cy - sp.h / 2.0);
      const int ox = (int)std::lround(cx - sp.w / 2.0);
      int overlap = 0;
      for (int i = 0; i < sp.h; ++i)
        for (int j = 0; j < sp.w; ++j) {
          if (sp.alpha[(size_t)i * sp.w + j] <= kMaskThreshold) continue;
          const int y = oy + i, x = ox + j;
          if (y >= 0 && y < H && x >= 0 && x < W && occupied[(size_t)y * W + x]) ++overlap;
        }
      if (overlap <= cfg.overlap_threshold) {
        centers.push_back({cy, cx});
        for (int i = 0; i < sp.h; ++i)
          for (int j = 0; j < sp.w; ++j) {
            if (sp.alpha[(size_t)i * sp.w + j] <= kMaskThreshold) continue;
            const int y = oy + i, x = ox + j;
            if (y >= 0 && y < H && x >= 0 && x < W) occupied[(size_t)y * W + x] = 1;
          }
        placed = true;
      }
    }
    if (!placed)
      throw std::runtime_error("datagen: placement infeasible after " +
                               std::to_string(cfg.max_place_attempts) + " attempts");
  }
  return centers;
}

std::vector<SceneObject> assemble(std::vector<Sprite> sprites, const SceneConfig& cfg,
                                  RandomStream& rng) {
  std::vector<std::array<double, 2>> centers = place_sprites(sprites, cfg, rng);
  std::vector<SceneObject> objects;
  for (size_t k = 0; k < sprites.size(); ++k) {
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    objects.push_back(SceneObject{std::move(sprites[k]), centers[k][0], centers[k][1],
                                  cfg.speed * std::sin(theta), cfg.speed * std::cos(theta)});
  }
  return objects;
}

}  // namespace

VideoSample gen_scattered_mnist(const SceneConfig& cfg, const DigitBank& bank,
                                const std::string& split, RandomStream rng) {
  const auto& pool = bank.split(split);
  if (pool.empty()) throw std::runtime_error("datagen: empty digit pool for split " + split);
  const int n = cfg.n_min + (int)rng.uniform_int(cfg.n_max - cfg.n_min + 1);
  std::vector<Sprite> sprites;
  for (int k = 0; k < n; ++k) {
    Sprite sp;
    sp.h = bank.h;
    sp.w = bank.w;
    sp.color = {255, 255, 255};
    sp.alpha = pool[rng.uniform_int(pool.size())];
    sprites.push_back(std::move(sp));
  }
  auto objects = assemble(std::move(sprites), cfg, rng);
  return render_scene(objects, cfg, &rng);
}

VideoSample gen_scattered_shapes(const SceneConfig& cfg, const ShapeStencils& stencils,
                                 RandomStream rng) {
  const int n = cfg.n_min + (int)rng.uniform_int(cfg.n_max - cfg.n_min + 1);
  std::vector<Sprite> sprites;
  for (int k = 0; k < n; ++k) {
    const auto& name = kShapeNames[rng.uniform_int(kShapeNames.size())];
    const auto& color = kShapePalette[rng.uniform_int(kShapePalette.size())];
    auto size = [&]() {
      const double s = cfg.sprite_size_std > 0
                           ? rng.normal(cfg.sprite_size, cfg.sprite_size_std)
                           : cfg.sprite_size;
      return std::max(4, (int)std::lround(s));
    };
    sprites.push_back(rasterize_stencil(stencils.at(name), size(), size(), color));
  }
  auto objects = assemble(std::move(sprites), cfg, rng);
  return render_scene(objects, cfg, &rng);
}

// --- dataset on disk ---------------------------------------------------------

DatasetWriter::DatasetWriter(const std::string& dir, const std::string& dataset_name,
                             const SceneConfig& cfg, uint64_t seed)
    : dir_(dir), name_(dataset_name), cfg_(cfg), seed_(seed) {
  std::filesystem::create_directories(dir);
  frames_out_.open(dir + "/frames.bin", std::ios::binary);
  ann_out_.open(dir + "/annotations.jsonl");
  if (!frames_out_ || !ann_out_) throw std::runtime_error("dataset: cannot write to " + dir);
  out_h_ = cfg.crop_h > 0 ? cfg.crop_h : cfg.frame_h;
  out_w_ = cfg.crop_w > 0 ? cfg.crop_w : cfg.frame_w;
}

void DatasetWriter::append(const VideoSample& v, int n_objects) {
  if (v.H != out_h_ || v.W != out_w_ || v.T != cfg_.T)
    throw std::runtime_error("dataset: video dims do not match the manifest");
  frames_out_.write(reinterpret_cast<const char*>(v.frames.data()), v.frames.size());
  for (const auto& a : v.annotations) {
    nlohmann::json j;
    j["video_id"] = n_;
    j["track_id"] = a.track_id;
    j["t"] = a.t;
    j["y"] = a.box.y;
    j["x"] = a.box.x;
    j["h"] = a.box.h;
    j["w"] = a.box.w;
    ann_out_ << j.dump() << "\n";
  }
  index_.emplace_back(offset_, n_objects);
  offset_ += (int64_t)v.frames.size();
  ++n_;
}

void DatasetWriter::finish() {
  frames_out_.close();
  ann_out_.close();

  nlohmann::json sidecar;
  sidecar["dtype"] = "uint8";
  sidecar["byte_order"] = "little-endian";
  sidecar["layout"] = "row-major";
  sidecar["shape_per_video"] = {cfg_.T, out_h_, out_w_, 3};
  std::ofstream(dir_ + "/frames.json") << sidecar.dump(2) << "\n";

  nlohmann::json manifest;
  manifest["dataset"] = name_;
  manifest["seed"] = seed_;
  manifest["t"] = cfg_.T;
  manifest["frame_h"] = out_h_;
  manifest["frame_w"] = out_w_;
  manifest["n_videos"] = n_;
  nlohmann::json videos = nlohmann::json::array();
  for (int i = 0; i < n_; ++i) {
    nlohmann::json v;
    v["id"] = i;
    v["offset_bytes"] = index_[i].first;
    v["n_objects"] = index_[i].second;
    videos.push_back(v);
  }
  manifest["videos"] = videos;
  std::ofstream(dir_ + "/manifest.json") << manifest.dump(2) << "\n";
}

VideoDataset::VideoDataset(const std::string& dir) : dir_(dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("dataset: cannot open manifest in " + dir);
  nlohmann::json manifest;
  in >> manifest;
  n_videos_ = manifest["n_videos"].get<int>();
  T_ = manifest["t"].get<int>();
  H_ = manifest["frame_h"].get<int>();
  W_ = manifest["frame_w"].get<int>();
  for (const auto& v : manifest["videos"]) {
    offsets_.push_back(v["offset_bytes"].get<int64_t>());
    if (v.contains("n_objects")) max_objects_ = std::max(max_objects_, v["n_objects"].get<int>());
  }

  std::ifstream ann(dir + "/annotations.jsonl");
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    VideoSample::Annotation a;
    a.track_id = j["track_id"].get<int64_t>();
    a.t = j["t"].get<int>();
    a.box = Box{j["y"].get<double>(), j["x"].get<double>(), j["h"].get<double>(),
                j["w"].get<double>()};
    annotations_[j["video_id"].get<int>()].push_back(a);
  }
}

VideoSample VideoDataset::load(int index) const {
  VideoSample v;
  v.T = T_;
  v.H = H_;
  v.W = W_;
  v.frames.resize((size_t)T_ * H_ * W_ * 3);
  std::ifstream in(dir_ + "/frames.bin", std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open frames.bin");
  in.seekg(offsets_[index]);
  in.read(reinterpret_cast<char*>(v.frames.data()), v.frames.size());
  if (!in) throw std::runtime_error("dataset: truncated frames.bin");
  auto it = annotations_.find(index);
  if (it != annotations_.end()) v.annotations = it->second;
  return v;
}

FrameSource VideoDataset::frames(int index) const { return to_frame_source(load(index)); }

FrameSource to_frame_source(const VideoSample& v) {
  FrameSource src;
  src.H = v.H;
  src.W = v.W;
  for (int t = 0; t < v.T; ++t) {
    Tensor f({v.H, v.W, 3});
    const unsigned char* p = v.frame(t);
    for (int64_t i = 0; i < f.numel(); ++i) f.data[i] = p[i] / 255.0;
    src.frames.push_back(std::move(f));
  }
  return src;
}

}  // namespace silot
