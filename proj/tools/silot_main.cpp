#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "silot/trainer.hpp"
#include "silot/viz.hpp"

using namespace silot;

namespace {

// machine-readable error envelope on stderr, nonzero exit
int fail(const std::string& where, const std::string& what) {
  nlohmann::json j;
  j["error"] = what;
  j["command"] = where;
  std::cerr << j.dump() << "\n";
  return 1;
}

bool parse_pair(const std::string& s, char sep, int* a, int* b) {
  const size_t p = s.find(sep);
  if (p == std::string::npos) return false;
  try {
    *a = std::stoi(s.substr(0, p));
    *b = std::stoi(s.substr(p + 1));
  } catch (...) {
    return false;
  }
  return true;
}

int cmd_generate_data(const std::string& dataset, int n_videos, const std::string& n_objects,
                      const std::string& size, const std::string& crop, uint64_t seed,
                      const std::string& out, int T, const std::string& mnist_idx,
                      const std::string& split) {
  SceneConfig cfg;
  cfg.T = T;
  if (!parse_pair(n_objects, ':', &cfg.n_min, &cfg.n_max) || cfg.n_min < 1 ||
      cfg.n_max < cfg.n_min)
    return fail("generate-data", "--n-objects must be LO:HI with 1 <= LO <= HI");
  if (!parse_pair(size, 'x', &cfg.frame_h, &cfg.frame_w))
    return fail("generate-data", "--size must be HxW");
  if (!crop.empty() && !parse_pair(crop, 'x', &cfg.crop_h, &cfg.crop_w))
    return fail("generate-data", "--crop must be HxW");

  try {
    RandomStream root(seed);
    if (dataset == "shapes") {
      cfg.speed = 5.0;
      cfg.sprite_size_std = 1.4;
      ShapeStencils stencils = load_stencils();
      DatasetWriter writer(out, "shapes", cfg, seed);
      for (int i = 0; i < n_videos; ++i) {
        VideoSample v = gen_scattered_shapes(cfg, stencils, root.child(i));
        std::set<int64_t> ids;
        for (const auto& a : v.annotations) ids.insert(a.track_id);
        writer.append(v, (int)ids.size());
      }
      writer.finish();
    } else if (dataset == "mnist") {
      cfg.speed = 2.0;
      if (mnist_idx.empty())
        return fail("generate-data", "--mnist-idx IMAGES_FILE is required for --dataset mnist");
      DigitBank bank = load_digit_bank_idx(mnist_idx, (int)cfg.sprite_size);
      DatasetWriter writer(out, "mnist", cfg, seed);
      for (int i = 0; i < n_videos; ++i) {
        VideoSample v = gen_scattered_mnist(cfg, bank, split, root.child(i));
        std::set<int64_t> ids;
        for (const auto& a : v.annotations) ids.insert(a.track_id);
        writer.append(v, (int)ids.size());
      }
      writer.finish();
    } else {
      return fail("generate-data", "unknown dataset '" + dataset + "'");
    }
  } catch (const std::exception& e) {
    return fail("generate-data", e.what());
  }
  std::printf("wrote %d %s videos to %s\n", n_videos, dataset.c_str(), out.c_str());
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& val_dir,
              const std::string& config_path, int64_t steps, uint64_t seed,
              const std::string& val_metric, const std::string& out,
              const std::string& resume) {
  try {
    ModelConfig cfg = config_path.empty() ? ModelConfig{} : load_config(config_path);
    std::unique_ptr<SilotModel> model;
    Adam opt;
    int64_t start_step = 0;
    if (!resume.empty()) {
      model = load_checkpoint(resume, &start_step, &opt, seed);
    } else {
      model = std::make_unique<SilotModel>(cfg, seed);
    }
    VideoDataset train_data(data_dir);
    const std::string warn = check_capacity(model->config(), train_data.max_objects());
    if (!warn.empty()) std::fprintf(stderr, "[advisory] %s\n", warn.c_str());
    std::unique_ptr<VideoDataset> val_data;
    if (!val_dir.empty()) val_data = std::make_unique<VideoDataset>(val_dir);

    TrainOptions opts;
    opts.max_steps = steps;
    opts.seed = seed;
    opts.out_dir = out;
    opts.val_metric = val_metric;
    TrainResult res = train(*model, train_data, val_data.get(), opts, start_step,
                            resume.empty() ? nullptr : &opt);
    if (res.aborted_nan) return fail("train", "diverged (non-finite ELBO); last checkpoint kept");
    std::printf("trained %lld steps; best val %s %.4f at step %lld; checkpoint %s\n",
                (long long)res.steps_run, val_metric.c_str(), res.best_val,
                (long long)res.best_step, res.best_checkpoint.c_str());
  } catch (const std::exception& e) {
    return fail("train", e.what());
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& mode,
             const std::string& model_kind, bool buckets, const std::string& out_json,
             const std::string& out_csv, double pres_thresh, int max_videos) {
  try {
    VideoDataset data(data_dir);
    const int n = max_videos > 0 ? std::min(max_videos, data.size()) : data.size();

    // per-video predictions and truths, with object-count bucket keys
    std::vector<TrackSet> pred(n), gt(n);
    std::vector<int> n_objects(n);
    int t0 = 0, t1 = -1;

    if (model_kind == "conncomp") {
      for (int i = 0; i < n; ++i) {
        VideoSample v = data.load(i);
        pred[i] = conncomp_track(v);
        gt[i] = gt_tracks(v);
        std::set<int64_t> ids;
        for (const auto& a : v.annotations) ids.insert(a.track_id);
        n_objects[i] = (int)ids.size();
      }
    } else {
      std::unique_ptr<SilotModel> model = load_checkpoint(checkpoint);
      const bool prior = mode == "prior-rollout";
      RandomStream rng(123);
      for (int i = 0; i < n; ++i) {
        VideoSample v = data.load(i);
        FrameSource src = to_frame_source(v);
        RolloutTrace trace = run_video(*model, src,
                                       prior ? VideoMode::PriorRollout : VideoMode::Posterior,
                                       RunMode::Mean, rng.child(i));
        if (prior)
          for (int t = 3; t < src.T(); ++t)
            if (src.reads[t] != 0) throw std::runtime_error("prior rollout read a future frame");
        pred[i] = extract_tracks(trace, pres_thresh);
        gt[i] = gt_tracks(v);
        std::set<int64_t> ids;
        for (const auto& a : v.annotations) ids.insert(a.track_id);
        n_objects[i] = (int)ids.size();
      }
      if (prior) {
        t0 = 3;
        t1 = data.frames_per_video();
      }
    }

    std::map<std::string, TrackingReport> report;
    report["all"] = evaluate_tracks(pred, gt, t0, t1);
    if (buckets) {
      std::map<int, std::vector<int>> by_count;
      for (int i = 0; i < n; ++i) by_count[n_objects[i]].push_back(i);
      for (const auto& [count, idx] : by_count) {
        std::vector<TrackSet> p, g;
        for (int i : idx) {
          p.push_back(pred[i]);
          g.push_back(gt[i]);
        }
        report["n=" + std::to_string(count)] = evaluate_tracks(p, g, t0, t1);
      }
    }

    const std::string json = report_to_json(report);
    if (out_json.empty()) {
      std::cout << json << "\n";
    } else {
      std::ofstream(out_json) << json << "\n";
      std::printf("wrote %s\n", out_json.c_str());
    }
    if (!out_csv.empty()) {
      std::ofstream(out_csv) << report_to_csv(report);
      std::printf("wrote %s\n", out_csv.c_str());
    }
  } catch (const std::exception& e) {
    return fail("eval", e.what());
  }
  return 0;
}

int cmd_viz(const std::string& checkpoint, const std::string& data_dir, int video_id,
            const std::string& mode, const std::string& out_dir, double pres_thresh) {
  try {
    std::unique_ptr<SilotModel> model = load_checkpoint(checkpoint);
    VideoDataset data(data_dir);
    if (video_id < 0 || video_id >= data.size())
      return fail("viz", "--video out of range (dataset has " + std::to_string(data.size()) +
                             " videos)");
    VideoSample v = data.load(video_id);
    FrameSource src = to_frame_source(v);
    const bool prior = mode == "prior-rollout";
    RolloutTrace trace = run_video(*model, src,
                                   prior ? VideoMode::PriorRollout : VideoMode::Posterior,
                                   RunMode::Mean, RandomStream(7));
    RgbImage panel = render_panel(v, trace, *model, pres_thresh);
    std::filesystem::create_directories(out_dir);
    const std::string stem =
        out_dir + "/video_" + std::to_string(video_id) + (prior ? "_prior" : "");
    write_png(stem + ".png", panel.rgb, panel.h, panel.w);

    // per-frame trace: boxes, ids, pres (dashed boxes in the panel are the
    // discovered = true entries)
    nlohmann::json frames = nlohmann::json::array();
    for (int t = 0; t < (int)trace.steps.size(); ++t) {
      const auto& st = trace.steps[t];
      nlohmann::json objs = nlohmann::json::array();
      for (int k = 0; k < st.selected.size(); ++k) {
        if (st.selected.pres(k, 0) <= pres_thresh || st.track_ids[k] < 0) continue;
        nlohmann::json o;
        o["id"] = st.track_ids[k];
        o["pres"] = st.selected.pres(k, 0);
        o["depth"] = st.selected.depth(k, 0);
        o["y"] = st.selected.where(k, 0);
        o["x"] = st.selected.where(k, 1);
        o["h"] = st.selected.where(k, 2);
        o["w"] = st.selected.where(k, 3);
        o["discovered"] = st.provenance[k].kind == Provenance::Discovered;
        objs.push_back(o);
      }
      nlohmann::json f;
      f["t"] = t;
      f["discovery_on"] = st.discovery_on;
      f["objects"] = objs;
      frames.push_back(f);
    }
    std::ofstream(stem + "_trace.json") << frames.dump(2) << "\n";
    std::printf("wrote %s.png and %s_trace.json\n", stem.c_str(), stem.c_str());
  } catch (const std::exception& e) {
    return fail("viz", e.what());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"silot: unsupervised object tracking"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "write a synthetic video dataset");
  std::string dataset = "shapes", n_objects = "1:6", size = "48x48", crop, out_dir = "data/out";
  std::string mnist_idx, split = "train";
  int n_videos = 100, T = 8;
  uint64_t seed = 0;
  gen->add_option("--dataset", dataset, "mnist or shapes")->required();
  gen->add_option("--n-videos", n_videos, "number of videos");
  gen->add_option("--n-objects", n_objects, "object count range LO:HI");
  gen->add_option("--size", size, "frame size HxW");
  gen->add_option("--crop", crop, "random crop HxW");
  gen->add_option("--t", T, "frames per video");
  gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--mnist-idx", mnist_idx, "IDX image file with source digits");
  gen->add_option("--split", split, "digit-bank split: train|val|test");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string data_dir, val_dir, config_path, val_metric = "mota", run_dir = "runs/run",
              resume;
  int64_t steps = 20000;
  uint64_t tr_seed = 0;
  tr->add_option("--data", data_dir, "training dataset directory")->required();
  tr->add_option("--val-data", val_dir, "validation dataset directory");
  tr->add_option("--config", config_path, "config file (key = value)");
  tr->add_option("--steps", steps, "max update steps");
  tr->add_option("--seed", tr_seed, "rng seed");
  tr->add_option("--val-metric", val_metric, "mota or elbo");
  tr->add_option("--out", run_dir, "run directory for checkpoints and logs");
  tr->add_option("--resume", resume, "checkpoint to resume from");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a model or the ConnComp baseline");
  std::string checkpoint, ev_data, ev_mode = "posterior", model_kind = "silot", out_json,
              out_csv;
  double pres_thresh = 0.5;
  bool buckets = false;
  int max_videos = 0;
  ev->add_option("--checkpoint", checkpoint, "model checkpoint (silot only)");
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--mode", ev_mode, "posterior or prior-rollout");
  ev->add_option("--model", model_kind, "silot or conncomp");
  ev->add_flag("--buckets", buckets, "report per object-count bucket");
  ev->add_option("--out", out_json, "report JSON path (stdout when omitted)");
  ev->add_option("--csv", out_csv, "also export CSV");
  ev->add_option("--pres-thresh", pres_thresh, "detection threshold on pres");
  ev->add_option("--max-videos", max_videos, "evaluate only the first N videos");

  // viz
  auto* vz = app.add_subcommand("viz", "render a tracking panel for one video");
  std::string vz_ckpt, vz_data, vz_mode = "posterior", vz_out = "viz";
  int video_id = 0;
  double vz_thresh = 0.5;
  vz->add_option("--checkpoint", vz_ckpt, "model checkpoint")->required();
  vz->add_option("--data", vz_data, "dataset directory")->required();
  vz->add_option("--video", video_id, "video index");
  vz->add_option("--mode", vz_mode, "posterior or prior-rollout");
  vz->add_option("--out", vz_out, "output directory");
  vz->add_option("--pres-thresh", vz_thresh, "detection threshold on pres");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed())
    return cmd_generate_data(dataset, n_videos, n_objects, size, crop, seed, out_dir, T,
                             mnist_idx, split);
  if (tr->parsed())
    return cmd_train(data_dir, val_dir, config_path, steps, tr_seed, val_metric, run_dir, resume);
  if (ev->parsed())
    return cmd_eval(checkpoint, ev_data, ev_mode, model_kind, buckets, out_json, out_csv,
                    pres_thresh, max_videos);
  if (vz->parsed()) return cmd_viz(vz_ckpt, vz_data, video_id, vz_mode, vz_out, vz_thresh);
  return 1;
}
