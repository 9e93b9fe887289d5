#include "silot/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace silot {

namespace {

struct Field {
  std::string key;
  enum Kind { D, I, I64 } kind;
  void* ptr;
};

std::vector<Field> fields(ModelConfig& c) {
  return {
      {"K", Field::I, &c.K},
      {"A", Field::I, &c.A},
      {"hidden_dim", Field::I, &c.hidden_dim},
      {"a_h", Field::D, &c.anchor_h},
      {"a_w", Field::D, &c.anchor_w},
      {"c_h", Field::I, &c.cell_h},
      {"c_w", Field::I, &c.cell_w},
      {"b_min", Field::D, &c.b_min},
      {"b_max", Field::D, &c.b_max},
      {"sigma", Field::D, &c.sigma},
      {"lambda", Field::D, &c.lambda},
      {"H_obj", Field::I, &c.obj_h},
      {"W_obj", Field::I, &c.obj_w},
      {"mu_beta", Field::D, &c.mu_beta},
      {"sigma_beta", Field::D, &c.sigma_beta},
      {"mu_xi", Field::D, &c.mu_xi},
      {"sigma_xi", Field::D, &c.sigma_xi},
      {"tau_pres", Field::D, &c.tau_pres},
      {"glimpse_offset_scale", Field::D, &c.glimpse_offset_scale},
      {"backbone_filters", Field::I, &c.backbone_filters},
      {"fuse_hidden", Field::I, &c.fuse_hidden},
      {"fuse_out", Field::I, &c.fuse_out},
      {"head_hidden", Field::I, &c.head_hidden},
      {"attn_hidden", Field::I, &c.attn_hidden},
      {"attn_out", Field::I, &c.attn_out},
      {"obj_hidden1", Field::I, &c.obj_hidden1},
      {"obj_hidden2", Field::I, &c.obj_hidden2},
      {"obj_out", Field::I, &c.obj_out},
      {"robj_hidden1", Field::I, &c.robj_hidden1},
      {"robj_hidden2", Field::I, &c.robj_hidden2},
      {"prior_disc_hw_mu", Field::D, &c.prior.disc_hw_mu},
      {"prior_disc_hw_sigma", Field::D, &c.prior.disc_hw_sigma},
      {"prior_disc_yx_mu", Field::D, &c.prior.disc_yx_mu},
      {"prior_disc_yx_sigma", Field::D, &c.prior.disc_yx_sigma},
      {"prior_disc_what_mu", Field::D, &c.prior.disc_what_mu},
      {"prior_disc_what_sigma", Field::D, &c.prior.disc_what_sigma},
      {"prior_disc_depth_mu", Field::D, &c.prior.disc_depth_mu},
      {"prior_disc_depth_sigma", Field::D, &c.prior.disc_depth_sigma},
      {"prior_prop_hw_mu", Field::D, &c.prior.prop_hw_mu},
      {"prior_prop_hw_sigma", Field::D, &c.prior.prop_hw_sigma},
      {"prior_prop_yx_mu", Field::D, &c.prior.prop_yx_mu},
      {"prior_prop_yx_sigma", Field::D, &c.prior.prop_yx_sigma},
      {"prior_prop_what_mu", Field::D, &c.prior.prop_what_mu},
      {"prior_prop_what_sigma", Field::D, &c.prior.prop_what_sigma},
      {"prior_prop_depth_mu", Field::D, &c.prior.prop_depth_mu},
      {"prior_prop_depth_sigma", Field::D, &c.prior.prop_depth_sigma},
      {"count_start", Field::D, &c.prior.count_start},
      {"count_end", Field::D, &c.prior.count_end},
      {"count_anneal_steps", Field::I64, &c.prior.count_anneal_steps},
      {"count_weight", Field::D, &c.prior.count_weight},
      {"learned_prior_mix", Field::D, &c.prior.learned_prior_mix},
      {"learning_rate", Field::D, &c.train.learning_rate},
      {"batch_size", Field::I, &c.train.batch_size},
      {"max_grad_norm", Field::D, &c.train.max_grad_norm},
      {"N_curric", Field::I64, &c.train.n_curric},
      {"patience", Field::I64, &c.train.patience},
      {"lr_divisor", Field::D, &c.train.lr_divisor},
      {"max_early_stops", Field::I, &c.train.max_early_stops},
      {"warmup_steps", Field::I64, &c.train.warmup_steps},
      {"p_dd", Field::D, &c.train.p_dd},
      {"eval_interval", Field::I64, &c.train.eval_interval},
      {"n_val_videos", Field::I, &c.train.n_val_videos},
  };
}

double field_as_double(const Field& f) {
  switch (f.kind) {
    case Field::D: return *static_cast<double*>(f.ptr);
    case Field::I: return *static_cast<int*>(f.ptr);
    default: return static_cast<double>(*static_cast<int64_t*>(f.ptr));
  }
}

void field_set(const Field& f, double v) {
  switch (f.kind) {
    case Field::D: *static_cast<double*>(f.ptr) = v; break;
    case Field::I: *static_cast<int*>(f.ptr) = static_cast<int>(v); break;
    default: *static_cast<int64_t*>(f.ptr) = static_cast<int64_t>(v);
  }
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

void ModelConfig::validate() const {
  if (K < 1) throw std::runtime_error("config: K must be >= 1");
  if (A < 1) throw std::runtime_error("config: A must be >= 1");
  if (!(b_min < b_max)) throw std::runtime_error("config: b_min must be < b_max");
  if (!(lambda > 0)) throw std::runtime_error("config: lambda must be > 0");
  if (!(sigma > 0)) throw std::runtime_error("config: sigma must be > 0");
  if (!(tau_pres > 0)) throw std::runtime_error("config: tau_pres must be > 0");
  if (!(anchor_h > 0 && anchor_w > 0)) throw std::runtime_error("config: anchor must be > 0");
  if (cell_h < 1 || cell_w < 1) throw std::runtime_error("config: cell size must be >= 1");
  if (train.batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
  if (!(train.p_dd >= 0 && train.p_dd <= 1)) throw std::runtime_error("config: p_dd in [0,1]");
  if (!(prior.learned_prior_mix >= 0 && prior.learned_prior_mix <= 1))
    throw std::runtime_error("config: learned_prior_mix in [0,1]");
}

void apply_config_line(ModelConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields(cfg)) {
    if (f.key == key) {
      field_set(f, std::stod(value));
      return;
    }
  }
  throw std::runtime_error("config: unknown key '" + key + "'");
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  ModelConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key = value");
    apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

std::string config_to_text(const ModelConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  for (const Field& f : fields(const_cast<ModelConfig&>(cfg))) {
    if (f.kind == Field::D)
      out << f.key << " = " << field_as_double(f) << "\n";
    else
      out << f.key << " = " << static_cast<int64_t>(field_as_double(f)) << "\n";
  }
  return out.str();
}

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  for (const Field& f : fields(const_cast<ModelConfig&>(cfg))) {
    if (f.kind == Field::D)
      j[f.key] = field_as_double(f);
    else
      j[f.key] = static_cast<int64_t>(field_as_double(f));
  }
  return j.dump(2);
}

ModelConfig config_from_json(const std::string& json_text) {
  ModelConfig cfg;
  nlohmann::json j = nlohmann::json::parse(json_text);
  for (auto it = j.begin(); it != j.end(); ++it)
    apply_config_line(cfg, it.key(), it.value().dump());
  cfg.validate();
  return cfg;
}

}  // namespace silot
