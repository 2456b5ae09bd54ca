#include "dgm/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dgm {

namespace {
std::string join_problems(const std::vector<std::string>& problems) {
  std::string msg = "invalid configuration:";
  for (const auto& p : problems) msg += "\n  - " + p;
  return msg;
}
}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(join_problems(problems)), problems_(std::move(problems)) {}

}  // namespace dgm

namespace dgm::config {

using json = nlohmann::json;

std::string preprocess_name(Preprocess p) {
  switch (p) {
    case Preprocess::None: return "none";
    case Preprocess::Scale01: return "scale01";
    case Preprocess::Whiten: return "whiten";
  }
  return "?";
}

data::ManifoldSpec DatasetConfig::manifold() const {
  data::ManifoldSpec spec;
  if (kind == "circle") {
    data::Circle c;
    c.radius = radius;
    if (density == "von_mises") c.density = data::VonMisesDensity{kappa, loc};
    spec.kind = c;
  } else if (kind == "curve") {
    spec.kind = data::Curve1D{};
  } else if (kind == "sphere") {
    spec.kind = data::Sphere{};
  } else if (kind == "affine") {
    spec.kind = data::AffineSubspace{intrinsic_dim, ambient_dim, basis_seed};
  } else {
    throw InvalidArgument("dataset kind '" + kind + "' is not a manifold");
  }
  return spec;
}

namespace {

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

void ExperimentConfig::validate() const {
  std::vector<std::string> p;
  using denoise::Regime;
  if (model != "vae" && model != "flow") p.push_back("model: expected 'vae' or 'flow', got '" + model + "'");

  const std::string rname = denoise::regime_name(regime);
  switch (regime) {
    case Regime::Baseline:
      if (sigma) p.push_back("sigma: must be unset for regime 'baseline' (noise schedule None)");
      if (C) p.push_back("C: must be unset for regime 'baseline'");
      break;
    case Regime::ND:
    case Regime::TD:
      if (!sigma)
        p.push_back("regime/sigma: regime '" + rname + "' requires a Fixed noise schedule but sigma is unset (schedule None)");
      else if (!(std::isfinite(*sigma) && *sigma >= 0.0))
        p.push_back("sigma: must be finite and >= 0");
      if (C) p.push_back("C: must be unset for regime '" + rname + "'");
      break;
    case Regime::CD:
      if (!C)
        p.push_back("regime/C: regime 'cd' requires a Uniform noise schedule but C is unset (schedule None)");
      else if (!positive(*C))
        p.push_back("C: must be finite and > 0");
      if (sigma) p.push_back("sigma: must be unset for regime 'cd'");
      break;
  }

  const auto& d = dataset;
  static const std::set<std::string> kinds{"circle", "curve", "sphere", "affine", "idx"};
  if (!kinds.count(d.kind)) p.push_back("dataset.kind: expected circle, curve, sphere, affine or idx, got '" + d.kind + "'");
  if (d.kind == "circle") {
    if (!positive(d.radius)) p.push_back("dataset.radius: must be > 0");
    if (d.density != "uniform" && d.density != "von_mises")
      p.push_back("dataset.density: expected 'uniform' or 'von_mises', got '" + d.density + "'");
    if (d.density == "von_mises" && !positive(d.kappa)) p.push_back("dataset.kappa: must be > 0");
    if (!std::isfinite(d.loc)) p.push_back("dataset.loc: must be finite");
  }
  if (d.kind == "affine") {
    if (d.intrinsic_dim < 1) p.push_back("dataset.intrinsic_dim: must be >= 1");
    if (d.intrinsic_dim >= d.ambient_dim) p.push_back("dataset.intrinsic_dim: must be < dataset.ambient_dim");
  }
  if (d.kind == "idx" && d.path.empty()) p.push_back("dataset.path: required for idx datasets");
  if (d.n_train < 2) p.push_back("dataset.n_train: must be >= 2");
  if (!(d.val_fraction > 0.0 && d.val_fraction < 1.0)) p.push_back("dataset.val_fraction: must lie in (0, 1)");
  if (d.is_manifold() && kinds.count(d.kind) && model == "flow") {
    const std::size_t dim = d.kind == "affine" ? d.ambient_dim : (d.kind == "sphere" ? 3 : 2);
    if (dim < 2) p.push_back("dataset.ambient_dim: flows need at least 2 dimensions");
  }

  if (epochs < 1) p.push_back("epochs: must be >= 1");
  if (!positive(learning_rate)) p.push_back("learning_rate: must be > 0");
  if (batch_size < 1) p.push_back("batch_size: must be >= 1");
  if (!positive(clip_norm)) p.push_back("clip_norm: must be > 0");
  if (patience < 1) p.push_back("patience: must be >= 1");
  if (latent_dim < 1) p.push_back("latent_dim: must be >= 1");
  if (vae_hidden < 1) p.push_back("vae_hidden: must be >= 1");
  if (spline.bins < 2) p.push_back("spline.bins: must be >= 2");
  if (spline.groups < 1) p.push_back("spline.groups: must be >= 1");
  if (spline.blocks < 1) p.push_back("spline.blocks: must be >= 1");
  if (spline.hidden < 1) p.push_back("spline.hidden: must be >= 1");
  if (!positive(spline.tail_bound)) p.push_back("spline.tail_bound: must be > 0");
  if (k_iw < 1) p.push_back("k_iw: must be >= 1");
  if (output_dir.empty()) p.push_back("output_dir: must be non-empty");
  if (n_eval < 2) p.push_back("n_eval: must be >= 2");
  if (n_projections < 1) p.push_back("n_projections: must be >= 1");
  if (sweep.grid.empty()) p.push_back("sweep.grid: must be non-empty");
  for (double v : sweep.grid)
    if (!positive(v)) {
      p.push_back("sweep.grid: values must be finite and > 0");
      break;
    }
  if (sweep.n_seeds < 1) p.push_back("sweep.n_seeds: must be >= 1");
  if (sweep.workers < 1) p.push_back("sweep.workers: must be >= 1");

  if (!p.empty()) throw ConfigError(std::move(p));
}

denoise::NoiseSchedule ExperimentConfig::schedule() const {
  switch (regime) {
    case denoise::Regime::Baseline: return denoise::NoiseSchedule::none();
    case denoise::Regime::ND:
    case denoise::Regime::TD: return sigma ? denoise::NoiseSchedule::fixed(*sigma) : denoise::NoiseSchedule::none();
    case denoise::Regime::CD: return C ? denoise::NoiseSchedule::uniform(*C) : denoise::NoiseSchedule::none();
  }
  return {};
}

denoise::TrainConfig ExperimentConfig::train_config() const {
  denoise::TrainConfig t;
  t.epochs = epochs;
  t.learning_rate = learning_rate;
  t.batch_size = batch_size;
  t.clip_norm = clip_norm;
  t.patience = patience;
  t.early_stopping = model == "flow";
  return t;
}

ExperimentConfig default_config(const std::string& model) {
  if (model != "vae" && model != "flow") throw ConfigError({"model: expected 'vae' or 'flow', got '" + model + "'"});
  ExperimentConfig c;
  c.model = model;
  c.learning_rate = model == "vae" ? 1e-3 : 5e-4;
  return c;
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_object(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  return json{
      {"model", c.model},
      {"regime", denoise::regime_name(c.regime)},
      {"sigma", optional_number(c.sigma)},
      {"C", optional_number(c.C)},
      {"dataset",
       {{"kind", d.kind},
        {"radius", d.radius},
        {"density", d.density},
        {"kappa", d.kappa},
        {"loc", d.loc},
        {"intrinsic_dim", d.intrinsic_dim},
        {"ambient_dim", d.ambient_dim},
        {"basis_seed", d.basis_seed},
        {"path", d.path},
        {"test_path", d.test_path},
        {"n_train", d.n_train},
        {"val_fraction", d.val_fraction},
        {"preprocess", preprocess_name(d.preprocess)}}},
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"clip_norm", c.clip_norm},
      {"patience", c.patience},
      {"latent_dim", c.latent_dim},
      {"vae_hidden", c.vae_hidden},
      {"spline",
       {{"bins", c.spline.bins},
        {"groups", c.spline.groups},
        {"blocks", c.spline.blocks},
        {"hidden", c.spline.hidden},
        {"tail_bound", c.spline.tail_bound}}},
      {"k_iw", c.k_iw},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"n_eval", c.n_eval},
      {"n_projections", c.n_projections},
      {"sweep", {{"grid", c.sweep.grid}, {"n_seeds", c.sweep.n_seeds}, {"workers", c.sweep.workers}}},
  };
}

// Reads keys out of one JSON object, recording type errors and leftovers.
class Reader {
 public:
  Reader(const json& obj, std::string prefix, std::vector<std::string>& problems)
      : obj_(obj), prefix_(std::move(prefix)), problems_(problems) {
    if (!obj_.is_object()) problems_.push_back(where("") + "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    const json* v = find(key);
    if (!v) return;
    try {
      if constexpr (std::is_unsigned_v<T>) {
        if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
          throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw std::invalid_argument("expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw std::invalid_argument("expected a string");
      }
      out = v->get<T>();
    } catch (const std::exception& e) {
      problems_.push_back(where(key) + e.what());
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    const json* v = find(key);
    if (!v) return;
    if (v->is_null()) {
      out.reset();
    } else if (v->is_number()) {
      out = v->get<double>();
    } else {
      problems_.push_back(where(key) + "expected a number or null");
    }
  }

  void get_grid(const char* key, std::vector<double>& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array()) {
      problems_.push_back(where(key) + "expected an array of numbers");
      return;
    }
    std::vector<double> grid;
    for (const auto& e : *v) {
      if (!e.is_number()) {
        problems_.push_back(where(key) + "expected an array of numbers");
        return;
      }
      grid.push_back(e.get<double>());
    }
    out = std::move(grid);
  }

  const json* object(const char* key) {
    const json* v = find(key);
    if (v && !v->is_object()) {
      problems_.push_back(where(key) + "expected an object");
      return nullptr;
    }
    return v;
  }

  void finish() {
    if (!obj_.is_object()) return;
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) problems_.push_back(where(it.key().c_str()) + "unknown key");
  }

  std::string where(const std::string& key) const {
    std::string path = prefix_.empty() ? key : (key.empty() ? prefix_ : prefix_ + "." + key);
    return path.empty() ? std::string("config: ") : path + ": ";
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    if (!obj_.is_object()) return nullptr;
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& obj_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

}  // namespace

std::string to_json(const ExperimentConfig& config, int indent) { return to_object(config).dump(indent); }

ExperimentConfig from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("config: malformed JSON: ") + e.what()});
  }
  std::vector<std::string> problems;
  std::string model = "flow";
  if (root.is_object() && root.contains("model")) {
    if (root["model"].is_string()) model = root["model"].get<std::string>();
  }
  ExperimentConfig c;
  try {
    c = default_config(model);
  } catch (const ConfigError&) {
    c = default_config("flow");
  }

  Reader r(root, "", problems);
  r.get("model", c.model);
  std::string regime = denoise::regime_name(c.regime);
  r.get("regime", regime);
  try {
    c.regime = denoise::parse_regime(regime);
  } catch (const InvalidArgument&) {
    problems.push_back("regime: expected baseline, nd, td or cd, got '" + regime + "'");
  }
  r.get_optional("sigma", c.sigma);
  r.get_optional("C", c.C);
  if (const json* d = r.object("dataset")) {
    Reader rd(*d, "dataset", problems);
    auto& ds = c.dataset;
    rd.get("kind", ds.kind);
    rd.get("radius", ds.radius);
    rd.get("density", ds.density);
    rd.get("kappa", ds.kappa);
    rd.get("loc", ds.loc);
    rd.get("intrinsic_dim", ds.intrinsic_dim);
    rd.get("ambient_dim", ds.ambient_dim);
    rd.get("basis_seed", ds.basis_seed);
    rd.get("path", ds.path);
    rd.get("test_path", ds.test_path);
    rd.get("n_train", ds.n_train);
    rd.get("val_fraction", ds.val_fraction);
    std::string pre = preprocess_name(ds.preprocess);
    rd.get("preprocess", pre);
    if (pre == "none") ds.preprocess = Preprocess::None;
    else if (pre == "scale01") ds.preprocess = Preprocess::Scale01;
    else if (pre == "whiten") ds.preprocess = Preprocess::Whiten;
    else problems.push_back("dataset.preprocess: expected none, scale01 or whiten, got '" + pre + "'");
    rd.finish();
  }
  r.get("epochs", c.epochs);
  r.get("learning_rate", c.learning_rate);
  r.get("batch_size", c.batch_size);
  r.get("clip_norm", c.clip_norm);
  r.get("patience", c.patience);
  r.get("latent_dim", c.latent_dim);
  r.get("vae_hidden", c.vae_hidden);
  if (const json* s = r.object("spline")) {
    Reader rs(*s, "spline", problems);
    rs.get("bins", c.spline.bins);
    rs.get("groups", c.spline.groups);
    rs.get("blocks", c.spline.blocks);
    rs.get("hidden", c.spline.hidden);
    rs.get("tail_bound", c.spline.tail_bound);
    rs.finish();
  }
  r.get("k_iw", c.k_iw);
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("n_eval", c.n_eval);
  r.get("n_projections", c.n_projections);
  if (const json* s = r.object("sweep")) {
    Reader rs(*s, "sweep", problems);
    rs.get_grid("grid", c.sweep.grid);
    rs.get("n_seeds", c.sweep.n_seeds);
    rs.get("workers", c.sweep.workers);
    rs.finish();
  }
  r.finish();

  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

ExperimentConfig load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({"config: cannot open '" + path.string() + "'"});
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Model build_model(const ExperimentConfig& config, std::size_t ambient_dim) {
  const bool conditional = config.regime == denoise::Regime::CD;
  const std::uint64_t seed = split_seed(config.seed, 0x40DE1);
  if (config.model == "vae") {
    vae::VaeOptions o;
    o.ambient_dim = ambient_dim;
    o.latent_dim = config.latent_dim;
    o.hidden = config.vae_hidden;
    o.conditional = conditional;
    return vae::GaussianVae::make(o, seed);
  }
  if (config.model == "flow") {
    flow::FlowOptions o;
    o.dim = ambient_dim;
    o.groups = config.spline.groups;
    o.blocks = config.spline.blocks;
    o.hidden = config.spline.hidden;
    o.bins = config.spline.bins;
    o.tail_bound = config.spline.tail_bound;
    o.conditional = conditional;
    return flow::Flow::make(o, seed);
  }
  throw ConfigError({"model: expected 'vae' or 'flow', got '" + config.model + "'"});
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dgm::config
