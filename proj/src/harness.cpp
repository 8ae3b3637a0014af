#include "oat/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "oat/image_io.hpp"
#include "oat/io.hpp"
#include "oat/lbp.hpp"
#include "oat/parallel.hpp"
#include "oat/rng.hpp"

namespace oat {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum : std::uint64_t {
  kSeedDataset = 0xA0,
  kSeedTestLax = 0xA1,
  kSeedTestChallenging = 0xA2,
  kSeedTrain = 0xA3,
  kSeedBenchmark = 0xA4,
  kSeedTestPhantom = 0xB0,
  kSeedTestRealize = 0xB1,
  kSeedTestNoise = 0xB2,
};

EnvironmentSpec make_env(std::string label, int n_detectors, double coverage,
                         double pos_pct, double vs_pct) {
  EnvironmentSpec spec;
  spec.label = std::move(label);
  spec.n_detectors = n_detectors;
  spec.coverage_deg = coverage;
  spec.position_uncertainty_pct = pos_pct;
  spec.vs_uncertainty_pct = vs_pct;
  spec.snr_lo_db = 40.0;
  spec.snr_hi_db = 60.0;
  return spec;
}

ReportRow make_reference_row(const std::string& env, const std::string& algo, double s,
                             double pc, double rm, double ps) {
  ReportRow row;
  row.environment = env;
  row.algorithm = algo;
  row.ssim.mean = s;
  row.pc.mean = pc;
  row.rmse.mean = rm;
  row.psnr.mean = ps;
  row.n_images = 500;
  return row;
}

MetricsReport reference_table(const std::string& kind) {
  MetricsReport ref;
  auto add = [&](const char* env, const char* algo, double s, double pc, double rm,
                 double ps) { ref.rows.push_back(make_reference_row(env, algo, s, pc, rm, ps)); };
  if (kind == "position") {
    add("Lax", "ANDMask tau=0.8", 0.873, 0.968, 0.048, 27.375);
    add("Lax", "ANDMask tau=0.4", 0.911, 0.981, 0.035, 30.241);
    add("Lax", "Benchmark", 0.892, 0.974, 0.042, 28.751);
    add("Lax", "LBP", -0.125, 0.231, 0.563, 5.620);
    add("Challenging", "ANDMask tau=0.8", 0.692, 0.851, 0.102, 20.457);
    add("Challenging", "ANDMask tau=0.4", 0.670, 0.856, 0.113, 19.946);
    add("Challenging", "Benchmark", 0.664, 0.842, 0.110, 19.883);
    add("Challenging", "LBP", 0.036, 0.244, 0.413, 8.001);
  } else if (kind == "detectors") {
    add("Lax", "ANDMask tau=0.8", 0.843, 0.965, 0.066, 24.314);
    add("Lax", "ANDMask tau=0.4", 0.831, 0.967, 0.060, 25.053);
    add("Lax", "Benchmark", 0.847, 0.968, 0.064, 24.845);
    add("Lax", "LBP", -0.156, 0.320, 0.537, 6.192);
    add("Challenging", "ANDMask tau=0.8", 0.517, 0.519, 0.203, 14.111);
    add("Challenging", "ANDMask tau=0.4", 0.489, 0.531, 0.202, 14.156);
    add("Challenging", "Benchmark", 0.516, 0.534, 0.202, 14.135);
    add("Challenging", "LBP", 0.054, 0.222, 0.408, 8.142);
  } else if (kind == "coverage") {
    add("Lax", "ANDMask tau=0.8", 0.814, 0.887, 0.094, 21.039);
    add("Lax", "ANDMask tau=0.4", 0.813, 0.895, 0.096, 20.935);
    add("Lax", "Benchmark", 0.815, 0.891, 0.095, 20.974);
    add("Lax", "LBP", -0.101, 0.162, 0.528, 6.089);
    add("Challenging", "ANDMask tau=0.8", 0.554, 0.545, 0.232, 13.022);
    add("Challenging", "ANDMask tau=0.4", 0.566, 0.539, 0.226, 13.272);
    add("Challenging", "Benchmark", 0.558, 0.535, 0.232, 12.991);
    add("Challenging", "LBP", 0.153, 0.356, 0.385, 8.792);
  } else if (kind == "soundspeed") {
    add("Lax", "ANDMask tau=0.8", 0.858, 0.960, 0.055, 26.130);
    add("Lax", "ANDMask tau=0.4", 0.854, 0.958, 0.056, 25.913);
    add("Lax", "Benchmark", 0.858, 0.958, 0.057, 25.742);
    add("Lax", "LBP", -0.117, 0.243, 0.534, 6.024);
    add("Challenging", "ANDMask tau=0.8", 0.634, 0.803, 0.119, 19.202);
    add("Challenging", "ANDMask tau=0.4", 0.636, 0.803, 0.120, 19.131);
    add("Challenging", "Benchmark", 0.643, 0.814, 0.117, 19.257);
    add("Challenging", "LBP", 0.021, 0.211, 0.403, 8.104);
  }
  return ref;
}

}  // namespace

ExperimentConfig template_config(const std::string& kind) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.network.input_size = cfg.grid_nx;
  cfg.output_dir = "runs/" + kind;
  cfg.reference_targets = reference_table(kind);

  auto pct_label = [](const char* prefix, double pct) {
    std::ostringstream s;
    s << prefix << "-" << pct << "pct";
    return s.str();
  };

  if (kind == "position") {
    for (double pct : {0.0001, 0.001, 0.01, 0.1, 1.0})
      cfg.train_envs.push_back(make_env(pct_label("pos", pct), 16, 360.0, pct, 0.0));
    cfg.lax_env = make_env("lax-pos-0pct", 16, 360.0, 0.0, 0.0);
    cfg.challenging_env = make_env("challenging-pos-1.5pct", 16, 360.0, 1.5, 0.0);
  } else if (kind == "detectors") {
    for (int n : {8, 16, 32, 56, 64})
      cfg.train_envs.push_back(
          make_env("det-" + std::to_string(n), n, 360.0, 0.0, 0.0));
    cfg.lax_env = make_env("lax-det-48", 48, 360.0, 0.0, 0.0);
    cfg.challenging_env = make_env("challenging-det-4", 4, 360.0, 0.0, 0.0);
  } else if (kind == "coverage") {
    for (double deg : {120.0, 180.0, 240.0, 300.0, 360.0}) {
      std::ostringstream label;
      label << "cov-" << deg << "deg";
      cfg.train_envs.push_back(make_env(label.str(), 16, deg, 0.0, 0.0));
    }
    cfg.lax_env = make_env("lax-cov-270deg", 16, 270.0, 0.0, 0.0);
    cfg.challenging_env = make_env("challenging-cov-60deg", 16, 60.0, 0.0, 0.0);
  } else if (kind == "soundspeed") {
    for (double pct : {0.01, 0.1, 0.5, 1.0, 1.5})
      cfg.train_envs.push_back(make_env(pct_label("vs", pct), 16, 360.0, 0.0, pct));
    cfg.lax_env = make_env("lax-vs-0pct", 16, 360.0, 0.0, 0.0);
    cfg.challenging_env = make_env("challenging-vs-2pct", 16, 360.0, 0.0, 2.0);
  } else if (kind == "custom") {
    cfg.train_envs.push_back(make_env("env-0", 16, 360.0, 0.0, 0.0));
    cfg.lax_env = make_env("lax", 16, 360.0, 0.0, 0.0);
    cfg.challenging_env = make_env("challenging", 16, 360.0, 1.5, 0.0);
  } else {
    throw std::invalid_argument("unknown experiment template: " + kind);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// JSON configuration

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& path) {
  for (const auto& [key, value] : obj.items())
    if (allowed.find(key) == allowed.end())
      throw std::invalid_argument("config: unknown key '" + path + key + "'");
}

EnvironmentSpec parse_env(const json& obj, const std::string& path,
                          const EnvironmentSpec& base) {
  reject_unknown_keys(obj,
                      {"label", "n_detectors", "coverage_deg", "position_uncertainty_pct",
                       "vs_uncertainty_pct", "snr_db"},
                      path);
  EnvironmentSpec spec = base;
  if (obj.contains("label")) spec.label = obj["label"].get<std::string>();
  if (obj.contains("n_detectors")) spec.n_detectors = obj["n_detectors"].get<int>();
  if (obj.contains("coverage_deg")) spec.coverage_deg = obj["coverage_deg"].get<double>();
  if (obj.contains("position_uncertainty_pct"))
    spec.position_uncertainty_pct = obj["position_uncertainty_pct"].get<double>();
  if (obj.contains("vs_uncertainty_pct"))
    spec.vs_uncertainty_pct = obj["vs_uncertainty_pct"].get<double>();
  if (obj.contains("snr_db")) {
    const auto& range = obj["snr_db"];
    if (!range.is_array() || range.size() != 2)
      throw std::invalid_argument("config: '" + path + "snr_db' must be [lo, hi]");
    spec.snr_lo_db = range[0].get<double>();
    spec.snr_hi_db = range[1].get<double>();
  }
  try {
    validate(spec);
  } catch (const std::exception& err) {
    throw std::invalid_argument("config: " + path.substr(0, path.size() - 1) + ": " +
                                err.what());
  }
  return spec;
}

json env_to_json(const EnvironmentSpec& spec) {
  return {{"label", spec.label},
          {"n_detectors", spec.n_detectors},
          {"coverage_deg", spec.coverage_deg},
          {"position_uncertainty_pct", spec.position_uncertainty_pct},
          {"vs_uncertainty_pct", spec.vs_uncertainty_pct},
          {"snr_db", {spec.snr_lo_db, spec.snr_hi_db}}};
}

ExperimentConfig parse_config(const json& root) {
  reject_unknown_keys(root,
                      {"experiment", "grid", "nominal", "train_environments",
                       "test_environments", "network", "training", "taus", "dataset",
                       "phantom", "seed", "threads", "output_dir"},
                      "");

  const std::string kind =
      root.contains("experiment") ? root["experiment"].get<std::string>() : "custom";
  ExperimentConfig cfg = template_config(kind);

  if (root.contains("grid")) {
    const auto& g = root["grid"];
    reject_unknown_keys(g, {"nx", "ny", "dx", "dy"}, "grid.");
    if (g.contains("nx")) cfg.grid_nx = g["nx"].get<int>();
    if (g.contains("ny")) cfg.grid_ny = g["ny"].get<int>();
    if (g.contains("dx")) cfg.grid_dx = g["dx"].get<double>();
    if (g.contains("dy")) cfg.grid_dy = g["dy"].get<double>();
  }
  if (root.contains("nominal")) {
    const auto& n = root["nominal"];
    reject_unknown_keys(n, {"vs", "radius", "n_t", "dt", "f_lo", "f_hi"}, "nominal.");
    if (n.contains("vs")) cfg.nominal.vs = n["vs"].get<double>();
    if (n.contains("radius")) cfg.nominal.radius = n["radius"].get<double>();
    if (n.contains("n_t")) cfg.nominal.n_t = n["n_t"].get<int>();
    if (n.contains("dt")) cfg.nominal.dt = n["dt"].get<double>();
    if (n.contains("f_lo")) cfg.nominal.f_lo_hz = n["f_lo"].get<double>();
    if (n.contains("f_hi")) cfg.nominal.f_hi_hz = n["f_hi"].get<double>();
  }
  if (root.contains("train_environments")) {
    const auto& envs = root["train_environments"];
    if (!envs.is_array() || envs.empty())
      throw std::invalid_argument("config: 'train_environments' must be a non-empty array");
    cfg.train_envs.clear();
    for (std::size_t i = 0; i < envs.size(); ++i) {
      EnvironmentSpec base;
      base.label = "env-" + std::to_string(i);
      cfg.train_envs.push_back(parse_env(
          envs[i], "train_environments[" + std::to_string(i) + "].", base));
    }
  }
  if (root.contains("test_environments")) {
    const auto& tests = root["test_environments"];
    reject_unknown_keys(tests, {"lax", "challenging"}, "test_environments.");
    if (tests.contains("lax"))
      cfg.lax_env = parse_env(tests["lax"], "test_environments.lax.", cfg.lax_env);
    if (tests.contains("challenging"))
      cfg.challenging_env = parse_env(tests["challenging"], "test_environments.challenging.",
                                      cfg.challenging_env);
  }
  if (root.contains("network")) {
    const auto& n = root["network"];
    reject_unknown_keys(
        n, {"n_scales", "base_channels", "dense_growth_rate", "dense_layers_per_block"},
        "network.");
    if (n.contains("n_scales")) cfg.network.n_scales = n["n_scales"].get<int>();
    if (n.contains("base_channels")) cfg.network.base_channels = n["base_channels"].get<int>();
    if (n.contains("dense_growth_rate"))
      cfg.network.dense_growth_rate = n["dense_growth_rate"].get<int>();
    if (n.contains("dense_layers_per_block"))
      cfg.network.dense_layers_per_block = n["dense_layers_per_block"].get<int>();
  }
  if (root.contains("training")) {
    const auto& t = root["training"];
    reject_unknown_keys(
        t, {"epochs", "batch_per_env", "pooled_batch", "learning_rate", "patience"},
        "training.");
    if (t.contains("epochs")) cfg.training.epochs = t["epochs"].get<int>();
    if (t.contains("batch_per_env")) cfg.training.batch_per_env = t["batch_per_env"].get<int>();
    if (t.contains("pooled_batch")) cfg.training.pooled_batch = t["pooled_batch"].get<int>();
    if (t.contains("learning_rate"))
      cfg.training.learning_rate = t["learning_rate"].get<double>();
    if (t.contains("patience")) cfg.training.patience = t["patience"].get<int>();
  }
  if (root.contains("taus")) {
    cfg.taus = root["taus"].get<std::vector<double>>();
    if (cfg.taus.empty()) throw std::invalid_argument("config: 'taus' must be non-empty");
    for (double tau : cfg.taus)
      if (tau < 0.0 || tau > 1.0)
        throw std::invalid_argument("config: 'taus' entries must lie in [0, 1]");
  }
  if (root.contains("dataset")) {
    const auto& d = root["dataset"];
    reject_unknown_keys(
        d, {"base_phantoms_per_env", "augment_factor", "split_fraction", "test_images"},
        "dataset.");
    if (d.contains("base_phantoms_per_env"))
      cfg.dataset.base_phantoms_per_env = d["base_phantoms_per_env"].get<int>();
    if (d.contains("augment_factor"))
      cfg.dataset.augment_factor = d["augment_factor"].get<int>();
    if (d.contains("split_fraction"))
      cfg.dataset.split_fraction = d["split_fraction"].get<double>();
    if (d.contains("test_images")) cfg.dataset.test_images = d["test_images"].get<int>();
  }
  if (root.contains("phantom")) {
    const auto& p = root["phantom"];
    reject_unknown_keys(p,
                        {"branches_min", "branches_max", "thickness_min", "thickness_max",
                         "walk_steps", "step_px", "turn_sigma", "branch_prob", "max_active"},
                        "phantom.");
    if (p.contains("branches_min")) cfg.phantom.branches_min = p["branches_min"].get<int>();
    if (p.contains("branches_max")) cfg.phantom.branches_max = p["branches_max"].get<int>();
    if (p.contains("thickness_min"))
      cfg.phantom.thickness_min = p["thickness_min"].get<double>();
    if (p.contains("thickness_max"))
      cfg.phantom.thickness_max = p["thickness_max"].get<double>();
    if (p.contains("walk_steps")) cfg.phantom.walk_steps = p["walk_steps"].get<int>();
    if (p.contains("step_px")) cfg.phantom.step_px = p["step_px"].get<double>();
    if (p.contains("turn_sigma")) cfg.phantom.turn_sigma = p["turn_sigma"].get<double>();
    if (p.contains("branch_prob")) cfg.phantom.branch_prob = p["branch_prob"].get<double>();
    if (p.contains("max_active")) cfg.phantom.max_active = p["max_active"].get<int>();
  }
  if (root.contains("seed")) cfg.seed = root["seed"].get<std::uint64_t>();
  if (root.contains("threads")) cfg.threads = root["threads"].get<int>();
  if (root.contains("output_dir")) cfg.output_dir = root["output_dir"].get<std::string>();

  // cross-field validation
  if (cfg.train_envs.empty())
    throw std::invalid_argument("config: at least one training environment is required");
  if (cfg.grid_nx != cfg.grid_ny)
    throw std::invalid_argument("config: the network pipeline requires a square grid");
  cfg.network.input_size = cfg.grid_nx;
  build_grid(cfg.grid_nx, cfg.grid_ny, cfg.grid_dx, cfg.grid_dy);
  validate(cfg.network);
  validate(cfg.lax_env);
  validate(cfg.challenging_env);
  if (cfg.dataset.base_phantoms_per_env < 1 || cfg.dataset.augment_factor < 1 ||
      cfg.dataset.test_images < 1)
    throw std::invalid_argument("config: dataset counts must be positive");
  if (cfg.nominal.n_t < 3 || cfg.nominal.dt <= 0.0 || cfg.nominal.vs <= 0.0 ||
      cfg.nominal.radius <= 0.0)
    throw std::invalid_argument("config: nominal acquisition values out of range");
  if (!(cfg.nominal.f_lo_hz > 0.0 && cfg.nominal.f_lo_hz < cfg.nominal.f_hi_hz &&
        cfg.nominal.f_hi_hz < 0.5 / cfg.nominal.dt))
    throw std::invalid_argument("config: band edges must satisfy 0 < f_lo < f_hi < 1/(2 dt)");
  return cfg;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& err) {
    throw std::invalid_argument(std::string("config: JSON parse error: ") + err.what());
  }
  return parse_config(root);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_json(text.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json root;
  root["experiment"] = cfg.kind;
  root["grid"] = {{"nx", cfg.grid_nx}, {"ny", cfg.grid_ny}, {"dx", cfg.grid_dx},
                  {"dy", cfg.grid_dy}};
  root["nominal"] = {{"vs", cfg.nominal.vs},     {"radius", cfg.nominal.radius},
                     {"n_t", cfg.nominal.n_t},   {"dt", cfg.nominal.dt},
                     {"f_lo", cfg.nominal.f_lo_hz}, {"f_hi", cfg.nominal.f_hi_hz}};
  root["train_environments"] = json::array();
  for (const auto& env : cfg.train_envs) root["train_environments"].push_back(env_to_json(env));
  root["test_environments"] = {{"lax", env_to_json(cfg.lax_env)},
                               {"challenging", env_to_json(cfg.challenging_env)}};
  root["network"] = {{"n_scales", cfg.network.n_scales},
                     {"base_channels", cfg.network.base_channels},
                     {"dense_growth_rate", cfg.network.dense_growth_rate},
                     {"dense_layers_per_block", cfg.network.dense_layers_per_block}};
  root["training"] = {{"epochs", cfg.training.epochs},
                      {"batch_per_env", cfg.training.batch_per_env},
                      {"pooled_batch", cfg.training.pooled_batch},
                      {"learning_rate", cfg.training.learning_rate},
                      {"patience", cfg.training.patience}};
  root["taus"] = cfg.taus;
  root["dataset"] = {{"base_phantoms_per_env", cfg.dataset.base_phantoms_per_env},
                     {"augment_factor", cfg.dataset.augment_factor},
                     {"split_fraction", cfg.dataset.split_fraction},
                     {"test_images", cfg.dataset.test_images}};
  root["phantom"] = {{"branches_min", cfg.phantom.branches_min},
                     {"branches_max", cfg.phantom.branches_max},
                     {"thickness_min", cfg.phantom.thickness_min},
                     {"thickness_max", cfg.phantom.thickness_max},
                     {"walk_steps", cfg.phantom.walk_steps},
                     {"step_px", cfg.phantom.step_px},
                     {"turn_sigma", cfg.phantom.turn_sigma},
                     {"branch_prob", cfg.phantom.branch_prob},
                     {"max_active", cfg.phantom.max_active}};
  root["seed"] = cfg.seed;
  root["threads"] = cfg.threads;
  root["output_dir"] = cfg.output_dir;
  return root.dump(2);
}

// ---------------------------------------------------------------------------
// Pipelines

std::vector<Sample> build_test_set(const EnvironmentSpec& spec, int n_images,
                                   std::uint64_t seed, const ImagingGrid& grid,
                                   const NominalParams& nominal,
                                   const PhantomParams& phantom_params, int threads) {
  validate(spec);
  if (n_images < 1) throw std::invalid_argument("build_test_set: n_images must be >= 1");

  const SensorArray nominal_sensors =
      place_sensors(spec.n_detectors, nominal.radius, spec.coverage_deg, 0.0);
  const ForwardOperator nominal_op =
      build_system_matrix(grid, nominal_sensors, nominal.vs, nominal.n_t, nominal.dt);
  const bool shared_geometry = spec.deterministic_geometry();

  std::vector<Sample> samples(static_cast<std::size_t>(n_images));
  parallel_for(n_images, threads, [&](int i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Sample& s = samples[static_cast<std::size_t>(i)];
    s.phantom = generate_vessel_phantom(grid, derive_seed(seed, kSeedTestPhantom, idx),
                                        phantom_params);
    s.realization_seed = derive_seed(seed, kSeedTestRealize, idx);
    const RealizedEnvironment env =
        realize_environment(spec, nominal.vs, nominal.radius, s.realization_seed);
    s.sinogram = synthesize_sinogram(s.phantom.image, env, grid, nominal,
                                     derive_seed(seed, kSeedTestNoise, idx),
                                     shared_geometry ? &nominal_op : nullptr);
    LbpImage lbp = lbp_reconstruct(nominal_op, s.sinogram);
    s.lbp = std::move(lbp.image);
    s.lbp_scale = lbp.scale;
  });
  return samples;
}

namespace {

Image tensor_to_image(const Tensor& t) {
  Image img(t.w, t.h);
  img.data.assign(t.v.begin(), t.v.end());
  return img;
}

struct TrainedModel {
  std::string name;
  ParameterSet params;
  TrainHistory history;
};

json history_to_json(const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& rec : h.epochs)
    epochs.push_back(
        {{"env_train_loss", rec.env_train_loss}, {"validation_loss", rec.validation_loss}});
  return {{"epochs", epochs},
          {"mask_survival_per_step", h.mask_survival},
          {"best_epoch", h.best_epoch},
          {"best_validation_loss", h.best_validation_loss},
          {"early_stopped", h.early_stopped}};
}

std::string sanitize(std::string name) {
  for (char& c : name)
    if (c == ' ' || c == '=' || c == '.') c = '_';
  return name;
}

std::vector<TrainedModel> train_all_models(const ExperimentConfig& cfg,
                                           const std::vector<DatasetSplit>& env_data) {
  std::vector<TrainedModel> models;
  TrainConfig tc = cfg.training;
  tc.threads = resolve_threads(cfg.threads);
  for (std::size_t ti = 0; ti < cfg.taus.size(); ++ti) {
    tc.tau = cfg.taus[ti];
    std::ostringstream name;
    name << "ANDMask tau=" << cfg.taus[ti];
    TrainResult result =
        train_andmask(tc, cfg.network, env_data, derive_seed(cfg.seed, kSeedTrain, ti));
    models.push_back({name.str(), std::move(result.params), std::move(result.history)});
  }
  TrainResult bench = train_benchmark(tc, cfg.network, pool_datasets(env_data),
                                      derive_seed(cfg.seed, kSeedBenchmark));
  models.push_back({"Benchmark", std::move(bench.params), std::move(bench.history)});
  return models;
}

std::vector<DatasetSplit> build_training_data(const ExperimentConfig& cfg) {
  const ImagingGrid grid = cfg.grid();
  const int threads = resolve_threads(cfg.threads);
  std::vector<DatasetSplit> env_data;
  env_data.reserve(cfg.train_envs.size());
  for (std::size_t e = 0; e < cfg.train_envs.size(); ++e)
    env_data.push_back(build_environment_dataset(
        cfg.train_envs[e], cfg.dataset.base_phantoms_per_env, cfg.dataset.augment_factor,
        cfg.dataset.split_fraction, derive_seed(cfg.seed, kSeedDataset, e), grid, cfg.nominal,
        cfg.phantom, threads));
  return env_data;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

Image compose_panel(const std::vector<const Image*>& images, int gap = 2) {
  const int nx = images.front()->nx;
  const int ny = images.front()->ny;
  const int total_w = static_cast<int>(images.size()) * nx +
                      gap * (static_cast<int>(images.size()) - 1);
  Image panel(total_w, ny);
  int x0 = 0;
  for (const Image* img : images) {
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) panel.at(x0 + i, j) = img->at(i, j);
    x0 += nx + gap;
  }
  return panel;
}

}  // namespace

ExperimentArtifacts run_experiment(const ExperimentConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  const ImagingGrid grid = cfg.grid();
  const int threads = resolve_threads(cfg.threads);
  fs::create_directories(cfg.output_dir);
  fs::create_directories(cfg.output_dir + "/checkpoints");
  fs::create_directories(cfg.output_dir + "/history");
  fs::create_directories(cfg.output_dir + "/panels");

  json manifest;
  manifest["resolved_config"] = json::parse(config_to_json(cfg));
  manifest["master_seed"] = cfg.seed;
  manifest["status"] = "incomplete";
  auto flush_manifest = [&] {
    write_text(cfg.output_dir + "/manifest.json", manifest.dump(2) + "\n");
  };
  flush_manifest();

  // datasets and test sets
  std::vector<DatasetSplit> env_data = build_training_data(cfg);
  std::vector<Sample> lax_set =
      build_test_set(cfg.lax_env, cfg.dataset.test_images,
                     derive_seed(cfg.seed, kSeedTestLax), grid, cfg.nominal, cfg.phantom,
                     threads);
  std::vector<Sample> challenging_set =
      build_test_set(cfg.challenging_env, cfg.dataset.test_images,
                     derive_seed(cfg.seed, kSeedTestChallenging), grid, cfg.nominal,
                     cfg.phantom, threads);

  // models
  std::vector<TrainedModel> models = train_all_models(cfg, env_data);

  ExperimentArtifacts artifacts;
  for (const auto& model : models) {
    const std::string base = cfg.output_dir + "/checkpoints/" + sanitize(model.name) + ".ckpt";
    save_checkpoint(base, model.params, cfg.network);
    artifacts.checkpoint_paths.push_back(base);
    write_text(cfg.output_dir + "/history/" + sanitize(model.name) + "_history.json",
               history_to_json(model.history).dump(2) + "\n");
  }

  // evaluation
  struct EnvEval {
    std::string label;
    const std::vector<Sample>* samples;
  };
  const std::vector<EnvEval> envs = {{"Lax", &lax_set}, {"Challenging", &challenging_set}};
  const std::vector<std::vector<Sample>> ood_sets = {lax_set, challenging_set};

  MetricsReport report;
  for (const auto& env : envs) {
    const auto& samples = *env.samples;
    // back-projection baseline
    {
      std::vector<double> v_ssim, v_pc, v_rmse, v_psnr;
      for (const auto& s : samples) {
        v_ssim.push_back(ssim(s.lbp, s.phantom.image));
        v_pc.push_back(pearson_correlation(s.lbp, s.phantom.image));
        v_rmse.push_back(rmse(s.lbp, s.phantom.image));
        v_psnr.push_back(psnr(s.lbp, s.phantom.image));
      }
      ReportRow row;
      row.environment = env.label;
      row.algorithm = "LBP";
      row.ssim = aggregate(v_ssim);
      row.pc = aggregate(v_pc);
      row.rmse = aggregate(v_rmse);
      row.psnr = aggregate(v_psnr);
      row.n_images = static_cast<int>(samples.size());
      report.rows.push_back(row);
    }
    for (const auto& model : models) {
      std::vector<double> v_ssim, v_pc, v_rmse, v_psnr;
      constexpr std::size_t kChunk = 8;
      for (std::size_t at = 0; at < samples.size(); at += kChunk) {
        const std::size_t n = std::min(kChunk, samples.size() - at);
        std::vector<Tensor> in;
        in.reserve(n);
        for (std::size_t i = at; i < at + n; ++i) in.push_back(sample_input(samples[i]));
        const auto pred = predict(model.params, cfg.network, in, threads);
        for (std::size_t i = 0; i < n; ++i) {
          const Image img = tensor_to_image(pred[i]);
          const Image& gt = samples[at + i].phantom.image;
          v_ssim.push_back(ssim(img, gt));
          v_pc.push_back(pearson_correlation(img, gt));
          v_rmse.push_back(rmse(img, gt));
          v_psnr.push_back(psnr(img, gt));
        }
      }
      ReportRow row;
      row.environment = env.label;
      row.algorithm = model.name;
      row.ssim = aggregate(v_ssim);
      row.pc = aggregate(v_pc);
      row.rmse = aggregate(v_rmse);
      row.psnr = aggregate(v_psnr);
      row.n_images = static_cast<int>(samples.size());
      row.ood_risk = ood_risk(model.params, cfg.network, ood_sets, threads);
      report.rows.push_back(row);
    }
  }

  // example reconstruction panels: ground truth | LBP | models...
  const int n_panels = std::min<int>(3, cfg.dataset.test_images);
  for (const auto& env : envs) {
    for (int i = 0; i < n_panels; ++i) {
      const Sample& s = (*env.samples)[static_cast<std::size_t>(i)];
      std::vector<Image> predictions;
      for (const auto& model : models) {
        const auto pred = predict(model.params, cfg.network, {sample_input(s)}, threads);
        predictions.push_back(tensor_to_image(pred.front()));
      }
      std::vector<const Image*> tiles = {&s.phantom.image, &s.lbp};
      for (const auto& p : predictions) tiles.push_back(&p);
      const Image panel = compose_panel(tiles);
      std::ostringstream path;
      path << cfg.output_dir << "/panels/" << sanitize(env.label) << "_" << i << ".png";
      write_png16(path.str(), panel, -1.0, 1.0);
    }
  }

  // reports
  artifacts.report = report;
  artifacts.report_csv_path = cfg.output_dir + "/report.csv";
  write_text(artifacts.report_csv_path, to_csv(report));

  std::ostringstream md;
  md << "# Experiment: " << cfg.kind << "\n\n";
  md << "Desk-scale results over " << cfg.dataset.test_images
     << " test images per environment.\n\n";
  md << to_markdown(report) << "\n";
  if (!cfg.reference_targets.rows.empty()) {
    md << "## Reference targets (full-scale study, 500 test images)\n\n"
       << "Published results for this experiment family at 128x128 with the "
          "full-size network; desk-scale numbers above are not expected to "
          "match them, they are reproduced here for orientation.\n\n"
       << to_markdown(cfg.reference_targets);
  }
  artifacts.report_md_path = cfg.output_dir + "/report.md";
  write_text(artifacts.report_md_path, md.str());

  // manifest with artifact hashes
  json hashes = json::object();
  std::vector<std::string> tracked = {artifacts.report_csv_path, artifacts.report_md_path};
  for (const auto& p : artifacts.checkpoint_paths) tracked.push_back(p);
  for (const auto& p : tracked)
    hashes[fs::path(p).filename().string()] = sha256_file(p);
  manifest["artifact_sha256"] = hashes;
  json ckpts = json::array();
  for (const auto& p : artifacts.checkpoint_paths)
    ckpts.push_back(fs::path(p).lexically_relative(cfg.output_dir).string());
  manifest["checkpoints"] = ckpts;
  manifest["status"] = "complete";
  manifest["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  flush_manifest();
  artifacts.manifest_path = cfg.output_dir + "/manifest.json";
  return artifacts;
}

void run_simulate(const ExperimentConfig& cfg) {
  const ImagingGrid grid = cfg.grid();
  const int threads = resolve_threads(cfg.threads);
  fs::create_directories(cfg.output_dir);

  json manifest;
  manifest["resolved_config"] = json::parse(config_to_json(cfg));
  manifest["environments"] = json::array();

  for (std::size_t e = 0; e < cfg.train_envs.size(); ++e) {
    const auto& spec = cfg.train_envs[e];
    const DatasetSplit split = build_environment_dataset(
        spec, cfg.dataset.base_phantoms_per_env, cfg.dataset.augment_factor,
        cfg.dataset.split_fraction, derive_seed(cfg.seed, kSeedDataset, e), grid, cfg.nominal,
        cfg.phantom, threads);

    const std::string env_dir =
        cfg.output_dir + "/env" + std::to_string(e) + "_" + sanitize(spec.label);
    fs::create_directories(env_dir);

    json entries = json::array();
    auto dump_samples = [&](const std::vector<Sample>& samples, const char* role,
                            std::size_t offset) {
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        const std::string stem = env_dir + "/sample" + std::to_string(offset + i);
        save_image(stem + ".phantom.bin", s.phantom.image);
        save_sinogram(stem + ".sinogram.bin", s.sinogram);
        save_image(stem + ".lbp.bin", s.lbp);

        // sidecar with the acquisition that produced this sinogram
        const RealizedEnvironment env =
            realize_environment(spec, cfg.nominal.vs, cfg.nominal.radius, s.realization_seed);
        json positions = json::array();
        for (const auto& p : env.sensors_true.positions) positions.push_back({p.x, p.y});
        const json sidecar = {{"dt", s.sinogram.dt},
                              {"vs", env.vs_true},
                              {"snr_db", env.snr_db},
                              {"sensor_positions", positions},
                              {"realization_seed", s.realization_seed}};
        write_text(stem + ".sinogram.bin.json", sidecar.dump(2) + "\n");

        entries.push_back({{"phantom", stem + ".phantom.bin"},
                           {"sinogram", stem + ".sinogram.bin"},
                           {"lbp", stem + ".lbp.bin"},
                           {"lbp_scale", s.lbp_scale},
                           {"realization_seed", s.realization_seed},
                           {"split", role}});
      }
    };
    dump_samples(split.train, "train", 0);
    dump_samples(split.validation, "validation", split.train.size());
    manifest["environments"].push_back({{"label", spec.label},
                                        {"directory", env_dir},
                                        {"n_train", split.train.size()},
                                        {"n_validation", split.validation.size()},
                                        {"samples", entries},
                                        {"spec", json::parse(config_to_json(cfg))
                                                     ["train_environments"][e]}});
  }
  write_text(cfg.output_dir + "/dataset_manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::string> run_train(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  fs::create_directories(cfg.output_dir + "/checkpoints");
  fs::create_directories(cfg.output_dir + "/history");

  std::vector<DatasetSplit> env_data = build_training_data(cfg);
  std::vector<TrainedModel> models = train_all_models(cfg, env_data);

  json manifest;
  manifest["resolved_config"] = json::parse(config_to_json(cfg));
  manifest["master_seed"] = cfg.seed;
  json ckpts = json::array();

  std::vector<std::string> paths;
  for (const auto& model : models) {
    const std::string base = cfg.output_dir + "/checkpoints/" + sanitize(model.name) + ".ckpt";
    save_checkpoint(base, model.params, cfg.network);
    write_text(cfg.output_dir + "/history/" + sanitize(model.name) + "_history.json",
               history_to_json(model.history).dump(2) + "\n");
    ckpts.push_back({{"name", model.name},
                     {"path", fs::path(base).lexically_relative(cfg.output_dir).string()}});
    paths.push_back(base);
  }
  manifest["checkpoints"] = ckpts;
  manifest["status"] = "complete";
  write_text(cfg.output_dir + "/manifest.json", manifest.dump(2) + "\n");
  return paths;
}

ExperimentArtifacts run_evaluate(const ExperimentConfig& cfg, const std::string& run_dir) {
  std::ifstream in(run_dir + "/manifest.json");
  if (!in) throw std::runtime_error("cannot open " + run_dir + "/manifest.json");
  const json manifest = json::parse(in);

  const ImagingGrid grid = cfg.grid();
  const int threads = resolve_threads(cfg.threads);
  fs::create_directories(cfg.output_dir);

  std::vector<Sample> lax_set =
      build_test_set(cfg.lax_env, cfg.dataset.test_images,
                     derive_seed(cfg.seed, kSeedTestLax), grid, cfg.nominal, cfg.phantom,
                     threads);
  std::vector<Sample> challenging_set =
      build_test_set(cfg.challenging_env, cfg.dataset.test_images,
                     derive_seed(cfg.seed, kSeedTestChallenging), grid, cfg.nominal,
                     cfg.phantom, threads);
  const std::vector<std::vector<Sample>> ood_sets = {lax_set, challenging_set};

  MetricsReport report;
  struct EnvEval {
    std::string label;
    const std::vector<Sample>* samples;
  };
  for (const auto& env :
       std::vector<EnvEval>{{"Lax", &lax_set}, {"Challenging", &challenging_set}}) {
    std::vector<double> v_ssim, v_pc, v_rmse, v_psnr;
    for (const auto& s : *env.samples) {
      v_ssim.push_back(ssim(s.lbp, s.phantom.image));
      v_pc.push_back(pearson_correlation(s.lbp, s.phantom.image));
      v_rmse.push_back(rmse(s.lbp, s.phantom.image));
      v_psnr.push_back(psnr(s.lbp, s.phantom.image));
    }
    ReportRow row;
    row.environment = env.label;
    row.algorithm = "LBP";
    row.ssim = aggregate(v_ssim);
    row.pc = aggregate(v_pc);
    row.rmse = aggregate(v_rmse);
    row.psnr = aggregate(v_psnr);
    row.n_images = static_cast<int>(env.samples->size());
    report.rows.push_back(row);

    for (const auto& entry : manifest.at("checkpoints")) {
      const Checkpoint ckpt =
          load_checkpoint(run_dir + "/" + entry.at("path").get<std::string>());
      std::vector<double> m_ssim, m_pc, m_rmse, m_psnr;
      for (const auto& s : *env.samples) {
        const auto pred = predict(ckpt.params, ckpt.config, {sample_input(s)}, threads);
        const Image img = tensor_to_image(pred.front());
        m_ssim.push_back(ssim(img, s.phantom.image));
        m_pc.push_back(pearson_correlation(img, s.phantom.image));
        m_rmse.push_back(rmse(img, s.phantom.image));
        m_psnr.push_back(psnr(img, s.phantom.image));
      }
      ReportRow mrow;
      mrow.environment = env.label;
      mrow.algorithm = entry.at("name").get<std::string>();
      mrow.ssim = aggregate(m_ssim);
      mrow.pc = aggregate(m_pc);
      mrow.rmse = aggregate(m_rmse);
      mrow.psnr = aggregate(m_psnr);
      mrow.n_images = static_cast<int>(env.samples->size());
      mrow.ood_risk = ood_risk(ckpt.params, ckpt.config, ood_sets, threads);
      report.rows.push_back(mrow);
    }
  }

  ExperimentArtifacts artifacts;
  artifacts.report = report;
  artifacts.report_csv_path = cfg.output_dir + "/report.csv";
  artifacts.report_md_path = cfg.output_dir + "/report.md";
  write_text(artifacts.report_csv_path, to_csv(report));
  write_text(artifacts.report_md_path, to_markdown(report));
  return artifacts;
}

}  // namespace oat
