#include <Eigen/SparseCore>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <stdexcept>

#include "doctest.h"
#include "oat/harness.hpp"
#include "oat/io.hpp"
#include "oat/selftest.hpp"

using namespace oat;

namespace {

namespace fs = std::filesystem;

std::string temp_dir(const std::string& name) {
  const auto path = fs::temp_directory_path() / name;
  fs::remove_all(path);
  fs::create_directories(path);
  return path.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// a configuration small enough to push the whole pipeline through in seconds
ExperimentConfig micro_config(const std::string& out_dir) {
  ExperimentConfig cfg = template_config("custom");
  cfg.grid_nx = cfg.grid_ny = 16;
  cfg.grid_dx = cfg.grid_dy = 120e-6;
  cfg.nominal.radius = 4e-3;
  cfg.nominal.n_t = 224;
  cfg.network.n_scales = 2;
  cfg.network.base_channels = 4;
  cfg.network.dense_growth_rate = 2;
  cfg.network.dense_layers_per_block = 1;
  cfg.network.input_size = 16;
  cfg.train_envs.clear();
  cfg.train_envs.push_back(template_config("position").train_envs[0]);
  cfg.train_envs.push_back(template_config("position").train_envs[4]);
  for (auto& env : cfg.train_envs) env.n_detectors = 4;
  cfg.lax_env.n_detectors = 4;
  cfg.challenging_env.n_detectors = 4;
  cfg.taus = {0.4};
  cfg.training.epochs = 2;
  cfg.training.batch_per_env = 2;
  cfg.training.pooled_batch = 4;
  cfg.training.patience = 5;
  cfg.dataset.base_phantoms_per_env = 4;
  cfg.dataset.augment_factor = 2;
  cfg.dataset.split_fraction = 0.75;
  cfg.dataset.test_images = 12;
  cfg.phantom.thickness_min = 1.0;
  cfg.phantom.thickness_max = 1.5;
  cfg.phantom.branches_max = 3;
  cfg.seed = 2025;
  cfg.threads = 1;
  cfg.output_dir = out_dir;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("position template carries the published environment ladder") {
  const ExperimentConfig cfg = template_config("position");
  REQUIRE(cfg.train_envs.size() == 5);
  const double expected[] = {0.0001, 0.001, 0.01, 0.1, 1.0};
  for (int e = 0; e < 5; ++e) {
    CHECK(cfg.train_envs[static_cast<std::size_t>(e)].position_uncertainty_pct ==
          doctest::Approx(expected[e]));
    CHECK(cfg.train_envs[static_cast<std::size_t>(e)].vs_uncertainty_pct == 0.0);
    CHECK(cfg.train_envs[static_cast<std::size_t>(e)].snr_lo_db == 40.0);
    CHECK(cfg.train_envs[static_cast<std::size_t>(e)].snr_hi_db == 60.0);
  }
  CHECK(cfg.lax_env.position_uncertainty_pct == 0.0);
  CHECK(cfg.challenging_env.position_uncertainty_pct == 1.5);
  CHECK(cfg.taus == std::vector<double>{0.4, 0.8});
  CHECK_FALSE(cfg.reference_targets.rows.empty());
}

TEST_CASE("detector, coverage and sound-speed templates") {
  const ExperimentConfig det = template_config("detectors");
  REQUIRE(det.train_envs.size() == 5);
  const int counts[] = {8, 16, 32, 56, 64};
  for (int e = 0; e < 5; ++e)
    CHECK(det.train_envs[static_cast<std::size_t>(e)].n_detectors == counts[e]);
  CHECK(det.lax_env.n_detectors == 48);
  CHECK(det.challenging_env.n_detectors == 4);

  const ExperimentConfig cov = template_config("coverage");
  const double degs[] = {120.0, 180.0, 240.0, 300.0, 360.0};
  for (int e = 0; e < 5; ++e)
    CHECK(cov.train_envs[static_cast<std::size_t>(e)].coverage_deg == degs[e]);
  CHECK(cov.lax_env.coverage_deg == 270.0);
  CHECK(cov.challenging_env.coverage_deg == 60.0);

  const ExperimentConfig vs = template_config("soundspeed");
  const double pcts[] = {0.01, 0.1, 0.5, 1.0, 1.5};
  for (int e = 0; e < 5; ++e)
    CHECK(vs.train_envs[static_cast<std::size_t>(e)].vs_uncertainty_pct ==
          doctest::Approx(pcts[e]));
  CHECK(vs.lax_env.vs_uncertainty_pct == 0.0);
  CHECK(vs.challenging_env.vs_uncertainty_pct == 2.0);

  CHECK_THROWS_AS(template_config("galaxies"), std::invalid_argument);
}

TEST_CASE("json overrides are applied and unknown keys rejected with a path") {
  const std::string good = R"({
    "experiment": "position",
    "training": {"epochs": 7, "learning_rate": 1e-3},
    "dataset": {"test_images": 5},
    "seed": 42
  })";
  const ExperimentConfig cfg = parse_config_json(good);
  CHECK(cfg.training.epochs == 7);
  CHECK(cfg.training.learning_rate == doctest::Approx(1e-3));
  CHECK(cfg.dataset.test_images == 5);
  CHECK(cfg.seed == 42);
  CHECK(cfg.train_envs.size() == 5);  // template remainder intact

  try {
    parse_config_json(R"({"training": {"lr": 0.1}})");
    FAIL("expected rejection");
  } catch (const std::invalid_argument& err) {
    CHECK(std::string(err.what()).find("training.lr") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_config_json("{not json"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_json(R"({"taus": []})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_json(R"({"taus": [1.5]})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_json(R"({"grid": {"nx": 16, "ny": 32}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      parse_config_json(R"({"test_environments": {"lax": {"n_detectors": 0}}})"),
      std::invalid_argument);
}

TEST_CASE("config serialization round-trips through the parser") {
  ExperimentConfig cfg = template_config("detectors");
  cfg.seed = 777;
  cfg.training.epochs = 3;
  cfg.taus = {0.4};
  const ExperimentConfig back = parse_config_json(config_to_json(cfg));
  CHECK(back.kind == cfg.kind);
  CHECK(back.seed == cfg.seed);
  CHECK(back.training.epochs == 3);
  CHECK(back.taus == cfg.taus);
  REQUIRE(back.train_envs.size() == cfg.train_envs.size());
  for (std::size_t e = 0; e < cfg.train_envs.size(); ++e) {
    CHECK(back.train_envs[e].n_detectors == cfg.train_envs[e].n_detectors);
    CHECK(back.train_envs[e].label == cfg.train_envs[e].label);
  }
}

TEST_CASE("test sets are deterministic and sized as requested") {
  const ExperimentConfig cfg = micro_config(temp_dir("oat_testset"));
  const ImagingGrid grid = cfg.grid();
  const auto a =
      build_test_set(cfg.lax_env, 6, 11, grid, cfg.nominal, cfg.phantom);
  const auto b =
      build_test_set(cfg.lax_env, 6, 11, grid, cfg.nominal, cfg.phantom);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(a[i].sinogram.data.data(), b[i].sinogram.data.data(),
                      a[i].sinogram.data.size() * sizeof(double)) == 0);
    CHECK(a[i].realization_seed == b[i].realization_seed);
  }
}

TEST_CASE("full experiment pipeline emits every artifact deterministically") {
  const std::string dir1 = temp_dir("oat_exp1");
  ExperimentConfig cfg = micro_config(dir1);
  const ExperimentArtifacts artifacts = run_experiment(cfg);

  CHECK(fs::exists(artifacts.report_csv_path));
  CHECK(fs::exists(artifacts.report_md_path));
  CHECK(fs::exists(artifacts.manifest_path));
  REQUIRE(artifacts.checkpoint_paths.size() == 2);  // one tau + benchmark
  for (const auto& p : artifacts.checkpoint_paths) {
    CHECK(fs::exists(p));
    CHECK(fs::exists(p + ".json"));
    CHECK_NOTHROW(load_checkpoint(p));
  }
  CHECK(fs::exists(dir1 + "/history/ANDMask_tau_0_4_history.json"));
  CHECK(fs::exists(dir1 + "/panels/Lax_0.png"));
  CHECK(fs::exists(dir1 + "/panels/Challenging_2.png"));

  // 2 environments x (LBP + ANDMask 0.4 + Benchmark)
  REQUIRE(artifacts.report.rows.size() == 6);
  const MetricsReport parsed = from_csv(slurp(artifacts.report_csv_path));
  CHECK(parsed.rows.size() == 6);
  for (const auto& row : parsed.rows) {
    CHECK(row.n_images == 12);
    if (row.algorithm != "LBP") CHECK(row.ood_risk.has_value());
  }

  // a second run with the same seed reproduces the CSV byte for byte
  const std::string dir2 = temp_dir("oat_exp2");
  cfg.output_dir = dir2;
  const ExperimentArtifacts again = run_experiment(cfg);
  CHECK(slurp(artifacts.report_csv_path) == slurp(again.report_csv_path));

  // and a different seed does not
  ExperimentConfig other = cfg;
  other.seed = 2026;
  other.output_dir = temp_dir("oat_exp3");
  const ExperimentArtifacts different = run_experiment(other);
  CHECK(slurp(artifacts.report_csv_path) != slurp(different.report_csv_path));
}

TEST_CASE("simulate writes a dataset manifest that points at loadable files") {
  const std::string dir = temp_dir("oat_sim");
  ExperimentConfig cfg = micro_config(dir);
  cfg.dataset.base_phantoms_per_env = 2;
  run_simulate(cfg);

  const std::string manifest_text = slurp(dir + "/dataset_manifest.json");
  CHECK(manifest_text.find("realization_seed") != std::string::npos);

  // spot-check one sample file of each kind (labels are path-sanitized)
  const std::string env_dir = dir + "/env0_" + "pos-0_0001pct";
  CHECK(fs::exists(env_dir + "/sample0.phantom.bin"));
  CHECK(fs::exists(env_dir + "/sample0.sinogram.bin"));
  CHECK(fs::exists(env_dir + "/sample0.lbp.bin"));
  const std::string sidecar = slurp(env_dir + "/sample0.sinogram.bin.json");
  CHECK(sidecar.find("\"dt\"") != std::string::npos);
  CHECK(sidecar.find("\"vs\"") != std::string::npos);
  CHECK(sidecar.find("sensor_positions") != std::string::npos);
  const Image phantom = load_image(env_dir + "/sample0.phantom.bin");
  CHECK(phantom.nx == 16);
  const Sinogram sino = load_sinogram(env_dir + "/sample0.sinogram.bin", cfg.nominal.dt);
  CHECK(sino.n_d == 4);
  CHECK(sino.n_t == cfg.nominal.n_t);
}

TEST_CASE("train then evaluate compose through the run directory") {
  const std::string train_dir = temp_dir("oat_train");
  ExperimentConfig cfg = micro_config(train_dir);
  const auto checkpoints = run_train(cfg);
  REQUIRE(checkpoints.size() == 2);
  CHECK(fs::exists(train_dir + "/manifest.json"));

  ExperimentConfig eval_cfg = cfg;
  eval_cfg.output_dir = temp_dir("oat_eval");
  const ExperimentArtifacts artifacts = run_evaluate(eval_cfg, train_dir);
  CHECK(fs::exists(artifacts.report_csv_path));
  CHECK(artifacts.report.rows.size() == 6);
}

TEST_CASE("selftest passes on a healthy build") {
  const auto results = run_selftest(1);
  for (const auto& r : results) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("a corrupted operator fails the adjoint probe") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  const SensorArray sensors = place_sensors(4, 8e-3, 360.0, 0.0);
  ForwardOperator op = build_system_matrix(grid, sensors, 1490.0, 384, 2e-8);
  CHECK(adjoint_defect(op, 5, 1) < 1e-12);

  // transpose two column indices in the forward matrix only; pick entries
  // whose weights differ so the product genuinely changes
  auto* inner = op.shell.innerIndexPtr();
  const auto* values = op.shell.valuePtr();
  Eigen::Index other = -1;
  for (Eigen::Index q = 1; q < op.shell.nonZeros(); ++q)
    if (inner[q] != inner[0] && std::abs(values[q] - values[0]) > 1e-3 * values[0]) {
      other = q;
      break;
    }
  REQUIRE(other >= 0);
  std::swap(inner[0], inner[other]);
  CHECK(adjoint_defect(op, 5, 1) > 1e-6);
}

TEST_SUITE_END();
