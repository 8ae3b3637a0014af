#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oat/harness.hpp"
#include "oat/parallel.hpp"
#include "oat/selftest.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string experiment;
  std::string out_dir;
  std::vector<double> taus;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = -1;
};

oat::ExperimentConfig resolve_config(const CommonOpts& opts) {
  oat::ExperimentConfig cfg;
  if (!opts.config_path.empty())
    cfg = oat::load_config(opts.config_path);
  else if (!opts.experiment.empty())
    cfg = oat::template_config(opts.experiment);
  else
    throw CLI::ValidationError("either --config or --experiment is required");

  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  if (!opts.taus.empty()) cfg.taus = opts.taus;
  if (opts.seed_set) cfg.seed = opts.seed;
  if (opts.threads >= 0) cfg.threads = opts.threads;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_experiment = true) {
  cmd->add_option("--config", opts.config_path, "JSON configuration file");
  if (with_experiment)
    cmd->add_option("--experiment", opts.experiment,
                    "built-in template: position|detectors|coverage|soundspeed|custom");
  cmd->add_option("--out", opts.out_dir, "output directory (overrides config)");
  cmd->add_option("--tau", opts.taus, "agreement thresholds to train (overrides config)");
  cmd->add_option("--seed", opts.seed, "master seed (overrides config)")
      ->envname("OAT_SEED")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--threads", opts.threads, "worker threads (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optoacoustic tomography simulation and invariant-training toolkit"};
  app.require_subcommand(1);

  CommonOpts sim_opts, train_opts, eval_opts, repro_opts;
  std::string eval_run_dir;

  auto* simulate = app.add_subcommand("simulate", "synthesize per-environment datasets");
  add_common(simulate, sim_opts);

  auto* train = app.add_subcommand("train", "train ANDMask and benchmark models");
  add_common(train, train_opts);

  auto* evaluate = app.add_subcommand("evaluate", "evaluate trained checkpoints");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--run", eval_run_dir, "directory produced by `train`")->required();

  auto* reproduce =
      app.add_subcommand("reproduce", "full experiment: datasets, training, reports");
  add_common(reproduce, repro_opts);

  auto* selftest = app.add_subcommand("selftest", "run the numerical self-checks");
  int selftest_threads = 0;
  selftest->add_option("--threads", selftest_threads, "worker threads (0 = all cores)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      oat::run_simulate(resolve_config(sim_opts));
      std::printf("datasets written\n");
    } else if (train->parsed()) {
      const auto paths = oat::run_train(resolve_config(train_opts));
      for (const auto& p : paths) std::printf("checkpoint %s\n", p.c_str());
    } else if (evaluate->parsed()) {
      const auto artifacts = oat::run_evaluate(resolve_config(eval_opts), eval_run_dir);
      std::printf("report %s\n", artifacts.report_csv_path.c_str());
    } else if (reproduce->parsed()) {
      if (repro_opts.config_path.empty() && repro_opts.experiment.empty())
        repro_opts.experiment = "position";
      const auto artifacts = oat::run_experiment(resolve_config(repro_opts));
      std::printf("report %s\n", artifacts.report_csv_path.c_str());
      std::printf("manifest %s\n", artifacts.manifest_path.c_str());
    } else if (selftest->parsed()) {
      const auto results = oat::run_selftest(oat::resolve_threads(selftest_threads));
      bool all_pass = true;
      for (const auto& r : results) {
        std::printf("[%s] %-32s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        all_pass = all_pass && r.pass;
      }
      return all_pass ? 0 : 1;
    }
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
