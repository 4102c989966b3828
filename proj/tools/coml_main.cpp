// coml: data collection, training and evaluation of meta-learned adaptive
// controllers for a planar rotorcraft in wind.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "coml/config.hpp"
#include "coml/errors.hpp"
#include "coml/pipeline.hpp"

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool desk = false;
  bool force = false;
  bool resume = false;
  bool strict = false;
};

// Defaults, then --desk, then the config file, then COML_* variables, then
// command-line flags.
coml::RunConfig resolve(const Common& c) {
  coml::RunConfig cfg = c.desk ? coml::RunConfig::desk() : coml::RunConfig{};
  if (!c.config_path.empty()) cfg.apply_file(c.config_path);
  for (const std::string& name : cfg.apply_environment())
    std::cerr << "config: " << name << " from environment\n";
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned adaptive control for a planar rotorcraft"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config_path, "key = value configuration file")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "master seed");
    sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--desk", c.desk, "start from the reduced desktop preset");
    sub->add_flag("--force", c.force, "overwrite a non-empty output directory");
  };

  std::string out, data, ensemble, runs, eval_dir;
  std::size_t m = 10, replicate = 0;

  auto* collect = app.add_subcommand("collect", "simulate the training campaign");
  add_common(collect);
  collect->add_option("--out", out, "dataset directory")->required();

  auto* train_ens = app.add_subcommand("train-ensemble", "fit one dynamics model per sampled trajectory");
  add_common(train_ens);
  train_ens->add_option("--data", data, "dataset directory")->required();
  train_ens->add_option("--out", out, "ensemble directory")->required();
  train_ens->add_option("-M,--m", m, "number of trajectories to sample");
  train_ens->add_option("--replicate", replicate, "replicate seed index");

  auto* meta = app.add_subcommand("meta-train", "meta-train features and gains");
  add_common(meta);
  meta->add_option("--ensemble", ensemble, "ensemble directory")->required();
  meta->add_option("--out", out, "output directory")->required();
  meta->add_flag("--resume", c.resume, "continue from state.ckpt");

  auto* acm = app.add_subcommand("train-acmrr", "meta-train features with ridge regression");
  add_common(acm);
  acm->add_option("--data", data, "dataset directory")->required();
  acm->add_option("--ensemble", ensemble, "ensemble directory (for the sampled ids)")->required();
  acm->add_option("--out", out, "output directory")->required();
  acm->add_flag("--resume", c.resume, "continue from state.ckpt");

  auto* evaluate = app.add_subcommand("evaluate", "run every method on the shared test sets");
  add_common(evaluate);
  evaluate->add_option("--runs", runs, "directory holding seed_<s>/M_<m>/")->required();
  evaluate->add_option("--out", out, "report directory")->required();
  evaluate->add_flag("--strict", c.strict, "exit with status 3 if any run diverged");

  auto* report = app.add_subcommand("report", "check and print an evaluation report");
  report->add_option("--eval", eval_dir, "report directory")->required();

  auto* pipeline = app.add_subcommand("pipeline", "collect, train and evaluate end to end");
  add_common(pipeline);
  pipeline->add_option("--out", out, "output directory")->required();
  pipeline->add_flag("--resume", c.resume, "skip finished stages and resume training");
  pipeline->add_flag("--strict", c.strict, "exit with status 3 if any run diverged");

  CLI11_PARSE(app, argc, argv);

  try {
    coml::pipeline::Options opt;
    opt.force = c.force;
    opt.resume = c.resume;
    opt.log = &std::cerr;
    std::size_t diverged = 0;
    if (*collect) {
      coml::pipeline::cmd_collect(resolve(c), out, opt);
    } else if (*train_ens) {
      coml::pipeline::cmd_train_ensemble(resolve(c), data, replicate, m, out, opt);
    } else if (*meta) {
      coml::pipeline::cmd_meta_train(resolve(c), ensemble, out, opt);
    } else if (*acm) {
      coml::pipeline::cmd_train_acmrr(resolve(c), data, ensemble, out, opt);
    } else if (*evaluate) {
      diverged = coml::pipeline::cmd_evaluate(resolve(c), runs, out, opt);
    } else if (*report) {
      return coml::pipeline::cmd_report(eval_dir, std::cout) ? 0 : 4;
    } else if (*pipeline) {
      diverged = coml::pipeline::run_pipeline(resolve(c), out, opt);
    }
    if (c.strict && diverged > 0) {
      std::cerr << diverged << " runs diverged\n";
      return 3;
    }
  } catch (const coml::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
