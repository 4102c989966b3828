#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coml/acmrr.hpp"
#include "coml/ensemble.hpp"
#include "coml/eval.hpp"
#include "coml/meta_train.hpp"

namespace coml {

// Every tunable of the pipeline. Serialized as flat `key = value` lines;
// `#` starts a comment. Lists are comma-separated.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Simulation
  double dt = 0.01;
  double control_rate = 100.0;
  double beta1 = 0.1;
  double beta2 = 1.0;
  trajgen::WalkBounds walk;
  eval::WindDistribution train_wind = eval::WindDistribution::train();
  eval::WindDistribution test_wind = eval::WindDistribution::test();

  // Data collection
  std::size_t n_traj = 500;
  double collect_duration = 30.0;
  double collect_kp = 10.0;
  double collect_kd = 0.1;
  std::size_t max_attempts = 10;

  // Replicates
  std::vector<std::size_t> m_values{2, 5, 10, 20, 30, 40, 50};
  std::size_t seeds = 10;

  // Feature network
  std::size_t width = 32;
  bool normalize_inputs = true;

  // Ensemble
  std::size_t ensemble_epochs = 1000;
  double ensemble_step_size = 1e-2;
  double ensemble_mu = 1e-4;
  double ensemble_batch_fraction = 0.25;
  double ensemble_train_fraction = 0.75;
  bool ensemble_residual = true;

  // Meta-training
  std::size_t meta_n_refs = 10;
  double meta_duration = 5.0;
  double meta_alpha = 1e-3;
  double meta_mu = 1e-4;
  std::size_t meta_steps = 500;
  double meta_step_size = 1e-2;
  double meta_train_fraction = 0.75;
  std::string meta_control = "continuous";
  double meta_penalty = 1e6;

  // ACMRR
  double acmrr_mu_ridge = 1e-4;
  double acmrr_mu = 1e-4;
  std::size_t acmrr_steps = 5000;
  double acmrr_step_size = 1e-2;
  double acmrr_subset_fraction = 0.25;
  double acmrr_train_fraction = 0.75;
  bool acmrr_gravity = true;

  // Evaluation
  std::size_t n_test = 200;
  double test_duration = 10.0;
  std::vector<double> gain_scales{0.5, 1.0, 2.0};
  double sentinel = 1e6;

  // Training-state checkpoints every this many steps (0: only at the end).
  std::size_t checkpoint_every = 50;

  // Reduced sizes for a single desktop run.
  static RunConfig desk();

  std::vector<std::string> keys() const;
  std::string get(const std::string& key) const;
  // Throws ConfigError for unknown keys or values that do not parse.
  void set(const std::string& key, const std::string& value);

  // `key = value` text; unknown keys are rejected with the line number.
  void apply_text(const std::string& text, const std::string& origin);
  void apply_file(const std::filesystem::path& path);
  // COML_<KEY>, with dots replaced by underscores and letters upper-cased,
  // e.g. COML_META_STEPS. Returns the names that were applied.
  std::vector<std::string> apply_environment();

  void validate() const;
  std::string to_text() const;

  ensemble::EnsembleConfig ensemble_config() const;
  meta::MetaConfig meta_config() const;
  acmrr::AcmrrConfig acmrr_config() const;
  eval::CampaignConfig campaign_config() const;
  eval::TestSetConfig test_set_config() const;
  eval::EvalContext eval_context(std::size_t m, std::size_t seed) const;
};

std::string environment_name(const std::string& key);

}  // namespace coml
