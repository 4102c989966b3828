#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coml/controllers.hpp"
#include "coml/ensemble.hpp"
#include "coml/metrics.hpp"
#include "coml/nn.hpp"
#include "coml/random.hpp"
#include "coml/rollout.hpp"
#include "coml/trajgen.hpp"

namespace coml::eval {

// lo + (hi - lo) * Beta(a, b).
struct WindDistribution {
  double lo = 0.0;
  double hi = 6.0;
  double a = 5.0;
  double b = 9.0;

  static WindDistribution train() { return {0.0, 6.0, 5.0, 9.0}; }
  static WindDistribution test() { return {0.0, 10.0, 5.0, 7.0}; }

  void validate() const;
  double mean() const;
  double variance() const;
};

double sample_wind(const WindDistribution& dist, Stream& rng);

struct CampaignConfig {
  std::size_t n_traj = 500;
  double duration = 30.0;  // s
  trajgen::WalkBounds walk;
  WindDistribution wind = WindDistribution::train();
  double kp = 10.0;
  double kd = 0.1;
  double dt = 0.01;
  double control_rate = 100.0;
  double beta1 = 0.1;
  double beta2 = 1.0;
  std::size_t max_attempts = 10;
  std::size_t threads = 1;
};

struct CampaignEntry {
  ensemble::TrajectoryLog log;
  double wind = 0.0;
  std::uint64_t seed = 0;     // id of the key that produced the accepted run
  std::size_t attempts = 1;   // > 1 when earlier draws diverged
};

// Trajectory i, attempt a draws its walk and wind from key.fold(i).fold(a).
std::vector<CampaignEntry> collect_campaign(const CampaignConfig& cfg,
                                            const Key& key);

struct TestCase {
  std::size_t id = 0;
  trajgen::WaypointWalk walk;
  double wind = 0.0;
  trajgen::ReferenceTrajectory ref;
};

struct TestSetConfig {
  std::size_t n_test = 200;
  double duration = 10.0;
  trajgen::WalkBounds walk;
  WindDistribution wind = WindDistribution::test();
};

std::vector<TestCase> make_test_set(const TestSetConfig& cfg, const Key& key);
// Text form of every (walk, wind) pair, 17 significant digits.
std::string serialize_test_set(const std::vector<TestCase>& tests);
std::uint64_t test_set_hash(const std::vector<TestCase>& tests);
std::size_t count_above(const std::vector<TestCase>& tests, double wind);

struct GainSetting {
  std::string id;
  control::Gains gains;
};

// (s I, 10 s I, 10 s I) for each scale s; ids "0.5x", "1x", "2x", ...
std::vector<GainSetting> gain_grid(const std::vector<double>& scales = {0.5, 1.0, 2.0});
std::string gain_id(double scale);

struct MethodSpec {
  enum class Kind { kPid, kAdaptive };
  std::string name;
  Kind kind = Kind::kPid;
  std::optional<nn::Mlp> features;  // required for kAdaptive
  std::vector<GainSetting> gains;   // adaptive gains; PID uses the mapping
};

struct EvalRow {
  std::string method;
  std::string gain_id;
  std::size_t m = 0;
  std::size_t seed = 0;
  std::size_t traj_id = 0;
  double wind = 0.0;
  double rms_error = 0.0;
  double rms_effort = 0.0;
  bool diverged = false;
};

struct EvalContext {
  std::size_t m = 0;
  std::size_t seed = 0;
  double dt = 0.01;
  double control_rate = 100.0;
  double beta1 = 0.1;
  double beta2 = 1.0;
  double sentinel = 1e6;  // rms values recorded for divergent runs
  std::size_t threads = 1;
};

// Every method and gain setting runs on the same test cases. Rows are ordered
// by method, gain setting, then test-case id.
std::vector<EvalRow> evaluate_methods(const std::vector<MethodSpec>& methods,
                                      const std::vector<TestCase>& tests,
                                      const EvalContext& ctx);

// One closed-loop test run.
rollout::TrackingMetrics run_test_case(const MethodSpec& method,
                                       const GainSetting& gains,
                                       const TestCase& test,
                                       const EvalContext& ctx);

struct AggregateRow {
  std::string method;
  std::string gain_id;
  std::size_t m = 0;
  std::size_t seed = 0;
  std::size_t n = 0;
  std::size_t diverged = 0;
  double mean_error = 0.0;  // over non-divergent runs
  double sd_error = 0.0;    // sample standard deviation
  double mean_effort = 0.0;
  double sd_effort = 0.0;
};

// Groups by (method, gain, M, seed) in sorted key order.
std::vector<AggregateRow> aggregate(const std::vector<EvalRow>& rows);

struct SummaryRow {
  std::string method;
  std::string gain_id;
  std::size_t m = 0;
  std::size_t seeds = 0;
  std::size_t diverged = 0;
  double mean_error = 0.0;  // mean over seeds of the per-seed means
  double sd_error = 0.0;    // sample SD over seeds of the per-seed means
  double mean_effort = 0.0;
  double sd_effort = 0.0;
};

std::vector<SummaryRow> summarize(const std::vector<AggregateRow>& rows);

// Mean and sample standard deviation (SD 0 for one value, both NaN for none).
std::pair<double, double> mean_sd(const std::vector<double>& v);

}  // namespace coml::eval
