#include "coml/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <tuple>

#include "coml/errors.hpp"
#include "coml/parallel.hpp"

namespace coml::eval {

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void WindDistribution::validate() const {
  if (!(lo < hi)) throw ConfigError("wind support needs lo < hi");
  if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("beta shapes must be > 0");
}

double WindDistribution::mean() const { return lo + (hi - lo) * a / (a + b); }

double WindDistribution::variance() const {
  const double s = a + b;
  return (hi - lo) * (hi - lo) * a * b / (s * s * (s + 1.0));
}

double sample_wind(const WindDistribution& dist, Stream& rng) {
  dist.validate();
  return dist.lo + (dist.hi - dist.lo) * rng.beta(dist.a, dist.b);
}

std::vector<CampaignEntry> collect_campaign(const CampaignConfig& cfg,
                                            const Key& key) {
  if (cfg.n_traj < 1) throw ConfigError("collect.n_traj must be >= 1");
  if (cfg.max_attempts < 1) throw ConfigError("collect.max_attempts must be >= 1");
  cfg.wind.validate();
  rollout::RolloutConfig rc;
  rc.dt = cfg.dt;
  rc.horizon = cfg.duration;
  rc.control_rate = cfg.control_rate;
  rc.validate();
  const control::PdCollectController pd(cfg.kp, cfg.kd);

  std::vector<CampaignEntry> out(cfg.n_traj);
  parallel_for(cfg.n_traj, cfg.threads, [&](std::size_t i) {
    for (std::size_t a = 0; a < cfg.max_attempts; ++a) {
      const Key k = key.fold(i).fold(a);
      const trajgen::WaypointWalk walk = trajgen::random_walk(k.split("walk"), cfg.walk);
      Stream wr(k.split("wind"));
      const double w = sample_wind(cfg.wind, wr);
      const trajgen::ReferenceTrajectory ref = trajgen::fit_spline(walk, cfg.duration);
      try {
        const rollout::PlantLog pl =
            rollout::simulate_plant({w, cfg.beta1, cfg.beta2}, pd, ref, rc);
        CampaignEntry& e = out[i];
        e.log.id = i;
        e.log.t = pl.t;
        e.log.x = pl.x;
        e.log.u = pl.u;
        e.wind = w;
        e.seed = k.id();
        e.attempts = a + 1;
        return;
      } catch (const DivergenceError&) {
      }
    }
    throw DivergenceError("trajectory " + std::to_string(i) + " diverged in all " +
                              std::to_string(cfg.max_attempts) + " attempts",
                          cfg.duration);
  });
  return out;
}

std::vector<TestCase> make_test_set(const TestSetConfig& cfg, const Key& key) {
  cfg.wind.validate();
  std::vector<TestCase> tests(cfg.n_test);
  for (std::size_t i = 0; i < cfg.n_test; ++i) {
    const Key k = key.fold(i);
    TestCase& t = tests[i];
    t.id = i;
    t.walk = trajgen::random_walk(k.split("walk"), cfg.walk);
    Stream wr(k.split("wind"));
    t.wind = sample_wind(cfg.wind, wr);
    t.ref = trajgen::fit_spline(t.walk, cfg.duration);
  }
  return tests;
}

std::string serialize_test_set(const std::vector<TestCase>& tests) {
  std::string s;
  for (const TestCase& t : tests) {
    s += std::to_string(t.id);
    s += ' ';
    s += g17(t.ref.duration());
    s += ' ';
    s += g17(t.wind);
    for (const auto& p : t.walk.points)
      for (int c = 0; c < 3; ++c) {
        s += ' ';
        s += g17(p[c]);
      }
    s += '\n';
  }
  return s;
}

std::uint64_t test_set_hash(const std::vector<TestCase>& tests) {
  return fnv1a64(serialize_test_set(tests));
}

std::size_t count_above(const std::vector<TestCase>& tests, double wind) {
  std::size_t n = 0;
  for (const TestCase& t : tests) n += t.wind > wind ? 1 : 0;
  return n;
}

std::string gain_id(double scale) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%gx", scale);
  return buf;
}

std::vector<GainSetting> gain_grid(const std::vector<double>& scales) {
  std::vector<GainSetting> grid;
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("gain scales must be > 0");
    control::Gains g;
    g.lambda = s * control::Mat3::Identity();
    g.k = 10.0 * s * control::Mat3::Identity();
    g.gamma = 10.0 * s * control::Mat3::Identity();
    grid.push_back({gain_id(s), g});
  }
  return grid;
}

rollout::TrackingMetrics run_test_case(const MethodSpec& method,
                                       const GainSetting& gains,
                                       const TestCase& test,
                                       const EvalContext& ctx) {
  rollout::RolloutConfig rc;
  rc.dt = ctx.dt;
  rc.control_rate = ctx.control_rate;
  rc.horizon = test.ref.duration();
  const pfar::WindField wind{test.wind, ctx.beta1, ctx.beta2};
  std::unique_ptr<control::Controller> ctrl;
  if (method.kind == MethodSpec::Kind::kPid) {
    ctrl = std::make_unique<control::PidController>(
        control::pid_from_adaptive(gains.gains));
  } else {
    if (!method.features) {
      throw Error("method '" + method.name + "' has no feature network");
    }
    ctrl = std::make_unique<control::AdaptiveController>(
        control::FeatureMap::network(*method.features), gains.gains);
  }
  return rollout::tracking_metrics(rollout::simulate_plant(wind, *ctrl, test.ref, rc));
}

std::vector<EvalRow> evaluate_methods(const std::vector<MethodSpec>& methods,
                                      const std::vector<TestCase>& tests,
                                      const EvalContext& ctx) {
  struct Job {
    const MethodSpec* method;
    const GainSetting* gains;
    const TestCase* test;
  };
  std::vector<Job> jobs;
  for (const MethodSpec& m : methods)
    for (const GainSetting& g : m.gains)
      for (const TestCase& t : tests) jobs.push_back({&m, &g, &t});

  std::vector<EvalRow> rows(jobs.size());
  parallel_for(jobs.size(), ctx.threads, [&](std::size_t i) {
    const Job& j = jobs[i];
    EvalRow& r = rows[i];
    r.method = j.method->name;
    r.gain_id = j.gains->id;
    r.m = ctx.m;
    r.seed = ctx.seed;
    r.traj_id = j.test->id;
    r.wind = j.test->wind;
    try {
      const rollout::TrackingMetrics tm = run_test_case(*j.method, *j.gains, *j.test, ctx);
      r.rms_error = tm.rms_error;
      r.rms_effort = tm.rms_effort;
    } catch (const DivergenceError&) {
      r.diverged = true;
      r.rms_error = ctx.sentinel;
      r.rms_effort = ctx.sentinel;
    }
  });
  return rows;
}

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::vector<AggregateRow> aggregate(const std::vector<EvalRow>& rows) {
  using GroupKey = std::tuple<std::string, std::string, std::size_t, std::size_t>;
  struct Acc {
    std::size_t n = 0, diverged = 0;
    std::vector<double> err, eff;
  };
  std::map<GroupKey, Acc> groups;
  for (const EvalRow& r : rows) {
    Acc& a = groups[{r.method, r.gain_id, r.m, r.seed}];
    ++a.n;
    if (r.diverged) {
      ++a.diverged;
    } else {
      a.err.push_back(r.rms_error);
      a.eff.push_back(r.rms_effort);
    }
  }
  std::vector<AggregateRow> out;
  for (const auto& [k, a] : groups) {
    AggregateRow ar;
    std::tie(ar.method, ar.gain_id, ar.m, ar.seed) = k;
    ar.n = a.n;
    ar.diverged = a.diverged;
    std::tie(ar.mean_error, ar.sd_error) = mean_sd(a.err);
    std::tie(ar.mean_effort, ar.sd_effort) = mean_sd(a.eff);
    out.push_back(ar);
  }
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<AggregateRow>& rows) {
  using GroupKey = std::tuple<std::string, std::string, std::size_t>;
  struct Acc {
    std::size_t seeds = 0, diverged = 0;
    std::vector<double> err, eff;
  };
  std::map<GroupKey, Acc> groups;
  for (const AggregateRow& r : rows) {
    Acc& a = groups[{r.method, r.gain_id, r.m}];
    ++a.seeds;
    a.diverged += r.diverged;
    if (std::isfinite(r.mean_error)) {
      a.err.push_back(r.mean_error);
      a.eff.push_back(r.mean_effort);
    }
  }
  std::vector<SummaryRow> out;
  for (const auto& [k, a] : groups) {
    SummaryRow s;
    std::tie(s.method, s.gain_id, s.m) = k;
    s.seeds = a.seeds;
    s.diverged = a.diverged;
    std::tie(s.mean_error, s.sd_error) = mean_sd(a.err);
    std::tie(s.mean_effort, s.sd_effort) = mean_sd(a.eff);
    out.push_back(s);
  }
  return out;
}

}  // namespace coml::eval
