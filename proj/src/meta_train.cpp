#include "coml/meta_train.hpp"

#include <algorithm>
#include <cmath>

#include "coml/errors.hpp"
#include "coml/parallel.hpp"

namespace coml::meta {

namespace {

constexpr std::size_t kGainTensors = 3;

ad::Tensor cholesky_tensor(const control::CholeskyParams& p) {
  return ad::Tensor::vector(std::vector<double>(p.begin(), p.end()));
}

control::CholeskyParams cholesky_array(const ad::Tensor& t) {
  if (t.size() != control::kCholeskyParams) {
    throw ShapeError("gain parameter tensor must have 6 entries");
  }
  control::CholeskyParams p;
  std::copy(t.values().begin(), t.values().end(), p.begin());
  return p;
}

struct GroupResult {
  std::vector<double> losses;  // per row, capped
  std::vector<ad::Tensor> grad;
  std::size_t diverged = 0;
};

// Rollouts for one ensemble model over the given references. Rows are batched
// on one tape; if the batch diverges each row is redone on its own.
GroupResult run_group(const MetaParams& theta,
                      const std::vector<ad::Tensor>& flat,
                      std::span<const trajgen::ReferenceTrajectory> refs,
                      const ensemble::EnsembleModel& model,
                      std::span<const std::size_t> ref_ids,
                      const MetaConfig& cfg, bool with_grad) {
  const double penalty = cfg.penalty;
  auto run = [&](std::span<const std::size_t> rows, GroupResult& out,
                 bool allow_throw) {
    ad::Tape tape;
    std::vector<ad::Var> in;
    for (const ad::Tensor& t : flat) in.push_back(with_grad ? tape.input(t) : tape.constant(t));
    const std::size_t nf = flat.size() - kGainTensors;
    rollout::DiffController ctrl;
    ctrl.features = std::span<const ad::Var>(in.data(), nf);
    ctrl.feature_shape = &theta.features;
    ctrl.input_scale = tape.constant(theta.features.input_scale);
    ctrl.lambda = control::spd_from_log_cholesky(in[nf]);
    ctrl.k = control::spd_from_log_cholesky(in[nf + 1]);
    ctrl.gamma = control::spd_from_log_cholesky(in[nf + 2]);

    std::vector<ad::Var> mp;
    for (const ad::Tensor& t : model.net.params) mp.push_back(tape.constant(t));
    const ad::Var mscale = tape.constant(model.net.input_scale);
    const rollout::DiffPlant plant = [&](ad::Var x, ad::Var u) {
      return ensemble::model_derivative(mp, model, mscale, x, u);
    };
    std::vector<const trajgen::ReferenceTrajectory*> rp;
    for (std::size_t i : rows) rp.push_back(&refs[i]);

    rollout::DiffRollout ro;
    try {
      ro = rollout::simulate(tape, plant, ctrl, rp, cfg.rollout, false);
    } catch (const DivergenceError&) {
      if (allow_throw) throw;
      out.losses.push_back(penalty);
      ++out.diverged;
      return;
    }
    const ad::Tensor& cost = ro.cost.value();
    ad::Tensor mask(cost.shape(), 0.0);
    bool any = false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double l = cost[r];
      if (std::isfinite(l) && l <= penalty) {
        out.losses.push_back(l);
        mask[r] = 1.0;
        any = true;
      } else {
        out.losses.push_back(penalty);
        ++out.diverged;
      }
    }
    if (with_grad && any) {
      const ad::Var total = ad::sum(ro.cost * tape.constant(std::move(mask)));
      std::vector<ad::Tensor> g = tape.gradient(total);
      if (out.grad.empty()) {
        out.grad = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i)
          for (std::size_t e = 0; e < g[i].size(); ++e) out.grad[i][e] += g[i][e];
      }
    }
  };

  GroupResult res;
  try {
    run(ref_ids, res, true);
  } catch (const DivergenceError&) {
    res = GroupResult{};
    for (std::size_t i : ref_ids) run(std::span<const std::size_t>(&i, 1), res, false);
  }
  if (with_grad && res.grad.empty()) {
    for (const ad::Tensor& t : flat) res.grad.emplace_back(t.shape(), 0.0);
  }
  return res;
}

}  // namespace

void MetaConfig::validate() const {
  if (n_refs < 2) throw ConfigError("meta.n_refs must be >= 2");
  if (!(ref_duration > 0.0)) throw ConfigError("meta.duration must be > 0");
  rollout.validate();
  if (rollout.horizon > ref_duration + 1e-9) {
    throw ConfigError("meta rollout horizon exceeds the reference duration");
  }
  if (!(mu >= 0.0)) throw ConfigError("meta.mu must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("meta.step_size must be > 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("meta.train_fraction must be in (0, 1)");
  }
  if (!(penalty > 0.0)) throw ConfigError("meta.penalty must be > 0");
}

std::vector<ad::Tensor> MetaParams::flatten() const {
  std::vector<ad::Tensor> out = features.params;
  out.push_back(cholesky_tensor(gains.lambda));
  out.push_back(cholesky_tensor(gains.k));
  out.push_back(cholesky_tensor(gains.gamma));
  return out;
}

void MetaParams::assign(const std::vector<ad::Tensor>& flat) {
  const std::size_t nf = features.params.size();
  if (flat.size() != nf + kGainTensors) {
    throw ShapeError("meta parameter list has the wrong length");
  }
  for (std::size_t i = 0; i < nf; ++i) {
    if (!(flat[i].shape() == features.params[i].shape())) {
      throw ShapeError("meta parameter " + std::to_string(i) + " has shape " +
                       flat[i].shape().str());
    }
    features.params[i] = flat[i];
  }
  gains.lambda = cholesky_array(flat[nf]);
  gains.k = cholesky_array(flat[nf + 1]);
  gains.gamma = cholesky_array(flat[nf + 2]);
}

std::vector<std::string> MetaParams::names() const {
  std::vector<std::string> n = features.param_names();
  n.insert(n.end(), {"lambda", "k", "gamma"});
  return n;
}

control::Gains MetaParams::gain_matrices() const {
  return control::gains_from_log_cholesky(gains);
}

MetaParams init_meta_params(const Key& key, const MetaConfig& cfg) {
  MetaParams p;
  p.features = control::make_feature_network(key.split("features"), cfg.width,
                                             cfg.normalize_inputs);
  return p;
}

std::vector<trajgen::ReferenceTrajectory> make_meta_references(
    const Key& key, const MetaConfig& cfg) {
  std::vector<trajgen::ReferenceTrajectory> refs;
  refs.reserve(cfg.n_refs);
  for (std::size_t i = 0; i < cfg.n_refs; ++i) {
    refs.push_back(trajgen::fit_spline(
        trajgen::random_walk(key.fold(i), cfg.walk), cfg.ref_duration));
  }
  return refs;
}

std::vector<Task> task_grid(std::span<const std::size_t> refs,
                            std::span<const std::size_t> models) {
  std::vector<Task> t;
  for (std::size_t j : models)
    for (std::size_t i : refs) t.push_back({i, j});
  return t;
}

LossEval evaluate_meta_loss(const MetaParams& theta,
                            std::span<const trajgen::ReferenceTrajectory> refs,
                            std::span<const ensemble::EnsembleModel> models,
                            std::span<const Task> tasks, const MetaConfig& cfg,
                            double mu, bool with_grad) {
  if (tasks.empty()) throw Error("meta loss needs at least one task");
  std::vector<Task> sorted(tasks.begin(), tasks.end());
  std::sort(sorted.begin(), sorted.end());
  for (const Task& t : sorted) {
    if (t.ref >= refs.size() || t.model >= models.size()) {
      throw Error("task refers to a missing reference or model");
    }
  }
  // Group rows by model.
  std::vector<std::size_t> group_model;
  std::vector<std::vector<std::size_t>> group_refs;
  for (const Task& t : sorted) {
    if (group_model.empty() || group_model.back() != t.model) {
      group_model.push_back(t.model);
      group_refs.emplace_back();
    }
    group_refs.back().push_back(t.ref);
  }

  const std::vector<ad::Tensor> flat = theta.flatten();
  std::vector<GroupResult> groups(group_model.size());
  parallel_for(groups.size(), cfg.threads, [&](std::size_t g) {
    groups[g] = run_group(theta, flat, refs, models[group_model[g]],
                          group_refs[g], cfg, with_grad);
  });

  LossEval out;
  double sum = 0.0;
  for (const GroupResult& g : groups) {
    for (double l : g.losses) {
      sum += l;
      out.task_losses.push_back(l);
    }
    out.diverged += g.diverged;
  }
  if (out.diverged == sorted.size()) {
    throw DivergenceError("every meta-training rollout diverged", 0.0);
  }
  const double n = static_cast<double>(sorted.size());
  const double horizon = cfg.rollout.horizon;
  const double sq = nn::squared_norm(flat);
  out.loss = sum / n + mu * sq / (n * horizon);

  if (with_grad) {
    out.grad.reserve(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
      ad::Tensor g(flat[i].shape(), 0.0);
      for (const GroupResult& gr : groups)
        for (std::size_t e = 0; e < g.size(); ++e) g[e] += gr.grad[i][e];
      for (std::size_t e = 0; e < g.size(); ++e) {
        g[e] = g[e] / n + 2.0 * mu * flat[i][e] / (n * horizon);
      }
      out.grad.push_back(std::move(g));
    }
  }
  return out;
}

MetaSplit split_tasks(std::size_t n_refs, std::size_t n_models,
                      const Key& key, double fraction) {
  auto split = [&](std::size_t n, const Key& k, std::vector<std::size_t>& tr,
                   std::vector<std::size_t>& va, const char* what) {
    const auto nt = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    if (nt < 1 || nt >= n) {
      throw ConfigError(std::string("cannot split ") + std::to_string(n) + " " +
                        what + " into non-empty training and validation sets");
    }
    Stream rng(k);
    const std::vector<std::size_t> perm = rng.permutation(n);
    tr.assign(perm.begin(), perm.begin() + nt);
    va.assign(perm.begin() + nt, perm.end());
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
  };
  MetaSplit s;
  split(n_refs, key.split("refs"), s.train_refs, s.valid_refs, "references");
  split(n_models, key.split("models"), s.train_models, s.valid_models, "models");
  return s;
}

MetaTrainState meta_train(std::span<const ensemble::EnsembleModel> models,
                          std::span<const trajgen::ReferenceTrajectory> refs,
                          const Key& key, const MetaConfig& cfg,
                          const MetaTrainState* resume,
                          const StepCallback& on_step, std::size_t stop_after) {
  cfg.validate();
  if (models.empty()) throw ConfigError("meta-training needs a non-empty ensemble");
  const MetaSplit split =
      split_tasks(refs.size(), models.size(), key.split("split"), cfg.train_fraction);
  const std::vector<Task> train = task_grid(split.train_refs, split.train_models);
  const std::vector<Task> valid = task_grid(split.valid_refs, split.valid_models);

  MetaTrainState st;
  if (resume) {
    st = *resume;
  } else {
    st.params = init_meta_params(key.split("init"), cfg);
    st.adam = ad::AdamState::zeros_like(st.params.flatten());
    st.best = st.params;
  }
  ad::AdamConfig adam;
  adam.step_size = cfg.step_size;

  std::size_t processed = 0;
  while (!st.finished && processed < stop_after) {
    const std::size_t s = st.next_step;
    const bool update = s < cfg.steps;
    const LossEval tr = evaluate_meta_loss(st.params, refs, models, train, cfg,
                                           cfg.mu, update);
    const LossEval va =
        evaluate_meta_loss(st.params, refs, models, valid, cfg, 0.0, false);
    st.curve.push_back({s, tr.loss, va.loss});
    if (s == 0 || va.loss < st.best_valid) {
      st.best_valid = va.loss;
      st.best_step = s;
      st.best = st.params;
    }
    if (update) {
      std::vector<ad::Tensor> flat = st.params.flatten();
      ad::adam_step(flat, tr.grad, st.adam, s + 1, adam);
      st.params.assign(flat);
      st.next_step = s + 1;
    } else {
      st.finished = true;
    }
    ++processed;
    if (on_step) on_step(st);
  }
  return st;
}

}  // namespace coml::meta
