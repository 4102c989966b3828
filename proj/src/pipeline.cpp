#include "coml/pipeline.hpp"

#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "coml/errors.hpp"

namespace coml::pipeline {

namespace {

using io::format_double;

void note(const Options& opt, const std::string& msg) {
  if (opt.log) *opt.log << msg << std::endl;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) out.push_back(io::parse_size(cur, 0));
  return out;
}

std::string traj_file(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%04zu.csv", id);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path run_dir(const fs::path& runs, std::size_t seed, std::size_t m) {
  return runs / ("seed_" + std::to_string(seed)) / ("M_" + std::to_string(m));
}

void require(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error("missing " + what + ": " + p.string());
}

void add_adam(io::Checkpoint& ck, const ad::AdamState& a) {
  for (std::size_t i = 0; i < a.m.size(); ++i) {
    ck.add("adam.m." + std::to_string(i), a.m[i]);
    ck.add("adam.v." + std::to_string(i), a.v[i]);
  }
}

ad::AdamState get_adam(const io::Checkpoint& ck, const std::vector<ad::Tensor>& like) {
  ad::AdamState a;
  for (std::size_t i = 0; i < like.size(); ++i) {
    a.m.push_back(ck.get("adam.m." + std::to_string(i), like[i].shape()));
    a.v.push_back(ck.get("adam.v." + std::to_string(i), like[i].shape()));
  }
  return a;
}

template <class Row>
ad::Tensor curve_tensor(const std::vector<Row>& curve) {
  ad::Tensor t(ad::Shape{curve.size(), 3});
  for (std::size_t r = 0; r < curve.size(); ++r) {
    t.at(r, 0) = static_cast<double>(curve[r].step);
    t.at(r, 1) = curve[r].train_loss;
    t.at(r, 2) = curve[r].valid_loss;
  }
  return t;
}

template <class Row>
std::vector<Row> curve_rows(const ad::Tensor& t) {
  if (t.shape().rank() != 2 || t.cols() != 3) throw ShapeError("curve array must be [n, 3]");
  std::vector<Row> out(t.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r].step = static_cast<std::size_t>(t.at(r, 0));
    out[r].train_loss = t.at(r, 1);
    out[r].valid_loss = t.at(r, 2);
  }
  return out;
}

template <class Row>
std::string curve_csv(const std::vector<Row>& curve) {
  std::string s = "step,train_loss,valid_loss\n";
  for (const Row& r : curve)
    s += std::to_string(r.step) + "," + format_double(r.train_loss) + "," +
         format_double(r.valid_loss) + "\n";
  return s;
}

std::size_t meta_size(const io::Checkpoint& ck, const std::string& key) {
  return io::parse_size(ck.get_meta(key), 0);
}

double meta_double(const io::Checkpoint& ck, const std::string& key) {
  return io::parse_double(ck.get_meta(key), 0);
}

}  // namespace

void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(dir.string() + " is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) {
        throw Error("output directory " + dir.string() +
                    " is not empty (use --force to overwrite)");
      }
      for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
    }
  }
  fs::create_directories(dir);
}

void write_run_info(const fs::path& dir, const RunConfig& cfg,
                    const std::vector<Key>& streams) {
  io::write_text(dir / "config.resolved", cfg.to_text());
  std::string s;
  for (const Key& k : streams) s += k.path() + " " + hex64(k.id()) + "\n";
  io::write_text(dir / "streams.txt", s);
}

Key replicate_key(const RunConfig& cfg, std::size_t replicate) {
  return Key::from_seed(cfg.seed).split("replicate").fold(replicate);
}

Key m_key(const RunConfig& cfg, std::size_t replicate, std::size_t m) {
  return replicate_key(cfg, replicate).split("M").fold(m);
}

void add_mlp(io::Checkpoint& ck, const std::string& prefix, const nn::Mlp& net) {
  ck.set_meta(prefix + ".sizes", join_sizes(net.sizes));
  ck.set_meta(prefix + ".linear_output", net.linear_output ? "1" : "0");
  ck.add(prefix + ".input_scale", net.input_scale);
  const std::vector<std::string> names = net.param_names();
  for (std::size_t i = 0; i < names.size(); ++i) ck.add(prefix + "." + names[i], net.params[i]);
}

nn::Mlp get_mlp(const io::Checkpoint& ck, const std::string& prefix) {
  nn::Mlp net;
  net.sizes = parse_sizes(ck.get_meta(prefix + ".sizes"));
  if (net.sizes.size() < 2) throw ParseError("network needs at least two layer sizes", 0);
  net.linear_output = ck.get_meta(prefix + ".linear_output") == "1";
  net.input_scale = ck.get(prefix + ".input_scale", ad::Shape{net.sizes.front()});
  for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    const std::string i = std::to_string(l);
    net.params.push_back(
        ck.get(prefix + ".W" + i, ad::Shape{net.sizes[l], net.sizes[l + 1]}));
    net.params.push_back(ck.get(prefix + ".b" + i, ad::Shape{net.sizes[l + 1]}));
  }
  return net;
}

void add_meta_params(io::Checkpoint& ck, const std::string& prefix,
                     const meta::MetaParams& p) {
  add_mlp(ck, prefix + ".features", p.features);
  const std::vector<ad::Tensor> flat = p.flatten();
  const std::size_t nf = p.features.params.size();
  ck.add(prefix + ".lambda", flat[nf]);
  ck.add(prefix + ".k", flat[nf + 1]);
  ck.add(prefix + ".gamma", flat[nf + 2]);
}

meta::MetaParams get_meta_params(const io::Checkpoint& ck, const std::string& prefix) {
  meta::MetaParams p;
  p.features = get_mlp(ck, prefix + ".features");
  std::vector<ad::Tensor> flat = p.features.params;
  for (const char* g : {".lambda", ".k", ".gamma"})
    flat.push_back(ck.get(prefix + g, ad::Shape{control::kCholeskyParams}));
  p.assign(flat);
  return p;
}

io::Checkpoint meta_state_checkpoint(const meta::MetaTrainState& st) {
  io::Checkpoint ck;
  ck.set_meta("module", "meta-state");
  ck.set_meta("next_step", std::to_string(st.next_step));
  ck.set_meta("best_step", std::to_string(st.best_step));
  ck.set_meta("best_valid", format_double(st.best_valid));
  ck.set_meta("finished", st.finished ? "1" : "0");
  add_meta_params(ck, "params", st.params);
  add_meta_params(ck, "best", st.best);
  add_adam(ck, st.adam);
  ck.add("curve", curve_tensor(st.curve));
  return ck;
}

meta::MetaTrainState meta_state_from_checkpoint(const io::Checkpoint& ck) {
  if (ck.get_meta("module") != "meta-state") throw Error("not a meta-training state");
  meta::MetaTrainState st;
  st.next_step = meta_size(ck, "next_step");
  st.best_step = meta_size(ck, "best_step");
  st.best_valid = meta_double(ck, "best_valid");
  st.finished = ck.get_meta("finished") == "1";
  st.params = get_meta_params(ck, "params");
  st.best = get_meta_params(ck, "best");
  st.adam = get_adam(ck, st.params.flatten());
  st.curve = curve_rows<meta::CurveRow>(ck.get("curve"));
  return st;
}

io::Checkpoint acmrr_state_checkpoint(const acmrr::AcmrrState& st) {
  io::Checkpoint ck;
  ck.set_meta("module", "acmrr-state");
  ck.set_meta("next_step", std::to_string(st.next_step));
  ck.set_meta("best_step", std::to_string(st.best_step));
  ck.set_meta("best_valid", format_double(st.best_valid));
  ck.set_meta("finished", st.finished ? "1" : "0");
  add_mlp(ck, "params", st.params);
  add_mlp(ck, "best", st.best);
  add_adam(ck, st.adam);
  ck.add("curve", curve_tensor(st.curve));
  return ck;
}

acmrr::AcmrrState acmrr_state_from_checkpoint(const io::Checkpoint& ck) {
  if (ck.get_meta("module") != "acmrr-state") throw Error("not an ACMRR training state");
  acmrr::AcmrrState st;
  st.next_step = meta_size(ck, "next_step");
  st.best_step = meta_size(ck, "best_step");
  st.best_valid = meta_double(ck, "best_valid");
  st.finished = ck.get_meta("finished") == "1";
  st.params = get_mlp(ck, "params");
  st.best = get_mlp(ck, "best");
  st.adam = get_adam(ck, st.params.params);
  st.curve = curve_rows<acmrr::CurveRow>(ck.get("curve"));
  return st;
}

void cmd_collect(const RunConfig& cfg, const fs::path& out, const Options& opt) {
  cfg.validate();
  prepare_output(out, opt.force);
  const Key key = Key::from_seed(cfg.seed).split("collect");
  note(opt, "collect: " + std::to_string(cfg.n_traj) + " trajectories");
  const std::vector<eval::CampaignEntry> entries =
      eval::collect_campaign(cfg.campaign_config(), key);
  std::string manifest = "traj_id,wind,seed,attempts\n";
  std::size_t retries = 0;
  for (const eval::CampaignEntry& e : entries) {
    io::save_trajectory(out / traj_file(e.log.id), e.log);
    manifest += std::to_string(e.log.id) + "," + format_double(e.wind) + "," +
                std::to_string(e.seed) + "," + std::to_string(e.attempts) + "\n";
    retries += e.attempts - 1;
  }
  io::write_text(out / "manifest.csv", manifest);
  write_run_info(out, cfg, {key});
  note(opt, "collect: done, " + std::to_string(retries) + " regenerated after divergence");
}

Dataset load_dataset(const fs::path& dir) {
  require(dir / "manifest.csv", "dataset manifest");
  const io::CsvTable t =
      io::read_csv(dir / "manifest.csv", {"traj_id", "wind", "seed", "attempts"});
  Dataset d;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t id = t.integer(r, 0);
    if (id != r) throw ParseError("manifest ids must be 0..n-1 in order", t.lines[r]);
    d.logs.push_back(io::load_trajectory(dir / traj_file(id), id));
    d.wind.push_back(t.number(r, 1));
  }
  if (d.logs.empty()) throw Error("dataset " + dir.string() + " is empty");
  return d;
}

std::vector<std::size_t> sample_trajectories(const RunConfig& cfg,
                                             std::size_t n_available,
                                             std::size_t replicate, std::size_t m) {
  if (m > n_available) {
    throw ConfigError("M = " + std::to_string(m) + " exceeds the dataset size " +
                      std::to_string(n_available));
  }
  Stream rng(m_key(cfg, replicate, m).split("sample"));
  return rng.sample(n_available, m);
}

void cmd_train_ensemble(const RunConfig& cfg, const fs::path& data_dir,
                        std::size_t replicate, std::size_t m, const fs::path& out,
                        const Options& opt) {
  cfg.validate();
  const Dataset data = load_dataset(data_dir);
  const std::vector<std::size_t> ids =
      sample_trajectories(cfg, data.logs.size(), replicate, m);
  prepare_output(out, opt.force);
  std::vector<ensemble::TrajectoryLog> logs;
  for (std::size_t id : ids) logs.push_back(data.logs[id]);
  const Key key = m_key(cfg, replicate, m).split("ensemble");
  note(opt, "train-ensemble: seed " + std::to_string(replicate) + ", M = " +
                std::to_string(m));
  const std::vector<ensemble::TrainResult> res =
      ensemble::train_ensemble(logs, key, cfg.ensemble_config(), cfg.threads);
  std::vector<Key> streams{m_key(cfg, replicate, m).split("sample")};
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const std::size_t id = ids[j];
    io::Checkpoint ck;
    ck.set_meta("module", "ensemble");
    ck.set_meta("traj_id", std::to_string(id));
    ck.set_meta("residual", res[j].model.residual ? "1" : "0");
    ck.set_meta("best_epoch", std::to_string(res[j].best_epoch));
    add_mlp(ck, "net", res[j].model.net);
    io::save_checkpoint(out / ("model_" + std::to_string(id) + ".ckpt"), ck);
    std::string curve = "epoch,train_loss,valid_loss,best_valid\n";
    for (const ensemble::CurveRow& r : res[j].curve)
      curve += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," +
               format_double(r.valid_loss) + "," + format_double(r.best_valid) + "\n";
    io::write_text(out / ("curve_" + std::to_string(id) + ".csv"), curve);
    streams.push_back(key.fold(id));
  }
  write_run_info(out, cfg, streams);
  std::string sampled = "replicate,m,traj_id\n";
  for (std::size_t id : ids)
    sampled += std::to_string(replicate) + "," + std::to_string(m) + "," +
               std::to_string(id) + "\n";
  io::write_text(out / "sampled.csv", sampled);
}

Sampled load_sampled(const fs::path& ensemble_dir) {
  require(ensemble_dir / "sampled.csv", "ensemble manifest");
  const io::CsvTable t =
      io::read_csv(ensemble_dir / "sampled.csv", {"replicate", "m", "traj_id"});
  if (t.rows.empty()) throw ParseError("empty ensemble manifest", 1);
  Sampled s;
  s.replicate = t.integer(0, 0);
  s.m = t.integer(0, 1);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.integer(r, 0) != s.replicate || t.integer(r, 1) != s.m) {
      throw ParseError("inconsistent ensemble manifest", t.lines[r]);
    }
    s.ids.push_back(t.integer(r, 2));
  }
  if (s.ids.size() != s.m) throw ParseError("ensemble manifest lists the wrong count", 1);
  return s;
}

std::vector<ensemble::EnsembleModel> load_ensemble(const fs::path& ensemble_dir) {
  const Sampled s = load_sampled(ensemble_dir);
  std::vector<ensemble::EnsembleModel> models;
  for (std::size_t id : s.ids) {
    const fs::path p = ensemble_dir / ("model_" + std::to_string(id) + ".ckpt");
    require(p, "ensemble checkpoint");
    const io::Checkpoint ck = io::load_checkpoint(p);
    if (ck.get_meta("module") != "ensemble") throw Error(p.string() + " is not an ensemble model");
    models.push_back({get_mlp(ck, "net"), ck.get_meta("residual") == "1"});
  }
  return models;
}

void cmd_meta_train(const RunConfig& cfg, const fs::path& ensemble_dir,
                    const fs::path& out, const Options& opt) {
  cfg.validate();
  const Sampled s = load_sampled(ensemble_dir);
  const std::vector<ensemble::EnsembleModel> models = load_ensemble(ensemble_dir);
  const meta::MetaConfig mcfg = cfg.meta_config();
  const Key key = m_key(cfg, s.replicate, s.m).split("meta");
  const std::vector<trajgen::ReferenceTrajectory> refs =
      meta::make_meta_references(key.split("refs"), mcfg);

  std::optional<meta::MetaTrainState> resume;
  if (opt.resume && fs::exists(out / "state.ckpt")) {
    resume = meta_state_from_checkpoint(io::load_checkpoint(out / "state.ckpt"));
    note(opt, "meta-train: resuming at step " + std::to_string(resume->next_step));
  } else {
    prepare_output(out, opt.force);
  }
  write_run_info(out, cfg, {key.split("refs"), key.split("split"), key.split("init")});
  const std::size_t every = cfg.checkpoint_every;
  const auto on_step = [&](const meta::MetaTrainState& st) {
    const meta::CurveRow& r = st.curve.back();
    if (st.finished || (every > 0 && st.next_step % every == 0)) {
      io::save_checkpoint(out / "state.ckpt", meta_state_checkpoint(st));
      note(opt, "meta-train: step " + std::to_string(r.step) + " train " +
                    format_double(r.train_loss) + " valid " + format_double(r.valid_loss));
    }
  };
  const meta::MetaTrainState st =
      meta::meta_train(models, refs, key, mcfg, resume ? &*resume : nullptr, on_step);
  io::save_checkpoint(out / "state.ckpt", meta_state_checkpoint(st));
  io::write_text(out / "curve.csv", curve_csv(st.curve));
  io::Checkpoint ck;
  ck.set_meta("module", "meta");
  ck.set_meta("replicate", std::to_string(s.replicate));
  ck.set_meta("m", std::to_string(s.m));
  ck.set_meta("step", std::to_string(st.best_step));
  ck.set_meta("valid_loss", format_double(st.best_valid));
  add_meta_params(ck, "theta", st.best);
  io::save_checkpoint(out / "params.ckpt", ck);
}

void cmd_train_acmrr(const RunConfig& cfg, const fs::path& data_dir,
                     const fs::path& ensemble_dir, const fs::path& out,
                     const Options& opt) {
  cfg.validate();
  const Sampled s = load_sampled(ensemble_dir);
  const Dataset data = load_dataset(data_dir);
  std::vector<ensemble::TrajectoryLog> logs;
  for (std::size_t id : s.ids) {
    if (id >= data.logs.size()) throw Error("trajectory " + std::to_string(id) + " not in dataset");
    logs.push_back(data.logs[id]);
  }
  const acmrr::AcmrrConfig acfg = cfg.acmrr_config();
  const Key key = m_key(cfg, s.replicate, s.m).split("acmrr");

  std::optional<acmrr::AcmrrState> resume;
  if (opt.resume && fs::exists(out / "state.ckpt")) {
    resume = acmrr_state_from_checkpoint(io::load_checkpoint(out / "state.ckpt"));
    note(opt, "train-acmrr: resuming at step " + std::to_string(resume->next_step));
  } else {
    prepare_output(out, opt.force);
  }
  write_run_info(out, cfg, {key.split("split"), key.split("subsets"), key.split("init")});
  const std::size_t every = cfg.checkpoint_every;
  const auto on_step = [&](const acmrr::AcmrrState& st) {
    if (st.finished || (every > 0 && st.next_step % every == 0)) {
      io::save_checkpoint(out / "state.ckpt", acmrr_state_checkpoint(st));
    }
  };
  const acmrr::AcmrrState st =
      acmrr::acmrr_meta_train(logs, key, acfg, resume ? &*resume : nullptr, on_step);
  io::save_checkpoint(out / "state.ckpt", acmrr_state_checkpoint(st));
  io::write_text(out / "curve.csv", curve_csv(st.curve));
  note(opt, "train-acmrr: best step " + std::to_string(st.best_step) + " valid " +
                format_double(st.best_valid));
  io::Checkpoint ck;
  ck.set_meta("module", "acmrr");
  ck.set_meta("replicate", std::to_string(s.replicate));
  ck.set_meta("m", std::to_string(s.m));
  ck.set_meta("step", std::to_string(st.best_step));
  ck.set_meta("valid_loss", format_double(st.best_valid));
  add_mlp(ck, "features", st.best);
  io::save_checkpoint(out / "params.ckpt", ck);
}

std::string rows_csv(const std::vector<eval::EvalRow>& rows) {
  std::string s = "method,gain_id,M,seed,traj_id,wind,rms_error,rms_effort,diverged\n";
  for (const eval::EvalRow& r : rows)
    s += r.method + "," + r.gain_id + "," + std::to_string(r.m) + "," +
         std::to_string(r.seed) + "," + std::to_string(r.traj_id) + "," +
         format_double(r.wind) + "," + format_double(r.rms_error) + "," +
         format_double(r.rms_effort) + "," + (r.diverged ? "1" : "0") + "\n";
  return s;
}

std::string aggregate_csv(const std::vector<eval::AggregateRow>& rows) {
  std::string s =
      "method,gain_id,M,seed,n,diverged,mean_error,sd_error,mean_effort,sd_effort\n";
  for (const eval::AggregateRow& r : rows)
    s += r.method + "," + r.gain_id + "," + std::to_string(r.m) + "," +
         std::to_string(r.seed) + "," + std::to_string(r.n) + "," +
         std::to_string(r.diverged) + "," + format_double(r.mean_error) + "," +
         format_double(r.sd_error) + "," + format_double(r.mean_effort) + "," +
         format_double(r.sd_effort) + "\n";
  return s;
}

std::string summary_csv(const std::vector<eval::SummaryRow>& rows) {
  std::string s =
      "method,gain_id,M,seeds,diverged,mean_error,sd_error,mean_effort,sd_effort\n";
  for (const eval::SummaryRow& r : rows)
    s += r.method + "," + r.gain_id + "," + std::to_string(r.m) + "," +
         std::to_string(r.seeds) + "," + std::to_string(r.diverged) + "," +
         format_double(r.mean_error) + "," + format_double(r.sd_error) + "," +
         format_double(r.mean_effort) + "," + format_double(r.sd_effort) + "\n";
  return s;
}

std::vector<eval::EvalRow> parse_rows(const fs::path& path) {
  const io::CsvTable t =
      io::read_csv(path, {"method", "gain_id", "M", "seed", "traj_id", "wind",
                          "rms_error", "rms_effort", "diverged"});
  std::vector<eval::EvalRow> rows(t.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    eval::EvalRow& r = rows[i];
    r.method = t.rows[i][0];
    r.gain_id = t.rows[i][1];
    r.m = t.integer(i, 2);
    r.seed = t.integer(i, 3);
    r.traj_id = t.integer(i, 4);
    r.wind = t.number(i, 5);
    r.rms_error = t.number(i, 6);
    r.rms_effort = t.number(i, 7);
    const std::string& d = t.rows[i][8];
    if (d != "0" && d != "1") throw ParseError("diverged must be 0 or 1", t.lines[i]);
    r.diverged = d == "1";
  }
  return rows;
}

std::size_t cmd_evaluate(const RunConfig& cfg, const fs::path& runs_dir,
                         const fs::path& out, const Options& opt) {
  cfg.validate();
  // Fail on a missing checkpoint before any simulation runs.
  for (std::size_t s = 0; s < cfg.seeds; ++s)
    for (std::size_t m : cfg.m_values) {
      require(run_dir(runs_dir, s, m) / "meta" / "params.ckpt", "meta-trained checkpoint");
      require(run_dir(runs_dir, s, m) / "acmrr" / "params.ckpt", "ACMRR checkpoint");
    }
  prepare_output(out, opt.force);

  const std::vector<eval::GainSetting> grid = eval::gain_grid(cfg.gain_scales);
  std::vector<eval::EvalRow> rows;
  std::string testsets = "seed,n_test,hash,above_train_support\n";
  std::vector<Key> streams;
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const Key tkey = replicate_key(cfg, s).split("test");
    streams.push_back(tkey);
    const std::vector<eval::TestCase> tests = eval::make_test_set(cfg.test_set_config(), tkey);
    testsets += std::to_string(s) + "," + std::to_string(tests.size()) + "," +
                hex64(eval::test_set_hash(tests)) + "," +
                std::to_string(eval::count_above(tests, cfg.train_wind.hi)) + "\n";

    eval::MethodSpec pid{"pid", eval::MethodSpec::Kind::kPid, std::nullopt, grid};
    note(opt, "evaluate: seed " + std::to_string(s) + " pid");
    const std::vector<eval::EvalRow> pid_rows =
        eval::evaluate_methods({pid}, tests, cfg.eval_context(0, s));

    for (std::size_t m : cfg.m_values) {
      const fs::path rd = run_dir(runs_dir, s, m);
      const io::Checkpoint mck = io::load_checkpoint(rd / "meta" / "params.ckpt");
      const io::Checkpoint ack = io::load_checkpoint(rd / "acmrr" / "params.ckpt");
      const meta::MetaParams theta = get_meta_params(mck, "theta");

      eval::MethodSpec ours{"ours", eval::MethodSpec::Kind::kAdaptive, theta.features, grid};
      ours.gains.push_back({"meta", theta.gain_matrices()});
      eval::MethodSpec acm{"acmrr", eval::MethodSpec::Kind::kAdaptive,
                           get_mlp(ack, "features"), grid};

      for (eval::EvalRow r : pid_rows) {
        r.m = m;
        rows.push_back(r);
      }
      note(opt, "evaluate: seed " + std::to_string(s) + ", M = " + std::to_string(m));
      const std::vector<eval::EvalRow> learned =
          eval::evaluate_methods({ours, acm}, tests, cfg.eval_context(m, s));
      rows.insert(rows.end(), learned.begin(), learned.end());
    }
  }

  std::size_t diverged = 0;
  for (const eval::EvalRow& r : rows) diverged += r.diverged ? 1 : 0;
  const std::vector<eval::AggregateRow> agg = eval::aggregate(rows);
  io::write_text(out / "rows.csv", rows_csv(rows));
  io::write_text(out / "aggregate.csv", aggregate_csv(agg));
  io::write_text(out / "summary.csv", summary_csv(eval::summarize(agg)));
  io::write_text(out / "testsets.csv", testsets);
  write_run_info(out, cfg, streams);
  note(opt, "evaluate: " + std::to_string(rows.size()) + " runs, " +
                std::to_string(diverged) + " diverged");
  return diverged;
}

bool cmd_report(const fs::path& eval_dir, std::ostream& out) {
  const std::vector<eval::EvalRow> rows = parse_rows(eval_dir / "rows.csv");
  const std::vector<eval::AggregateRow> agg = eval::aggregate(rows);
  const std::vector<eval::SummaryRow> sum = eval::summarize(agg);
  bool ok = true;
  for (const auto& [name, text] :
       {std::pair<std::string, std::string>{"aggregate.csv", aggregate_csv(agg)},
        {"summary.csv", summary_csv(sum)}}) {
    const fs::path p = eval_dir / name;
    if (!fs::exists(p) || io::read_text(p) != text) {
      out << name << ": does not match rows.csv\n";
      ok = false;
    }
  }
  char line[256];
  std::snprintf(line, sizeof line, "%-7s %-6s %4s %5s %4s %12s %12s %12s %12s\n",
                "method", "gains", "M", "seeds", "div", "rms_error", "sd", "rms_effort",
                "sd");
  out << line;
  for (const eval::SummaryRow& r : sum) {
    std::snprintf(line, sizeof line, "%-7s %-6s %4zu %5zu %4zu %12.5g %12.5g %12.5g %12.5g\n",
                  r.method.c_str(), r.gain_id.c_str(), r.m, r.seeds, r.diverged,
                  r.mean_error, r.sd_error, r.mean_effort, r.sd_effort);
    out << line;
  }
  if (fs::exists(eval_dir / "testsets.csv")) {
    const io::CsvTable t = io::read_csv(eval_dir / "testsets.csv");
    std::size_t above = 0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) above += t.integer(r, 3);
    out << "test winds above the training support: " << above << "\n";
  }
  return ok;
}

std::size_t run_pipeline(const RunConfig& cfg, const fs::path& out, const Options& opt) {
  cfg.validate();
  if (!opt.resume) prepare_output(out, opt.force);
  fs::create_directories(out);
  write_run_info(out, cfg, {Key::from_seed(cfg.seed)});
  Options sub = opt;
  sub.force = true;

  const fs::path data = out / "dataset";
  if (!(opt.resume && fs::exists(data / "manifest.csv"))) cmd_collect(cfg, data, sub);
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    for (std::size_t m : cfg.m_values) {
      const fs::path rd = run_dir(out / "runs", s, m);
      if (!(opt.resume && fs::exists(rd / "ensemble" / "sampled.csv"))) {
        cmd_train_ensemble(cfg, data, s, m, rd / "ensemble", sub);
      }
      if (!(opt.resume && fs::exists(rd / "meta" / "params.ckpt"))) {
        cmd_meta_train(cfg, rd / "ensemble", rd / "meta", sub);
      }
      if (!(opt.resume && fs::exists(rd / "acmrr" / "params.ckpt"))) {
        cmd_train_acmrr(cfg, data, rd / "ensemble", rd / "acmrr", sub);
      }
    }
  }
  return cmd_evaluate(cfg, out / "runs", out / "eval", sub);
}

}  // namespace coml::pipeline
