#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "coml/config.hpp"
#include "coml/errors.hpp"
#include "coml/io.hpp"
#include "coml/pipeline.hpp"

namespace coml::pipeline {
namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("coml_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig tiny() {
  RunConfig c;
  c.seed = 5;
  c.n_traj = 4;
  c.collect_duration = 2.0;
  c.m_values = {2};
  c.seeds = 1;
  c.ensemble_epochs = 2;
  c.meta_n_refs = 2;
  c.meta_duration = 1.0;
  c.meta_steps = 2;
  c.acmrr_steps = 2;
  c.n_test = 2;
  c.test_duration = 2.0;
  c.gain_scales = {1.0};
  c.checkpoint_every = 1;
  c.validate();
  return c;
}

std::string slurp(const fs::path& p) { return io::read_text(p); }

TEST(Output, NonEmptyDirectoryNeedsForce) {
  const fs::path dir = scratch("nonempty");
  fs::create_directories(dir);
  std::ofstream(dir / "old.txt") << "x";
  EXPECT_THROW(prepare_output(dir, false), Error);
  prepare_output(dir, true);
  EXPECT_TRUE(fs::is_empty(dir));
}

TEST(Sampling, MoreTrajectoriesThanCollectedIsAnError) {
  const RunConfig c = tiny();
  EXPECT_THROW(sample_trajectories(c, 4, 0, 5), Error);
  const auto ids = sample_trajectories(c, 4, 0, 4);
  EXPECT_EQ(ids, (std::vector<std::size_t>{0, 1, 2, 3}));
  const auto a = sample_trajectories(c, 40, 1, 10), b = sample_trajectories(c, 40, 1, 10);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
}

TEST(Checkpoint, MetaStateSurvivesDiskAndResumes) {
  meta::MetaConfig cfg;
  cfg.n_refs = 2;
  cfg.ref_duration = 1.0;
  cfg.rollout.horizon = 1.0;
  cfg.steps = 3;
  const auto refs = meta::make_meta_references(Key::from_seed(1), cfg);
  const std::vector<ensemble::EnsembleModel> models{ensemble::init_model(Key::from_seed(2), {}),
                                                    ensemble::init_model(Key::from_seed(3), {})};
  const Key key = Key::from_seed(4);
  const meta::MetaTrainState full = meta::meta_train(models, refs, key, cfg);
  const meta::MetaTrainState part = meta::meta_train(models, refs, key, cfg, nullptr, {}, 2);
  const fs::path dir = scratch("ckpt");
  fs::create_directories(dir);
  io::save_checkpoint(dir / "state.ckpt", meta_state_checkpoint(part));
  const meta::MetaTrainState back = meta_state_from_checkpoint(io::load_checkpoint(dir / "state.ckpt"));
  EXPECT_EQ(back.next_step, part.next_step);
  EXPECT_EQ(back.best_valid, part.best_valid);
  const meta::MetaTrainState rest = meta::meta_train(models, refs, key, cfg, &back);
  const auto a = full.best.flatten(), b = rest.best.flatten();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(full.best_valid, rest.best_valid);
}

TEST(Checkpoint, MlpRoundTrip) {
  const nn::Mlp net = control::make_feature_network(Key::from_seed(6), 32, true);
  io::Checkpoint ck;
  add_mlp(ck, "theta.features", net);
  const fs::path dir = scratch("mlp");
  fs::create_directories(dir);
  io::save_checkpoint(dir / "m.ckpt", ck);
  const nn::Mlp back = get_mlp(io::load_checkpoint(dir / "m.ckpt"), "theta.features");
  EXPECT_EQ(back.sizes, net.sizes);
  EXPECT_EQ(back.input_scale, net.input_scale);
  for (std::size_t i = 0; i < net.params.size(); ++i) EXPECT_EQ(back.params[i], net.params[i]);
}

class TinyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("run"));
    Options opt;
    run_pipeline(tiny(), *root_ / "a", opt);
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }
  static fs::path* root_;
};
fs::path* TinyPipeline::root_ = nullptr;

TEST_F(TinyPipeline, WritesTheExpectedLayout) {
  const fs::path a = *root_ / "a";
  for (const char* f : {"dataset/manifest.csv", "dataset/traj_0000.csv", "runs/seed_0/M_2/ensemble/sampled.csv",
                        "runs/seed_0/M_2/meta/params.ckpt", "runs/seed_0/M_2/acmrr/params.ckpt",
                        "eval/rows.csv", "eval/aggregate.csv", "eval/summary.csv", "eval/testsets.csv",
                        "config.resolved", "streams.txt"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
  const io::CsvTable rows = io::read_csv(a / "eval/rows.csv");
  // pid, ours (1x and meta gains), acmrr, times 2 test cases.
  EXPECT_EQ(rows.rows.size(), 4u * 2u);
}

TEST_F(TinyPipeline, ReportDetectsTampering) {
  const fs::path eval = *root_ / "a" / "eval";
  std::ostringstream out;
  EXPECT_TRUE(cmd_report(eval, out));
  EXPECT_NE(out.str().find("ours"), std::string::npos);
  const fs::path copy = *root_ / "tampered";
  fs::create_directories(copy);
  for (const auto& e : fs::directory_iterator(eval)) fs::copy_file(e.path(), copy / e.path().filename());
  std::string agg = slurp(copy / "aggregate.csv");
  agg[agg.size() - 2] = agg[agg.size() - 2] == '1' ? '2' : '1';
  io::write_text(copy / "aggregate.csv", agg);
  std::ostringstream sink;
  EXPECT_FALSE(cmd_report(copy, sink));
}

TEST_F(TinyPipeline, RerunWithMoreThreadsIsByteIdentical) {
  RunConfig c = tiny();
  c.threads = 2;
  run_pipeline(c, *root_ / "b", Options{});
  for (const char* f : {"eval/rows.csv", "eval/aggregate.csv", "eval/summary.csv", "eval/testsets.csv",
                        "dataset/manifest.csv", "runs/seed_0/M_2/meta/curve.csv",
                        "runs/seed_0/M_2/acmrr/curve.csv"})
    EXPECT_EQ(slurp(*root_ / "a" / f), slurp(*root_ / "b" / f)) << f;
}

TEST_F(TinyPipeline, ResumeSkipsFinishedStages) {
  const fs::path a = *root_ / "a";
  const auto before = fs::last_write_time(a / "runs/seed_0/M_2/meta/params.ckpt");
  const std::string rows = slurp(a / "eval/rows.csv");
  Options opt;
  opt.resume = true;
  run_pipeline(tiny(), a, opt);
  EXPECT_EQ(fs::last_write_time(a / "runs/seed_0/M_2/meta/params.ckpt"), before);
  EXPECT_EQ(slurp(a / "eval/rows.csv"), rows);
}

TEST_F(TinyPipeline, SecondRunIntoSameDirectoryNeedsForce) {
  EXPECT_THROW(run_pipeline(tiny(), *root_ / "a", Options{}), Error);
}

}  // namespace
}  // namespace coml::pipeline
