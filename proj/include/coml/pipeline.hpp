#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "coml/acmrr.hpp"
#include "coml/config.hpp"
#include "coml/ensemble.hpp"
#include "coml/eval.hpp"
#include "coml/io.hpp"
#include "coml/meta_train.hpp"
#include "coml/random.hpp"

// Commands that turn a RunConfig into artifacts on disk. Every artifact is a
// function of the master seed alone: each command derives its keys from
//
//   root = Key::from_seed(seed)
//   collect             root/collect
//   replicate s         root/replicate/<s>
//   test set            root/replicate/<s>/test
//   M trajectories      root/replicate/<s>/M/<M>/sample
//   ensemble            root/replicate/<s>/M/<M>/ensemble
//   meta-training       root/replicate/<s>/M/<M>/meta
//   ACMRR               root/replicate/<s>/M/<M>/acmrr
//
// and writes the paths it used to streams.txt next to config.resolved.
namespace coml::pipeline {

namespace fs = std::filesystem;

struct Options {
  bool force = false;   // allow writing into a non-empty directory
  bool resume = false;  // continue from state.ckpt when present
  std::ostream* log = nullptr;
};

// Creates `dir`. A non-empty directory is an error unless `force`, in which
// case its previous contents are removed.
void prepare_output(const fs::path& dir, bool force);
// config.resolved and streams.txt.
void write_run_info(const fs::path& dir, const RunConfig& cfg,
                    const std::vector<Key>& streams);

Key replicate_key(const RunConfig& cfg, std::size_t replicate);
Key m_key(const RunConfig& cfg, std::size_t replicate, std::size_t m);

// Serialization of networks and parameter sets under a name prefix.
void add_mlp(io::Checkpoint& ck, const std::string& prefix, const nn::Mlp& net);
nn::Mlp get_mlp(const io::Checkpoint& ck, const std::string& prefix);
void add_meta_params(io::Checkpoint& ck, const std::string& prefix,
                     const meta::MetaParams& p);
meta::MetaParams get_meta_params(const io::Checkpoint& ck, const std::string& prefix);
io::Checkpoint meta_state_checkpoint(const meta::MetaTrainState& st);
meta::MetaTrainState meta_state_from_checkpoint(const io::Checkpoint& ck);
io::Checkpoint acmrr_state_checkpoint(const acmrr::AcmrrState& st);
acmrr::AcmrrState acmrr_state_from_checkpoint(const io::Checkpoint& ck);

// Dataset: traj_<id>.csv per trajectory plus manifest.csv.
struct Dataset {
  std::vector<ensemble::TrajectoryLog> logs;
  std::vector<double> wind;
};
void cmd_collect(const RunConfig& cfg, const fs::path& out, const Options& opt);
Dataset load_dataset(const fs::path& dir);

// Trajectory ids used for (replicate, M): M distinct ids, ascending.
std::vector<std::size_t> sample_trajectories(const RunConfig& cfg,
                                             std::size_t n_available,
                                             std::size_t replicate, std::size_t m);

// Ensemble directory: model_<id>.ckpt, curve_<id>.csv and sampled.csv
// (replicate, M, traj_id).
void cmd_train_ensemble(const RunConfig& cfg, const fs::path& data_dir,
                        std::size_t replicate, std::size_t m, const fs::path& out,
                        const Options& opt);

struct Sampled {
  std::size_t replicate = 0;
  std::size_t m = 0;
  std::vector<std::size_t> ids;
};
Sampled load_sampled(const fs::path& ensemble_dir);
std::vector<ensemble::EnsembleModel> load_ensemble(const fs::path& ensemble_dir);

// params.ckpt (lowest validation loss), state.ckpt, curve.csv.
void cmd_meta_train(const RunConfig& cfg, const fs::path& ensemble_dir,
                    const fs::path& out, const Options& opt);
// Uses the trajectories listed in the ensemble directory's sampled.csv.
void cmd_train_acmrr(const RunConfig& cfg, const fs::path& data_dir,
                     const fs::path& ensemble_dir, const fs::path& out,
                     const Options& opt);

// Evaluates PID, "ours" and "acmrr" for every replicate seed and M value,
// reading runs_dir/seed_<s>/M_<m>/{meta,acmrr}/params.ckpt. Writes rows.csv,
// aggregate.csv, summary.csv and testsets.csv. Returns the number of
// diverged runs.
std::size_t cmd_evaluate(const RunConfig& cfg, const fs::path& runs_dir,
                         const fs::path& out, const Options& opt);

// Recomputes aggregate.csv and summary.csv from rows.csv and compares them
// byte for byte with the files on disk; prints the summary. Returns false on
// a mismatch.
bool cmd_report(const fs::path& eval_dir, std::ostream& out);

// collect, then every (seed, M) training job, then evaluation, under `out`:
//   dataset/  runs/seed_<s>/M_<m>/{ensemble,meta,acmrr}/  eval/
std::size_t run_pipeline(const RunConfig& cfg, const fs::path& out,
                         const Options& opt);

// CSV writers shared by evaluate and report.
std::string rows_csv(const std::vector<eval::EvalRow>& rows);
std::string aggregate_csv(const std::vector<eval::AggregateRow>& rows);
std::string summary_csv(const std::vector<eval::SummaryRow>& rows);
std::vector<eval::EvalRow> parse_rows(const fs::path& path);

}  // namespace coml::pipeline
