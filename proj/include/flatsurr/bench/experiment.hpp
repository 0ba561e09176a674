#pragma once

// End-to-end runs: data and target zoo (cached under the shared directory,
// keyed by the zoo hash), per-seed surrogate training, attacks on every
// requested checkpoint, transfer evaluation and the report artifacts.
//
// Artifact layout under output_dir:
//   config.json, transfer.csv, transfer_agg.csv, summary.json, *.svg
//   seed_<s>/trained.json            training finished (counters, accuracy)
//   seed_<s>/ckpt_e<NNN>.fskp        attacked checkpoints
//   seed_<s>/attack_e<NNN>.csv       transfer rows of one checkpoint
//   seed_<s>/metrics.jsonl, sharpness.csv, alpha.csv, early_stop.json
//   error.json                       first failing stage, if any
// Every stage is skipped when its artifact already exists.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "flatsurr/bench/config.hpp"
#include "flatsurr/bench/report.hpp"
#include "flatsurr/sharpness/alpha.hpp"

namespace flatsurr {

/// Raised by run_experiment; `stage()` names the step that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct NamedModel {
  std::string name;
  Model<float> model;
};

struct Zoo {
  Dataset train;
  Dataset test;
  std::vector<NamedModel> targets;
  std::vector<NamedModel> validation;
  std::vector<Index> eval_idx;        // into test
  std::vector<Index> validation_idx;  // into test, disjoint from eval_idx
};

/// Records which models and which example indices a procedure touched.
struct AccessLog {
  std::set<std::string> models;
  std::set<Index> examples;
  void touch(const std::string& model, const std::vector<Index>& idx);
  bool disjoint_from(const AccessLog& other) const;
};

struct RunOptions {
  int threads = 1;
  std::ostream* log = nullptr;
};

/// Builds or loads the train / test split under the shared directory.
std::pair<Dataset, Dataset> prepare_data(const ExperimentConfig& cfg);

/// Builds or loads the data split, the trained targets and the eval sets.
/// `trained` (optional) counts models trained rather than loaded.
Zoo prepare_zoo(const ExperimentConfig& cfg, const RunOptions& ro = {}, int* trained = nullptr);

/// Success rate of `adv` on every named model; appends rows for (epoch, seed).
void evaluate_transfer(const AdvBatch<float>& adv, const std::vector<NamedModel>& models, int epoch,
                       std::uint64_t seed, std::vector<TransferRow>& out, AccessLog* log = nullptr,
                       const std::vector<Index>* idx = nullptr);

struct EarlyStopResult {
  int epoch = 0;
  std::vector<int> epochs;
  std::vector<double> curve;  // mean validation success per checkpoint
};

/// Epoch whose checkpoint transfers best to the validation targets on the
/// validation examples; ties go to the earlier epoch. Only validation models
/// and examples are touched (recorded in `log`).
EarlyStopResult early_stop_select(const std::vector<NamedModel>& validation_targets, const Dataset& examples_from,
                                  const std::vector<Index>& examples, const Graph& surrogate,
                                  const std::vector<EpochCheckpoint<float>>& trajectory, const AttackSpec& spec,
                                  std::uint64_t seed, AccessLog* log = nullptr);

struct SeedResult {
  std::uint64_t seed = 0;
  double test_acc = 0;
  std::uint64_t fwdbwd_passes = 0;
  long steps = 0;
  bool trained = false;  // false when loaded from a previous run
  std::vector<TransferRow> transfer;
  std::vector<SharpnessRecord> sharpness;
  std::vector<AlphaRecord> alpha;
  std::optional<EarlyStopResult> early_stop;
};

struct ExperimentSummary {
  std::string dir;
  int models_trained = 0;  // targets + surrogates trained in this call
  std::vector<SeedResult> seeds;
  std::vector<TransferRow> transfer;
  std::vector<AggregateRow> aggregate;
};

/// Runs (or resumes) the whole experiment. Stage failures are written to
/// <output_dir>/error.json and rethrown as StageError.
ExperimentSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& ro = {});

struct SweepRow {
  nlohmann::json value;
  std::string status = "ok";  // or the error message
  int n = 0;
  double mean = 0;
  double sd = 0;
  std::string dir;
};

/// One run per value of `cfg.sweep_path` (sharing data, targets and seeds);
/// failures are recorded and the sweep continues. Writes sweep.csv under
/// cfg.output_dir. Success is the final-epoch mean over targets per seed.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const RunOptions& ro = {});
std::string sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

/// Recomputes aggregates and redraws the plots from the CSVs in `dir`.
/// Throws FormatError when a table lacks required columns.
void emit_report(const std::string& dir);

/// Mean success over targets of the final attacked epoch, one value per seed.
std::vector<double> final_seed_means(const std::vector<TransferRow>& rows);

}  // namespace flatsurr
