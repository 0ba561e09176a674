#pragma once

// Experiment configuration: a JSON document with a fixed schema. Unknown keys
// are rejected; omitted keys take the defaults below.
//
// {
//   "name": "toy",
//   "data":        {"kind", "n_train", "n_test", "classes", "noise", "side", "channels", "seed"},
//   "surrogate":   {"arch", "optimizer", "epochs", "batch_size", "seeds"},
//   "targets":     {"archs", "validation_archs", "seeds", "optimizer", "epochs", "batch_size"},
//   "attack":      {"spec", "eval_n", "eval_seed", "validation_n", "epochs", "lgv"},
//   "diagnostics": {"sharpness", "sharpness_epochs", "hessian_subset", "probes", "max_iters", "worst_case",
//                   "alpha_every"},
//   "sweep":       {"path", "values"},
//   "output":      {"dir", "shared_dir"}
// }
//
// arch:      {"family", "widths", "blocks", "batch_norm"}
// optimizer: {"preset", "rule", "lr", "decays", "momentum", "weight_decay", "rho", "alpha_gsam",
//             "looksam_k", "looksam_warmup", "looksam_alpha", "swa_fraction"}
//            ("preset" is applied first, then the explicit keys.)
// attack.epochs: "all", "final", or a list of 0-based epochs.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flatsurr/attacks/attack.hpp"
#include "flatsurr/data/dataset.hpp"
#include "flatsurr/sharpness/sharpness.hpp"

namespace flatsurr {

struct AttackEpochs {
  bool all = false;
  bool final = true;
  std::vector<int> list;
};

struct ExperimentConfig {
  nlohmann::json doc;  // the validated document as given (plus overrides)

  std::string name = "experiment";
  SyntheticOptions data;
  Index n_train = 1000;
  Index n_test = 1000;

  ArchSpec surrogate_arch;
  OptimizerSpec surrogate_opt;
  int surrogate_epochs = 60;
  Index surrogate_batch = 64;
  std::vector<std::uint64_t> seeds{0, 1, 2};

  std::vector<ArchSpec> target_archs;
  std::vector<ArchSpec> validation_archs;
  std::vector<std::uint64_t> target_seeds{100};
  OptimizerSpec target_opt;
  int target_epochs = 30;
  Index target_batch = 64;

  AttackSpec attack;
  Index eval_n = 200;
  std::uint64_t eval_seed = 0;
  Index validation_n = 200;
  AttackEpochs attack_epochs;
  bool lgv_enabled = false;
  LgvOptions lgv;

  bool sharpness = false;
  std::vector<int> sharpness_epochs;  // empty = every epoch
  SharpnessOptions sharpness_opts;
  int alpha_every = 0;  // 0 disables the alpha trace

  std::string sweep_path;
  nlohmann::json sweep_values = nlohmann::json::array();

  std::string output_dir = "runs/experiment";
  std::string shared_dir;  // data / targets cache; defaults to <output_dir>/shared

  static ExperimentConfig from_json(const nlohmann::json& doc);
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  /// Copy with the value at dotted `path` (e.g. "surrogate.optimizer.rho")
  /// replaced. Throws ConfigError if the path is not part of the schema.
  ExperimentConfig with_override(const std::string& path, const nlohmann::json& value) const;

  std::string dump() const { return doc.dump(2); }
  /// Hash of the sections that determine the data and the target zoo.
  std::string zoo_hash() const;
  /// Hash of the whole document.
  std::string hash() const;
};

ArchSpec parse_arch(const nlohmann::json& j, Shape input_shape, Index classes);
nlohmann::json arch_json(const ArchSpec& a);
OptimizerSpec parse_optimizer(const nlohmann::json& j);
nlohmann::json optimizer_json(const OptimizerSpec& s);

std::string hex64(std::uint64_t v);

}  // namespace flatsurr
