#include "flatsurr/bench/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <ostream>
#include <thread>

#include "flatsurr/core/binary_io.hpp"
#include "flatsurr/models/checkpoint.hpp"

namespace flatsurr {

namespace fs = std::filesystem;
using nlohmann::json;
using io::read_file;
using io::write_text_atomic;

void AccessLog::touch(const std::string& model, const std::vector<Index>& idx) {
  models.insert(model);
  examples.insert(idx.begin(), idx.end());
}

bool AccessLog::disjoint_from(const AccessLog& other) const {
  for (const auto& m : models)
    if (other.models.count(m)) return false;
  for (Index i : examples)
    if (other.examples.count(i)) return false;
  return true;
}

namespace {

std::mutex log_mutex;

void say(const RunOptions& ro, const std::string& msg) {
  if (!ro.log) return;
  std::lock_guard<std::mutex> lock(log_mutex);
  *ro.log << msg << std::endl;
}

std::string text_of(const std::string& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

json json_of(const std::string& path) { return json::parse(text_of(path)); }

std::string epoch_tag(int e) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", e);
  return buf;
}

// Runs `fn`, recording a failure as <dir>/error.json before rethrowing.
template <typename Fn>
auto stage(const std::string& dir, const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    json err = {{"stage", name}, {"message", e.what()}};
    try {
      fs::create_directories(dir);
      write_text_atomic(dir + "/error.json", err.dump(2) + "\n");
    } catch (...) {
    }
    throw StageError(name, e.what());
  }
}

std::string model_name(const ArchSpec& a, std::uint64_t seed, bool with_seed) {
  return with_seed ? a.label() + "@" + std::to_string(seed) : a.label();
}

std::vector<NamedModel> train_zoo(const std::vector<ArchSpec>& archs, const ExperimentConfig& cfg,
                                  const Dataset& train_set, const std::string& dir, const std::string& prefix,
                                  std::uint64_t seed_offset, const RunOptions& ro, int* trained) {
  std::vector<NamedModel> out;
  const Tensor<float> y = train_set.label_tensor();
  TrainOptions opts;
  opts.batch_size = cfg.target_batch;
  opts.checkpoint_every = 0;
  for (std::uint64_t ts : cfg.target_seeds) {
    for (std::size_t k = 0; k < archs.size(); ++k) {
      const std::string name = model_name(archs[k], ts, cfg.target_seeds.size() > 1);
      const std::string path = dir + "/" + prefix + "_" + name + ".fskp";
      const std::uint64_t seed = ts * 1000 + seed_offset + k;
      Model<float> m = build_model<float>(archs[k], seed);
      if (fs::exists(path)) {
        m.params = load_checkpoint(path, m.graph).params;
      } else {
        say(ro, "training " + prefix + " " + name);
        auto traj = train(m.graph, m.params, train_set.inputs, y, cfg.target_opt, cfg.target_epochs, seed, {}, opts);
        m.params = std::move(traj.final_params);
        save_checkpoint(path, make_checkpoint(m.params, CheckpointMeta{cfg.target_epochs - 1, seed,
                                                                       cfg.target_opt.describe(), cfg.zoo_hash()}));
        if (trained) ++*trained;
      }
      out.push_back(NamedModel{name, std::move(m)});
    }
  }
  return out;
}

std::vector<Model<float>> models_of(const std::vector<NamedModel>& v) {
  std::vector<Model<float>> out;
  for (const auto& n : v) out.push_back(n.model);
  return out;
}

// Epochs whose checkpoint is attacked; `E` stands for the averaged weights
// of rules that average.
std::vector<int> attacked_epochs(const ExperimentConfig& cfg) {
  std::set<int> s;
  const int E = cfg.surrogate_epochs;
  if (cfg.attack_epochs.all)
    for (int e = 0; e < E; ++e) s.insert(e);
  for (int e : cfg.attack_epochs.list) s.insert(e);
  if (cfg.attack_epochs.final || s.empty()) s.insert(averages_weights(cfg.surrogate_opt.rule) ? E : E - 1);
  return {s.begin(), s.end()};
}

std::uint64_t attack_seed(const ExperimentConfig& cfg, std::uint64_t seed) { return cfg.eval_seed * 7919 + seed; }

AdvBatch<float> attack_checkpoint(const ExperimentConfig& cfg, const Zoo& zoo, const Graph& graph,
                                  const ParamSet<float>& params, const Tensor<float>& x, const std::vector<int>& y,
                                  std::uint64_t seed) {
  if (!cfg.lgv_enabled) return bim(graph, params, x, y, cfg.attack, attack_seed(cfg, seed));
  const auto pool = lgv_collect(graph, params, zoo.train.inputs, zoo.train.label_tensor(), cfg.lgv, seed + 17);
  return bim(graph, pool, x, y, cfg.attack, attack_seed(cfg, seed));
}

std::vector<AlphaRecord> parse_alpha_csv(const std::string& text) {
  const auto t = parse_csv(text, {"iteration", "epoch", "f0", "s0", "f1", "s1", "alpha"});
  std::vector<AlphaRecord> out;
  for (const auto& r : t.rows) {
    AlphaRecord a;
    a.iteration = std::stol(r[t.column("iteration")]);
    a.epoch = std::stoi(r[t.column("epoch")]);
    a.f0 = std::stod(r[t.column("f0")]);
    a.s0 = std::stod(r[t.column("s0")]);
    a.f1 = std::stod(r[t.column("f1")]);
    a.s1 = std::stod(r[t.column("s1")]);
    a.alpha = std::stod(r[t.column("alpha")]);
    out.push_back(a);
  }
  return out;
}

SharpnessRecord sharpness_from_json(const json& j) {
  SharpnessRecord r;
  r.epoch = j.at("epoch");
  r.top_eigenvalue = j.at("top_eigenvalue");
  r.power_iterations = j.at("power_iterations");
  r.trace_estimate = j.at("trace_estimate");
  r.trace_stderr = j.at("trace_stderr");
  r.worst_case_gap = j.at("worst_case_gap");
  r.n_examples = j.at("n_examples");
  r.probes = j.at("probes");
  return r;
}

struct Sample {
  Tensor<float> x;
  std::vector<int> y;
};

Sample sample_of(const Dataset& d, const std::vector<Index>& idx) {
  const Dataset s = d.subset(idx, d.split);
  return {s.inputs, s.labels};
}

SeedResult run_seed(const ExperimentConfig& cfg, const Zoo& zoo, std::uint64_t seed, const RunOptions& ro) {
  const std::string dir = cfg.output_dir + "/seed_" + std::to_string(seed);
  fs::create_directories(dir);
  SeedResult res;
  res.seed = seed;
  const Graph graph = build_graph(cfg.surrogate_arch);
  const auto epochs = attacked_epochs(cfg);
  const int E = cfg.surrogate_epochs;
  const std::string done_path = dir + "/trained.json";
  const Tensor<float> ytrain = zoo.train.label_tensor();

  stage(cfg.output_dir, "train-surrogate", [&] {
    if (fs::exists(done_path)) {
      const json j = json_of(done_path);
      res.test_acc = j.at("test_acc");
      res.fwdbwd_passes = j.at("fwdbwd_passes");
      res.steps = j.at("steps");
      for (const auto& s : j.at("sharpness")) res.sharpness.push_back(sharpness_from_json(s));
      if (fs::exists(dir + "/alpha.csv")) res.alpha = parse_alpha_csv(text_of(dir + "/alpha.csv"));
      return;
    }
    say(ro, "training surrogate seed " + std::to_string(seed));
    const ParamSet<float> init = init_params<float>(graph, seed);
    std::string metrics;
    AlphaLog alpha;
    std::set<int> sharp_at(cfg.sharpness_epochs.begin(), cfg.sharpness_epochs.end());
    TrainHooks<float> hooks;
    hooks.on_metrics = [&](const EpochMetrics& m) { metrics += metrics_json(m) + "\n"; };
    if (cfg.sharpness) {
      hooks.on_epoch = [&](int epoch, const ParamSet<float>& p) {
        if (!sharp_at.empty() && !sharp_at.count(epoch)) return;
        SharpnessOptions so = cfg.sharpness_opts;
        so.seed = seed * 31 + so.seed;
        res.sharpness.push_back(measure_sharpness(graph, p, zoo.train.inputs, ytrain, epoch, so));
      };
    }
    if (cfg.alpha_every > 0) hooks.on_iteration = make_alpha_hook<float>(graph, alpha, cfg.alpha_every);
    TrainOptions opts;
    opts.batch_size = cfg.surrogate_batch;
    opts.checkpoint_every = 1;
    const Tensor<float> ytest = zoo.test.label_tensor();
    auto traj = train(graph, init, zoo.train.inputs, ytrain, cfg.surrogate_opt, E, seed, hooks, opts,
                      &zoo.test.inputs, &ytest);
    res.trained = true;
    res.test_acc = accuracy(graph, traj.final_params, zoo.test.inputs, zoo.test.labels);
    res.fwdbwd_passes = traj.fwdbwd_passes;
    res.steps = traj.steps;
    res.alpha = alpha.records;
    for (int e : epochs) {
      const ParamSet<float>& p = e >= E ? traj.final_params : traj.checkpoints.at(static_cast<std::size_t>(e)).params;
      save_checkpoint(dir + "/ckpt_e" + epoch_tag(e) + ".fskp",
                      make_checkpoint(p, CheckpointMeta{e, seed, cfg.surrogate_opt.describe(), cfg.hash()}));
    }
    write_text_atomic(dir + "/metrics.jsonl", metrics);
    if (cfg.sharpness) write_text_atomic(dir + "/sharpness.csv", sharpness_csv(res.sharpness));
    if (cfg.alpha_every > 0) write_text_atomic(dir + "/alpha.csv", alpha_csv(res.alpha));
    json sharp = json::array();
    for (const auto& r : res.sharpness) sharp.push_back(json::parse(sharpness_json(r)));
    write_text_atomic(done_path, json{{"test_acc", res.test_acc},
                                      {"fwdbwd_passes", res.fwdbwd_passes},
                                      {"steps", res.steps},
                                      {"alpha_skipped", alpha.skipped},
                                      {"sharpness", sharp}}
                                         .dump(2) +
                                     "\n");
  });

  auto load_ckpt = [&](int e) { return load_checkpoint(dir + "/ckpt_e" + epoch_tag(e) + ".fskp", graph).params; };

  AccessLog selection_log;
  if (!zoo.validation.empty() && epochs.size() > 1) {
    res.early_stop = stage(cfg.output_dir, "early-stop", [&] {
      const std::string path = dir + "/early_stop.json";
      EarlyStopResult r;
      if (fs::exists(path)) {
        const json j = json_of(path);
        r.epoch = j.at("epoch");
        r.epochs = j.at("epochs").get<std::vector<int>>();
        r.curve = j.at("curve").get<std::vector<double>>();
        for (const auto& v : zoo.validation) selection_log.touch(v.name, zoo.validation_idx);
        return r;
      }
      std::vector<EpochCheckpoint<float>> traj;
      for (int e : epochs) traj.push_back({e, load_ckpt(e)});
      r = early_stop_select(zoo.validation, zoo.test, zoo.validation_idx, graph, traj, cfg.attack,
                            attack_seed(cfg, seed), &selection_log);
      write_text_atomic(path, json{{"epoch", r.epoch}, {"epochs", r.epochs}, {"curve", r.curve}}.dump(2) + "\n");
      return r;
    });
  }

  AccessLog test_log;
  stage(cfg.output_dir, "attack", [&] {
    const Sample s = sample_of(zoo.test, zoo.eval_idx);
    for (int e : epochs) {
      const std::string path = dir + "/attack_e" + epoch_tag(e) + ".csv";
      if (fs::exists(path)) {
        for (const auto& t : zoo.targets) test_log.touch(t.name, zoo.eval_idx);
        auto rows = parse_transfer_csv(text_of(path));
        res.transfer.insert(res.transfer.end(), rows.begin(), rows.end());
        continue;
      }
      say(ro, "attacking seed " + std::to_string(seed) + " epoch " + std::to_string(e));
      const auto adv = attack_checkpoint(cfg, zoo, graph, load_ckpt(e), s.x, s.y, seed);
      std::vector<TransferRow> rows;
      evaluate_transfer(adv, zoo.targets, e, seed, rows, &test_log, &zoo.eval_idx);
      write_text_atomic(path, transfer_csv(rows));
      res.transfer.insert(res.transfer.end(), rows.begin(), rows.end());
    }
  });
  if (!selection_log.disjoint_from(test_log))
    throw StageError("early-stop", "validation selection touched test targets or examples");
  return res;
}

}  // namespace

std::pair<Dataset, Dataset> prepare_data(const ExperimentConfig& cfg) {
  const std::string dir = cfg.shared_dir + "/" + cfg.zoo_hash();
  fs::create_directories(dir);
  if (fs::exists(dir + "/train.fsds") && fs::exists(dir + "/test.fsds"))
    return {load_dataset(dir + "/train.fsds"), load_dataset(dir + "/test.fsds")};
  const Dataset all = gen_synthetic(cfg.data);
  auto split = split_dataset(all, cfg.n_train, cfg.data.seed + 1);
  save_dataset(dir + "/train.fsds", split.first);
  save_dataset(dir + "/test.fsds", split.second);
  return split;
}

Zoo prepare_zoo(const ExperimentConfig& cfg, const RunOptions& ro, int* trained) {
  const std::string dir = cfg.shared_dir + "/" + cfg.zoo_hash();
  Zoo zoo;
  stage(cfg.output_dir, "data", [&] { std::tie(zoo.train, zoo.test) = prepare_data(cfg); });
  stage(cfg.output_dir, "train-targets", [&] {
    zoo.targets = train_zoo(cfg.target_archs, cfg, zoo.train, dir, "target", 0, ro, trained);
    zoo.validation = train_zoo(cfg.validation_archs, cfg, zoo.train, dir, "validation", 500, ro, trained);
  });
  stage(cfg.output_dir, "eval-set", [&] {
    const std::string path = dir + "/eval_sets_" + std::to_string(cfg.eval_n) + "_" + std::to_string(cfg.eval_seed) +
                             "_" + std::to_string(cfg.validation_n) + ".json";
    if (fs::exists(path)) {
      const json j = json_of(path);
      zoo.eval_idx = j.at("eval").get<std::vector<Index>>();
      zoo.validation_idx = j.at("validation").get<std::vector<Index>>();
      return;
    }
    zoo.eval_idx = select_eval_set(models_of(zoo.targets), zoo.test, cfg.eval_n, cfg.eval_seed);
    if (!zoo.validation.empty()) {
      std::vector<Index> rest;
      std::set<Index> used(zoo.eval_idx.begin(), zoo.eval_idx.end());
      for (Index i = 0; i < zoo.test.size(); ++i)
        if (!used.count(i)) rest.push_back(i);
      const Dataset pool = zoo.test.subset(rest, zoo.test.split);
      for (Index k : select_eval_set(models_of(zoo.validation), pool, cfg.validation_n, cfg.eval_seed + 1))
        zoo.validation_idx.push_back(rest[static_cast<std::size_t>(k)]);
    }
    write_text_atomic(path, json{{"eval", zoo.eval_idx}, {"validation", zoo.validation_idx}}.dump() + "\n");
  });
  return zoo;
}

void evaluate_transfer(const AdvBatch<float>& adv, const std::vector<NamedModel>& models, int epoch,
                       std::uint64_t seed, std::vector<TransferRow>& out, AccessLog* log,
                       const std::vector<Index>* idx) {
  for (const auto& m : models) {
    if (log) log->touch(m.name, idx ? *idx : std::vector<Index>{});
    out.push_back(TransferRow{epoch, m.name, seed, success_rate(adv, m.model.graph, m.model.params)});
  }
}

EarlyStopResult early_stop_select(const std::vector<NamedModel>& validation_targets, const Dataset& examples_from,
                                  const std::vector<Index>& examples, const Graph& surrogate,
                                  const std::vector<EpochCheckpoint<float>>& trajectory, const AttackSpec& spec,
                                  std::uint64_t seed, AccessLog* log) {
  if (trajectory.empty()) throw SpecError("early stopping needs a non-empty trajectory");
  if (validation_targets.empty()) throw SpecError("early stopping needs validation targets");
  const Sample s = sample_of(examples_from, examples);
  EarlyStopResult r;
  for (const auto& ck : trajectory) {
    const auto adv = bim(surrogate, ck.params, s.x, s.y, spec, seed);
    std::vector<TransferRow> rows;
    evaluate_transfer(adv, validation_targets, ck.epoch, 0, rows, log, &examples);
    double m = 0;
    for (const auto& row : rows) m += row.success_rate;
    r.epochs.push_back(ck.epoch);
    r.curve.push_back(m / static_cast<double>(rows.size()));
  }
  r.epoch = r.epochs[argmax_earliest(r.curve)];
  return r;
}

std::vector<double> final_seed_means(const std::vector<TransferRow>& rows) {
  std::map<std::uint64_t, int> last;
  for (const auto& r : rows) last[r.seed] = std::max(last.count(r.seed) ? last[r.seed] : r.epoch, r.epoch);
  std::vector<double> out;
  for (const auto& [seed, e] : last) {
    double s = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.seed == seed && r.epoch == e) s += r.success_rate, ++n;
    out.push_back(s / n);
  }
  return out;
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& ro) {
  ExperimentSummary sum;
  sum.dir = cfg.output_dir;
  fs::create_directories(cfg.output_dir);
  fs::remove(cfg.output_dir + "/error.json");
  write_text_atomic(cfg.output_dir + "/config.json", cfg.dump() + "\n");

  const Zoo zoo = prepare_zoo(cfg, ro, &sum.models_trained);

  sum.seeds.resize(cfg.seeds.size());
  std::vector<std::exception_ptr> errors(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
      try {
        sum.seeds[i] = run_seed(cfg, zoo, cfg.seeds[i], ro);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int slots = std::max(1, std::min<int>(ro.threads, static_cast<int>(cfg.seeds.size())));
  if (slots == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < slots; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (const auto& s : sum.seeds) {
    sum.models_trained += s.trained;
    sum.transfer.insert(sum.transfer.end(), s.transfer.begin(), s.transfer.end());
  }
  stage(cfg.output_dir, "report", [&] {
    write_text_atomic(cfg.output_dir + "/transfer.csv", transfer_csv(sum.transfer));
    json seeds = json::array();
    for (const auto& s : sum.seeds) {
      json j = {{"seed", s.seed}, {"test_acc", s.test_acc}, {"fwdbwd_passes", s.fwdbwd_passes}, {"steps", s.steps}};
      if (s.early_stop) j["early_stop_epoch"] = s.early_stop->epoch;
      seeds.push_back(j);
    }
    const auto finals = final_seed_means(sum.transfer);
    const auto [m, sd] = mean_sd(finals);
    write_text_atomic(cfg.output_dir + "/summary.json",
                      json{{"config_hash", cfg.hash()},
                           {"zoo_hash", cfg.zoo_hash()},
                           {"seeds", seeds},
                           {"final_mean", m},
                           {"final_sd", sd}}
                              .dump(2) +
                          "\n");
    emit_report(cfg.output_dir);
  });
  sum.aggregate = aggregate_transfer(sum.transfer);
  return sum;
}

std::string sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::string out = "path,value,status,n,mean,sd\n";
  for (const auto& r : rows) {
    std::string v = r.value.is_string() ? r.value.get<std::string>() : r.value.dump();
    if (v.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      v = q + "\"";
    }
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out += path + "," + v + "," + status + "," + std::to_string(r.n) + "," + fmt_double(r.mean) + "," +
           fmt_double(r.sd) + "\n";
  }
  return out;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const RunOptions& ro) {
  if (cfg.sweep_path.empty()) throw ConfigError("sweep.path is not set");
  if (!cfg.sweep_values.is_array() || cfg.sweep_values.size() < 2)
    throw ConfigError("sweep.values must list at least two values");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < cfg.sweep_values.size(); ++i) {
    SweepRow row;
    row.value = cfg.sweep_values[i];
    row.dir = cfg.output_dir + "/value_" + std::to_string(i);
    try {
      ExperimentConfig c = cfg.with_override(cfg.sweep_path, row.value);
      c.output_dir = row.dir;
      c.shared_dir = cfg.shared_dir;
      const auto s = run_experiment(c, ro);
      const auto finals = final_seed_means(s.transfer);
      const auto [m, sd] = mean_sd(finals);
      row.n = static_cast<int>(finals.size());
      row.mean = m;
      row.sd = sd;
    } catch (const std::exception& e) {
      row.status = e.what();
      say(ro, "sweep value " + row.value.dump() + " failed: " + e.what());
    }
    rows.push_back(row);
  }
  fs::create_directories(cfg.output_dir);
  write_text_atomic(cfg.output_dir + "/sweep.csv", sweep_csv(cfg.sweep_path, rows));
  emit_report(cfg.output_dir);
  return rows;
}

namespace {

std::vector<std::string> seed_dirs(const std::string& dir) {
  std::vector<std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> decay_epochs(const std::string& dir) {
  std::vector<double> out;
  if (!fs::exists(dir + "/config.json")) return out;
  try {
    const auto cfg = ExperimentConfig::parse(text_of(dir + "/config.json"));
    for (const auto& [e, d] : cfg.surrogate_opt.schedule.decays) out.push_back(e);
  } catch (const Error&) {
  }
  return out;
}

void plot_transfer(const std::string& dir, const std::vector<TransferRow>& rows) {
  const auto agg = aggregate_transfer(rows);
  write_text_atomic(dir + "/transfer_agg.csv", aggregate_csv(agg));
  const auto best = argmax_epochs(agg);
  std::map<std::string, Series> by_target;
  for (const auto& a : agg) {
    Series& s = by_target[a.target];
    s.name = a.target;
    s.points.emplace_back(a.epoch, a.mean);
    s.band_lo.push_back(a.lo());
    s.band_hi.push_back(a.hi());
  }
  LinePlot plot{"Transfer success rate", "epoch", "success rate", {}, decay_epochs(dir)};
  for (auto& [name, s] : by_target) {
    s.marker_x = best.at(name);
    plot.series.push_back(std::move(s));
  }
  write_text_atomic(dir + "/transfer.svg", render_svg(plot));
}

void plot_sharpness(const std::string& dir) {
  LinePlot eig{"Hessian top eigenvalue", "epoch", "lambda_max", {}, decay_epochs(dir)};
  LinePlot tr{"Hessian trace", "epoch", "trace", {}, eig.vlines};
  bool any = false;
  for (const auto& sd : seed_dirs(dir)) {
    const std::string path = sd + "/sharpness.csv";
    if (!fs::exists(path)) continue;
    any = true;
    const auto t = parse_csv(text_of(path), {"epoch", "lambda_max", "trace", "trace_se"});
    const std::string name = fs::path(sd).filename().string();
    Series a{name, {}, {}, {}, {}}, b{name, {}, {}, {}, {}};
    for (const auto& r : t.rows) {
      const double e = std::stod(r[t.column("epoch")]);
      a.points.emplace_back(e, std::stod(r[t.column("lambda_max")]));
      b.points.emplace_back(e, std::stod(r[t.column("trace")]));
    }
    eig.series.push_back(std::move(a));
    tr.series.push_back(std::move(b));
  }
  if (!any) return;
  write_text_atomic(dir + "/sharpness_lambda.svg", render_svg(eig));
  write_text_atomic(dir + "/sharpness_trace.svg", render_svg(tr));
}

}  // namespace

void emit_report(const std::string& dir) {
  if (!fs::exists(dir)) throw FormatError("report: no artifact directory " + dir);
  std::vector<TransferRow> rows;
  if (fs::exists(dir + "/transfer.csv")) {
    rows = parse_transfer_csv(text_of(dir + "/transfer.csv"));
  } else {
    for (const auto& sd : seed_dirs(dir))
      for (const auto& e : fs::directory_iterator(sd)) {
        const std::string f = e.path().filename().string();
        if (f.rfind("attack_e", 0) == 0 && e.path().extension() == ".csv") {
          auto r = parse_transfer_csv(text_of(e.path().string()));
          rows.insert(rows.end(), r.begin(), r.end());
        }
      }
    std::sort(rows.begin(), rows.end(), [](const TransferRow& a, const TransferRow& b) {
      return std::tie(a.seed, a.epoch, a.target) < std::tie(b.seed, b.epoch, b.target);
    });
  }
  if (!rows.empty() || fs::exists(dir + "/transfer.csv")) plot_transfer(dir, rows);
  plot_sharpness(dir);

  if (fs::exists(dir + "/sweep.csv")) {
    const auto t = parse_csv(text_of(dir + "/sweep.csv"), {"path", "value", "status", "n", "mean", "sd"});
    Series s{"final success", {}, {}, {}, {}};
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& r = t.rows[i];
      if (r[t.column("status")] != "ok") continue;
      double x = static_cast<double>(i);
      try {
        std::size_t used = 0;
        const double v = std::stod(r[t.column("value")], &used);
        if (used == r[t.column("value")].size()) x = v;
      } catch (const std::exception&) {
      }
      const double m = std::stod(r[t.column("mean")]), sd = std::stod(r[t.column("sd")]);
      s.points.emplace_back(x, m);
      s.band_lo.push_back(m - 2 * sd);
      s.band_hi.push_back(m + 2 * sd);
    }
    const std::string path = t.rows.empty() ? "value" : t.rows[0][t.column("path")];
    write_text_atomic(dir + "/sweep.svg", render_svg(LinePlot{"Sweep", path, "success rate", {s}, {}}));
  }

  if (fs::exists(dir + "/techniques.csv")) {
    const auto rows_t = parse_technique_csv(text_of(dir + "/techniques.csv"));
    std::map<std::string, Series> by;
    for (const auto& r : rows_t) {
      Series& s = by[r.technique + " / " + r.base];
      s.name = r.technique + " / " + r.base;
      s.points.emplace_back(r.epsilon, r.success_rate);
    }
    LinePlot plot{"Technique success rate", "epsilon", "success rate", {}, {}};
    for (auto& [k, s] : by) plot.series.push_back(std::move(s));
    write_text_atomic(dir + "/techniques.svg", render_svg(plot));
  }
}

}  // namespace flatsurr
