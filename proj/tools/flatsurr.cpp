// Command-line front end. Exit codes: 0 success, 2 configuration error,
// 3 run error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "flatsurr/bench/experiment.hpp"
#include "flatsurr/core/binary_io.hpp"
#include "flatsurr/models/checkpoint.hpp"

using namespace flatsurr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::vector<std::string> overrides;  // path=json
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig::parse("{}") : ExperimentConfig::load(g.config);
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects path=value, got '" + o + "'");
    json v;
    try {
      v = json::parse(o.substr(eq + 1));
    } catch (const json::exception&) {
      v = o.substr(eq + 1);  // bare strings
    }
    cfg = cfg.with_override(o.substr(0, eq), v);
  }
  cfg.output_dir = g.out;
  if (!cfg.doc.contains("output") || !cfg.doc["output"].contains("shared_dir")) cfg.shared_dir = g.out + "/shared";
  if (g.seed) cfg.seeds = {*g.seed};
  return cfg;
}

std::pair<Dataset, Dataset> data_for(const ExperimentConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return prepare_data(cfg);
  return {load_dataset(data_dir + "/train.fsds"), load_dataset(data_dir + "/test.fsds")};
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  io::write_text_atomic(path, text);
}

std::string epoch_tag(int e) {
  std::ostringstream os;
  os.width(3);
  os.fill('0');
  os << e;
  return os.str();
}

std::vector<Index> eval_indices(const ExperimentConfig& cfg, const Dataset& test, const std::string& path) {
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open index file " + path);
    return json::parse(f).get<std::vector<Index>>();
  }
  std::vector<Index> idx;
  for (Index i = 0; i < std::min(cfg.eval_n, test.size()); ++i) idx.push_back(i);
  return idx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flat-surrogate transferability toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--seed", g.seed, "use this single surrogate seed");
  app.add_option("--threads", g.threads, "parallel run slots")->check(CLI::PositiveNumber);
  app.add_option("--set", g.overrides, "override a config value: path=json");
  std::string data_dir;
  bool quiet = false;
  app.add_flag("--quiet", quiet, "no progress output");

  auto* gen = app.add_subcommand("gen-data", "generate or convert a dataset to the cache format");
  std::string source = "synthetic";
  std::vector<std::string> inputs;
  Index classes = 10;
  gen->add_option("--source", source)->check(CLI::IsMember({"synthetic", "idx", "cifar"}));
  gen->add_option("--input", inputs, "idx: images labels; cifar: batch files");
  gen->add_option("--classes", classes);

  auto* tr = app.add_subcommand("train", "train a surrogate and keep every epoch checkpoint");
  std::string preset;
  tr->add_option("--data", data_dir, "directory with train.fsds / test.fsds");
  tr->add_option("--preset", preset, "optimizer preset replacing the configured one");

  auto* lgv = app.add_subcommand("collect-lgv", "collect an LGV checkpoint pool");
  std::string ckpt;
  lgv->add_option("--checkpoint", ckpt)->required();
  lgv->add_option("--data", data_dir);

  auto* atk = app.add_subcommand("attack", "craft adversarial examples on a surrogate checkpoint");
  std::vector<std::string> ckpts;
  std::string technique, indices, name = "adv";
  atk->add_option("--checkpoint", ckpts, "one checkpoint, or an LGV pool")->required();
  atk->add_option("--data", data_dir);
  atk->add_option("--technique", technique, "add a technique plugin (mi, ni, di, si, vt, rap, gn, sgm, lgv)");
  atk->add_option("--indices", indices, "JSON list of test indices");
  atk->add_option("--name", name, "output basename");

  auto* ev = app.add_subcommand("eval-transfer", "evaluate adversarial batches on the target zoo");
  std::vector<std::string> advs;
  int epoch = 0;
  ev->add_option("--adv", advs)->required();
  ev->add_option("--epoch", epoch, "epoch label for the rows");

  auto* sh = app.add_subcommand("sharpness", "Hessian diagnostics of checkpoints");
  sh->add_option("--checkpoint", ckpts)->required();
  sh->add_option("--data", data_dir);

  auto* al = app.add_subcommand("alpha-trace", "train with the alpha diagnostic and test it across decays");
  al->add_option("--data", data_dir);

  auto* sw = app.add_subcommand("sweep", "one run per value of the configured sweep path");
  auto* rep = app.add_subcommand("report", "recompute aggregates and plots in --out");
  auto* run = app.add_subcommand("run", "full experiment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  RunOptions ro;
  ro.threads = g.threads;
  ro.log = quiet ? nullptr : &std::cerr;

  try {
    if (rep->parsed()) {
      emit_report(g.out);
      return 0;
    }
    ExperimentConfig cfg = load_config(g);

    if (gen->parsed()) {
      fs::create_directories(g.out);
      if (source == "synthetic") {
        const auto [a, b] = prepare_data(cfg);
        save_dataset(g.out + "/train.fsds", a);
        save_dataset(g.out + "/test.fsds", b);
      } else {
        Dataset d;
        if (source == "idx") {
          if (inputs.size() != 2) throw ConfigError("--source idx needs --input IMAGES LABELS");
          d = load_idx(inputs[0], inputs[1], classes);
        } else {
          if (inputs.empty()) throw ConfigError("--source cifar needs --input FILES");
          d = load_cifar_binary(inputs, classes);
        }
        save_dataset(g.out + "/" + d.split + ".fsds", d);
      }
    } else if (tr->parsed()) {
      if (!preset.empty()) {
        const auto lr = cfg.surrogate_opt.schedule;
        cfg.surrogate_opt = OptimizerSpec::preset(preset);
        cfg.surrogate_opt.schedule = lr;
      }
      const auto [train_set, test_set] = data_for(cfg, data_dir);
      const Graph graph = build_graph(cfg.surrogate_arch);
      for (std::uint64_t seed : cfg.seeds) {
        const std::string dir = g.out + "/seed_" + std::to_string(seed);
        std::string metrics;
        TrainHooks<float> hooks;
        hooks.on_metrics = [&](const EpochMetrics& m) {
          metrics += metrics_json(m) + "\n";
          if (ro.log) *ro.log << "seed " << seed << " " << metrics_json(m) << "\n";
        };
        TrainOptions opts;
        opts.batch_size = cfg.surrogate_batch;
        const Tensor<float> ytest = test_set.label_tensor();
        auto traj = train(graph, init_params<float>(graph, seed), train_set.inputs, train_set.label_tensor(),
                          cfg.surrogate_opt, cfg.surrogate_epochs, seed, hooks, opts, &test_set.inputs, &ytest);
        fs::create_directories(dir);
        for (const auto& c : traj.checkpoints)
          save_checkpoint(dir + "/ckpt_e" + epoch_tag(c.epoch) + ".fskp",
                          make_checkpoint(c.params, {c.epoch, seed, cfg.surrogate_opt.describe(), cfg.hash()}));
        save_checkpoint(dir + "/final.fskp", make_checkpoint(traj.final_params, {cfg.surrogate_epochs - 1, seed,
                                                                                 cfg.surrogate_opt.describe(),
                                                                                 cfg.hash()}));
        write_text(dir + "/metrics.jsonl", metrics);
        write_text(dir + "/train.json",
                   json{{"fwdbwd_passes", traj.fwdbwd_passes},
                        {"steps", traj.steps},
                        {"test_acc", accuracy(graph, traj.final_params, test_set.inputs, test_set.labels)}}
                           .dump(2) +
                       "\n");
      }
    } else if (lgv->parsed()) {
      const auto [train_set, test_set] = data_for(cfg, data_dir);
      const Graph graph = build_graph(cfg.surrogate_arch);
      const auto base = load_checkpoint(ckpt, graph);
      const auto pool = lgv_collect(graph, base.params, train_set.inputs, train_set.label_tensor(), cfg.lgv,
                                    base.meta.seed + 17);
      for (std::size_t i = 0; i < pool.size(); ++i)
        save_checkpoint(g.out + "/lgv_" + epoch_tag(static_cast<int>(i)) + ".fskp",
                        make_checkpoint(pool[i], {base.meta.epoch, base.meta.seed, "lgv", cfg.hash()}));
    } else if (atk->parsed()) {
      const auto [train_set, test_set] = data_for(cfg, data_dir);
      const Graph graph = build_graph(cfg.surrogate_arch);
      AttackSpec spec = cfg.attack;
      if (!technique.empty()) {
        AttackSpec t = AttackSpec::with_technique(technique, spec.epsilon);
        t.iterations = spec.iterations;
        t.step = spec.step;
        t.targeted = spec.targeted;
        spec = t;
      }
      std::vector<ParamSet<float>> pool;
      for (const auto& c : ckpts) pool.push_back(load_checkpoint(c, graph).params);
      if (pool.size() > 1) spec.lgv = true;
      const auto idx = eval_indices(cfg, test_set, indices);
      const Dataset s = test_set.subset(idx, test_set.split);
      const std::uint64_t seed = cfg.eval_seed * 7919 + cfg.seeds.front();
      const auto adv = bim(graph, pool, s.inputs, s.labels, spec, seed);
      fs::create_directories(g.out);
      save_adv_batch(g.out + "/" + name + ".fsab", adv);
      write_text(g.out + "/" + name + ".json",
                 json{{"spec", json::parse(spec.to_json())},
                      {"technique", spec.technique()},
                      {"base", cfg.surrogate_opt.describe()},
                      {"indices", idx}}
                         .dump(2) +
                     "\n");
    } else if (ev->parsed()) {
      const Zoo zoo = prepare_zoo(cfg, ro);
      std::vector<TransferRow> rows;
      std::vector<TechniqueRow> tech;
      for (const auto& a : advs) {
        const auto batch = load_adv_batch(a);
        std::vector<TransferRow> r;
        evaluate_transfer(batch, zoo.targets, epoch, batch.seed, r);
        double m = 0;
        for (const auto& x : r) m += x.success_rate;
        const fs::path side = fs::path(a).replace_extension(".json");
        if (fs::exists(side)) {
          std::ifstream f(side);
          const json j = json::parse(f);
          tech.push_back({j.at("technique"), j.at("base"), j.at("spec").at("epsilon"), m / r.size()});
        }
        rows.insert(rows.end(), r.begin(), r.end());
      }
      write_text(g.out + "/transfer.csv", transfer_csv(rows));
      if (!tech.empty()) write_text(g.out + "/techniques.csv", technique_csv(tech));
      emit_report(g.out);
    } else if (sh->parsed()) {
      const auto [train_set, test_set] = data_for(cfg, data_dir);
      const Graph graph = build_graph(cfg.surrogate_arch);
      std::vector<SharpnessRecord> recs;
      for (const auto& c : ckpts) {
        const auto ck = load_checkpoint(c, graph);
        recs.push_back(measure_sharpness(graph, ck.params, train_set.inputs, train_set.label_tensor(), ck.meta.epoch,
                                         cfg.sharpness_opts));
      }
      write_text(g.out + "/sharpness.csv", sharpness_csv(recs));
    } else if (al->parsed()) {
      const auto [train_set, test_set] = data_for(cfg, data_dir);
      const Graph graph = build_graph(cfg.surrogate_arch);
      json tests = json::array();
      for (std::uint64_t seed : cfg.seeds) {
        AlphaLog log;
        TrainHooks<float> hooks;
        hooks.on_iteration = make_alpha_hook<float>(graph, log, cfg.alpha_every > 0 ? cfg.alpha_every : 4);
        TrainOptions opts;
        opts.batch_size = cfg.surrogate_batch;
        opts.checkpoint_every = 0;
        train(graph, init_params<float>(graph, seed), train_set.inputs, train_set.label_tensor(), cfg.surrogate_opt,
              cfg.surrogate_epochs, seed, hooks, opts);
        write_text(g.out + "/seed_" + std::to_string(seed) + "/alpha.csv", alpha_csv(log.records));
        for (const auto& [at, div] : cfg.surrogate_opt.schedule.decays) {
          const auto c = alpha_campaign(log.records, at);
          tests.push_back({{"seed", seed},
                           {"decay_epoch", at},
                           {"n_before", c.before.size()},
                           {"n_after", c.after.size()},
                           {"mean_before", mean(c.before)},
                           {"mean_after", mean(c.after)},
                           {"t", c.test.t},
                           {"df", c.test.df},
                           {"p", c.test.p}});
        }
      }
      write_text(g.out + "/alpha_tests.json", tests.dump(2) + "\n");
    } else if (sw->parsed()) {
      for (const auto& r : run_sweep(cfg, ro))
        std::cout << r.value.dump() << " " << r.status << " " << fmt_double(r.mean) << "\n";
    } else if (run->parsed()) {
      const auto s = run_experiment(cfg, ro);
      const auto finals = final_seed_means(s.transfer);
      const auto [m, sd] = mean_sd(finals);
      std::cout << "final mean success " << fmt_double(m) << " (sd " << fmt_double(sd) << ", " << finals.size()
                << " seeds)\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
