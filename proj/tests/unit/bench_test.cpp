#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "flatsurr/bench/experiment.hpp"

using namespace flatsurr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flatsurr_bench_" + name);
  fs::remove_all(p);
  return p;
}

json tiny_config(const fs::path& dir) {
  json j = json::parse(R"({
    "name": "tiny",
    "data": {"kind": "blobs", "n_train": 200, "n_test": 200, "classes": 3, "noise": 0.05, "seed": 3},
    "surrogate": {"arch": {"family": "mlp", "widths": [16]},
                  "optimizer": {"preset": "sgd", "lr": 0.1, "decays": [2]},
                  "epochs": 4, "batch_size": 32, "seeds": [0, 1]},
    "targets": {"archs": [{"family": "mlp", "widths": [16]}, {"family": "mlp", "widths": [32]}],
                "validation_archs": [{"family": "mlp", "widths": [24]}],
                "optimizer": {"lr": 0.1, "decays": []}, "epochs": 5, "batch_size": 32},
    "attack": {"spec": {"epsilon": 0.1, "iterations": 5}, "eval_n": 20, "validation_n": 20, "epochs": "all"}
  })");
  j["output"] = {{"dir", (dir / "run").string()}, {"shared_dir", (dir / "shared").string()}};
  return j;
}

std::vector<TransferRow> three_seed_rows() {
  std::vector<TransferRow> rows;
  const double v[3][2][2] = {{{0.1, 0.2}, {0.3, 0.5}}, {{0.2, 0.2}, {0.4, 0.4}}, {{0.3, 0.1}, {0.2, 0.6}}};
  for (int s = 0; s < 3; ++s)
    for (int e = 0; e < 2; ++e)
      for (int t = 0; t < 2; ++t) rows.push_back({e, t ? "b" : "a", static_cast<std::uint64_t>(s), v[s][e][t]});
  return rows;
}

}  // namespace

TEST(Report, FmtDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 0.0, 1e-300, 123456.789}) EXPECT_EQ(std::stod(fmt_double(v)), v);
}

TEST(Report, AggregateMeanEqualsRawMean) {
  const auto rows = three_seed_rows();
  const auto agg = aggregate_transfer(rows);
  ASSERT_EQ(agg.size(), 6u);  // 2 epochs x (a, b, mean)
  for (const auto& a : agg) {
    std::vector<double> raw;
    if (a.target == kMeanTarget) {
      raw = seed_means(rows, a.epoch);
    } else {
      for (const auto& r : rows)
        if (r.epoch == a.epoch && r.target == a.target) raw.push_back(r.success_rate);
    }
    double m = 0;
    for (double x : raw) m += x;
    EXPECT_EQ(a.n, 3);
    EXPECT_NEAR(a.mean, m / 3, 1e-15);
    EXPECT_NEAR(a.lo(), a.mean - 2 * a.sd, 0);
  }
  EXPECT_EQ(agg[2].target, kMeanTarget);
}

TEST(Report, ArgmaxTiesGoEarly) {
  EXPECT_EQ(argmax_earliest({0.1, 0.2, 0.3, 0.4}), 3u);
  EXPECT_EQ(argmax_earliest({0.5, 0.5, 0.5}), 0u);
  EXPECT_EQ(argmax_earliest({0.1, 0.7, 0.2, 0.7}), 1u);
  EXPECT_THROW(argmax_earliest({}), SpecError);
  std::vector<AggregateRow> agg = {{0, "a", 1, 0.4, 0}, {1, "a", 1, 0.4, 0}, {2, "a", 1, 0.1, 0}};
  EXPECT_EQ(argmax_epochs(agg).at("a"), 0);
}

TEST(Report, CsvRoundTripAndRequiredColumns) {
  const auto rows = three_seed_rows();
  const std::string csv = transfer_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,target,seed,success_rate");
  const auto back = parse_transfer_csv(csv);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].success_rate, rows[i].success_rate);
    EXPECT_EQ(back[i].target, rows[i].target);
  }
  EXPECT_THROW(parse_transfer_csv("epoch,target,rate\n0,a,0.1\n"), FormatError);
  EXPECT_THROW(parse_csv("a,b\n1\n", {"a"}), FormatError);
  const std::vector<TechniqueRow> t = {{"mi", "l-sam", 0.1, 0.5}};
  EXPECT_EQ(technique_csv(t).substr(0, 36), "technique,base,epsilon,success_rate\n");
  EXPECT_EQ(parse_technique_csv(technique_csv(t))[0].success_rate, 0.5);
}

TEST(Svg, EmptySeriesHasAxesAndNoData) {
  const std::string svg = render_svg(LinePlot{"empty", "x", "y", {}, {}});
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("<line"), std::string::npos);
  EXPECT_NE(svg.find("no data"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Svg, DeterministicAndColoursKeyedByName) {
  LinePlot p{"t", "epoch", "rate", {Series{"sgd", {{0, 0.1}, {1, 0.3}}, {}, {}, 1.0}}, {1}};
  EXPECT_EQ(render_svg(p), render_svg(p));
  EXPECT_EQ(series_color("sgd"), series_color("sgd"));
  EXPECT_NE(render_svg(p).find(series_color("sgd")), std::string::npos);
}

TEST(Svg, IdentityLineIsMonotone) {
  Series s{"y=x", {}, {}, {}, {}};
  for (int i = 0; i <= 10; ++i) s.points.emplace_back(i, i);
  const std::string svg = render_svg(LinePlot{"id", "x", "y", {s}, {}});
  const std::regex path_re("stroke-width=\"1.5\" d=\"([^\"]+)\"");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(svg, m, path_re));
  std::istringstream is(std::regex_replace(m[1].str(), std::regex("[ML]"), " "));
  std::vector<std::pair<double, double>> pts;
  double x, y;
  while (is >> x >> y) pts.emplace_back(x, y);
  ASSERT_EQ(pts.size(), 11u);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    EXPECT_GT(pts[i].first, pts[i - 1].first);
    EXPECT_LT(pts[i].second, pts[i - 1].second);  // SVG y grows downwards
  }
}

TEST(Config, RejectsUnknownKeysAndBadPaths) {
  EXPECT_THROW(ExperimentConfig::parse(R"({"data": {"kind": "blobs", "colour": 1}})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(R"({"bogus": 1})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("{not json"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(R"({"surrogate": {"seeds": []}})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(R"({"sweep": {"path": "surrogate.optimizer.rho", "values": [0]}})"),
               ConfigError);
  const auto c = ExperimentConfig::parse("{}");
  EXPECT_EQ(c.seeds.size(), 3u);
  EXPECT_EQ(c.target_archs.size(), 6u);
  EXPECT_THROW(c.with_override("surrogate.optimizer.nope", 1), ConfigError);
  EXPECT_THROW(c.with_override("surrogate", 1), ConfigError);
  const auto d = c.with_override("surrogate.optimizer.rho", 0.05);
  EXPECT_EQ(d.surrogate_opt.rho, 0.05);
  EXPECT_NE(d.hash(), c.hash());
  EXPECT_EQ(d.zoo_hash(), c.zoo_hash());
}

TEST(Config, PresetThenOverrides) {
  const auto c = ExperimentConfig::parse(R"({"surrogate": {"optimizer": {"preset": "l-sam", "lr": 0.2}}})");
  const auto p = OptimizerSpec::preset("l-sam");
  EXPECT_EQ(c.surrogate_opt.rule, p.rule);
  EXPECT_EQ(c.surrogate_opt.rho, p.rho);
  EXPECT_EQ(c.surrogate_opt.schedule.lr0, 0.2);
  EXPECT_EQ(ExperimentConfig::parse(c.dump()).hash(), c.hash());
}

TEST(EarlyStop, ConstantCurvePicksFirstAndLogsOnlyValidation) {
  const auto cfg = ExperimentConfig::from_json(tiny_config(scratch("es")));
  const Dataset d = gen_synthetic(cfg.data);
  const ArchSpec a = cfg.surrogate_arch;
  std::vector<NamedModel> val = {{"v", build_model<float>(a, 9)}};
  const auto params = init_params<float>(build_graph(a), 1);
  const std::vector<EpochCheckpoint<float>> traj = {{3, params}, {5, params}, {7, params}};
  AccessLog log;
  const auto r = early_stop_select(val, d, {0, 1, 2, 3}, build_graph(a), traj, cfg.attack, 0, &log);
  EXPECT_EQ(r.epoch, 3);
  EXPECT_EQ(r.curve[0], r.curve[2]);
  EXPECT_EQ(log.models, std::set<std::string>{"v"});
  EXPECT_EQ(log.examples, (std::set<Index>{0, 1, 2, 3}));
  EXPECT_THROW(early_stop_select(val, d, {0}, build_graph(a), {}, cfg.attack, 0), SpecError);
}

TEST(Experiment, EndToEndResumeAndDeterminism) {
  const fs::path root = scratch("e2e");
  const auto cfg = ExperimentConfig::from_json(tiny_config(root));
  const auto first = run_experiment(cfg);
  EXPECT_EQ(first.models_trained, 3 + 2);
  ASSERT_EQ(first.transfer.size(), 2u * 4u * 2u);  // seeds x epochs x targets
  for (const auto& r : first.transfer) {
    EXPECT_GE(r.success_rate, 0.0);
    EXPECT_LE(r.success_rate, 1.0);
  }
  for (const char* f : {"transfer.csv", "transfer_agg.csv", "transfer.svg", "summary.json", "config.json"})
    EXPECT_TRUE(fs::exists(root / "run" / f)) << f;
  EXPECT_TRUE(fs::exists(root / "run/seed_0/metrics.jsonl"));
  EXPECT_TRUE(fs::exists(root / "run/seed_1/early_stop.json"));

  // Emitted aggregates are recomputable from the raw rows.
  const auto raw = parse_transfer_csv(slurp(root / "run/transfer.csv"));
  EXPECT_EQ(slurp(root / "run/transfer_agg.csv"), aggregate_csv(aggregate_transfer(raw)));

  const std::string csv = slurp(root / "run/transfer.csv");
  const std::string svg = slurp(root / "run/transfer.svg");
  const auto again = run_experiment(cfg);
  EXPECT_EQ(again.models_trained, 0);
  EXPECT_EQ(slurp(root / "run/transfer.csv"), csv);
  emit_report((root / "run").string());
  EXPECT_EQ(slurp(root / "run/transfer.svg"), svg);

  // A fresh directory reproduces the same payload.
  json j = tiny_config(root);
  j["output"] = {{"dir", (root / "run2").string()}, {"shared_dir", (root / "shared2").string()}};
  run_experiment(ExperimentConfig::from_json(j));
  EXPECT_EQ(slurp(root / "run2/transfer.csv"), csv);
}

TEST(Experiment, StageErrorIsRecorded) {
  const fs::path root = scratch("err");
  json j = tiny_config(root);
  j["attack"]["eval_n"] = 5000;
  const auto cfg = ExperimentConfig::from_json(j);
  try {
    run_experiment(cfg);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "eval-set");
  }
  const json err = json::parse(slurp(root / "run/error.json"));
  EXPECT_EQ(err.at("stage"), "eval-set");
  EXPECT_TRUE(fs::exists(root / "run/config.json"));
}

TEST(Sweep, RhoZeroMatchesSgdAndRowPerValue) {
  const fs::path root = scratch("sweep");
  json j = tiny_config(root);
  j["surrogate"]["optimizer"] = {{"preset", "sam"}, {"lr", 0.1}, {"decays", {2}}};
  j["surrogate"]["seeds"] = {0};
  j["attack"]["epochs"] = "final";
  j["sweep"] = {{"path", "surrogate.optimizer.rho"}, {"values", {0.0, 0.05, -1.0}}};
  const auto rows = run_sweep(ExperimentConfig::from_json(j));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].status, "ok");
  EXPECT_NE(rows[2].status, "ok");  // negative rho is rejected, the sweep carries on
  const auto t = parse_csv(slurp(root / "run/sweep.csv"), {"value", "status", "mean"});
  EXPECT_EQ(t.rows.size(), 3u);

  json sgd = tiny_config(root);
  sgd["surrogate"]["seeds"] = {0};
  sgd["attack"]["epochs"] = "final";
  sgd["output"]["dir"] = (root / "sgd").string();
  run_experiment(ExperimentConfig::from_json(sgd));
  EXPECT_EQ(slurp(root / "run/value_0/transfer.csv"), slurp(root / "sgd/transfer.csv"));
}
