// Acceptance run: one PASS/FAIL line per criterion, then a summary line.
//
//   acceptance [--work DIR] [--only 1,2,...] [--keep] [--strict]
//
// The toy-benchmark criteria (6-9) run full experiments through the harness
// under --work; the directory is wiped first unless --keep is given.
// Exit code 1 when a criterion could not be evaluated (it threw); with
// --strict also when any criterion fails.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "../unit/test_util.hpp"
#include "flatsurr/bench/experiment.hpp"
#include "flatsurr/sharpness/sharpness.hpp"

using namespace flatsurr;
using namespace flatsurr::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

ParamSet<double> perturbed_params(const Graph& g, std::uint64_t seed) {
  ParamSet<double> p = init_params<double>(g, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (std::size_t i = 0; i < p.count(); ++i) {
    const bool var = g.params()[i].role == ParamRole::bn_running_var;
    for (Index k = 0; k < p.tensors[i].size(); ++k)
      p.tensors[i][k] = var ? 0.5 + std::abs(u(rng)) : p.tensors[i][k] + 0.3 * u(rng);
  }
  return p;
}

// ---- 1: gradient oracle ----------------------------------------------------------

ArchSpec random_arch(std::mt19937_64& rng, int i) {
  auto pick = [&](int lo, int hi) { return static_cast<Index>(lo + static_cast<int>(rng() % (hi - lo + 1))); };
  const Index classes = pick(2, 4);
  switch (i % 3) {
    case 0: {
      std::vector<Index> w(static_cast<std::size_t>(pick(1, 2)));
      for (auto& x : w) x = pick(2, 5);
      return ArchSpec{Family::mlp, w, 0, {pick(2, 5)}, classes};
    }
    case 1: {
      const Index side = pick(4, 6);
      ArchSpec a{Family::smallcnn, {pick(2, 3), pick(2, 3)}, 0, {pick(1, 2), side, side}, classes};
      a.batch_norm = rng() & 1;
      return a;
    }
    default:
      return ArchSpec{Family::miniresnet, {2}, 1, {1, 4, 4}, classes};
  }
}

Outcome gradient_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  int bad = 0;
  for (int i = 0; i < 100; ++i) {
    const ArchSpec a = random_arch(rng, i);
    const Graph g = build_graph(a);
    const auto p = perturbed_params(g, 1000 + i);
    Shape xs = a.input_shape;
    xs.insert(xs.begin(), 3);
    const auto x = random_tensor(xs, 2000 + i, 0.0, 1.0);
    const auto y = random_labels(3, a.classes, 3000 + i);
    const Mode mode = i % 2 ? Mode::train : Mode::eval;
    const auto r = forward_backward(g, p, x, y, mode, true);
    const double ep = rel_err(r.params.pack(), fd_gradient(param_loss(g, p, x, y, mode), p.pack(), 1e-6));
    const double ei = rel_err(r.inputs->vec(), fd_gradient(input_loss(g, p, x, y, mode), x.vec(), 1e-6));
    worst = std::max({worst, ep, ei});
    bad += ep > 1e-6 || ei > 1e-6;
  }
  return {bad == 0, fmt("100 models (mlp/smallcnn/miniresnet, train+eval), max rel err %.2e, %d over 1e-6", worst, bad)};
}

// ---- 2: HVP / spectral oracle ------------------------------------------------------

Outcome spectral_oracle() {
  const std::vector<ArchSpec> archs = {
      {Family::mlp, {3}, 0, {3}, 2},     {Family::mlp, {4}, 0, {4}, 3},    {Family::mlp, {2, 3}, 0, {5}, 2},
      {Family::mlp, {6}, 0, {3}, 4},     {Family::smallcnn, {2}, 0, {1, 4, 4}, 2},
      {Family::mlp, {8}, 0, {4}, 3},     {Family::mlp, {5, 4}, 0, {3}, 2}, {Family::smallcnn, {3}, 0, {1, 4, 4}, 2},
      {Family::mlp, {10}, 0, {2}, 3},    {Family::mlp, {3}, 0, {6}, 3}};
  double worst_eig = 0, worst_tr = 0;
  int bad = 0, max_params = 0;
  for (std::size_t i = 0; i < archs.size(); ++i) {
    const Graph g = build_graph(archs[i]);
    const auto p = perturbed_params(g, 50 + i);
    Shape xs = archs[i].input_shape;
    xs.insert(xs.begin(), 16);
    const auto x = random_tensor(xs, 60 + i, 0.0, 1.0);
    const auto y = random_labels(16, archs[i].classes, 70 + i);
    const Vec w = p.pack();
    max_params = std::max(max_params, static_cast<int>(w.size()));
    Eigen::MatrixXd H = fd_hessian(param_loss(g, p, x, y, Mode::eval), w);
    H = 0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const Vec ev = es.eigenvalues();
    const double dom = std::abs(ev[0]) > std::abs(ev[ev.size() - 1]) ? ev[0] : ev[ev.size() - 1];
    const auto fn = make_loss_grad_fn(g, p, x, y, Mode::eval);
    const auto e = hessian_top_eigenvalue(fn, w, 2000, 1e-9, 80 + i);
    const auto t = hessian_trace(fn, w, 1000, 90 + i);
    const double re = std::abs(e.value - dom) / std::abs(dom);
    const double z = std::abs(t.value - H.trace()) / t.std_error;
    worst_eig = std::max(worst_eig, re);
    worst_tr = std::max(worst_tr, z);
    bad += re > 0.01 || z > 3;
  }
  return {bad == 0, fmt("%zu models (<= %d params): max eigenvalue rel err %.2e, max trace error %.2f stderr",
                        archs.size(), max_params, worst_eig, worst_tr)};
}

// ---- 3: degeneracy identities ------------------------------------------------------

struct Problem {
  Graph graph;
  ParamSet<float> params;
  Tensor<float> x, y;
};

Problem small_problem(Family f, std::uint64_t seed, Index n) {
  ArchSpec a{f, f == Family::mlp ? std::vector<Index>{8} : std::vector<Index>{4}, f == Family::miniresnet ? 1 : 0,
             {1, 6, 6}, 3};
  auto m = build_model<float>(a, seed);
  SyntheticOptions o;
  o.n = n;
  o.classes = 3;
  o.side = 6;
  o.seed = seed;
  const Dataset d = gen_synthetic(o);
  return {m.graph, m.params, d.inputs, d.label_tensor()};
}

Outcome degeneracy() {
  std::vector<std::string> broken;
  int checks = 0;
  auto expect = [&](bool ok, const std::string& what) {
    ++checks;
    if (!ok) broken.push_back(what);
  };
  TrainOptions to;
  to.batch_size = 10;
  for (Family f : {Family::mlp, Family::smallcnn, Family::miniresnet}) {
    const Problem p = small_problem(f, 7, 100);  // 10 steps per epoch, 10 epochs
    OptimizerSpec sgd = OptimizerSpec::preset("sgd");
    sgd.schedule = Schedule{0.05, {{5, 10.0}}};
    const auto ref = train(p.graph, p.params, p.x, p.y, sgd, 10, 3, {}, to);
    expect(ref.steps == 100, "100 steps");
    OptimizerSpec sam0 = sgd;
    sam0.rule = Rule::sam;
    sam0.rho = 0;
    expect(train(p.graph, p.params, p.x, p.y, sam0, 10, 3, {}, to).final_params == ref.final_params,
           std::string("SAM(0)==SGD ") + family_name(f));

    OptimizerSpec sam = sgd;
    sam.rule = Rule::sam;
    sam.rho = 0.05;
    const auto sam_run = train(p.graph, p.params, p.x, p.y, sam, 4, 3, {}, to);
    OptimizerSpec look = sam;
    look.rule = Rule::looksam;
    look.looksam_warmup_epochs = 4;
    expect(train(p.graph, p.params, p.x, p.y, look, 4, 3, {}, to).final_params == sam_run.final_params,
           std::string("LookSAM warmup==SAM ") + family_name(f));
    OptimizerSpec gsam = sam;
    gsam.rule = Rule::gsam;
    gsam.alpha_gsam = 0;
    expect(train(p.graph, p.params, p.x, p.y, gsam, 4, 3, {}, to).final_params == sam_run.final_params,
           std::string("GSAM(0)==SAM ") + family_name(f));
  }

  for (std::uint64_t seed : {1, 2, 3}) {
    const Problem p = small_problem(Family::miniresnet, seed, 12);
    const auto y = label_ints(p.y);
    AttackSpec plain;
    plain.epsilon = 0.05;
    plain.iterations = 6;
    const auto ref = bim(p.graph, p.params, p.x, y, plain, seed).adversarials;
    std::map<std::string, AttackSpec> neutral;
    for (const char* n : {"mi", "ni", "di", "si", "vt", "rap", "gn", "sgm", "lgv"}) neutral[n] = plain;
    neutral["mi"].mi = MomentumConfig{0.0};
    neutral["ni"].ni = MomentumConfig{0.0};
    neutral["di"].di = DiConfig{0.85, 0.0};
    neutral["si"].si = SiConfig{1};
    neutral["vt"].vt = VtConfig{0.0, 4};
    neutral["rap"].rap = RapConfig{5, 2.0 / 3.0, plain.iterations};
    neutral["gn"].gn = GnConfig{1.0, 1.0};
    neutral["sgm"].sgm = SgmConfig{1.0};
    neutral["lgv"].lgv = true;
    for (const auto& [name, s] : neutral)
      expect(bim(p.graph, p.params, p.x, y, s, seed).adversarials == ref, "neutral " + name);
    AttackSpec late = plain;
    late.rap = RapConfig{5, 2.0 / 3.0, plain.iterations + 3};
    expect(bim(p.graph, p.params, p.x, y, late, seed).adversarials == ref, "RAP late_start > iterations");
  }
  std::string detail = fmt("%d bit-exact identities checked", checks);
  for (const auto& b : broken) detail += "; broken: " + b;
  return {broken.empty(), detail};
}

// ---- 4: epsilon-ball suite ---------------------------------------------------------

Outcome epsilon_ball() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Problem> models;
  for (std::uint64_t s : {1, 2, 3, 4}) models.push_back(small_problem(Family::miniresnet, s, 6));
  models.push_back(small_problem(Family::smallcnn, 5, 6));
  long violations = 0, elements = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Problem& p = models[static_cast<std::size_t>(trial) % models.size()];
    const bool resnet = trial % models.size() != models.size() - 1;
    AttackSpec s;
    s.epsilon = std::vector<double>{1.0 / 255, 4.0 / 255, 8.0 / 255, 0.05, 0.1, 0.3}[rng() % 6];
    s.iterations = 1 + static_cast<int>(rng() % 6);
    if (rng() % 3 == 0) s.step = s.epsilon * (0.1 + 3 * u(rng));
    s.targeted = rng() % 4 == 0;
    const int mom = static_cast<int>(rng() % 3);
    if (mom == 1) s.mi = MomentumConfig{2 * u(rng)};
    if (mom == 2) s.ni = MomentumConfig{2 * u(rng)};
    if (rng() & 1) s.di = DiConfig{0.5 + 0.5 * u(rng), u(rng)};
    if (rng() & 1) s.si = SiConfig{1 + static_cast<int>(rng() % 3)};
    if (rng() & 1) s.vt = VtConfig{2 * u(rng), 1 + static_cast<int>(rng() % 3)};
    if (rng() % 3 == 0) s.rap = RapConfig{1 + static_cast<int>(rng() % 3), u(rng), static_cast<int>(rng() % 4)};
    if (resnet && (rng() & 1)) s.gn = GnConfig{0.5 + 0.5 * u(rng), 1.0 + 0.5 * u(rng)};
    if (resnet && (rng() & 1)) s.sgm = SgmConfig{u(rng)};
    std::vector<int> y = label_ints(p.y), t;
    for (int c : y) t.push_back((c + 1) % 3);
    const auto adv = bim(p.graph, p.params, p.x, y, s, static_cast<std::uint64_t>(trial), s.targeted ? &t : nullptr);
    const float eps = static_cast<float>(s.epsilon);
    const float tol = std::nextafter(eps, 2 * eps) - eps;
    for (Index i = 0; i < adv.adversarials.size(); ++i, ++elements) {
      const float a = adv.adversarials[i], o = adv.originals[i];
      violations += !(std::abs(a - o) <= eps + tol) || a < 0.0f || a > 1.0f || !std::isfinite(a);
    }
  }
  return {violations == 0, fmt("1000 random configurations, %ld elements, %ld violations", elements, violations)};
}

// ---- shared toy benchmark -----------------------------------------------------------

json toy_doc(const std::string& work) {
  std::ifstream f(FLATSURR_CONFIG_DIR "/toy.json");
  json j = json::parse(f);
  j["output"] = {{"shared_dir", work + "/shared"}};
  return j;
}

ExperimentSummary run_toy(const std::string& work, const std::string& name, json j) {
  j["output"]["dir"] = work + "/" + name;
  return run_experiment(ExperimentConfig::from_json(j));
}

// ---- 5: white-box sanity -----------------------------------------------------------

Outcome white_box(const std::string& work) {
  const json doc = toy_doc(work);
  ExperimentConfig cfg = ExperimentConfig::from_json(doc);
  cfg.output_dir = work + "/whitebox";
  const Zoo zoo = prepare_zoo(cfg);
  const Graph g = build_graph(cfg.surrogate_arch);
  TrainOptions to;
  to.batch_size = cfg.surrogate_batch;
  to.checkpoint_every = 0;
  const auto traj = train(g, init_params<float>(g, 0), zoo.train.inputs, zoo.train.label_tensor(), cfg.surrogate_opt,
                          cfg.surrogate_epochs, 0, {}, to);
  const Model<float> m{g, traj.final_params};
  const auto idx = select_eval_set({m}, zoo.test, 200, 5);
  const Dataset ev = zoo.test.subset(idx, "eval");
  AttackSpec s;
  s.epsilon = 8.0 / 255;
  s.iterations = 50;
  const double sr = success_rate(bim(g, m.params, ev.inputs, ev.labels, s, 0), g, m.params);
  // Larger budgets are reported only to separate attack strength from data robustness.
  std::string wider;
  for (double eps : {16.0 / 255, 0.1, 0.2}) {
    AttackSpec w = s;
    w.epsilon = eps;
    wider += fmt(" %.3f@%.3f", success_rate(bim(g, m.params, ev.inputs, ev.labels, w, 0), g, m.params), eps);
  }
  return {sr >= 0.95, fmt("BIM eps=8/255, 50 iterations, SmallCNN-16-32 (test acc %.3f): white-box success %.3f on %zu "
                          "correctly classified examples (need >= 0.95); informational:%s",
                          accuracy(g, m.params, zoo.test.inputs, zoo.test.labels), sr, idx.size(), wider.c_str())};
}

// ---- 6-9: toy benchmark experiments -------------------------------------------------

struct Band {
  double mean, sd;
  double lo() const { return mean - 2 * sd; }
  double hi() const { return mean + 2 * sd; }
};

Band band(const std::vector<double>& v) {
  const auto [m, s] = mean_sd(v);
  return {m, s};
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ", ") + fmt("%.3f", x);
  return s;
}

Outcome directional(const std::string& work, const ExperimentSummary& sgd) {
  json j = toy_doc(work);
  j["surrogate"]["optimizer"]["preset"] = "l-sam";
  const auto lsam = run_toy(work, "lsam", j);
  const auto a = final_seed_means(lsam.transfer), b = final_seed_means(sgd.transfer);
  const Band la = band(a), sb = band(b);
  return {la.lo() > sb.hi(), fmt("fully trained l-SAM %.3f +- 2*%.3f (seeds %s) vs SGD %.3f +- 2*%.3f (seeds %s); "
                                 "bands %s",
                                 la.mean, la.sd, list(a).c_str(), sb.mean, sb.sd, list(b).c_str(),
                                 la.lo() > sb.hi() ? "separate" : "overlap")};
}

// Per-seed mean over targets, indexed by epoch.
std::map<std::uint64_t, std::map<int, double>> seed_curves(const std::vector<TransferRow>& rows) {
  std::map<std::uint64_t, std::map<int, std::pair<double, int>>> acc;
  for (const auto& r : rows) {
    auto& c = acc[r.seed][r.epoch];
    c.first += r.success_rate;
    c.second += 1;
  }
  std::map<std::uint64_t, std::map<int, double>> out;
  for (const auto& [s, m] : acc)
    for (const auto& [e, c] : m) out[s][e] = c.first / c.second;
  return out;
}

int curve_argmax(const std::map<int, double>& c) {
  std::vector<double> v;
  std::vector<int> e;
  for (const auto& [ep, x] : c) e.push_back(ep), v.push_back(x);
  return e[argmax_earliest(v)];
}

Outcome decay_peak(const std::string& work) {
  const int E = 40;
  const std::vector<int> decays = {10, 20, 30};
  std::string detail;
  bool ok = true;
  for (int d : decays) {
    json j = toy_doc(work);
    j["surrogate"]["epochs"] = E;
    j["surrogate"]["optimizer"]["decays"] = {d};
    j["attack"]["epochs"] = "all";
    const auto s = run_toy(work, "decay" + std::to_string(d), j);
    std::string per;
    for (const auto& [seed, c] : seed_curves(s.transfer)) {
      const int am = curve_argmax(c);
      const bool in = am >= d && am <= d + 4;
      ok = ok && in;
      per += fmt("%s%d%s", per.empty() ? "" : ",", am, in ? "" : "!");
    }
    detail += fmt("decay@%d argmax [%s]; ", d, per.c_str());
  }
  json j = toy_doc(work);
  j["surrogate"]["epochs"] = E;
  j["surrogate"]["optimizer"]["decays"] = json::array();
  j["attack"]["epochs"] = "all";
  const auto c = run_toy(work, "constant", j);
  const auto curves = seed_curves(c.transfer);
  // Across-seed band at the peak of the mean curve vs. the plateau (last 10 epochs).
  std::vector<double> mean_curve(E, 0.0);
  for (const auto& [seed, cv] : curves)
    for (const auto& [e, x] : cv) mean_curve[static_cast<std::size_t>(e)] += x / static_cast<double>(curves.size());
  const int peak = static_cast<int>(argmax_earliest(mean_curve));
  std::vector<double> at_peak, plateau;
  for (const auto& [seed, cv] : curves) {
    at_peak.push_back(cv.at(peak));
    double p = 0;
    for (int e = E - 10; e < E; ++e) p += cv.at(e) / 10;
    plateau.push_back(p);
  }
  const Band bp = band(at_peak), bl = band(plateau);
  const bool overlap = bp.lo() <= bl.hi();
  ok = ok && overlap;
  detail += fmt("constant lr: peak epoch %d %.3f +- 2*%.3f vs plateau %.3f +- 2*%.3f (%s)", peak, bp.mean, bp.sd,
                bl.mean, bl.sd, overlap ? "overlap" : "separate");
  return {ok, detail};
}

Outcome sharpness_drop(const ExperimentSummary& sgd, const std::vector<int>& decays) {
  int seeds_ok = 0;
  std::string detail;
  for (const auto& s : sgd.seeds) {
    std::map<int, SharpnessRecord> by;
    for (const auto& r : s.sharpness) by[r.epoch] = r;
    bool all = true;
    std::string per;
    for (int d : decays) {
      const auto& a = by.at(d - 1);
      const auto& b = by.at(d);
      const bool drop = b.top_eigenvalue < a.top_eigenvalue && b.trace_estimate < a.trace_estimate;
      all = all && drop;
      per += fmt(" d%d: lambda %.3g->%.3g trace %.3g->%.3g%s", d, a.top_eigenvalue, b.top_eigenvalue,
                 a.trace_estimate, b.trace_estimate, drop ? "" : " (no drop)");
    }
    seeds_ok += all;
    detail += fmt("seed %llu:%s; ", static_cast<unsigned long long>(s.seed), per.c_str());
  }
  return {seeds_ok >= 2, fmt("%d/%zu seeds drop at every decay; ", seeds_ok, sgd.seeds.size()) + detail};
}

Outcome alpha_calibration(const ExperimentSummary& sgd, const std::vector<int>& decays) {
  const double a0 = alpha_quantity(1, -2, 0, 0);
  const double a1 = alpha_quantity(0.25, -1, 0.25, 1);
  const double am = alpha_quantity(1, -1, 0, -1);
  const bool anchors = std::abs(a0) <= 1e-9 && std::abs(a1 - 1) <= 1e-9 && std::abs(am + 1) <= 1e-9;
  bool ok = anchors;
  std::string detail = fmt("anchors %.1e/%.1e/%.1e; ", a0, a1 - 1, am + 1);
  for (int d : decays) {
    std::vector<double> before, after;
    for (const auto& s : sgd.seeds) {
      const auto c = alpha_campaign(s.alpha, d);
      before.insert(before.end(), c.before.begin(), c.before.end());
      after.insert(after.end(), c.after.begin(), c.after.end());
    }
    const auto t = welch_t_test(before, after, Alternative::greater);
    ok = ok && t.p < 0.05;
    detail += fmt("decay@%d: mean alpha %.3f (n=%zu) vs %.3f (n=%zu), t=%.2f, p=%.2e; ", d, mean(before),
                  before.size(), mean(after), after.size(), t.t, t.p);
  }
  return {ok, detail};
}

// ---- 10: cost accounting -----------------------------------------------------------

Outcome cost_accounting() {
  const Problem p = small_problem(Family::smallcnn, 4, 60);
  TrainOptions to;
  to.batch_size = 10;  // 6 batches per epoch
  const int E = 7;
  auto run = [&](const std::string& preset, int k = 3) {
    OptimizerSpec s = OptimizerSpec::preset(preset);
    s.schedule = Schedule{0.05, {{4, 10.0}}};
    s.looksam_k = k;
    return static_cast<double>(train(p.graph, p.params, p.x, p.y, s, E, 1, {}, to).fwdbwd_passes);
  };
  const double sgd = run("sgd");
  const double sam = run("sam") / sgd, agsam = run("agsam") / sgd;
  bool ok = sam == 2.0 && agsam == 2.0;
  std::string detail = fmt("SAM %.3f x, AGSAM %.3f x SGD (%g passes)", sam, agsam, sgd);
  for (int k : {2, 3, 6}) {
    const double got = run("looksam", k) / sgd;
    const double want = looksam_cost_ratio(E, OptimizerSpec::preset("looksam").looksam_warmup_epochs, k);
    ok = ok && std::round(got * 1e4) == std::round(want * 1e4);
    detail += fmt("; LookSAM k=%d %.4f vs closed form %.4f", k, got, want);
  }
  return {ok, detail};
}

// ---- 11: non-robust features ---------------------------------------------------------

Outcome nrf(const std::string& work) {
  ExperimentConfig cfg = ExperimentConfig::from_json(toy_doc(work));
  const auto [train_set, test_set] = prepare_data(cfg);
  const Graph g = build_graph(cfg.surrogate_arch);
  TrainOptions to;
  to.batch_size = 64;
  to.checkpoint_every = 0;
  const auto base = train(g, init_params<float>(g, 11), train_set.inputs, train_set.label_tensor(),
                          cfg.surrogate_opt, cfg.surrogate_epochs, 11, {}, to);
  NonRobustOptions o;
  o.mode = RelabelMode::det;
  o.epsilon = 0.5;
  o.steps = 100;
  o.seed = 12;
  const auto nr = build_nonrobust_dataset(g, base.final_params, train_set, o);
  const auto fresh = train(g, init_params<float>(g, 13), nr.data.inputs, nr.data.label_tensor(), cfg.surrogate_opt,
                           cfg.surrogate_epochs, 13, {}, to);
  const double acc = accuracy(g, fresh.final_params, test_set.inputs, test_set.labels);
  std::vector<int> shifted;
  for (int y : test_set.labels) shifted.push_back((y + 1) % static_cast<int>(test_set.classes));
  const double acc_shift = accuracy(g, fresh.final_params, test_set.inputs, shifted);
  const double chance = 1.0 / static_cast<double>(test_set.classes);
  return {acc >= chance + 0.10,
          fmt("det dataset kept %.3f of %td; model trained on it scores %.3f on held-out originals with their true "
              "labels (chance %.2f, need >= %.2f); agreement with the shifted labels %.3f",
              nr.kept_fraction, static_cast<std::ptrdiff_t>(train_set.size()), acc, chance, chance + 0.10,
              acc_shift)};
}

// ---- 12: statistics oracle ---------------------------------------------------------

Outcome welch_oracle() {
  std::ifstream in(FLATSURR_TEST_DATA "/welch_oracle.json");
  if (!in) return {false, "missing welch_oracle.json"};
  const json doc = json::parse(in);
  double worst = 0;
  int n = 0;
  for (const auto& c : doc.at("cases")) {
    const auto a = c.at("a").get<std::vector<double>>(), b = c.at("b").get<std::vector<double>>();
    for (const char* alt : {"greater", "less", "two-sided"})
      worst = std::max(worst, std::abs(welch_t_test(a, b, parse_alternative(alt)).p - c.at(alt).get<double>()));
    ++n;
  }
  return {n == 51 && worst <= 1e-8, fmt("%d cases (50 random pairs + worked example) vs scipy ttest_ind(equal_var=False): max |dp| %.2e", n, worst)};
}

}  // namespace

int main(int argc, char** argv) {
  std::string work = "acceptance_work";
  std::set<int> only;
  bool keep = false, strict = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--keep") {
      keep = true;
    } else if (a == "--strict") {
      strict = true;
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...] [--keep] [--strict]\n";
      return 2;
    }
  }
  if (!keep) fs::remove_all(work);
  fs::create_directories(work);
  work = fs::absolute(work).string();

  const std::vector<int> toy_decays = {20, 40};
  std::optional<ExperimentSummary> sgd;
  auto toy_sgd = [&]() -> const ExperimentSummary& {
    if (!sgd) {
      json j = toy_doc(work);
      j["diagnostics"] = {{"sharpness", true}, {"sharpness_epochs", {19, 20, 39, 40}},
                          {"hessian_subset", 1000}, {"probes", 100}, {"max_iters", 100}, {"alpha_every", 2}};
      sgd = run_toy(work, "sgd", j);
    }
    return *sgd;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"HVP/spectral oracle", spectral_oracle},
      {"degeneracy identities", degeneracy},
      {"epsilon-ball suite", epsilon_ball},
      {"white-box sanity", [&] { return white_box(work); }},
      {"directional transferability", [&] { return directional(work, toy_sgd()); }},
      {"LR-decay peak", [&] { return decay_peak(work); }},
      {"sharpness drop", [&] { return sharpness_drop(toy_sgd(), toy_decays); }},
      {"alpha calibration", [&] { return alpha_calibration(toy_sgd(), toy_decays); }},
      {"cost accounting", cost_accounting},
      {"NRF phenomenon", [&] { return nrf(work); }},
      {"statistics oracle", welch_oracle},
  };
  std::ofstream report(fs::path(work).parent_path() / "acceptance.txt");
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    report << line << std::endl;
  };
  int passed = 0, run = 0, errors = 0;
  const auto t_all = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    ++run;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
      ++errors;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    passed += o.pass;
    emit(std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + " (" + criteria[i].first +
         "): " + o.detail + fmt(" [%.1fs]", secs));
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_all).count();
  emit(fmt("%d/%d criteria passed in %.1fs", passed, run, total));
  return errors > 0 || (strict && passed != run) ? 1 : 0;
}
