#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

#include "flatsurr/sharpness/alpha.hpp"
#include "flatsurr/sharpness/sharpness.hpp"
#include "test_util.hpp"

using namespace flatsurr;
using namespace flatsurr::testing;

namespace {

LossGradFn<double> quadratic(const Vec& diag) {
  return [diag](const Vec& w) {
    Vec g = diag.cwiseProduct(w);
    return LossGrad<double>{0.5 * w.dot(g), g};
  };
}

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

struct SmallMlp {
  Graph graph;
  ParamSet<double> params;
  Tensor<double> x, y;
};

SmallMlp small_mlp(std::uint64_t seed) {
  ArchSpec spec{Family::mlp, {3}, 0, {3}, 2};  // 20 parameters
  auto m = build_model<double>(spec, seed);
  auto x = random_tensor({16, 3}, seed + 1);
  auto y = random_labels(16, 2, seed + 2);
  return {m.graph, m.params, x, y};
}

}  // namespace

TEST(TopEigenvalue, DiagonalQuadratic) {
  auto e = hessian_top_eigenvalue(quadratic(vec({2, 4})), vec({0.3, -0.2}));
  EXPECT_NEAR(e.value, 4.0, 1e-3);
  auto neg = hessian_top_eigenvalue(quadratic(vec({1, -5, 2})), vec({0, 0, 0}));
  EXPECT_NEAR(neg.value, -5.0, 5e-3);
}

TEST(TopEigenvalue, IdentityConvergesInOneIteration) {
  auto e = hessian_top_eigenvalue(quadratic(Vec::Ones(6)), Vec(Vec::Zero(6)));
  EXPECT_NEAR(e.value, 1.0, 1e-9);
  EXPECT_EQ(e.iterations, 1);
}

TEST(TopEigenvalue, ConvergesOnConstructedSpectra) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    Vec d(8);
    for (Index i = 0; i < 8; ++i) d[i] = u(rng);
    d[trial % 8] = 5.0;  // gap of at least 2
    auto e = hessian_top_eigenvalue(quadratic(d), Vec(Vec::Zero(8)), 200, 1e-8, trial);
    EXPECT_NEAR(e.value, 5.0, 1e-4);
  }
}

TEST(TopEigenvalue, MatchesDenseHessianOnMlp) {
  auto m = small_mlp(3);
  const Vec w = m.params.pack();
  Eigen::MatrixXd H = fd_hessian(param_loss(m.graph, m.params, m.x, m.y, Mode::eval), w);
  H = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  const Vec ev = es.eigenvalues();
  const double dominant = std::abs(ev[0]) > std::abs(ev[ev.size() - 1]) ? ev[0] : ev[ev.size() - 1];
  auto fn = make_loss_grad_fn(m.graph, m.params, m.x, m.y);
  auto e = hessian_top_eigenvalue(fn, w, 1000, 1e-7, 1);
  EXPECT_LT(std::abs(e.value - dominant), 0.01 * std::abs(dominant));
}

TEST(Trace, DiagonalQuadratic) {
  auto t = hessian_trace(quadratic(vec({2, 4})), vec({1, 1}), 1000, 3);
  // Rademacher probes are exact on diagonal Hessians.
  EXPECT_NEAR(t.value, 6.0, 1e-6);
  EXPECT_LE(std::abs(t.value - 6.0), 3 * t.std_error + 1e-9);
  auto z = hessian_trace(quadratic(vec({0, 0, 0})), vec({1, 2, 3}), 10);
  EXPECT_EQ(z.value, 0.0);
  EXPECT_EQ(z.std_error, 0.0);
  EXPECT_THROW(hessian_trace(quadratic(vec({1})), vec({0}), 1), SpecError);
}

TEST(Trace, UnbiasedOnDenseQuadratic) {
  // Off-diagonal coupling makes individual probes noisy.
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(6, 6);
  Eigen::MatrixXd H = A * A.transpose();
  LossGradFn<double> fn = [H](const Vec& w) {
    Vec g = H * w;
    return LossGrad<double>{0.5 * w.dot(g), g};
  };
  // Exact expectation: mean of v^T H v over all 2^6 sign vectors.
  double exact = 0;
  for (int mask = 0; mask < 64; ++mask) {
    Vec v(6);
    for (int i = 0; i < 6; ++i) v[i] = (mask >> i) & 1 ? 1.0 : -1.0;
    exact += v.dot(hvp(fn, Vec(Vec::Zero(6)), v));
  }
  EXPECT_NEAR(exact / 64, H.trace(), 1e-8 * H.trace());

  std::vector<double> means;
  for (int rep = 0; rep < 50; ++rep) means.push_back(hessian_trace(fn, Vec(Vec::Zero(6)), 10, 100 + rep).value);
  const double sem = sample_stddev(means) / std::sqrt(50.0);
  EXPECT_GT(sem, 0);
  EXPECT_LE(std::abs(mean(means) - H.trace()), 3 * sem);
}

TEST(Trace, MatchesDenseHessianOnMlp) {
  auto m = small_mlp(5);
  const Vec w = m.params.pack();
  Eigen::MatrixXd H = fd_hessian(param_loss(m.graph, m.params, m.x, m.y, Mode::eval), w);
  auto t = hessian_trace(make_loss_grad_fn(m.graph, m.params, m.x, m.y), w, 200, 9);
  EXPECT_LE(std::abs(t.value - H.trace()), 3 * t.std_error);
}

TEST(WorstCase, AnalyticQuadratic) {
  // L(w) = 2 w^2 at w = 0: gap rho^2 * 2 at the boundary.
  auto fn = quadratic(vec({4}));
  EXPECT_NEAR(worst_case_sharpness(fn, vec({0}), 0.5), 0.5, 1e-12);
  double prev = 0;
  for (double rho : {0.4, 0.2, 0.1, 0.01, 1e-4}) {
    const double g = worst_case_sharpness(fn, vec({0}), rho);
    if (prev > 0) {
      EXPECT_LT(g, prev);
    }
    prev = g;
  }
  EXPECT_LT(prev, 1e-7);
}

TEST(WorstCase, MonotoneInRhoOnConvexQuadratics) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.1, 4.0);
  for (int trial = 0; trial < 5; ++trial) {
    Vec d(5), w(5);
    for (Index i = 0; i < 5; ++i) d[i] = u(rng), w[i] = u(rng) - 2;
    double prev = -1;
    for (double rho : {0.01, 0.05, 0.1, 0.3, 1.0}) {
      const double g = worst_case_sharpness(quadratic(d), w, rho);
      EXPECT_GE(g, prev);
      prev = g;
    }
  }
}

TEST(WorstCase, AscentRefinesSingleStep) {
  auto m = small_mlp(6);
  auto fn = make_loss_grad_fn(m.graph, m.params, m.x, m.y);
  const Vec w = m.params.pack();
  const double one = worst_case_sharpness(fn, w, 0.5, 1);
  const double twenty = worst_case_sharpness(fn, w, 0.5, 20);
  EXPECT_GE(twenty, one);
  const Vec eps = sam_perturbation(w, fn(w).grad, 0.5, Perturbation::sam);
  EXPECT_GE(twenty, fn(w + eps).loss - fn(w).loss);
}

TEST(MeasureSharpness, RecordAndCsv) {
  ArchSpec spec{Family::smallcnn, {2}, 0, {1, 6, 6}, 2};
  auto m = build_model<float>(spec, 2);
  auto x = random_tensor({40, 1, 6, 6}, 3, 0, 1).cast<float>();
  auto y = random_labels(40, 2, 4).cast<float>();
  SharpnessOptions o;
  o.subset = 16;
  o.probes = 4;
  o.max_iters = 20;
  auto r = measure_sharpness(m.graph, m.params, x, y, 7, o);
  EXPECT_EQ(r.epoch, 7);
  EXPECT_EQ(r.n_examples, 16);
  EXPECT_GE(r.trace_stderr, 0);
  auto again = measure_sharpness(m.graph, m.params, x, y, 7, o);
  EXPECT_EQ(r.top_eigenvalue, again.top_eigenvalue);
  const auto csv = sharpness_csv({r});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lambda_max,trace,trace_se");
  EXPECT_EQ(seeded_subset(10, 20, 1).size(), 10u);
}

TEST(Alpha, AnalyticAnchors) {
  EXPECT_NEAR(alpha_quantity(1, -2, 0, 0), 0.0, 1e-9);
  EXPECT_NEAR(alpha_quantity(0.25, -1, 0.25, 1), 1.0, 1e-9);
  EXPECT_NEAR(alpha_quantity(1, -1, 0, -1), -1.0, 1e-9);
  EXPECT_THROW(alpha_quantity(1, 0, 0, 0), NotDescent);
  EXPECT_THROW(alpha_quantity(1, 0.5, 0, 0), NotDescent);
}

TEST(Alpha, InvariantToLossShift) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 20; ++i) {
    const double f0 = u(rng), s0 = -std::abs(u(rng)) - 0.1, f1 = u(rng), s1 = u(rng);
    double a;
    try {
      a = alpha_quantity(f0, s0, f1, s1);
    } catch (const NotDescent&) {
      continue;
    }
    EXPECT_NEAR(alpha_quantity(f0 + 7.5, s0, f1 + 7.5, s1), a, 1e-9);
  }
}

TEST(Alpha, HookRecordsEveryNthIteration) {
  auto [x, y] = toy_blobs(64, 3);
  ArchSpec spec{Family::mlp, {4}, 0, {2}, 2};
  auto m = build_model<float>(spec, 1);
  AlphaLog log;
  TrainHooks<float> hooks;
  hooks.on_iteration = make_alpha_hook<float>(m.graph, log, 4);
  auto opt = OptimizerSpec::preset("sgd");
  opt.schedule = Schedule::constant(0.05);
  TrainOptions to;
  to.batch_size = 8;
  train(m.graph, m.params, x.cast<float>(), y.cast<float>(), opt, 2, 1, hooks, to);
  EXPECT_EQ(static_cast<long>(log.records.size()) + log.skipped, 4);
  for (const auto& r : log.records) {
    EXPECT_EQ(r.iteration % 4, 0);
    EXPECT_LT(r.s0, 0);
  }
}

TEST(Alpha, CampaignDirection) {
  std::vector<AlphaRecord> recs;
  for (int e = 0; e < 10; ++e)
    for (int k = 0; k < 3; ++k) recs.push_back({e * 3L + k, e, 0, 0, 0, 0, (e < 5 ? 0.8 : -0.5) + 0.01 * k});
  auto c = alpha_campaign(recs, 5);
  EXPECT_EQ(c.before.size(), 15u);
  EXPECT_LT(c.test.p, 1e-6);
  for (auto& r : recs)
    if (r.epoch >= 5) r.alpha += 10;
  EXPECT_GT(alpha_campaign(recs, 5).test.p, 0.99);
  EXPECT_THROW(alpha_campaign(recs, 0), SpecError);
}

TEST(Welch, IdenticalGroups) {
  auto r = welch_t_test({1, 2, 3, 4}, {1, 2, 3, 4}, Alternative::greater);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_NEAR(r.p, 0.5, 1e-15);
  EXPECT_THROW(welch_t_test({1, 1}, {2, 2}), SpecError);
  EXPECT_THROW(welch_t_test({1}, {2, 3}), SpecError);
  EXPECT_LT(welch_t_test({100, 100.001, 99.999}, {0, 0.001, -0.001}, Alternative::greater).p, 1e-6);
}

TEST(Welch, MatchesReferenceImplementation) {
  std::ifstream in(std::string(FLATSURR_TEST_DATA) + "/welch_oracle.json");
  ASSERT_TRUE(in.good());
  const auto doc = nlohmann::json::parse(in);
  int n = 0;
  for (const auto& c : doc.at("cases")) {
    const auto a = c.at("a").get<std::vector<double>>();
    const auto b = c.at("b").get<std::vector<double>>();
    const auto g = welch_t_test(a, b, Alternative::greater);
    EXPECT_NEAR(g.t, c.at("t").get<double>(), 1e-9 * std::max(1.0, std::abs(g.t)));
    EXPECT_NEAR(g.df, c.at("df").get<double>(), 1e-9 * g.df);
    EXPECT_NEAR(g.p, c.at("greater").get<double>(), 1e-10);
    EXPECT_NEAR(welch_t_test(a, b, Alternative::less).p, c.at("less").get<double>(), 1e-10);
    EXPECT_NEAR(welch_t_test(a, b, Alternative::two_sided).p, c.at("two-sided").get<double>(), 1e-10);
    ++n;
  }
  EXPECT_EQ(n, 51);
}
