#include <Eigen/QR>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "flatsurr/sharpness/alpha.hpp"
#include "flatsurr/sharpness/sharpness.hpp"

namespace flatsurr {

std::vector<Index> seeded_subset(Index N, Index n, std::uint64_t seed) {
  if (n < 1) throw SpecError("subset size must be >= 1");
  std::vector<Index> idx(static_cast<std::size_t>(N));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (n >= N) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string sharpness_csv(const std::vector<SharpnessRecord>& records) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,lambda_max,trace,trace_se\n";
  for (const auto& r : records)
    os << r.epoch << ',' << r.top_eigenvalue << ',' << r.trace_estimate << ',' << r.trace_stderr << '\n';
  return os.str();
}

std::string sharpness_json(const SharpnessRecord& r) {
  return nlohmann::json{{"epoch", r.epoch},
                        {"top_eigenvalue", r.top_eigenvalue},
                        {"power_iterations", r.power_iterations},
                        {"trace_estimate", r.trace_estimate},
                        {"trace_stderr", r.trace_stderr},
                        {"worst_case_gap", r.worst_case_gap},
                        {"n_examples", r.n_examples},
                        {"probes", r.probes}}
      .dump();
}

double alpha_quantity(double f0, double s0, double f1, double s1) {
  if (!(s0 < 0)) throw NotDescent("alpha: step is not a descent direction (slope " + std::to_string(s0) + ")");
  Eigen::Matrix<double, 4, 3> A;
  A << 0, 0, 1,  //
      0, 1, 0,   //
      1, 1, 1,   //
      2, 1, 0;
  Eigen::Vector4d obs(f0, s0, f1, s1);
  const Eigen::Vector3d coef = A.colPivHouseholderQr().solve(obs);
  const double a = coef[0], b = coef[1];
  if (!(b < 0)) throw NotDescent("alpha: fitted slope at the step start is not negative");
  return (2 * a + b) / std::abs(b);
}

AlphaCampaign alpha_campaign(const std::vector<AlphaRecord>& records, int decay_epoch, int window_before,
                             int window_after) {
  if (window_before < 1 || window_after < 1) throw SpecError("alpha campaign windows must be >= 1 epoch");
  AlphaCampaign c;
  for (const auto& r : records) {
    if (r.epoch >= decay_epoch - window_before && r.epoch < decay_epoch) c.before.push_back(r.alpha);
    if (r.epoch >= decay_epoch && r.epoch < decay_epoch + window_after) c.after.push_back(r.alpha);
  }
  if (c.before.size() < 2 || c.after.size() < 2)
    throw SpecError("alpha campaign: each window needs at least two records (got " + std::to_string(c.before.size()) +
                    " before, " + std::to_string(c.after.size()) + " after)");
  c.test = welch_t_test(c.before, c.after, Alternative::greater);
  return c;
}

std::string alpha_csv(const std::vector<AlphaRecord>& records) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,epoch,f0,s0,f1,s1,alpha\n";
  for (const auto& r : records)
    os << r.iteration << ',' << r.epoch << ',' << r.f0 << ',' << r.s0 << ',' << r.f1 << ',' << r.s1 << ',' << r.alpha
       << '\n';
  return os.str();
}

}  // namespace flatsurr
