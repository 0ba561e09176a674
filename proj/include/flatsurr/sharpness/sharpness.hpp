#pragma once

// Weight-space sharpness diagnostics on a fixed batch: Hessian top eigenvalue
// (power iteration), Hessian trace (Hutchinson), and worst-case loss increase
// in an L2 ball (projected ascent).

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "flatsurr/core/hvp.hpp"

namespace flatsurr {

template <typename Scalar>
VectorX<Scalar> rademacher(Index n, std::mt19937_64& rng) {
  VectorX<Scalar> v(n);
  for (Index i = 0; i < n; ++i) v[i] = (rng() & 1u) ? Scalar(1) : Scalar(-1);
  return v;
}

struct EigenEstimate {
  double value = 0;
  int iterations = 0;
};

/// Dominant-magnitude Hessian eigenvalue by power iteration from a seeded
/// Rademacher start. Stops when the Rayleigh quotient changes by less than
/// `tol` (relative) or when |Rayleigh| matches ||Hv|| to `tol`, i.e. the
/// iterate is already an eigenvector.
template <typename Scalar>
EigenEstimate hessian_top_eigenvalue(const LossGradFn<Scalar>& fn, const VectorX<Scalar>& w, int max_iters = 100,
                                     double tol = 1e-4, std::uint64_t seed = 0) {
  if (max_iters < 1) throw SpecError("power iteration needs max_iters >= 1");
  std::mt19937_64 rng(seed);
  VectorX<Scalar> v = rademacher<Scalar>(w.size(), rng);
  v /= v.norm();
  EigenEstimate est;
  double prev = 0;
  for (int it = 1; it <= max_iters; ++it) {
    const VectorX<Scalar> hv = hvp(fn, w, v);
    const double ray = static_cast<double>(v.template cast<double>().dot(hv.template cast<double>()));
    const double hn = static_cast<double>(hv.template cast<double>().norm());
    est.value = ray;
    est.iterations = it;
    if (hn == 0) break;
    const bool eigvec = std::abs(std::abs(ray) - hn) <= tol * hn;
    const bool settled = it > 1 && std::abs(ray - prev) <= tol * std::abs(ray);
    if (eigvec || settled) break;
    prev = ray;
    v = (hv.template cast<double>() / hn).template cast<Scalar>();
  }
  return est;
}

struct TraceEstimate {
  double value = 0;
  double std_error = 0;
  int probes = 0;
};

/// Hutchinson estimate mean(v^T H v) over Rademacher probes, with the
/// standard error of that mean.
template <typename Scalar>
TraceEstimate hessian_trace(const LossGradFn<Scalar>& fn, const VectorX<Scalar>& w, int probes = 20,
                            std::uint64_t seed = 0) {
  if (probes < 2) throw SpecError("hutchinson trace needs probes >= 2");
  std::mt19937_64 rng(seed);
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(probes));
  for (int i = 0; i < probes; ++i) {
    const VectorX<Scalar> v = rademacher<Scalar>(w.size(), rng);
    samples.push_back(static_cast<double>(v.template cast<double>().dot(hvp(fn, w, v).template cast<double>())));
  }
  double m = 0;
  for (double s : samples) m += s;
  m /= probes;
  double ss = 0;
  for (double s : samples) ss += (s - m) * (s - m);
  TraceEstimate t;
  t.value = m;
  t.std_error = std::sqrt(ss / (probes - 1)) / std::sqrt(static_cast<double>(probes));
  t.probes = probes;
  return t;
}

/// max over ||eps|| <= rho of L(w + eps) - L(w), approximated by projected
/// normalized-gradient ascent with step rho/10 started at the SAM point (a
/// seeded random unit direction when the gradient vanishes). Returns the
/// largest gap seen, so it is never below the single-step SAM gap.
template <typename Scalar>
double worst_case_sharpness(const LossGradFn<Scalar>& fn, const VectorX<Scalar>& w, double rho, int steps = 20,
                            std::uint64_t seed = 0) {
  if (!(rho > 0)) throw SpecError("worst-case sharpness needs rho > 0");
  if (steps < 1) throw SpecError("worst-case sharpness needs steps >= 1");
  using D = Accum<Scalar>;
  const LossGrad<Scalar> base = fn(w);
  const double l0 = static_cast<double>(base.loss);
  auto unit = [&](const VectorX<Scalar>& g, std::mt19937_64& rng) -> VectorX<D> {
    VectorX<D> d = g.template cast<D>();
    D n = d.norm();
    if (!(n > 0)) {
      std::normal_distribution<double> n01;
      for (Index i = 0; i < d.size(); ++i) d[i] = static_cast<D>(n01(rng));
      n = d.norm();
    }
    return d / n;
  };
  std::mt19937_64 rng(seed);
  VectorX<D> eps = rho * unit(base.grad, rng);
  LossGrad<Scalar> at = fn((w.template cast<D>() + eps).template cast<Scalar>());
  double best = static_cast<double>(at.loss) - l0;
  for (int s = 0; s < steps; ++s) {
    eps += (rho / 10.0) * unit(at.grad, rng);
    const D n = eps.norm();
    if (n > rho) eps *= rho / n;
    at = fn((w.template cast<D>() + eps).template cast<Scalar>());
    best = std::max(best, static_cast<double>(at.loss) - l0);
  }
  return best;
}

struct SharpnessOptions {
  Index subset = 256;
  int max_iters = 100;
  double tol = 1e-4;
  int probes = 20;
  bool worst_case = true;
  double rho = 0.05;
  int ascent_steps = 20;
  std::uint64_t seed = 0;
};

struct SharpnessRecord {
  int epoch = 0;
  double top_eigenvalue = 0;
  int power_iterations = 0;
  double trace_estimate = 0;
  double trace_stderr = 0;
  double worst_case_gap = 0;
  Index n_examples = 0;
  int probes = 0;
};

/// Seeded subset of min(n, N) distinct indices, sorted.
std::vector<Index> seeded_subset(Index N, Index n, std::uint64_t seed);

/// All diagnostics at one parameter snapshot, computed in double precision
/// in eval mode on a seeded data subset.
template <typename Scalar>
SharpnessRecord measure_sharpness(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                                  const Tensor<Scalar>& y, int epoch, const SharpnessOptions& opts = {}) {
  const auto idx = seeded_subset(x.dim(0), opts.subset, opts.seed);
  if (idx.empty()) throw SpecError("sharpness: empty data subset");
  const ParamSet<double> p = params.template cast<double>();
  const Tensor<double> xs = x.gather(idx).template cast<double>();
  const Tensor<double> ys = y.gather(idx).template cast<double>();
  const auto fn = make_loss_grad_fn(graph, p, xs, ys, Mode::eval);
  const VectorX<double> w = p.pack();
  SharpnessRecord r;
  r.epoch = epoch;
  const auto eig = hessian_top_eigenvalue(fn, w, opts.max_iters, opts.tol, opts.seed + 1);
  r.top_eigenvalue = eig.value;
  r.power_iterations = eig.iterations;
  const auto tr = hessian_trace(fn, w, opts.probes, opts.seed + 2);
  r.trace_estimate = tr.value;
  r.trace_stderr = tr.std_error;
  r.probes = opts.probes;
  if (opts.worst_case) r.worst_case_gap = worst_case_sharpness(fn, w, opts.rho, opts.ascent_steps, opts.seed + 3);
  r.n_examples = static_cast<Index>(idx.size());
  return r;
}

std::string sharpness_csv(const std::vector<SharpnessRecord>& records);
std::string sharpness_json(const SharpnessRecord& r);

}  // namespace flatsurr
