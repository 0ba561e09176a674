#pragma once

// White-box L-infinity BIM and its transfer plugins, L2 PGD, slight
// adversarial training, and LGV model collection.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flatsurr/attacks/spec.hpp"
#include "flatsurr/models/model.hpp"
#include "flatsurr/optim/train.hpp"

namespace flatsurr {

template <typename Scalar>
struct AdvBatch {
  Tensor<Scalar> originals;
  Tensor<Scalar> adversarials;
  std::vector<int> labels;
  std::optional<std::vector<int>> targets;
  std::string surrogate_fingerprint;
  std::string spec_hash;
  std::uint64_t seed = 0;
};

void save_adv_batch(const std::string& path, const AdvBatch<float>& batch);
AdvBatch<float> load_adv_batch(const std::string& path);
std::vector<unsigned char> encode_adv_batch(const AdvBatch<float>& batch);
AdvBatch<float> decode_adv_batch(const std::vector<unsigned char>& bytes);

template <typename Scalar>
Tensor<Scalar> labels_tensor(const std::vector<int>& labels) {
  Tensor<Scalar> t({static_cast<Index>(labels.size())});
  for (std::size_t i = 0; i < labels.size(); ++i) t[static_cast<Index>(i)] = static_cast<Scalar>(labels[i]);
  return t;
}

// ---- plugin primitives -----------------------------------------------------

/// m = decay * m_prev + g / ||g||_1, normalised per example (leading axis).
/// Examples with a zero gradient contribute nothing.
template <typename Scalar>
Tensor<Scalar> mi_accumulate(const Tensor<Scalar>& m_prev, const Tensor<Scalar>& g, double decay) {
  if (m_prev.shape() != g.shape()) throw ShapeError("momentum and gradient shapes differ");
  Tensor<Scalar> m = m_prev;
  m.vec() *= static_cast<Scalar>(decay);
  const Index B = g.dim(0), D = g.size() / B;
  for (Index b = 0; b < B; ++b) {
    const auto row = g.vec().segment(b * D, D);
    const Accum<Scalar> l1 = row.template cast<Accum<Scalar>>().cwiseAbs().sum();
    if (l1 > 0) m.vec().segment(b * D, D) += (row.template cast<Accum<Scalar>>() / l1).template cast<Scalar>();
  }
  return m;
}

/// NI evaluation point x + step * decay * m.
template <typename Scalar>
Tensor<Scalar> ni_lookahead(const Tensor<Scalar>& x, const Tensor<Scalar>& m, double step, double decay) {
  Tensor<Scalar> out = x;
  out.vec() += static_cast<Scalar>(step * decay) * m.vec();
  return out;
}

/// DI geometry for an S x S input: resized side uniform in
/// [ceil(rate * S), S], placed at a uniform offset on the S x S canvas.
/// Returns nullopt (identity) with probability 1 - prob.
std::optional<kernels::ResizePad> di_draw(Index side, double resize_rate, double prob, std::mt19937_64& rng);

template <typename Scalar>
Tensor<Scalar> di_apply(const Tensor<Scalar>& x, const kernels::ResizePad& r) {
  Tensor<Scalar> out(x.shape());
  const Index planes = x.dim(0) * x.dim(1);
  kernels::resize_pad(x.data(), planes, x.dim(2), x.dim(3), r, out.data());
  return out;
}

template <typename Scalar>
Tensor<Scalar> di_transform(const Tensor<Scalar>& x, double resize_rate, double prob, std::mt19937_64& rng) {
  if (x.rank() != 4 || x.dim(2) != x.dim(3)) throw ShapeError("DI needs square (B,C,S,S) inputs, got " + shape_str(x.shape()));
  const auto r = di_draw(x.dim(2), resize_rate, prob, rng);
  return r ? di_apply(x, *r) : x;
}

// ---- model wrappers ------------------------------------------------------------

/// Copy of `graph` whose residual-branch nodes scale their backward signal
/// by gamma. The forward pass is unchanged.
Graph wrap_sgm(const Graph& graph, double gamma = 0.5);

/// Validates that `graph` has residual branches for skip erosion.
void check_gn(const Graph& graph, const GnConfig& cfg);

/// Draws a fresh multiplicative factor U[lo, hi] for every residual branch.
void resample_gn(Graph& graph, const GnConfig& cfg, std::mt19937_64& rng);

// ---- attack objective ----------------------------------------------------------

/// Gradient of the attacker's objective w.r.t. the inputs (eval mode): the
/// cross-entropy on the true labels (untargeted), or minus the
/// cross-entropy on the targets (targeted).
template <typename Scalar>
Tensor<Scalar> objective_grad(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                              const Tensor<Scalar>& labels, bool targeted) {
  Tensor<Scalar> g = grad_wrt_input(graph, params, x, labels, Mode::eval);
  if (targeted) g.vec() = -g.vec();
  return g;
}

template <typename Scalar>
Tensor<Scalar> si_gradient_with(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& grad, const Tensor<Scalar>& x,
                                int copies) {
  if (copies < 1) throw SpecError("SI needs at least one copy");
  Tensor<Scalar> acc = grad(x);
  for (int i = 1; i < copies; ++i) {
    Tensor<Scalar> xi = x;
    const Scalar s = static_cast<Scalar>(std::ldexp(1.0, -i));
    xi.vec() *= s;
    acc.vec() += s * grad(xi).vec();
  }
  if (copies > 1) acc.vec() /= static_cast<Scalar>(copies);
  return acc;
}

/// mean over i < copies of d/dx L(x / 2^i).
template <typename Scalar>
Tensor<Scalar> si_gradient(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                           const Tensor<Scalar>& labels, int copies, bool targeted = false) {
  return si_gradient_with<Scalar>([&](const Tensor<Scalar>& p) { return objective_grad(graph, params, p, labels, targeted); },
                                  x, copies);
}

template <typename Scalar>
struct VtResult {
  Tensor<Scalar> used;  // g(x) + v_prev
  Tensor<Scalar> next;  // mean_r g(x + r) - g(x)
};

template <typename Scalar>
VtResult<Scalar> vt_gradient_with(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& grad,
                                  const Tensor<Scalar>& x, double beta, double epsilon, int samples,
                                  const Tensor<Scalar>& v_prev, std::mt19937_64& rng) {
  if (samples < 1) throw SpecError("VT needs at least one sample");
  if (beta < 0) throw SpecError("VT beta must be >= 0");
  const Tensor<Scalar> g = grad(x);
  VtResult<Scalar> r{g, Tensor<Scalar>(x.shape())};
  r.used.vec() += v_prev.vec();
  const double radius = beta * epsilon;
  std::uniform_real_distribution<double> u(-radius, radius);
  VectorX<Accum<Scalar>> acc = VectorX<Accum<Scalar>>::Zero(x.size());
  for (int s = 0; s < samples; ++s) {
    Tensor<Scalar> xr = x;
    if (radius > 0)
      for (Index i = 0; i < xr.size(); ++i) xr[i] += static_cast<Scalar>(u(rng));
    acc += (grad(xr).vec() - g.vec()).template cast<Accum<Scalar>>();
  }
  r.next.vec() = (acc / static_cast<Accum<Scalar>>(samples)).template cast<Scalar>();
  return r;
}

template <typename Scalar>
VtResult<Scalar> vt_gradient(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                             const Tensor<Scalar>& labels, double beta, double epsilon, int samples,
                             const Tensor<Scalar>& v_prev, std::mt19937_64& rng, bool targeted = false) {
  return vt_gradient_with<Scalar>(
      [&](const Tensor<Scalar>& p) { return objective_grad(graph, params, p, labels, targeted); }, x, beta, epsilon,
      samples, v_prev, rng);
}

/// RAP inner loop: signed steps of eps_n / inner_steps that lower the
/// attacker's objective at x + n, projected onto the eps_n L-infinity ball.
template <typename Scalar>
Tensor<Scalar> rap_displace(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                            const Tensor<Scalar>& labels, double eps_n, int inner_steps, bool targeted = false) {
  if (!(eps_n > 0)) throw SpecError("RAP radius must be positive");
  if (inner_steps < 1) throw SpecError("RAP needs at least one inner step");
  const Scalar step = static_cast<Scalar>(eps_n / inner_steps);
  const Scalar lim = static_cast<Scalar>(eps_n);
  Tensor<Scalar> n(x.shape());
  for (int k = 0; k < inner_steps; ++k) {
    Tensor<Scalar> xn = x;
    xn.vec() += n.vec();
    const Tensor<Scalar> g = objective_grad(graph, params, xn, labels, targeted);
    n.vec() -= step * g.vec().cwiseSign();
    n.vec() = n.vec().cwiseMax(-lim).cwiseMin(lim);
  }
  return n;
}

/// Clip to the eps-ball around x and to [0, 1].
template <typename Scalar>
void project_linf(Tensor<Scalar>& x_adv, const Tensor<Scalar>& x, double epsilon) {
  const Scalar e = static_cast<Scalar>(epsilon);
  x_adv.vec() = x_adv.vec().array().max(x.vec().array() - e).min(x.vec().array() + e).max(Scalar(0)).min(Scalar(1)).matrix();
  // x + e can round past the ball; step back by an ulp where it does.
  for (Index i = 0; i < x_adv.size(); ++i) {
    while (x_adv[i] - x[i] > e) x_adv[i] = std::nextafter(x_adv[i], x[i]);
    while (x[i] - x_adv[i] > e) x_adv[i] = std::nextafter(x_adv[i], x[i]);
  }
}

// ---- BIM -------------------------------------------------------------------

/// Iterative signed-gradient L-infinity attack on a surrogate (or, with
/// `spec.lgv`, a pool of surrogates sharing `graph`). Per iteration:
///   pick model (LGV) and resample GN factors
///   -> evaluation point (NI lookahead, then RAP displacement)
///   -> gradient estimate (DI inside every gradient call; SI, VT)
///   -> MI/NI momentum -> sign step -> projection.
template <typename Scalar>
AdvBatch<Scalar> bim(const Graph& graph, const std::vector<ParamSet<Scalar>>& pool, const Tensor<Scalar>& x,
                     const std::vector<int>& labels, const AttackSpec& spec, std::uint64_t seed,
                     const std::vector<int>* targets = nullptr) {
  spec.validate();
  if (pool.empty()) throw SpecError("attack needs at least one surrogate");
  if (pool.size() > 1 && !spec.lgv) throw SpecError("a surrogate pool requires the lgv technique");
  for (const auto& p : pool) check_params(graph, p);
  if (static_cast<Index>(labels.size()) != x.dim(0)) throw ShapeError("labels do not match the input batch");
  if (spec.targeted && (!targets || targets->size() != labels.size()))
    throw SpecError("targeted attack needs one target label per example");
  if (x.vec().size() > 0 && (x.vec().minCoeff() < 0 || x.vec().maxCoeff() > 1))
    throw SpecError("attack inputs must lie in [0, 1]");

  Graph g = spec.sgm ? wrap_sgm(graph, spec.sgm->gamma) : graph;
  if (spec.gn) check_gn(g, *spec.gn);
  std::mt19937_64 rng(seed);
  const Tensor<Scalar> y = labels_tensor<Scalar>(spec.targeted ? *targets : labels);
  const double step = spec.step_size();
  const std::optional<MomentumConfig> momentum = spec.mi ? spec.mi : spec.ni;

  std::vector<std::size_t> order(pool.size());
  std::size_t cursor = order.size();

  Tensor<Scalar> x_adv = x;
  Tensor<Scalar> m(x.shape()), v(x.shape());
  for (int it = 0; it < spec.iterations; ++it) {
    std::size_t pick = 0;
    if (pool.size() > 1) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      pick = order[cursor++];
    }
    const ParamSet<Scalar>& params = pool[pick];
    if (spec.gn) resample_gn(g, *spec.gn, rng);

    Tensor<Scalar> x_eval = spec.ni ? ni_lookahead(x_adv, m, step, spec.ni->decay) : x_adv;
    if (spec.rap && it >= spec.rap->late_start) {
      const Tensor<Scalar> n =
          rap_displace(g, params, x_eval, y, spec.rap->radius_ratio * spec.epsilon, spec.rap->inner_steps, spec.targeted);
      x_eval.vec() += n.vec();
    }

    // One DI geometry per gradient call.
    const std::function<Tensor<Scalar>(const Tensor<Scalar>&)> base = [&](const Tensor<Scalar>& p) {
      if (spec.di) {
        const auto r = di_draw(p.dim(2), spec.di->resize_rate, spec.di->prob, rng);
        if (r) {
          const Tensor<Scalar> gt = objective_grad(g, params, di_apply(p, *r), y, spec.targeted);
          Tensor<Scalar> gx(p.shape());
          kernels::resize_pad_backward(gt.data(), p.dim(0) * p.dim(1), p.dim(2), p.dim(3), *r, gx.data());
          return gx;
        }
      }
      return objective_grad(g, params, p, y, spec.targeted);
    };
    const std::function<Tensor<Scalar>(const Tensor<Scalar>&)> estimate =
        spec.si ? std::function<Tensor<Scalar>(const Tensor<Scalar>&)>(
                      [&](const Tensor<Scalar>& p) { return si_gradient_with(base, p, spec.si->copies); })
                : base;
    Tensor<Scalar> grad;
    if (spec.vt) {
      auto r = vt_gradient_with(estimate, x_eval, spec.vt->beta, spec.epsilon, spec.vt->samples, v, rng);
      grad = std::move(r.used);
      v = std::move(r.next);
    } else {
      grad = estimate(x_eval);
    }

    if (momentum) {
      m = mi_accumulate(m, grad, momentum->decay);
      x_adv.vec() += static_cast<Scalar>(step) * m.vec().cwiseSign();
    } else {
      x_adv.vec() += static_cast<Scalar>(step) * grad.vec().cwiseSign();
    }
    project_linf(x_adv, x, spec.epsilon);
  }

  AdvBatch<Scalar> out;
  out.originals = x;
  out.adversarials = std::move(x_adv);
  out.labels = labels;
  if (spec.targeted) out.targets = *targets;
  out.surrogate_fingerprint = graph.fingerprint();
  out.spec_hash = spec.hash();
  out.seed = seed;
  return out;
}

template <typename Scalar>
AdvBatch<Scalar> bim(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                     const std::vector<int>& labels, const AttackSpec& spec, std::uint64_t seed,
                     const std::vector<int>* targets = nullptr) {
  return bim(graph, std::vector<ParamSet<Scalar>>{params}, x, labels, spec, seed, targets);
}

/// Untargeted: fraction of adversarials the model misclassifies.
/// Targeted: fraction classified as the target.
template <typename Scalar>
double success_rate(const AdvBatch<Scalar>& adv, const Graph& graph, const ParamSet<Scalar>& params) {
  check_params(graph, params);
  const auto pred = predict_labels(graph, params, adv.adversarials);
  if (pred.size() != adv.labels.size()) throw ShapeError("adversarial batch and labels disagree");
  if (pred.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    hits += adv.targets ? pred[i] == (*adv.targets)[i] : pred[i] != adv.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---- L2 PGD and slight adversarial training ----------------------------------

/// Normalised-gradient L2 PGD with per-example projection onto the eps ball
/// and clipping to [0, 1]. `mode` selects batch-norm behaviour; running
/// statistics are never updated.
template <typename Scalar>
Tensor<Scalar> pgd_l2_inputs(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                             const Tensor<Scalar>& y, double epsilon, int steps, double step_size, bool targeted,
                             Mode mode = Mode::eval) {
  if (!(epsilon > 0)) throw SpecError("PGD epsilon must be positive");
  if (steps < 0) throw SpecError("PGD steps must be >= 0");
  Tensor<Scalar> x_adv = x;
  const Index B = x.dim(0), D = x.size() / B;
  for (int s = 0; s < steps; ++s) {
    Tensor<Scalar> g = grad_wrt_input(graph, params, x_adv, y, mode);
    if (targeted) g.vec() = -g.vec();
    for (Index b = 0; b < B; ++b) {
      auto gb = g.vec().segment(b * D, D);
      const Accum<Scalar> n = gb.template cast<Accum<Scalar>>().norm();
      if (n > 0) x_adv.vec().segment(b * D, D) += (gb.template cast<Accum<Scalar>>() * (step_size / n)).template cast<Scalar>();
      VectorX<Accum<Scalar>> d =
          (x_adv.vec().segment(b * D, D) - x.vec().segment(b * D, D)).template cast<Accum<Scalar>>();
      const Accum<Scalar> dn = d.norm();
      if (dn > epsilon) d *= epsilon / dn;
      x_adv.vec().segment(b * D, D) = (x.vec().segment(b * D, D).template cast<Accum<Scalar>>() + d).template cast<Scalar>();
    }
    x_adv.vec() = x_adv.vec().cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
  }
  return x_adv;
}

template <typename Scalar>
AdvBatch<Scalar> pgd_l2(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                        const std::vector<int>& labels, double epsilon, int steps, double step_size,
                        const std::vector<int>* targets = nullptr) {
  const bool targeted = targets != nullptr;
  AdvBatch<Scalar> out;
  out.originals = x;
  out.adversarials = pgd_l2_inputs(graph, params, x, labels_tensor<Scalar>(targeted ? *targets : labels), epsilon,
                                   steps, step_size, targeted);
  out.labels = labels;
  if (targeted) out.targets = *targets;
  out.surrogate_fingerprint = graph.fingerprint();
  return out;
}

/// Training where every mini-batch is replaced by its L2 PGD perturbation
/// (computed with train-mode batch statistics) before the optimizer step.
template <typename Scalar>
Trajectory<Scalar> adversarial_train_sat(const Graph& graph, ParamSet<Scalar> params, const Tensor<Scalar>& inputs,
                                         const Tensor<Scalar>& labels, double epsilon, int steps, double step_size,
                                         const OptimizerSpec& spec, int epochs, std::uint64_t seed,
                                         TrainHooks<Scalar> hooks = {}, const TrainOptions& opts = {},
                                         const Tensor<Scalar>* eval_inputs = nullptr,
                                         const Tensor<Scalar>* eval_labels = nullptr) {
  if (steps > 0) {
    hooks.perturb_batch = [&graph, epsilon, steps, step_size](Tensor<Scalar>& x, const Tensor<Scalar>& y,
                                                              const ParamSet<Scalar>& p) {
      x = pgd_l2_inputs(graph, p, x, y, epsilon, steps, step_size, false, Mode::train);
      return steps;
    };
  }
  return train(graph, std::move(params), inputs, labels, spec, epochs, seed, hooks, opts, eval_inputs, eval_labels);
}

// ---- LGV ---------------------------------------------------------------------

struct LgvOptions {
  double lr = 0.05;
  int epochs = 10;
  int per_epoch = 4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index batch_size = 128;
};

/// Continues SGD at a constant learning rate from `params` and keeps
/// `per_epoch` equally spaced snapshots per epoch.
template <typename Scalar>
std::vector<ParamSet<Scalar>> lgv_collect(const Graph& graph, const ParamSet<Scalar>& params,
                                          const Tensor<Scalar>& inputs, const Tensor<Scalar>& labels,
                                          const LgvOptions& o, std::uint64_t seed) {
  if (o.epochs < 1 || o.per_epoch < 1) throw SpecError("LGV needs epochs >= 1 and per_epoch >= 1");
  const Index N = inputs.dim(0);
  const Index batches = (N + o.batch_size - 1) / o.batch_size;
  if (o.per_epoch > batches)
    throw SpecError("LGV per_epoch (" + std::to_string(o.per_epoch) + ") exceeds batches per epoch (" +
                    std::to_string(batches) + ")");
  OptimizerSpec spec;
  spec.rule = Rule::sgd;
  spec.schedule = Schedule::constant(o.lr);
  spec.momentum = o.momentum;
  spec.weight_decay = o.weight_decay;
  std::vector<ParamSet<Scalar>> pool;
  TrainHooks<Scalar> hooks;
  hooks.on_iteration = [&](const IterationInfo<Scalar>& it) {
    const Index pos = it.iteration - static_cast<Index>(it.epoch) * batches;
    for (int j = 1; j <= o.per_epoch; ++j)
      if (pos == (j * batches) / o.per_epoch - 1) pool.push_back(it.params_after);
  };
  TrainOptions to;
  to.batch_size = o.batch_size;
  to.checkpoint_every = 0;
  train(graph, params, inputs, labels, spec, o.epochs, seed, hooks, to);
  return pool;
}

template <typename Scalar>
ParamSet<Scalar> lgv_swa(const Graph& graph, const std::vector<ParamSet<Scalar>>& pool, const Tensor<Scalar>& data,
                         double fraction = 1.0, std::uint64_t seed = 0) {
  SwaAverager<Scalar> avg;
  for (const auto& p : pool) avg.accumulate(p);
  return avg.finalize(graph, data, fraction, seed);
}

}  // namespace flatsurr
