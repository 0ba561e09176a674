#pragma once

// Training update rules: momentum SGD with weight decay, and the
// sharpness-aware family (SAM, ASAM, GSAM, AGSAM, LookSAM, WASAM). All rules
// operate on the packed vector of trainable parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "flatsurr/core/autodiff.hpp"

namespace flatsurr {

enum class Rule { sgd, swa, sam, asam, gsam, agsam, looksam, wasam };

const char* rule_name(Rule r);
Rule parse_rule(const std::string& name);

inline bool is_adaptive(Rule r) { return r == Rule::asam || r == Rule::agsam; }
inline bool is_sam_family(Rule r) { return r != Rule::sgd && r != Rule::swa; }
inline bool averages_weights(Rule r) { return r == Rule::swa || r == Rule::wasam; }

/// Step-wise learning-rate schedule: lr0 divided by every divisor whose decay
/// epoch is <= the current (0-based) epoch.
struct Schedule {
  double lr0 = 0.1;
  std::vector<std::pair<int, double>> decays;

  static Schedule constant(double lr0) { return {lr0, {}}; }
  /// Divide by `divisor` every `period` epochs, up to (excluding) `epochs`.
  static Schedule step_every(double lr0, int period, int epochs, double divisor = 10.0);
};

inline double lr_at(const Schedule& s, int epoch) {
  double lr = s.lr0;
  for (const auto& [at, divisor] : s.decays)
    if (at <= epoch) lr /= divisor;
  return lr;
}

struct OptimizerSpec {
  Rule rule = Rule::sgd;
  Schedule schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double rho = 0.0;
  double alpha_gsam = 0.15;
  int looksam_k = 5;
  int looksam_warmup_epochs = 3;
  double looksam_alpha = 0.7;
  double swa_fraction = 0.25;

  void validate() const;
  std::string describe() const;

  /// Named presets: sgd, swa, sam, l-sam, l-sam-0.3, asam, l-asam, gsam,
  /// l-gsam, agsam, l-agsam, looksam, l-looksam, wasam.
  static OptimizerSpec preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

template <typename Scalar>
struct OptimizerState {
  VectorX<Scalar> momentum;
  long step = 0;
  int epoch = 0;
  VectorX<Scalar> looksam_gv;
  Scalar looksam_gnorm = 0;
  bool looksam_cached = false;
  std::uint64_t fwdbwd_passes = 0;
};

/// g' = g + wd * w;  m <- mu * m + g';  w <- w - lr * m.
template <typename Scalar>
void sgd_step(VectorX<Scalar>& w, const VectorX<Scalar>& grad, VectorX<Scalar>& momentum, Scalar lr, Scalar mu,
              Scalar weight_decay) {
  if (grad.size() != w.size()) throw ShapeError("gradient length differs from parameter length");
  if (!grad.allFinite()) throw NonFiniteError("gradient", "non-finite gradient in optimizer step");
  if (momentum.size() != w.size()) momentum = VectorX<Scalar>::Zero(w.size());
  momentum = mu * momentum + (grad + weight_decay * w);
  w -= lr * momentum;
}

enum class Perturbation { sam, asam };

/// Ascent step of radius rho:
///   sam:  eps = rho * g / ||g||
///   asam: eps = rho * T^2 g / ||T g||,  T = diag(|w|).
/// rho == 0 returns zeros without inspecting the gradient.
template <typename Scalar>
VectorX<Scalar> sam_perturbation(const VectorX<Scalar>& w, const VectorX<Scalar>& grad, double rho,
                                 Perturbation variant) {
  if (rho == 0.0) return VectorX<Scalar>::Zero(grad.size());
  if (variant == Perturbation::sam) {
    const Accum<Scalar> n = grad.template cast<Accum<Scalar>>().norm();
    if (!(n > 0)) throw GradientVanished("SAM ascent: gradient has zero norm");
    return (grad.template cast<Accum<Scalar>>() * (rho / n)).template cast<Scalar>();
  }
  const VectorX<Accum<Scalar>> t = w.template cast<Accum<Scalar>>().cwiseAbs();
  const VectorX<Accum<Scalar>> tg = t.cwiseProduct(grad.template cast<Accum<Scalar>>());
  const Accum<Scalar> n = tg.norm();
  if (!(n > 0)) throw GradientVanished("ASAM ascent: scaled gradient has zero norm");
  return (t.cwiseProduct(tg) * (rho / n)).template cast<Scalar>();
}

/// Component of `g` orthogonal to `ref`.
template <typename Scalar>
VectorX<Scalar> orthogonal_component(const VectorX<Scalar>& g, const VectorX<Scalar>& ref) {
  const Accum<Scalar> rr = ref.template cast<Accum<Scalar>>().squaredNorm();
  if (!(rr > 0)) throw GradientVanished("projection onto a zero vector");
  const Accum<Scalar> c = g.template cast<Accum<Scalar>>().dot(ref.template cast<Accum<Scalar>>()) / rr;
  return (g.template cast<Accum<Scalar>>() - c * ref.template cast<Accum<Scalar>>()).template cast<Scalar>();
}

/// GSAM descent direction g1 - alpha * (g0 orthogonal to g1).
template <typename Scalar>
VectorX<Scalar> gsam_direction(const VectorX<Scalar>& g0, const VectorX<Scalar>& g1, double alpha) {
  if (!(g1.template cast<Accum<Scalar>>().norm() > 0))
    throw GradientVanished("GSAM: perturbed gradient has zero norm");
  const VectorX<Scalar> perp = orthogonal_component(g0, g1);
  return g1 - static_cast<Scalar>(alpha) * perp;
}

template <typename Scalar>
using GradientAt = std::function<VectorX<Scalar>(const VectorX<Scalar>&)>;

/// Descent direction of `spec.rule` at weights `w` with gradient `g0`.
/// `gradient_at` evaluates the mini-batch gradient at another point; it is
/// called at most once. Updates the LookSAM cache in `state`.
template <typename Scalar>
VectorX<Scalar> descent_direction(const VectorX<Scalar>& w, const VectorX<Scalar>& g0,
                                  const GradientAt<Scalar>& gradient_at, const OptimizerSpec& spec,
                                  OptimizerState<Scalar>& state) {
  const auto perturb = is_adaptive(spec.rule) ? Perturbation::asam : Perturbation::sam;
  switch (spec.rule) {
    case Rule::sgd:
    case Rule::swa:
      return g0;
    case Rule::sam:
    case Rule::asam:
    case Rule::wasam:
      return gradient_at(w + sam_perturbation(w, g0, spec.rho, perturb));
    case Rule::gsam:
    case Rule::agsam:
      return gsam_direction(g0, gradient_at(w + sam_perturbation(w, g0, spec.rho, perturb)), spec.alpha_gsam);
    case Rule::looksam:
      break;
  }
  const bool full = state.epoch < spec.looksam_warmup_epochs || state.step % spec.looksam_k == 0;
  const Accum<Scalar> n0 = g0.template cast<Accum<Scalar>>().norm();
  if (full) {
    VectorX<Scalar> g1 = gradient_at(w + sam_perturbation(w, g0, spec.rho, Perturbation::sam));
    if (spec.rho == 0.0)
      state.looksam_gv = VectorX<Scalar>::Zero(w.size());
    else
      state.looksam_gv = n0 > 0 ? orthogonal_component(g1, g0) : g1;
    state.looksam_gnorm = static_cast<Scalar>(n0);
    state.looksam_cached = true;
    return g1;
  }
  VectorX<Scalar> d = g0;
  const Accum<Scalar> nv = state.looksam_gv.template cast<Accum<Scalar>>().norm();
  if (state.looksam_cached && nv > 0)
    d += (state.looksam_gv.template cast<Accum<Scalar>>() * (spec.looksam_alpha * n0 / nv)).template cast<Scalar>();
  return d;
}

/// One iteration on flat weights: direction, then momentum SGD at the
/// scheduled learning rate. Returns the number of `gradient_at` calls.
template <typename Scalar>
int flat_step(VectorX<Scalar>& w, const VectorX<Scalar>& g0, const GradientAt<Scalar>& gradient_at,
              const OptimizerSpec& spec, OptimizerState<Scalar>& state) {
  int calls = 0;
  const GradientAt<Scalar> counted = [&](const VectorX<Scalar>& p) {
    ++calls;
    return gradient_at(p);
  };
  const VectorX<Scalar> d = descent_direction(w, g0, counted, spec, state);
  sgd_step(w, d, state.momentum, static_cast<Scalar>(lr_at(spec.schedule, state.epoch)),
           static_cast<Scalar>(spec.momentum), static_cast<Scalar>(spec.weight_decay));
  ++state.step;
  state.fwdbwd_passes += static_cast<std::uint64_t>(1 + calls);
  return calls;
}

template <typename Scalar>
struct StepInfo {
  Scalar loss = 0;        // loss at the pre-step weights
  VectorX<Scalar> grad0;  // gradient at the pre-step weights
  Tensor<Scalar> logits;  // logits of the first pass
  int passes = 0;         // forward-backward passes spent
};

/// One optimizer iteration of `spec.rule` on a mini-batch. Updates `params`
/// (trainable tensors plus batch-norm running statistics from the first pass)
/// and `state`. The ascent and descent gradients share the mini-batch.
template <typename Scalar>
StepInfo<Scalar> sam_family_step(const Graph& graph, ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                                 const Tensor<Scalar>& y, const OptimizerSpec& spec, OptimizerState<Scalar>& state) {
  StepInfo<Scalar> info;
  auto first = forward_backward(graph, params, x, y, Mode::train);
  info.loss = first.loss;
  info.logits = std::move(first.logits);
  info.grad0 = first.params.pack();
  VectorX<Scalar> w = params.pack();
  const GradientAt<Scalar> gradient_at = [&](const VectorX<Scalar>& point) {
    return forward_backward(graph, params.with_packed(point), x, y, Mode::train).params.pack();
  };
  info.passes = 1 + flat_step(w, info.grad0, gradient_at, spec, state);
  params.unpack(w);
  apply_bn_updates(params, first.bn_updates);
  return info;
}

/// Closed-form forward-backward cost of LookSAM relative to SGD for equal
/// schedules, valid when the number of batches per epoch is a multiple of k.
inline double looksam_cost_ratio(int epochs, int warmup, int k) {
  const int w = std::min(warmup, epochs);
  return (2.0 * w + (epochs - w) * (1.0 + 1.0 / k)) / epochs;
}

}  // namespace flatsurr
