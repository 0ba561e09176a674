#pragma once

#include <functional>

#include "flatsurr/core/autodiff.hpp"

namespace flatsurr {

template <typename Scalar>
struct LossGrad {
  Scalar loss = 0;
  VectorX<Scalar> grad;
};

/// Loss and gradient as a function of a flat (packed trainable) weight vector.
template <typename Scalar>
using LossGradFn = std::function<LossGrad<Scalar>(const VectorX<Scalar>&)>;

/// Binds a graph, its non-trainable state and a fixed batch into a LossGradFn.
/// Batch-norm running statistics are never updated by the returned function.
template <typename Scalar>
LossGradFn<Scalar> make_loss_grad_fn(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& inputs,
                                     const Tensor<Scalar>& labels, Mode mode = Mode::eval) {
  return [&graph, base = params, inputs, labels, mode](const VectorX<Scalar>& w) {
    ParamSet<Scalar> p = base.with_packed(w);
    auto g = forward_backward(graph, p, inputs, labels, mode);
    return LossGrad<Scalar>{g.loss, g.params.pack()};
  };
}

/// Hessian-vector product by central differences of gradients:
///   Hv ~ (g(w + h u) - g(w - h u)) * ||v|| / (2h),  u = v / ||v||,
///   h = delta * (1 + ||w||).
/// Truncation error is O(h^2); exact for quadratics up to rounding.
template <typename Scalar>
VectorX<Scalar> hvp(const LossGradFn<Scalar>& loss_at, const VectorX<Scalar>& w, const VectorX<Scalar>& v,
                    double delta = 1e-3) {
  if (v.size() != w.size()) throw ShapeError("hvp direction length differs from parameter length");
  const Accum<Scalar> vnorm = v.template cast<Accum<Scalar>>().norm();
  if (!(vnorm > 0)) throw ZeroVectorError("hvp direction has zero norm");
  const Accum<Scalar> h = delta * (1.0 + static_cast<Accum<Scalar>>(w.template cast<Accum<Scalar>>().norm()));
  const VectorX<Scalar> step = (v.template cast<Accum<Scalar>>() * (h / vnorm)).template cast<Scalar>();
  const VectorX<Scalar> gp = loss_at(w + step).grad;
  const VectorX<Scalar> gm = loss_at(w - step).grad;
  return ((gp - gm).template cast<Accum<Scalar>>() * (vnorm / (2 * h))).template cast<Scalar>();
}

}  // namespace flatsurr
