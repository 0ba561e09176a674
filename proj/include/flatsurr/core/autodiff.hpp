#pragma once

// Reverse-mode differentiation over a static Graph. A forward pass records
// every node value plus what each backward rule needs; the backward pass walks
// the nodes once in reverse topological order.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "flatsurr/core/graph.hpp"
#include "flatsurr/core/kernels.hpp"
#include "flatsurr/core/params.hpp"

namespace flatsurr {

enum class Mode { train, eval };

/// Batch statistics observed by one batch-norm node in train mode.
template <typename Scalar>
struct BatchNormUpdate {
  int mean_param = -1;
  int var_param = -1;
  VectorX<Scalar> mean;
  VectorX<Scalar> var_unbiased;
  VectorX<Scalar> var_biased;
  Index count = 0;
};

template <typename Scalar>
struct ForwardState {
  Mode mode = Mode::eval;
  Index batch = 0;
  std::vector<Tensor<Scalar>> values;
  std::vector<MatrixRM<Scalar>> cols;            // conv2d
  std::vector<std::vector<Index>> argmax;        // max_pool2
  std::vector<Tensor<Scalar>> xhat;              // batch_norm
  std::vector<VectorX<Scalar>> inv_std;          // batch_norm
  std::vector<BatchNormUpdate<Scalar>> bn_updates;

  const Tensor<Scalar>& output(const Graph& g) const { return values[static_cast<std::size_t>(g.output())]; }
};

template <typename Scalar>
struct Gradients {
  Scalar loss = 0;
  ParamSet<Scalar> params;            // same layout as the inputs; zeros on running statistics
  std::optional<Tensor<Scalar>> inputs;
  Tensor<Scalar> logits;
  std::vector<BatchNormUpdate<Scalar>> bn_updates;
};

namespace detail {

template <typename Scalar>
void check_inputs(const Graph& graph, const Tensor<Scalar>& inputs) {
  const Shape& expect = graph.input_shape();
  const Shape& got = inputs.shape();
  bool ok = got.size() == expect.size() + 1;
  for (std::size_t i = 0; ok && i < expect.size(); ++i) ok = got[i + 1] == expect[i];
  if (!ok)
    throw ShapeError("input batch has shape " + shape_str(got) + ", graph expects (B," +
                     shape_str(expect).substr(1));
}

template <typename Scalar>
Shape batched(Index batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

/// Channel count and per-channel inner extent of a batch-norm operand.
inline std::pair<Index, Index> bn_layout(const Shape& per_example) {
  if (per_example.size() == 1) return {per_example[0], 1};
  return {per_example[0], per_example[1] * per_example[2]};
}

template <typename Scalar>
void accumulate(std::vector<Tensor<Scalar>>& grads, int node, Tensor<Scalar>&& g) {
  auto& slot = grads[static_cast<std::size_t>(node)];
  if (slot.empty())
    slot = std::move(g);
  else
    slot.vec() += g.vec();
}

}  // namespace detail

template <typename Scalar>
ForwardState<Scalar> forward(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& inputs,
                             Mode mode) {
  check_params(graph, params);
  detail::check_inputs(graph, inputs);
  const auto& nodes = graph.nodes();
  const std::size_t n_nodes = nodes.size();
  ForwardState<Scalar> st;
  st.mode = mode;
  st.batch = inputs.dim(0);
  st.values.resize(n_nodes);
  st.cols.resize(n_nodes);
  st.argmax.resize(n_nodes);
  st.xhat.resize(n_nodes);
  st.inv_std.resize(n_nodes);
  const Index B = st.batch;

  for (std::size_t i = 0; i < n_nodes; ++i) {
    const Node& n = nodes[i];
    Tensor<Scalar> out(detail::batched<Scalar>(B, n.out_shape));
    auto in = [&](int k) -> const Tensor<Scalar>& {
      return st.values[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])];
    };
    auto param = [&](int k) -> const Tensor<Scalar>& {
      return params.tensors[static_cast<std::size_t>(n.params[static_cast<std::size_t>(k)])];
    };
    switch (n.op) {
      case OpKind::input:
        out = inputs;
        break;
      case OpKind::linear: {
        const auto& w = param(0);
        const auto& b = param(1);
        auto y = out.matrix();
        y.noalias() = in(0).matrix() * w.matrix().transpose();
        y.rowwise() += b.vec().transpose();
        break;
      }
      case OpKind::conv2d: {
        const Shape& s = graph.node(n.inputs[0]).out_shape;
        kernels::ConvGeometry g{B, s[0], s[1], s[2], n.kernel, n.stride, n.padding, n.out_shape[1], n.out_shape[2]};
        st.cols[i] = kernels::im2col(in(0).data(), g);
        const auto& w = param(0);
        typename Tensor<Scalar>::ConstMatrixMap wm(w.data(), w.dim(0), g.patch());
        MatrixRM<Scalar> y = wm * st.cols[i];
        y.colwise() += param(1).vec();
        kernels::channel_major_to_batch(y, B, g.positions(), out.data());
        break;
      }
      case OpKind::relu:
        out.vec() = in(0).vec().cwiseMax(Scalar(0));
        break;
      case OpKind::max_pool2: {
        const Shape& s = graph.node(n.inputs[0]).out_shape;
        kernels::max_pool2(in(0).data(), B * s[0], s[1], s[2], out.data(), st.argmax[i]);
        break;
      }
      case OpKind::batch_norm: {
        const auto [C, inner] = detail::bn_layout(n.out_shape);
        const auto& x = in(0);
        const auto& gamma = param(0);
        const auto& beta = param(1);
        VectorX<Scalar> mean(C), inv_std(C);
        BatchNormUpdate<Scalar> upd;
        if (mode == Mode::train) {
          upd.mean_param = n.params[2];
          upd.var_param = n.params[3];
          upd.mean.resize(C);
          upd.var_unbiased.resize(C);
          upd.var_biased.resize(C);
          upd.count = B * inner;
        }
        for (Index c = 0; c < C; ++c) {
          if (mode == Mode::train) {
            Accum<Scalar> sum = 0;
            for (Index b = 0; b < B; ++b) {
              const Scalar* p = x.data() + (b * C + c) * inner;
              for (Index k = 0; k < inner; ++k) sum += p[k];
            }
            const Accum<Scalar> m = sum / static_cast<Accum<Scalar>>(B * inner);
            Accum<Scalar> ss = 0;
            for (Index b = 0; b < B; ++b) {
              const Scalar* p = x.data() + (b * C + c) * inner;
              for (Index k = 0; k < inner; ++k) {
                const Accum<Scalar> d = p[k] - m;
                ss += d * d;
              }
            }
            const Index cnt = B * inner;
            const Accum<Scalar> var = ss / static_cast<Accum<Scalar>>(cnt);
            mean[c] = static_cast<Scalar>(m);
            inv_std[c] = static_cast<Scalar>(1.0 / std::sqrt(var + n.bn_eps));
            upd.mean[c] = static_cast<Scalar>(m);
            upd.var_biased[c] = static_cast<Scalar>(var);
            upd.var_unbiased[c] = cnt > 1 ? static_cast<Scalar>(ss / static_cast<Accum<Scalar>>(cnt - 1)) : Scalar(0);
          } else {
            mean[c] = param(2)[c];
            inv_std[c] = static_cast<Scalar>(1.0 / std::sqrt(static_cast<Accum<Scalar>>(param(3)[c]) + n.bn_eps));
          }
        }
        Tensor<Scalar> xhat(out.shape());
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c) {
            const Index off = (b * C + c) * inner;
            for (Index k = 0; k < inner; ++k) {
              const Scalar h = (x[off + k] - mean[c]) * inv_std[c];
              xhat[off + k] = h;
              out[off + k] = gamma[c] * h + beta[c];
            }
          }
        st.xhat[i] = std::move(xhat);
        st.inv_std[i] = std::move(inv_std);
        if (mode == Mode::train) st.bn_updates.push_back(std::move(upd));
        break;
      }
      case OpKind::add:
        out.vec() = in(0).vec() + in(1).vec();
        break;
      case OpKind::flatten:
        out.vec() = in(0).vec();
        break;
    }
    if (n.forward_scale != 1.0) out.vec() *= static_cast<Scalar>(n.forward_scale);
    if (!out.all_finite())
      throw NonFiniteError(n.name, "non-finite value produced at node '" + n.name + "'");
    st.values[i] = std::move(out);
  }
  return st;
}

/// Loss value and its gradient with respect to the graph output.
template <typename Scalar>
std::pair<Scalar, Tensor<Scalar>> loss_and_grad(LossKind kind, const Tensor<Scalar>& out, const Tensor<Scalar>& labels) {
  const Index B = out.dim(0);
  const Index C = out.size() / B;
  Tensor<Scalar> d(out.shape());
  Accum<Scalar> total = 0;
  if (kind == LossKind::softmax_cross_entropy) {
    if (labels.size() != B)
      throw ShapeError("expected " + std::to_string(B) + " labels, got " + std::to_string(labels.size()));
    for (Index b = 0; b < B; ++b) {
      const Scalar* z = out.data() + b * C;
      const auto y = static_cast<Index>(labels[b]);
      if (y < 0 || y >= C || static_cast<Scalar>(y) != labels[b])
        throw ShapeError("label " + std::to_string(static_cast<double>(labels[b])) + " outside [0," +
                         std::to_string(C) + ")");
      Accum<Scalar> m = z[0];
      for (Index c = 1; c < C; ++c) m = std::max<Accum<Scalar>>(m, z[c]);
      Accum<Scalar> s = 0;
      for (Index c = 0; c < C; ++c) s += std::exp(static_cast<Accum<Scalar>>(z[c]) - m);
      const Accum<Scalar> lse = m + std::log(s);
      total += lse - z[y];
      for (Index c = 0; c < C; ++c) {
        const Accum<Scalar> p = std::exp(static_cast<Accum<Scalar>>(z[c]) - lse);
        d[b * C + c] = static_cast<Scalar>((p - (c == y ? 1 : 0)) / static_cast<Accum<Scalar>>(B));
      }
    }
  } else {
    if (labels.size() != out.size())
      throw ShapeError("regression targets have " + std::to_string(labels.size()) + " values, output has " +
                       std::to_string(out.size()));
    for (Index i = 0; i < out.size(); ++i) {
      const Accum<Scalar> r = static_cast<Accum<Scalar>>(out[i]) - labels[i];
      total += 0.5 * r * r;
      d[i] = static_cast<Scalar>(r / static_cast<Accum<Scalar>>(B));
    }
  }
  return {static_cast<Scalar>(total / static_cast<Accum<Scalar>>(B)), std::move(d)};
}

/// Mean loss of a completed forward pass. Node outputs are already checked by
/// `forward`, which throws NonFiniteError naming the first offending node.
template <typename Scalar>
std::pair<Scalar, Tensor<Scalar>> checked_loss(const Graph& graph, const ForwardState<Scalar>& st,
                                               const Tensor<Scalar>& labels) {
  auto result = loss_and_grad(graph.loss(), st.output(graph), labels);
  if (!std::isfinite(result.first)) throw NonFiniteError("loss", "non-finite loss");
  return result;
}

/// Backpropagates `dout` (gradient w.r.t. the graph output) through a recorded
/// forward pass. Returns parameter gradients; writes the input gradient when
/// `input_grad` is non-null.
template <typename Scalar>
ParamSet<Scalar> backward(const Graph& graph, const ParamSet<Scalar>& params, const ForwardState<Scalar>& st,
                          Tensor<Scalar> dout, Tensor<Scalar>* input_grad) {
  const auto& nodes = graph.nodes();
  const Index B = st.batch;
  ParamSet<Scalar> pg = ParamSet<Scalar>::zeros_like(graph);
  std::vector<Tensor<Scalar>> grads(nodes.size());
  grads[static_cast<std::size_t>(graph.output())] = std::move(dout);

  for (std::size_t ii = nodes.size(); ii-- > 0;) {
    if (grads[ii].empty()) continue;
    const Node& n = nodes[ii];
    Tensor<Scalar> g = std::move(grads[ii]);
    const double scale = n.grad_scale * n.forward_scale;
    if (scale != 1.0) g.vec() *= static_cast<Scalar>(scale);
    auto in = [&](int k) -> const Tensor<Scalar>& {
      return st.values[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])];
    };
    auto param = [&](int k) -> const Tensor<Scalar>& {
      return params.tensors[static_cast<std::size_t>(n.params[static_cast<std::size_t>(k)])];
    };
    auto pgrad = [&](int k) -> Tensor<Scalar>& {
      return pg.tensors[static_cast<std::size_t>(n.params[static_cast<std::size_t>(k)])];
    };
    switch (n.op) {
      case OpKind::input:
        if (input_grad) *input_grad = std::move(g);
        break;
      case OpKind::linear: {
        auto gm = g.matrix();
        pgrad(0).matrix().noalias() += gm.transpose() * in(0).matrix();
        pgrad(1).vec().noalias() += gm.colwise().sum().transpose();
        Tensor<Scalar> dx(in(0).shape());
        dx.matrix().noalias() = gm * param(0).matrix();
        detail::accumulate(grads, n.inputs[0], std::move(dx));
        break;
      }
      case OpKind::conv2d: {
        const Shape& s = graph.node(n.inputs[0]).out_shape;
        kernels::ConvGeometry geo{B, s[0], s[1], s[2], n.kernel, n.stride, n.padding, n.out_shape[1], n.out_shape[2]};
        const Index cout = n.out_shape[0];
        MatrixRM<Scalar> gy = kernels::batch_to_channel_major(g.data(), B, cout, geo.positions());
        const auto& w = param(0);
        typename Tensor<Scalar>::ConstMatrixMap wm(w.data(), cout, geo.patch());
        typename Tensor<Scalar>::MatrixMap dw(pgrad(0).data(), cout, geo.patch());
        const auto& cols = st.cols[ii];
        dw.noalias() += gy * cols.transpose();
        pgrad(1).vec().noalias() += gy.rowwise().sum();
        MatrixRM<Scalar> dcols = wm.transpose() * gy;
        Tensor<Scalar> dx(in(0).shape());
        kernels::col2im(dcols, geo, dx.data());
        detail::accumulate(grads, n.inputs[0], std::move(dx));
        break;
      }
      case OpKind::relu: {
        Tensor<Scalar> dx(in(0).shape());
        dx.vec() = (in(0).vec().array() > Scalar(0)).select(g.vec(), Scalar(0));
        detail::accumulate(grads, n.inputs[0], std::move(dx));
        break;
      }
      case OpKind::max_pool2: {
        Tensor<Scalar> dx(in(0).shape());
        const auto& am = st.argmax[ii];
        for (Index o = 0; o < g.size(); ++o) dx[am[static_cast<std::size_t>(o)]] += g[o];
        detail::accumulate(grads, n.inputs[0], std::move(dx));
        break;
      }
      case OpKind::batch_norm: {
        const auto [C, inner] = detail::bn_layout(n.out_shape);
        const auto& xhat = st.xhat[ii];
        const auto& inv_std = st.inv_std[ii];
        const auto& gamma = param(0);
        Tensor<Scalar> dx(in(0).shape());
        auto& dgamma = pgrad(0);
        auto& dbeta = pgrad(1);
        const Accum<Scalar> M = static_cast<Accum<Scalar>>(B * inner);
        for (Index c = 0; c < C; ++c) {
          Accum<Scalar> sum_g = 0, sum_gx = 0;
          for (Index b = 0; b < B; ++b) {
            const Index off = (b * C + c) * inner;
            for (Index k = 0; k < inner; ++k) {
              sum_g += g[off + k];
              sum_gx += static_cast<Accum<Scalar>>(g[off + k]) * xhat[off + k];
            }
          }
          dgamma[c] += static_cast<Scalar>(sum_gx);
          dbeta[c] += static_cast<Scalar>(sum_g);
          const Accum<Scalar> k_scale = static_cast<Accum<Scalar>>(gamma[c]) * inv_std[c];
          for (Index b = 0; b < B; ++b) {
            const Index off = (b * C + c) * inner;
            for (Index k = 0; k < inner; ++k) {
              if (st.mode == Mode::train)
                dx[off + k] = static_cast<Scalar>(k_scale / M * (M * g[off + k] - sum_g - xhat[off + k] * sum_gx));
              else
                dx[off + k] = static_cast<Scalar>(k_scale * g[off + k]);
            }
          }
        }
        detail::accumulate(grads, n.inputs[0], std::move(dx));
        break;
      }
      case OpKind::add: {
        Tensor<Scalar> copy = g;
        detail::accumulate(grads, n.inputs[0], std::move(copy));
        detail::accumulate(grads, n.inputs[1], std::move(g));
        break;
      }
      case OpKind::flatten:
        detail::accumulate(grads, n.inputs[0], g.reshaped(in(0).shape()));
        break;
    }
  }
  if (input_grad && input_grad->empty()) *input_grad = Tensor<Scalar>(st.values[0].shape());
  return pg;
}

/// Mean loss over the batch and its gradient with respect to every trainable
/// parameter (and optionally the inputs). Train mode normalises batch-norm
/// layers with batch statistics and reports them in `bn_updates`; the caller
/// decides whether to fold them into the running statistics.
template <typename Scalar>
Gradients<Scalar> forward_backward(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& inputs,
                                   const Tensor<Scalar>& labels, Mode mode = Mode::train,
                                   bool want_input_grad = false) {
  ForwardState<Scalar> st = forward(graph, params, inputs, mode);
  auto [loss, dout] = checked_loss(graph, st, labels);
  Gradients<Scalar> out;
  out.loss = loss;
  Tensor<Scalar> dx;
  out.params = backward(graph, params, st, std::move(dout), want_input_grad ? &dx : nullptr);
  if (want_input_grad) out.inputs = std::move(dx);
  out.logits = st.output(graph);
  out.bn_updates = std::move(st.bn_updates);
  return out;
}

/// Gradient of the mean loss with respect to the inputs. Parameters untouched.
template <typename Scalar>
Tensor<Scalar> grad_wrt_input(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& inputs,
                              const Tensor<Scalar>& labels, Mode mode = Mode::eval) {
  auto g = forward_backward(graph, params, inputs, labels, mode, true);
  return std::move(*g.inputs);
}

/// Mean loss only.
template <typename Scalar>
Scalar loss_value(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& inputs,
                  const Tensor<Scalar>& labels, Mode mode = Mode::eval) {
  ForwardState<Scalar> st = forward(graph, params, inputs, mode);
  return checked_loss(graph, st, labels).first;
}

/// Folds train-mode batch statistics into the running estimates:
/// running = (1 - momentum) * running + momentum * batch.
template <typename Scalar>
void apply_bn_updates(ParamSet<Scalar>& params, const std::vector<BatchNormUpdate<Scalar>>& updates,
                      double momentum = 0.1) {
  const auto m = static_cast<Scalar>(momentum);
  for (const auto& u : updates) {
    auto& rm = params.tensors[static_cast<std::size_t>(u.mean_param)].vec();
    auto& rv = params.tensors[static_cast<std::size_t>(u.var_param)].vec();
    rm = (Scalar(1) - m) * rm + m * u.mean;
    rv = (Scalar(1) - m) * rv + m * u.var_unbiased;
  }
}

}  // namespace flatsurr
