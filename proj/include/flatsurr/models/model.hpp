#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "flatsurr/core/autodiff.hpp"

namespace flatsurr {

enum class Family { mlp, smallcnn, miniresnet };

const char* family_name(Family f);
Family parse_family(const std::string& name);

/// Desk-scale architecture description.
///
/// - mlp: `widths` are hidden layer sizes.
/// - smallcnn: `widths` are channel counts of conv/BN/ReLU/max-pool stages.
/// - miniresnet: `widths[0]` is the trunk width; `blocks` residual blocks of
///   conv-BN-ReLU-conv-BN with an identity skip, followed by max-pool.
struct ArchSpec {
  Family family = Family::mlp;
  std::vector<Index> widths;
  int blocks = 0;
  Shape input_shape;
  Index classes = 2;
  bool batch_norm = true;  // smallcnn only
  std::string name;

  void validate() const;
  std::string label() const;
};

Graph build_graph(const ArchSpec& spec);

/// Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero
/// biases, BN scale 1 / shift 0, running mean 0 / variance 1.
template <typename Scalar>
ParamSet<Scalar> init_params(const Graph& graph, std::uint64_t seed) {
  ParamSet<Scalar> p = ParamSet<Scalar>::zeros_like(graph);
  std::mt19937_64 rng(seed);
  const auto& specs = graph.params();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& t = p.tensors[i];
    switch (specs[i].role) {
      case ParamRole::weight: {
        const double bound = std::sqrt(6.0 / static_cast<double>(specs[i].fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Index k = 0; k < t.size(); ++k) t[k] = static_cast<Scalar>(u(rng));
        break;
      }
      case ParamRole::bn_scale:
      case ParamRole::bn_running_var:
        t.vec().setOnes();
        break;
      default:
        break;
    }
  }
  return p;
}

template <typename Scalar>
struct Model {
  Graph graph;
  ParamSet<Scalar> params;
};

template <typename Scalar>
Model<Scalar> build_model(const ArchSpec& spec, std::uint64_t seed) {
  Model<Scalar> m{build_graph(spec), {}};
  m.params = init_params<Scalar>(m.graph, seed);
  return m;
}

/// Logits of a batch. Neither mode mutates `params`.
template <typename Scalar>
Tensor<Scalar> predict(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& batch,
                       Mode mode = Mode::eval) {
  return forward(graph, params, batch, mode).output(graph);
}

/// Row-wise argmax of a (B, C) logit matrix.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& logits) {
  const Index B = logits.dim(0);
  const Index C = logits.size() / B;
  std::vector<int> out(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    Index best = 0;
    for (Index c = 1; c < C; ++c)
      if (logits[b * C + c] > logits[b * C + best]) best = c;
    out[static_cast<std::size_t>(b)] = static_cast<int>(best);
  }
  return out;
}

/// Eval-mode predictions in chunks of `batch_size`.
template <typename Scalar>
std::vector<int> predict_labels(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& inputs,
                                Index batch_size = 256) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(inputs.dim(0)));
  for (Index b = 0; b < inputs.dim(0); b += batch_size) {
    const auto chunk = argmax_rows(predict(graph, params, inputs.rows(b, std::min(inputs.dim(0), b + batch_size))));
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

template <typename Scalar>
double accuracy(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& inputs,
                const std::vector<int>& labels) {
  const auto pred = predict_labels(graph, params, inputs);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels.at(i);
  return pred.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(pred.size());
}

/// Class indices stored as scalars -> ints.
template <typename Scalar>
std::vector<int> label_ints(const Tensor<Scalar>& labels) {
  std::vector<int> out(static_cast<std::size_t>(labels.size()));
  for (Index i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(labels[i]);
  return out;
}

template <typename Scalar>
double accuracy(const Graph& graph, const ParamSet<Scalar>& params, const Tensor<Scalar>& inputs,
                const Tensor<Scalar>& labels) {
  return accuracy(graph, params, inputs, label_ints(labels));
}

/// Replaces batch-norm running statistics by their average over one
/// train-mode pass on ceil(fraction * N) seeded examples (cumulative average
/// of per-chunk batch statistics, weighted by chunk size). Other tensors are
/// untouched.
template <typename Scalar>
void refresh_bn_stats(const Graph& graph, ParamSet<Scalar>& params, const Tensor<Scalar>& data, double fraction,
                      std::uint64_t seed = 0, Index batch_size = 256) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw SpecError("refresh fraction must lie in (0, 1]");
  if (data.empty() || data.dim(0) == 0) throw SpecError("cannot refresh batch-norm statistics on an empty dataset");
  if (!graph.has_batch_norm()) return;
  const Index N = data.dim(0);
  const auto take = static_cast<Index>(std::ceil(fraction * static_cast<double>(N) - 1e-9));
  std::vector<Index> idx(static_cast<std::size_t>(N));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (take < N) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(take));
    std::sort(idx.begin(), idx.end());
  }
  std::vector<VectorX<Accum<Scalar>>> mean_sum, var_sum;
  std::vector<std::pair<int, int>> slots;
  Accum<Scalar> seen = 0;
  for (Index b = 0; b < take; b += batch_size) {
    const Index e = std::min(take, b + batch_size);
    std::vector<Index> chunk(idx.begin() + b, idx.begin() + e);
    auto st = forward(graph, params, data.gather(chunk), Mode::train);
    const auto w = static_cast<Accum<Scalar>>(e - b);
    if (mean_sum.empty()) {
      for (const auto& u : st.bn_updates) {
        mean_sum.push_back(VectorX<Accum<Scalar>>::Zero(u.mean.size()));
        var_sum.push_back(VectorX<Accum<Scalar>>::Zero(u.mean.size()));
        slots.emplace_back(u.mean_param, u.var_param);
      }
    }
    for (std::size_t k = 0; k < st.bn_updates.size(); ++k) {
      mean_sum[k] += w * st.bn_updates[k].mean.template cast<Accum<Scalar>>();
      var_sum[k] += w * st.bn_updates[k].var_unbiased.template cast<Accum<Scalar>>();
    }
    seen += w;
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    params.tensors[static_cast<std::size_t>(slots[k].first)].vec() = (mean_sum[k] / seen).template cast<Scalar>();
    params.tensors[static_cast<std::size_t>(slots[k].second)].vec() = (var_sum[k] / seen).template cast<Scalar>();
  }
}

}  // namespace flatsurr
