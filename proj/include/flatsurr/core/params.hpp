#pragma once

#include <string>
#include <vector>

#include "flatsurr/core/graph.hpp"
#include "flatsurr/core/tensor.hpp"

namespace flatsurr {

/// Named, ordered parameter tensors of a graph, including batch-norm running
/// statistics. Gradients use the same container (zeros on non-trainable slots).
template <typename Scalar>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor<Scalar>> tensors;
  std::vector<bool> trainable;
  std::string fingerprint;

  static ParamSet zeros_like(const Graph& graph) {
    ParamSet p;
    p.fingerprint = graph.fingerprint();
    for (const auto& spec : graph.params()) {
      p.names.push_back(spec.name);
      p.tensors.push_back(Tensor<Scalar>::zeros(spec.shape));
      p.trainable.push_back(spec.trainable());
    }
    return p;
  }

  std::size_t count() const noexcept { return tensors.size(); }

  Index numel() const {
    Index n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  Index trainable_numel() const {
    Index n = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (trainable[i]) n += tensors[i].size();
    return n;
  }

  /// Concatenation of trainable tensors, in declaration order.
  VectorX<Scalar> pack() const {
    VectorX<Scalar> out(trainable_numel());
    Index off = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (!trainable[i]) continue;
      out.segment(off, tensors[i].size()) = tensors[i].vec();
      off += tensors[i].size();
    }
    return out;
  }

  void unpack(const VectorX<Scalar>& flat) {
    if (flat.size() != trainable_numel())
      throw ShapeError("flat parameter vector has length " + std::to_string(flat.size()) +
                       ", expected " + std::to_string(trainable_numel()));
    Index off = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (!trainable[i]) continue;
      tensors[i].vec() = flat.segment(off, tensors[i].size());
      off += tensors[i].size();
    }
  }

  ParamSet with_packed(const VectorX<Scalar>& flat) const {
    ParamSet p = *this;
    p.unpack(flat);
    return p;
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }

  Tensor<Scalar>& at(const std::string& name) {
    const int i = index_of(name);
    if (i < 0) throw SpecError("no parameter named '" + name + "'");
    return tensors[static_cast<std::size_t>(i)];
  }
  const Tensor<Scalar>& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> p;
    p.names = names;
    p.trainable = trainable;
    p.fingerprint = fingerprint;
    for (const auto& t : tensors) p.tensors.push_back(t.template cast<Other>());
    return p;
  }

  bool operator==(const ParamSet& o) const {
    return names == o.names && tensors == o.tensors && fingerprint == o.fingerprint;
  }

  /// Content hash over names and raw tensor bytes.
  std::uint64_t hash() const {
    std::uint64_t h = fnv1a64(fingerprint.data(), fingerprint.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      h = fnv1a64(names[i].data(), names[i].size(), h);
      h = fnv1a64(tensors[i].data(), static_cast<std::size_t>(tensors[i].size()) * sizeof(Scalar), h);
    }
    return h;
  }
};

/// Throws if `params` was not built for `graph`.
template <typename Scalar>
void check_params(const Graph& graph, const ParamSet<Scalar>& params) {
  const auto& specs = graph.params();
  if (params.count() != specs.size())
    throw ShapeError("parameter set has " + std::to_string(params.count()) + " tensors, graph expects " +
                     std::to_string(specs.size()));
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (params.tensors[i].shape() != specs[i].shape)
      throw ShapeError("parameter '" + specs[i].name + "' has shape " + shape_str(params.tensors[i].shape()) +
                       ", expected " + shape_str(specs[i].shape));
}

}  // namespace flatsurr
