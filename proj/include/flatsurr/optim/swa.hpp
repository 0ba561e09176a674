#pragma once

#include <cmath>

#include "flatsurr/models/model.hpp"

namespace flatsurr {

/// Running arithmetic mean of parameter sets, summed in double precision.
template <typename Scalar>
class SwaAverager {
 public:
  void accumulate(const ParamSet<Scalar>& params) {
    if (count_ == 0) {
      sum_.clear();
      for (const auto& t : params.tensors) sum_.push_back(VectorX<double>::Zero(t.size()));
      layout_ = params;
    } else if (params.count() != layout_.count()) {
      throw ShapeError("swa: parameter set layout changed between accumulations");
    }
    for (std::size_t i = 0; i < params.count(); ++i) {
      if (params.tensors[i].size() != sum_[i].size()) throw ShapeError("swa: tensor '" + params.names[i] + "' changed size");
      sum_[i] += params.tensors[i].vec().template cast<double>();
    }
    ++count_;
  }

  long count() const { return count_; }

  /// Mean of every accumulated tensor (running statistics included).
  ParamSet<Scalar> mean() const {
    if (count_ == 0) throw SpecError("swa: no parameter sets accumulated");
    ParamSet<Scalar> out = layout_;
    for (std::size_t i = 0; i < out.count(); ++i)
      out.tensors[i].vec() = (sum_[i] / static_cast<double>(count_)).template cast<Scalar>();
    return out;
  }

  /// Mean weights with batch-norm statistics recomputed on `data`.
  ParamSet<Scalar> finalize(const Graph& graph, const Tensor<Scalar>& data, double fraction = 1.0,
                            std::uint64_t seed = 0) const {
    ParamSet<Scalar> out = mean();
    refresh_bn_stats(graph, out, data, fraction, seed);
    return out;
  }

 private:
  std::vector<VectorX<double>> sum_;
  ParamSet<Scalar> layout_;
  long count_ = 0;
};

/// First epoch (0-based) of the averaging window covering the last
/// `fraction` of `epochs`; at least one epoch.
inline int swa_start_epoch(int epochs, double fraction) {
  const int span = std::max(1, static_cast<int>(std::ceil(fraction * epochs - 1e-9)));
  return std::max(0, epochs - span);
}

}  // namespace flatsurr
