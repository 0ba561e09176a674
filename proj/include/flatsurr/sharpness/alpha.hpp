#pragma once

// Per-iteration step-size diagnostic. A parabola is fitted along the actual
// update w -> w + dw (t in [0, 1]) to the batch loss and its t-derivative at
// both ends; alpha = f'(1) / |f'(0)| on the fit. -1 understeps, 0 lands at the
// minimum, +1 overshoots to the mirror point.

#include <functional>
#include <string>
#include <vector>

#include "flatsurr/optim/train.hpp"
#include "flatsurr/stats/welch.hpp"

namespace flatsurr {

struct AlphaRecord {
  long iteration = 0;
  int epoch = 0;
  double f0 = 0, s0 = 0, f1 = 0, s1 = 0;
  double alpha = 0;
};

/// Least-squares fit of f(t) = a t^2 + b t + c to f(0)=f0, f'(0)=s0,
/// f(1)=f1, f'(1)=s1. Throws NotDescent when s0 >= 0 or the fitted slope at
/// t = 0 is not negative.
double alpha_quantity(double f0, double s0, double f1, double s1);

struct AlphaLog {
  std::vector<AlphaRecord> records;
  long skipped = 0;
};

/// Training hook recording alpha every `every` iterations into `log`, which
/// must outlive training. The end-point loss and slope come from one extra
/// train-mode pass on the same mini-batch.
template <typename Scalar>
std::function<void(const IterationInfo<Scalar>&)> make_alpha_hook(const Graph& graph, AlphaLog& log, int every = 4) {
  if (every < 1) throw SpecError("alpha hook period must be >= 1");
  return [&graph, &log, every](const IterationInfo<Scalar>& it) {
    if (it.iteration % every != 0) return;
    const VectorX<double> dw = (it.w_after - it.w_before).template cast<double>();
    auto end = forward_backward(graph, it.params_after, it.x, it.y, Mode::train);
    AlphaRecord r;
    r.iteration = it.iteration;
    r.epoch = it.epoch;
    r.f0 = static_cast<double>(it.loss0);
    r.s0 = it.grad0.template cast<double>().dot(dw);
    r.f1 = static_cast<double>(end.loss);
    r.s1 = end.params.pack().template cast<double>().dot(dw);
    try {
      r.alpha = alpha_quantity(r.f0, r.s0, r.f1, r.s1);
    } catch (const NotDescent&) {
      ++log.skipped;
      return;
    }
    log.records.push_back(r);
  };
}

struct AlphaCampaign {
  std::vector<double> before;
  std::vector<double> after;
  WelchResult test;
};

/// Groups alpha values of epochs [decay - window_before, decay) and
/// [decay, decay + window_after) and tests mean(before) > mean(after).
AlphaCampaign alpha_campaign(const std::vector<AlphaRecord>& records, int decay_epoch, int window_before = 5,
                             int window_after = 5);

std::string alpha_csv(const std::vector<AlphaRecord>& records);

}  // namespace flatsurr
