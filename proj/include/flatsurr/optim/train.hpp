#pragma once

#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flatsurr/optim/optimizer.hpp"
#include "flatsurr/optim/swa.hpp"

namespace flatsurr {

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;
  std::optional<double> eval_acc;
  double wallclock_s = 0;
  std::uint64_t fwdbwd_passes = 0;  // cumulative
};

std::string metrics_json(const EpochMetrics& m);

template <typename Scalar>
struct IterationInfo {
  int epoch;
  long iteration;
  const Tensor<Scalar>& x;
  const Tensor<Scalar>& y;
  const VectorX<Scalar>& w_before;
  const VectorX<Scalar>& w_after;
  const VectorX<Scalar>& grad0;
  Scalar loss0;
  const ParamSet<Scalar>& params_after;
};

template <typename Scalar>
struct TrainHooks {
  std::function<void(const IterationInfo<Scalar>&)> on_iteration;
  std::function<void(int epoch, const ParamSet<Scalar>&)> on_epoch;
  std::function<void(const EpochMetrics&)> on_metrics;
  /// Replaces each mini-batch's inputs before the step (adversarial training).
  /// Returns the forward-backward passes it spent.
  std::function<int(Tensor<Scalar>& x, const Tensor<Scalar>& y, const ParamSet<Scalar>& params)> perturb_batch;
};

struct TrainOptions {
  Index batch_size = 128;
  int checkpoint_every = 1;  // 0 keeps no per-epoch checkpoints
  double diverge_loss = 1e6;
  double bn_refresh_fraction = 1.0;
};

template <typename Scalar>
struct EpochCheckpoint {
  int epoch;
  ParamSet<Scalar> params;
};

template <typename Scalar>
struct Trajectory {
  std::vector<EpochCheckpoint<Scalar>> checkpoints;
  std::vector<EpochMetrics> metrics;
  ParamSet<Scalar> final_params;            // averaged weights for swa / wasam
  std::optional<ParamSet<Scalar>> last_iterate;
  std::uint64_t fwdbwd_passes = 0;
  long steps = 0;
};

/// Mini-batch training of `graph` from `params` for `epochs` epochs. Batches
/// are drawn from a per-run mt19937_64 seeded with `seed`; results are
/// bit-identical for equal inputs. Checkpoint epochs are 0-based and refer to
/// the weights at the end of that epoch.
template <typename Scalar>
Trajectory<Scalar> train(const Graph& graph, ParamSet<Scalar> params, const Tensor<Scalar>& inputs,
                         const Tensor<Scalar>& labels, const OptimizerSpec& spec, int epochs, std::uint64_t seed,
                         const TrainHooks<Scalar>& hooks = {}, const TrainOptions& opts = {},
                         const Tensor<Scalar>* eval_inputs = nullptr, const Tensor<Scalar>* eval_labels = nullptr) {
  spec.validate();
  if (epochs < 1) throw SpecError("epochs must be >= 1");
  if (opts.batch_size < 1) throw SpecError("batch size must be >= 1");
  check_params(graph, params);
  if (inputs.empty() || labels.rank() != 1 || labels.dim(0) != inputs.dim(0))
    throw ShapeError("training inputs " + shape_str(inputs.shape()) + " and labels " + shape_str(labels.shape()) +
                     " disagree");

  const Index N = inputs.dim(0);
  std::mt19937_64 rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(N));
  OptimizerState<Scalar> state;
  SwaAverager<Scalar> swa;
  const int swa_start = averages_weights(spec.rule) ? swa_start_epoch(epochs, spec.swa_fraction) : epochs;
  Trajectory<Scalar> traj;
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    state.epoch = epoch;
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    Accum<Scalar> loss_sum = 0;
    Index correct = 0;
    for (Index b = 0; b < N; b += opts.batch_size) {
      const Index e = std::min(N, b + opts.batch_size);
      std::vector<Index> idx(order.begin() + b, order.begin() + e);
      Tensor<Scalar> x = inputs.gather(idx);
      const Tensor<Scalar> y = labels.gather(idx);
      if (hooks.perturb_batch) state.fwdbwd_passes += static_cast<std::uint64_t>(hooks.perturb_batch(x, y, params));
      const VectorX<Scalar> w_before = params.pack();
      StepInfo<Scalar> info;
      try {
        info = sam_family_step(graph, params, x, y, spec, state);
      } catch (const NonFiniteError& err) {
        throw Diverged(epoch, "training diverged in epoch " + std::to_string(epoch) + ": " + err.what());
      }
      if (!(std::abs(static_cast<double>(info.loss)) <= opts.diverge_loss))
        throw Diverged(epoch, "training diverged in epoch " + std::to_string(epoch) + ": loss " +
                                  std::to_string(static_cast<double>(info.loss)));
      loss_sum += static_cast<Accum<Scalar>>(info.loss) * static_cast<Accum<Scalar>>(e - b);
      const auto pred = argmax_rows(info.logits);
      for (Index i = 0; i < e - b; ++i)
        if (pred[static_cast<std::size_t>(i)] == static_cast<int>(y[i])) ++correct;
      if (hooks.on_iteration) {
        const VectorX<Scalar> w_after = params.pack();
        hooks.on_iteration({epoch, state.step - 1, x, y, w_before, w_after, info.grad0, info.loss, params});
      }
    }

    if (epoch >= swa_start) swa.accumulate(params);
    if (opts.checkpoint_every > 0 && ((epoch + 1) % opts.checkpoint_every == 0 || epoch + 1 == epochs))
      traj.checkpoints.push_back({epoch, params});

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr_at(spec.schedule, epoch);
    m.train_loss = static_cast<double>(loss_sum / static_cast<Accum<Scalar>>(N));
    m.train_acc = static_cast<double>(correct) / static_cast<double>(N);
    if (eval_inputs && eval_labels) m.eval_acc = accuracy(graph, params, *eval_inputs, *eval_labels);
    m.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m.fwdbwd_passes = state.fwdbwd_passes;
    traj.metrics.push_back(m);
    if (hooks.on_metrics) hooks.on_metrics(m);
    if (hooks.on_epoch) hooks.on_epoch(epoch, params);
  }

  traj.fwdbwd_passes = state.fwdbwd_passes;
  traj.steps = state.step;
  if (averages_weights(spec.rule)) {
    traj.last_iterate = params;
    traj.final_params = swa.finalize(graph, inputs, opts.bn_refresh_fraction, seed);
  } else {
    traj.final_params = std::move(params);
  }
  return traj;
}

}  // namespace flatsurr
