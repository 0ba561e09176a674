#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatsurr/core/tensor.hpp"

namespace flatsurr {

enum class OpKind { input, linear, conv2d, relu, max_pool2, batch_norm, add, flatten };

enum class LossKind { softmax_cross_entropy, half_squared_error };

enum class ParamRole { weight, bias, bn_scale, bn_shift, bn_running_mean, bn_running_var };

inline bool is_trainable(ParamRole role) {
  return role != ParamRole::bn_running_mean && role != ParamRole::bn_running_var;
}

const char* op_name(OpKind op);

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamRole role = ParamRole::weight;
  Index fan_in = 1;
  bool trainable() const { return is_trainable(role); }
};

struct Node {
  OpKind op = OpKind::input;
  std::string name;
  std::vector<int> inputs;
  std::vector<int> params;
  Shape out_shape;  // per example, batch dimension excluded
  int stride = 1;
  int padding = 0;
  int kernel = 1;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  /// Multiplier applied to the backward signal entering this node.
  double grad_scale = 1.0;
  /// Multiplier applied to this node's forward output.
  double forward_scale = 1.0;
  /// Marks the last node of a residual branch (target of skip-gradient and
  /// skip-erosion wrappers).
  bool residual_branch = false;
};

/// Static computation DAG. Nodes are stored in topological order; node 0 is
/// the input. Parameters are referenced by index into `params()`.
class Graph {
 public:
  Graph() = default;
  explicit Graph(Shape input_shape, LossKind loss = LossKind::softmax_cross_entropy);

  int linear(int in, Index out_features, const std::string& name);
  int conv2d(int in, Index out_channels, int kernel, int stride, int padding, const std::string& name);
  int relu(int in, const std::string& name = {});
  int max_pool2(int in, const std::string& name = {});
  int batch_norm(int in, const std::string& name);
  int add(int a, int b, const std::string& name = {});
  int flatten(int in, const std::string& name = {});
  void set_output(int node);

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  Node& node(int i) { return nodes_.at(static_cast<std::size_t>(i)); }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  const std::vector<ParamSpec>& params() const noexcept { return params_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  int output() const noexcept { return output_; }
  LossKind loss() const noexcept { return loss_; }
  /// Width of the output layer (class count for cross-entropy graphs).
  Index output_features() const;
  std::vector<int> residual_branch_nodes() const;
  bool has_batch_norm() const;

  /// Architecture hash over ops, attributes and parameter shapes. Gradient
  /// and forward scales are excluded so wrapped graphs keep their identity.
  std::string fingerprint() const;

 private:
  int push(Node n);
  int add_param(const std::string& name, Shape shape, ParamRole role, Index fan_in);
  const Shape& shape_of(int node) const { return node_shape(node); }
  const Shape& node_shape(int node) const;

  Shape input_shape_;
  LossKind loss_ = LossKind::softmax_cross_entropy;
  std::vector<Node> nodes_;
  std::vector<ParamSpec> params_;
  int output_ = 0;
};

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace flatsurr
