#include "flatsurr/core/graph.hpp"

#include <cstdio>

namespace flatsurr {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::input: return "input";
    case OpKind::linear: return "linear";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::max_pool2: return "max_pool2";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::add: return "add";
    case OpKind::flatten: return "flatten";
  }
  return "?";
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

Graph::Graph(Shape input_shape, LossKind loss) : input_shape_(std::move(input_shape)), loss_(loss) {
  if (input_shape_.empty()) throw ShapeError("graph input shape must not be empty");
  for (Index d : input_shape_)
    if (d <= 0) throw ShapeError("graph input extents must be positive");
  Node in;
  in.op = OpKind::input;
  in.name = "input";
  in.out_shape = input_shape_;
  nodes_.push_back(std::move(in));
}

const Shape& Graph::node_shape(int node) const {
  if (node < 0 || node >= static_cast<int>(nodes_.size()))
    throw ShapeError("graph operand " + std::to_string(node) + " does not exist");
  return nodes_[static_cast<std::size_t>(node)].out_shape;
}

int Graph::push(Node n) {
  if (n.name.empty()) n.name = std::string(op_name(n.op)) + std::to_string(nodes_.size());
  nodes_.push_back(std::move(n));
  output_ = static_cast<int>(nodes_.size()) - 1;
  return output_;
}

int Graph::add_param(const std::string& name, Shape shape, ParamRole role, Index fan_in) {
  for (const auto& p : params_)
    if (p.name == name) throw SpecError("duplicate parameter name '" + name + "'");
  params_.push_back(ParamSpec{name, std::move(shape), role, fan_in});
  return static_cast<int>(params_.size()) - 1;
}

int Graph::linear(int in, Index out_features, const std::string& name) {
  const Shape& s = shape_of(in);
  if (s.size() != 1) throw ShapeError("linear expects a flat input, got " + shape_str(s));
  Node n;
  n.op = OpKind::linear;
  n.name = name;
  n.inputs = {in};
  n.params = {add_param(name + ".weight", {out_features, s[0]}, ParamRole::weight, s[0]),
              add_param(name + ".bias", {out_features}, ParamRole::bias, s[0])};
  n.out_shape = {out_features};
  return push(std::move(n));
}

int Graph::conv2d(int in, Index out_channels, int kernel, int stride, int padding,
                  const std::string& name) {
  const Shape& s = shape_of(in);
  if (s.size() != 3) throw ShapeError("conv2d expects (C,H,W) input, got " + shape_str(s));
  if (stride != 1 && stride != 2) throw SpecError("conv2d stride must be 1 or 2");
  if (kernel < 1 || padding < 0) throw SpecError("invalid conv2d kernel/padding");
  const Index ho = (s[1] + 2 * padding - kernel) / stride + 1;
  const Index wo = (s[2] + 2 * padding - kernel) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output would be empty");
  const Index fan_in = s[0] * kernel * kernel;
  Node n;
  n.op = OpKind::conv2d;
  n.name = name;
  n.inputs = {in};
  n.kernel = kernel;
  n.stride = stride;
  n.padding = padding;
  n.params = {add_param(name + ".weight", {out_channels, s[0], kernel, kernel}, ParamRole::weight, fan_in),
              add_param(name + ".bias", {out_channels}, ParamRole::bias, fan_in)};
  n.out_shape = {out_channels, ho, wo};
  return push(std::move(n));
}

int Graph::relu(int in, const std::string& name) {
  Node n;
  n.op = OpKind::relu;
  n.name = name;
  n.inputs = {in};
  n.out_shape = shape_of(in);
  return push(std::move(n));
}

int Graph::max_pool2(int in, const std::string& name) {
  const Shape& s = shape_of(in);
  if (s.size() != 3 || s[1] < 2 || s[2] < 2)
    throw ShapeError("max_pool2 expects (C,H,W) with H,W >= 2, got " + shape_str(s));
  Node n;
  n.op = OpKind::max_pool2;
  n.name = name;
  n.inputs = {in};
  n.out_shape = {s[0], s[1] / 2, s[2] / 2};
  return push(std::move(n));
}

int Graph::batch_norm(int in, const std::string& name) {
  const Shape& s = shape_of(in);
  if (s.size() != 1 && s.size() != 3)
    throw ShapeError("batch_norm expects (F) or (C,H,W), got " + shape_str(s));
  const Index c = s[0];
  Node n;
  n.op = OpKind::batch_norm;
  n.name = name;
  n.inputs = {in};
  n.params = {add_param(name + ".scale", {c}, ParamRole::bn_scale, 1),
              add_param(name + ".shift", {c}, ParamRole::bn_shift, 1),
              add_param(name + ".running_mean", {c}, ParamRole::bn_running_mean, 1),
              add_param(name + ".running_var", {c}, ParamRole::bn_running_var, 1)};
  n.out_shape = s;
  return push(std::move(n));
}

int Graph::add(int a, int b, const std::string& name) {
  if (shape_of(a) != shape_of(b))
    throw ShapeError("add operands differ: " + shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
  Node n;
  n.op = OpKind::add;
  n.name = name;
  n.inputs = {a, b};
  n.out_shape = shape_of(a);
  return push(std::move(n));
}

int Graph::flatten(int in, const std::string& name) {
  Node n;
  n.op = OpKind::flatten;
  n.name = name;
  n.inputs = {in};
  n.out_shape = {shape_numel(shape_of(in))};
  return push(std::move(n));
}

void Graph::set_output(int node) {
  shape_of(node);
  output_ = node;
}

Index Graph::output_features() const {
  const Shape& s = node_shape(output_);
  return shape_numel(s);
}

std::vector<int> Graph::residual_branch_nodes() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].residual_branch) out.push_back(static_cast<int>(i));
  return out;
}

bool Graph::has_batch_norm() const {
  for (const auto& n : nodes_)
    if (n.op == OpKind::batch_norm) return true;
  return false;
}

std::string Graph::fingerprint() const {
  std::uint64_t h = fnv1a64("flatsurr-graph", 14);
  auto mix_i = [&](std::int64_t v) { h = fnv1a64(&v, sizeof v, h); };
  auto mix_s = [&](const std::string& s) {
    mix_i(static_cast<std::int64_t>(s.size()));
    h = fnv1a64(s.data(), s.size(), h);
  };
  mix_i(static_cast<std::int64_t>(loss_));
  for (Index d : input_shape_) mix_i(d);
  for (const auto& n : nodes_) {
    mix_i(static_cast<std::int64_t>(n.op));
    for (int i : n.inputs) mix_i(i);
    mix_i(n.stride);
    mix_i(n.padding);
    mix_i(n.kernel);
    mix_i(n.residual_branch ? 1 : 0);
  }
  for (const auto& p : params_) {
    mix_s(p.name);
    mix_i(static_cast<std::int64_t>(p.role));
    for (Index d : p.shape) mix_i(d);
  }
  mix_i(output_);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace flatsurr
