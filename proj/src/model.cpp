#include "flatsurr/models/model.hpp"

#include <sstream>

namespace flatsurr {

const char* family_name(Family f) {
  switch (f) {
    case Family::mlp: return "mlp";
    case Family::smallcnn: return "smallcnn";
    case Family::miniresnet: return "miniresnet";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  if (name == "mlp") return Family::mlp;
  if (name == "smallcnn") return Family::smallcnn;
  if (name == "miniresnet") return Family::miniresnet;
  throw SpecError("unknown architecture family '" + name + "'");
}

void ArchSpec::validate() const {
  if (classes < 2) throw SpecError("class count must be at least 2");
  if (input_shape.empty()) throw SpecError("input shape must not be empty");
  for (Index d : input_shape)
    if (d <= 0) throw SpecError("input extents must be positive");
  for (Index w : widths)
    if (w <= 0) throw SpecError("layer widths must be positive");
  switch (family) {
    case Family::mlp:
      break;
    case Family::smallcnn:
      if (input_shape.size() != 3) throw SpecError("smallcnn needs a (C,H,W) input shape");
      if (widths.empty()) throw SpecError("smallcnn needs at least one stage");
      break;
    case Family::miniresnet:
      if (input_shape.size() != 3) throw SpecError("miniresnet needs a (C,H,W) input shape");
      if (widths.empty()) throw SpecError("miniresnet needs a trunk width");
      if (blocks < 1) throw SpecError("miniresnet needs at least one residual block");
      break;
  }
}

std::string ArchSpec::label() const {
  if (!name.empty()) return name;
  std::ostringstream os;
  os << family_name(family);
  for (Index w : widths) os << '-' << w;
  if (family == Family::miniresnet) os << "-b" << blocks;
  return os.str();
}

Graph build_graph(const ArchSpec& spec) {
  spec.validate();
  Graph g(spec.input_shape);
  int x = 0;
  switch (spec.family) {
    case Family::mlp: {
      if (spec.input_shape.size() > 1) x = g.flatten(x, "flatten");
      for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        x = g.linear(x, spec.widths[i], "fc" + std::to_string(i));
        x = g.relu(x);
      }
      x = g.linear(x, spec.classes, "head");
      break;
    }
    case Family::smallcnn: {
      for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        const std::string s = "stage" + std::to_string(i);
        x = g.conv2d(x, spec.widths[i], 3, 1, 1, s + ".conv");
        if (spec.batch_norm) x = g.batch_norm(x, s + ".bn");
        x = g.relu(x);
        const Shape& sh = g.node(x).out_shape;
        if (sh[1] >= 2 && sh[2] >= 2) x = g.max_pool2(x);
      }
      x = g.flatten(x, "flatten");
      x = g.linear(x, spec.classes, "head");
      break;
    }
    case Family::miniresnet: {
      const Index c = spec.widths[0];
      x = g.conv2d(x, c, 3, 1, 1, "stem.conv");
      x = g.batch_norm(x, "stem.bn");
      x = g.relu(x);
      for (int b = 0; b < spec.blocks; ++b) {
        const std::string s = "block" + std::to_string(b);
        int r = g.conv2d(x, c, 3, 1, 1, s + ".conv1");
        r = g.batch_norm(r, s + ".bn1");
        r = g.relu(r);
        r = g.conv2d(r, c, 3, 1, 1, s + ".conv2");
        r = g.batch_norm(r, s + ".bn2");
        g.node(r).residual_branch = true;
        x = g.add(x, r, s + ".add");
        x = g.relu(x);
      }
      x = g.max_pool2(x);
      x = g.flatten(x, "flatten");
      x = g.linear(x, spec.classes, "head");
      break;
    }
  }
  g.set_output(x);
  return g;
}

}  // namespace flatsurr
