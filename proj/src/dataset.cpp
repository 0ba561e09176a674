#include "flatsurr/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "flatsurr/core/binary_io.hpp"

namespace flatsurr {

using nlohmann::json;

Shape Dataset::example_shape() const {
  if (inputs.empty()) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

void Dataset::validate() const {
  if (classes < 1) throw SpecError("dataset needs at least one class");
  if (provenance.empty()) throw SpecError("dataset has no provenance record");
  if (labels.empty()) {
    if (!inputs.empty()) throw ShapeError("dataset has inputs but no labels");
    return;
  }
  if (inputs.empty() || inputs.dim(0) != size())
    throw ShapeError("dataset has " + std::to_string(size()) + " labels but inputs of shape " +
                     shape_str(inputs.shape()));
  for (int l : labels)
    if (l < 0 || l >= classes)
      throw SpecError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
  if (inputs.vec().minCoeff() < 0.0f || inputs.vec().maxCoeff() > 1.0f)
    throw SpecError("dataset inputs must lie in [0, 1]");
}

Dataset Dataset::subset(const std::vector<Index>& idx, const std::string& split_tag) const {
  Dataset d;
  d.classes = classes;
  d.split = split_tag;
  d.provenance = provenance;
  if (idx.empty()) return d;
  d.inputs = inputs.gather(idx);
  d.labels.reserve(idx.size());
  for (Index i : idx) d.labels.push_back(labels.at(static_cast<std::size_t>(i)));
  return d;
}

std::vector<Index> Dataset::histogram() const {
  std::vector<Index> h(static_cast<std::size_t>(classes), 0);
  for (int l : labels) ++h.at(static_cast<std::size_t>(l));
  return h;
}

const char* synthetic_kind_name(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::blobs:
      return "blobs";
    case SyntheticKind::spirals:
      return "spirals";
    case SyntheticKind::patterned_images:
      return "patterned-images";
  }
  return "?";
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  for (auto k : {SyntheticKind::blobs, SyntheticKind::spirals, SyntheticKind::patterned_images})
    if (name == synthetic_kind_name(k)) return k;
  throw SpecError("unknown synthetic dataset kind '" + name + "' (expected blobs, spirals or patterned-images)");
}

Dataset gen_synthetic(const SyntheticOptions& o) {
  if (o.classes < 1) throw SpecError("synthetic data needs at least one class");
  if (o.n < o.classes) throw SpecError("synthetic data needs n >= classes");
  if (o.noise < 0) throw SpecError("synthetic noise must be >= 0");
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  constexpr double pi = std::numbers::pi;

  Dataset d;
  d.classes = o.classes;
  d.labels.resize(static_cast<std::size_t>(o.n));
  for (Index i = 0; i < o.n; ++i) d.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % o.classes);
  std::shuffle(d.labels.begin(), d.labels.end(), rng);
  auto unit = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };

  switch (o.kind) {
    case SyntheticKind::blobs: {
      d.inputs = Tensor<float>({o.n, 2});
      for (Index i = 0; i < o.n; ++i) {
        const double a = 2 * pi * d.labels[static_cast<std::size_t>(i)] / static_cast<double>(o.classes);
        d.inputs[2 * i] = unit(0.5 + 0.35 * std::cos(a) + o.noise * n01(rng));
        d.inputs[2 * i + 1] = unit(0.5 + 0.35 * std::sin(a) + o.noise * n01(rng));
      }
      break;
    }
    case SyntheticKind::spirals: {
      d.inputs = Tensor<float>({o.n, 2});
      for (Index i = 0; i < o.n; ++i) {
        const double t = u01(rng);
        const double r = 0.05 + 0.4 * t;
        const double a = 2 * pi * d.labels[static_cast<std::size_t>(i)] / static_cast<double>(o.classes) + 3 * pi * t;
        d.inputs[2 * i] = unit(0.5 + r * std::cos(a) + o.noise * n01(rng));
        d.inputs[2 * i + 1] = unit(0.5 + r * std::sin(a) + o.noise * n01(rng));
      }
      break;
    }
    case SyntheticKind::patterned_images: {
      if (o.side < 2 || o.channels < 1) throw SpecError("patterned-images needs side >= 2 and channels >= 1");
      const Index S = o.side, C = o.channels, D = C * S * S;
      d.inputs = Tensor<float>({o.n, C, S, S});
      const double freq = 2 * pi * 1.5 / static_cast<double>(S);
      for (Index i = 0; i < o.n; ++i) {
        const int k = d.labels[static_cast<std::size_t>(i)];
        const double th = pi * k / static_cast<double>(o.classes);
        const double ct = std::cos(th), st = std::sin(th);
        const double phase = 2 * pi * u01(rng);
        for (Index c = 0; c < C; ++c)
          for (Index y = 0; y < S; ++y)
            for (Index x = 0; x < S; ++x) {
              const double p = std::cos(freq * (x * ct + y * st) + phase);
              d.inputs[i * D + (c * S + y) * S + x] = unit(0.5 + 0.3 * p + o.noise * n01(rng));
            }
      }
      break;
    }
  }
  d.provenance = json{{"generator", synthetic_kind_name(o.kind)},
                      {"n", o.n},
                      {"classes", o.classes},
                      {"noise", o.noise},
                      {"seed", o.seed},
                      {"side", o.side},
                      {"channels", o.channels}}
                     .dump();
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, Index first, std::uint64_t seed,
                                          const std::string& first_tag, const std::string& second_tag) {
  if (first < 0 || first > d.size()) throw SpecError("split size outside [0, N]");
  std::vector<Index> idx(static_cast<std::size_t>(d.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<Index> a(idx.begin(), idx.begin() + first), b(idx.begin() + first, idx.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {d.subset(a, first_tag), d.subset(b, second_tag)};
}

std::uint8_t unit_to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

// ---- IDX -----------------------------------------------------------------------

namespace {

void put_u32_be(io::Writer& w, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) w.u8(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

std::vector<Index> read_idx_header(io::Reader& r, std::uint32_t expected_magic, const std::string& what) {
  const std::uint32_t magic = r.u32_be();
  if (magic != expected_magic) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "magic 0x%08x, expected 0x%08x", magic, expected_magic);
    throw BadMagic(what + ": " + buf);
  }
  std::vector<Index> dims(expected_magic & 0xFF);
  for (auto& dim : dims) dim = r.u32_be();
  return dims;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, Index classes) {
  const auto ib = io::read_file(images_path);
  const auto lb = io::read_file(labels_path);
  io::Reader ir(ib, images_path), lr(lb, labels_path);
  const auto idims = read_idx_header(ir, 0x00000803, images_path);
  const auto ldims = read_idx_header(lr, 0x00000801, labels_path);
  const Index n = idims[0], h = idims[1], w = idims[2];
  if (ldims[0] != n) throw ShapeError("IDX image count " + std::to_string(n) + " != label count " + std::to_string(ldims[0]));
  ir.need(static_cast<std::size_t>(n * h * w));
  lr.need(static_cast<std::size_t>(n));
  Dataset d;
  d.classes = classes;
  if (n > 0) d.inputs = Tensor<float>({n, 1, h, w});
  for (Index i = 0; i < n * h * w; ++i) d.inputs[i] = byte_to_unit(ir.u8());
  d.labels.resize(static_cast<std::size_t>(n));
  for (auto& l : d.labels) {
    l = lr.u8();
    if (l >= classes) throw SpecError("IDX label " + std::to_string(l) + " >= class count " + std::to_string(classes));
  }
  d.provenance = json{{"source", "idx"}, {"images", images_path}, {"labels", labels_path}}.dump();
  return d;
}

void write_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
  const Shape s = d.example_shape();
  Index h = 0, w = 0;
  if (s.size() == 2) {
    h = s[0], w = s[1];
  } else if (s.size() == 3 && s[0] == 1) {
    h = s[1], w = s[2];
  } else {
    throw ShapeError("IDX needs (N,H,W) or (N,1,H,W) inputs, got " + shape_str(d.inputs.shape()));
  }
  io::Writer iw, lw;
  put_u32_be(iw, 0x00000803);
  put_u32_be(iw, static_cast<std::uint32_t>(d.size()));
  put_u32_be(iw, static_cast<std::uint32_t>(h));
  put_u32_be(iw, static_cast<std::uint32_t>(w));
  for (Index i = 0; i < d.inputs.size(); ++i) iw.u8(unit_to_byte(d.inputs[i]));
  put_u32_be(lw, 0x00000801);
  put_u32_be(lw, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) {
    if (l < 0 || l > 255) throw SpecError("IDX labels must fit in a byte");
    lw.u8(static_cast<std::uint8_t>(l));
  }
  io::write_file_atomic(images_path, iw.buffer());
  io::write_file_atomic(labels_path, lw.buffer());
}

// ---- CIFAR-10 binary -------------------------------------------------------------

namespace {
constexpr Index kCifarPixels = 3 * 32 * 32;
constexpr Index kCifarRecord = 1 + kCifarPixels;
}  // namespace

Dataset load_cifar_binary(const std::vector<std::string>& paths, Index classes) {
  if (paths.empty()) throw SpecError("no CIFAR files given");
  std::vector<std::vector<unsigned char>> files;
  Index n = 0;
  for (const auto& p : paths) {
    files.push_back(io::read_file(p));
    const auto size = static_cast<Index>(files.back().size());
    if (size % kCifarRecord != 0)
      throw Truncated(p + ": " + std::to_string(size) + " bytes is not a multiple of the 3073-byte record");
    n += size / kCifarRecord;
  }
  Dataset d;
  d.classes = classes;
  if (n > 0) d.inputs = Tensor<float>({n, 3, 32, 32});
  d.labels.reserve(static_cast<std::size_t>(n));
  Index at = 0;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& b = files[f];
    for (std::size_t off = 0; off < b.size(); off += kCifarRecord, ++at) {
      const int l = b[off];
      if (l >= classes) throw SpecError(paths[f] + ": label " + std::to_string(l) + " >= class count " + std::to_string(classes));
      d.labels.push_back(l);
      for (Index i = 0; i < kCifarPixels; ++i) d.inputs[at * kCifarPixels + i] = byte_to_unit(b[off + 1 + i]);
    }
  }
  json src = json::array();
  for (const auto& p : paths) src.push_back(p);
  d.provenance = json{{"source", "cifar-binary"}, {"files", src}}.dump();
  return d;
}

void write_cifar_binary(const Dataset& d, const std::string& path) {
  if (d.example_shape() != Shape{3, 32, 32} && d.size() > 0)
    throw ShapeError("CIFAR records need (N,3,32,32) inputs, got " + shape_str(d.inputs.shape()));
  io::Writer w;
  for (Index i = 0; i < d.size(); ++i) {
    const int l = d.labels[static_cast<std::size_t>(i)];
    if (l < 0 || l > 255) throw SpecError("CIFAR labels must fit in a byte");
    w.u8(static_cast<std::uint8_t>(l));
    for (Index k = 0; k < kCifarPixels; ++k) w.u8(unit_to_byte(d.inputs[i * kCifarPixels + k]));
  }
  io::write_file_atomic(path, w.buffer());
}

// ---- FSDS cache ------------------------------------------------------------------

std::vector<unsigned char> encode_dataset(const Dataset& d) {
  d.validate();
  json prov = json::parse(d.provenance);
  const std::string header = json{{"shape", d.inputs.empty() ? Shape{} : d.inputs.shape()},
                                  {"classes", d.classes},
                                  {"split", d.split},
                                  {"provenance", prov}}
                                 .dump();
  io::Writer w;
  w.str("FSDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.str(header);
  for (Index i = 0; i < d.inputs.size(); ++i) w.f32(d.inputs[i]);
  for (int l : d.labels) {
    if (l > 0xFFFF) throw SpecError("label does not fit in u16");
    w.u16(static_cast<std::uint16_t>(l));
  }
  return w.buffer();
}

Dataset decode_dataset(const std::vector<unsigned char>& bytes) {
  io::Reader r(bytes, "dataset");
  if (r.str(4) != "FSDS") throw BadMagic("not a dataset cache file");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  const std::uint32_t hl = r.u32();
  json h;
  try {
    h = json::parse(r.str(hl));
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  }
  Dataset d;
  const Shape shape = h.at("shape").get<Shape>();
  d.classes = h.at("classes").get<Index>();
  d.split = h.value("split", "train");
  d.provenance = h.at("provenance").dump();
  Index n = 0;
  if (!shape.empty()) {
    d.inputs = Tensor<float>(shape);
    for (Index i = 0; i < d.inputs.size(); ++i) d.inputs[i] = r.f32();
    n = shape[0];
  }
  d.labels.resize(static_cast<std::size_t>(n));
  for (auto& l : d.labels) l = r.u16();
  if (r.remaining() != 0) throw FormatError("dataset has " + std::to_string(r.remaining()) + " trailing bytes");
  d.validate();
  return d;
}

void save_dataset(const std::string& path, const Dataset& d) { io::write_file_atomic(path, encode_dataset(d)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

// ---- non-robust relabelling ------------------------------------------------------

const char* relabel_mode_name(RelabelMode m) { return m == RelabelMode::det ? "det" : "rand"; }

RelabelMode parse_relabel_mode(const std::string& name) {
  if (name == "det") return RelabelMode::det;
  if (name == "rand") return RelabelMode::rand;
  throw SpecError("unknown relabel mode '" + name + "' (expected rand or det)");
}

int relabel_target(int y, Index classes, RelabelMode mode, std::mt19937_64& rng) {
  if (classes < 2) throw SpecError("relabelling needs at least two classes");
  if (mode == RelabelMode::det) return static_cast<int>((y + 1) % classes);
  return static_cast<int>(std::uniform_int_distribution<Index>(0, classes - 1)(rng));
}

NonRobustResult build_nonrobust_dataset(const Graph& graph, const ParamSet<float>& params, const Dataset& d,
                                        const NonRobustOptions& o) {
  d.validate();
  if (d.size() == 0) throw SpecError("cannot relabel an empty dataset");
  if (o.chunk < 1) throw SpecError("chunk size must be >= 1");
  std::mt19937_64 rng(o.seed);
  std::vector<int> targets(d.labels.size());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = relabel_target(d.labels[i], d.classes, o.mode, rng);

  // eps = 0 is a legal degenerate request: nothing moves.
  const bool frozen = !(o.epsilon > 0) || o.steps < 1;
  AttackSpec spec;
  spec.targeted = true;
  if (!frozen) {
    spec.epsilon = o.epsilon;
    spec.iterations = o.steps;
    spec.step = o.step;
  }
  Tensor<float> adv = d.inputs;
  for (Index b = 0; b < d.size() && !frozen; b += o.chunk) {
    const Index e = std::min(d.size(), b + o.chunk);
    const std::vector<int> y(d.labels.begin() + b, d.labels.begin() + e);
    const std::vector<int> t(targets.begin() + b, targets.begin() + e);
    const auto batch = bim(graph, params, d.inputs.rows(b, e), y, spec, o.seed + static_cast<std::uint64_t>(b), &t);
    const Index D = d.inputs.size() / d.size();
    adv.vec().segment(b * D, (e - b) * D) = batch.adversarials.vec();
  }
  const auto pred = predict_labels(graph, params, adv);
  std::vector<Index> keep;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == targets[i]) keep.push_back(static_cast<Index>(i));

  NonRobustResult res;
  res.kept_fraction = static_cast<double>(keep.size()) / static_cast<double>(d.size());
  res.data.classes = d.classes;
  res.data.split = d.split + "-" + relabel_mode_name(o.mode);
  if (!keep.empty()) {
    res.data.inputs = adv.gather(keep);
    for (Index i : keep) res.data.labels.push_back(targets[static_cast<std::size_t>(i)]);
  }
  res.data.provenance = json{{"construction", "nonrobust"},
                             {"mode", relabel_mode_name(o.mode)},
                             {"epsilon", o.epsilon},
                             {"steps", o.steps},
                             {"seed", o.seed},
                             {"base_fingerprint", graph.fingerprint()},
                             {"kept_fraction", res.kept_fraction},
                             {"source", json::parse(d.provenance)}}
                            .dump();
  if (res.kept_fraction < 0.5) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "non-robust construction kept only %.3f of the examples", res.kept_fraction);
    throw ConstructionWeak(res.kept_fraction, buf);
  }
  return res;
}

std::vector<Index> select_eval_set(const std::vector<Model<float>>& targets, const Dataset& d, Index n,
                                   std::uint64_t seed) {
  if (n < 1) throw SpecError("evaluation set size must be >= 1");
  if (targets.empty()) throw SpecError("evaluation set selection needs at least one target");
  std::vector<char> ok(static_cast<std::size_t>(d.size()), 1);
  for (const auto& m : targets) {
    if (d.size() == 0) break;
    const auto pred = predict_labels(m.graph, m.params, d.inputs);
    for (std::size_t i = 0; i < pred.size(); ++i) ok[i] &= pred[i] == d.labels[i];
  }
  std::vector<Index> pool;
  for (std::size_t i = 0; i < ok.size(); ++i)
    if (ok[i]) pool.push_back(static_cast<Index>(i));
  if (static_cast<Index>(pool.size()) < n)
    throw InsufficientCorrect(pool.size(), "only " + std::to_string(pool.size()) + " examples are correct on all " +
                                               std::to_string(targets.size()) + " targets, " + std::to_string(n) +
                                               " requested");
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(n));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace flatsurr
