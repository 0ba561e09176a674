#include "flatsurr/attacks/attack.hpp"

#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

#include "flatsurr/core/binary_io.hpp"

namespace flatsurr {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw SpecError("attack spec: " + what);
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> ok(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
T field(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

constexpr const char* kPlugins[] = {"mi", "ni", "di", "si", "vt", "rap", "gn", "sgm", "lgv"};

}  // namespace

void AttackSpec::validate() const {
  require(epsilon > 0 && std::isfinite(epsilon), "epsilon must be > 0");
  require(iterations >= 1, "iterations must be >= 1");
  require(std::isfinite(step) && step_size() > 0, "step must be > 0");
  require(!(mi && ni), "mi and ni are mutually exclusive");
  if (mi) require(mi->decay >= 0, "mi decay must be >= 0");
  if (ni) require(ni->decay >= 0, "ni decay must be >= 0");
  if (di) {
    require(di->resize_rate > 0 && di->resize_rate <= 1, "di resize_rate must be in (0, 1]");
    require(di->prob >= 0 && di->prob <= 1, "di prob must be in [0, 1]");
  }
  if (si) require(si->copies >= 1, "si copies must be >= 1");
  if (vt) {
    require(vt->beta >= 0, "vt beta must be >= 0");
    require(vt->samples >= 1, "vt samples must be >= 1");
  }
  if (rap) {
    require(rap->inner_steps >= 1, "rap inner_steps must be >= 1");
    require(rap->radius_ratio > 0, "rap radius_ratio must be > 0");
    require(rap->late_start >= 0, "rap late_start must be >= 0");
  }
  if (gn) require(gn->lo >= 0 && gn->lo <= gn->hi, "gn range must satisfy 0 <= lo <= hi");
  if (sgm) require(sgm->gamma >= 0 && sgm->gamma <= 1, "sgm gamma must be in [0, 1]");
}

std::string AttackSpec::to_json() const {
  json t = json::object();
  if (mi) t["mi"] = {{"decay", mi->decay}};
  if (ni) t["ni"] = {{"decay", ni->decay}};
  if (di) t["di"] = {{"resize_rate", di->resize_rate}, {"prob", di->prob}};
  if (si) t["si"] = {{"copies", si->copies}};
  if (vt) t["vt"] = {{"beta", vt->beta}, {"samples", vt->samples}};
  if (rap)
    t["rap"] = {{"inner_steps", rap->inner_steps}, {"radius_ratio", rap->radius_ratio}, {"late_start", rap->late_start}};
  if (gn) t["gn"] = {{"lo", gn->lo}, {"hi", gn->hi}};
  if (sgm) t["sgm"] = {{"gamma", sgm->gamma}};
  if (lgv) t["lgv"] = json::object();
  json j = {{"norm", "linf"},         {"epsilon", epsilon},   {"iterations", iterations},
            {"step", step_size()},    {"targeted", targeted}, {"techniques", t}};
  return j.dump();
}

AttackSpec AttackSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("attack spec is not valid JSON: ") + e.what());
  }
  reject_unknown(j, {"norm", "epsilon", "iterations", "step", "targeted", "techniques"}, "attack spec");
  AttackSpec s;
  try {
    if (j.contains("norm") && j.at("norm").get<std::string>() != "linf")
      throw SpecError("attack spec: only the linf norm is supported");
    s.epsilon = field(j, "epsilon", s.epsilon);
    s.iterations = field(j, "iterations", s.iterations);
    s.step = field(j, "step", s.step);
    s.targeted = field(j, "targeted", s.targeted);
    if (j.contains("techniques")) {
      const json& t = j.at("techniques");
      reject_unknown(t, {"mi", "ni", "di", "si", "vt", "rap", "gn", "sgm", "lgv"}, "attack techniques");
      if (t.contains("mi")) {
        reject_unknown(t["mi"], {"decay"}, "mi");
        s.mi = MomentumConfig{field(t["mi"], "decay", 1.2)};
      }
      if (t.contains("ni")) {
        reject_unknown(t["ni"], {"decay"}, "ni");
        s.ni = MomentumConfig{field(t["ni"], "decay", 0.6)};
      }
      if (t.contains("di")) {
        reject_unknown(t["di"], {"resize_rate", "prob"}, "di");
        DiConfig d;
        s.di = DiConfig{field(t["di"], "resize_rate", d.resize_rate), field(t["di"], "prob", d.prob)};
      }
      if (t.contains("si")) {
        reject_unknown(t["si"], {"copies"}, "si");
        s.si = SiConfig{field(t["si"], "copies", SiConfig{}.copies)};
      }
      if (t.contains("vt")) {
        reject_unknown(t["vt"], {"beta", "samples"}, "vt");
        VtConfig d;
        s.vt = VtConfig{field(t["vt"], "beta", d.beta), field(t["vt"], "samples", d.samples)};
      }
      if (t.contains("rap")) {
        reject_unknown(t["rap"], {"inner_steps", "radius_ratio", "late_start"}, "rap");
        RapConfig d;
        s.rap = RapConfig{field(t["rap"], "inner_steps", d.inner_steps), field(t["rap"], "radius_ratio", d.radius_ratio),
                          field(t["rap"], "late_start", d.late_start)};
      }
      if (t.contains("gn")) {
        reject_unknown(t["gn"], {"lo", "hi"}, "gn");
        GnConfig d;
        s.gn = GnConfig{field(t["gn"], "lo", d.lo), field(t["gn"], "hi", d.hi)};
      }
      if (t.contains("sgm")) {
        reject_unknown(t["sgm"], {"gamma"}, "sgm");
        s.sgm = SgmConfig{field(t["sgm"], "gamma", SgmConfig{}.gamma)};
      }
      if (t.contains("lgv")) {
        reject_unknown(t["lgv"], {}, "lgv");
        s.lgv = true;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("attack spec has a field of the wrong type: ") + e.what());
  }
  s.validate();
  return s;
}

std::string AttackSpec::hash() const {
  const std::string canon = to_json();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon.data(), canon.size())));
  return buf;
}

std::string AttackSpec::technique() const {
  std::string out;
  const bool on[] = {mi.has_value(), ni.has_value(), di.has_value(), si.has_value(), vt.has_value(),
                     rap.has_value(), gn.has_value(), sgm.has_value(), lgv};
  for (std::size_t i = 0; i < std::size(kPlugins); ++i)
    if (on[i]) out += (out.empty() ? "" : "+") + std::string(kPlugins[i]);
  return out.empty() ? "bim" : out;
}

AttackSpec AttackSpec::with_technique(const std::string& name, double epsilon) {
  AttackSpec s;
  s.epsilon = epsilon;
  if (name == "bim") {
  } else if (name == "mi") {
    s.mi = MomentumConfig{1.2};
  } else if (name == "ni") {
    s.ni = MomentumConfig{0.6};
  } else if (name == "di") {
    s.di = DiConfig{};
  } else if (name == "si") {
    s.si = SiConfig{};
  } else if (name == "vt") {
    s.vt = VtConfig{};
  } else if (name == "rap") {
    s.rap = RapConfig{};
  } else if (name == "gn") {
    s.gn = GnConfig{};
  } else if (name == "sgm") {
    s.sgm = SgmConfig{};
  } else if (name == "lgv") {
    s.lgv = true;
  } else {
    throw SpecError("unknown attack technique '" + name + "' (expected bim, mi, ni, di, si, vt, rap, gn, sgm or lgv)");
  }
  s.validate();
  return s;
}

std::optional<kernels::ResizePad> di_draw(Index side, double resize_rate, double prob, std::mt19937_64& rng) {
  if (side < 2) throw ShapeError("DI needs an image side of at least 2, got " + std::to_string(side));
  if (!(resize_rate > 0 && resize_rate <= 1)) throw SpecError("DI resize_rate must be in (0, 1]");
  if (!(prob >= 0 && prob <= 1)) throw SpecError("DI prob must be in [0, 1]");
  if (prob == 0) return std::nullopt;
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= prob) return std::nullopt;
  const Index lo = std::min<Index>(side, static_cast<Index>(std::ceil(resize_rate * static_cast<double>(side))));
  const Index rs = std::uniform_int_distribution<Index>(lo, side)(rng);
  const Index top = std::uniform_int_distribution<Index>(0, side - rs)(rng);
  const Index left = std::uniform_int_distribution<Index>(0, side - rs)(rng);
  return kernels::ResizePad{rs, rs, side, side, top, left};
}

Graph wrap_sgm(const Graph& graph, double gamma) {
  if (!(gamma >= 0 && gamma <= 1)) throw SpecError("SGM gamma must be in [0, 1]");
  const auto branches = graph.residual_branch_nodes();
  if (branches.empty()) throw SpecError("SGM needs a model with residual blocks");
  Graph g = graph;
  for (int n : branches) g.node(n).grad_scale = gamma;
  return g;
}

void check_gn(const Graph& graph, const GnConfig& cfg) {
  if (!(cfg.lo >= 0 && cfg.lo <= cfg.hi)) throw SpecError("GN range must satisfy 0 <= lo <= hi");
  if (graph.residual_branch_nodes().empty()) throw SpecError("GN needs a model with residual blocks");
}

void resample_gn(Graph& graph, const GnConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n : graph.residual_branch_nodes()) graph.node(n).forward_scale = cfg.lo + (cfg.hi - cfg.lo) * u(rng);
}

// ---- AdvBatch IO -------------------------------------------------------------

namespace {
constexpr char kAdvMagic[4] = {'F', 'S', 'A', 'B'};
}

std::vector<unsigned char> encode_adv_batch(const AdvBatch<float>& b) {
  if (b.originals.shape() != b.adversarials.shape()) throw ShapeError("adversarial batch shapes differ");
  const Index n = b.originals.empty() ? 0 : b.originals.dim(0);
  if (static_cast<Index>(b.labels.size()) != n) throw ShapeError("adversarial batch label count mismatch");
  if (b.targets && b.targets->size() != b.labels.size()) throw ShapeError("adversarial batch target count mismatch");
  json h = {{"shape", b.originals.shape()},
            {"spec_hash", b.spec_hash},
            {"seed", b.seed},
            {"surrogate", b.surrogate_fingerprint},
            {"targeted", b.targets.has_value()}};
  const std::string hs = h.dump();
  io::Writer w;
  w.bytes(kAdvMagic, 4);
  w.u32(static_cast<std::uint32_t>(hs.size()));
  w.str(hs);
  for (Index i = 0; i < b.originals.size(); ++i) w.f32(b.originals[i]);
  for (Index i = 0; i < b.adversarials.size(); ++i) w.f32(b.adversarials[i]);
  auto put_labels = [&](const std::vector<int>& ls) {
    for (int l : ls) {
      if (l < 0 || l > 0xFFFF) throw SpecError("label " + std::to_string(l) + " does not fit in u16");
      w.u16(static_cast<std::uint16_t>(l));
    }
  };
  put_labels(b.labels);
  if (b.targets) put_labels(*b.targets);
  return w.buffer();
}

AdvBatch<float> decode_adv_batch(const std::vector<unsigned char>& bytes) {
  io::Reader r(bytes, "adversarial batch");
  if (r.str(4) != std::string(kAdvMagic, 4)) throw BadMagic("not an adversarial batch file");
  const std::uint32_t hl = r.u32();
  json h;
  try {
    h = json::parse(r.str(hl));
  } catch (const json::exception& e) {
    throw FormatError(std::string("adversarial batch header: ") + e.what());
  }
  AdvBatch<float> b;
  const Shape shape = h.at("shape").get<Shape>();
  b.spec_hash = h.value("spec_hash", "");
  b.seed = h.value("seed", std::uint64_t{0});
  b.surrogate_fingerprint = h.value("surrogate", "");
  const bool targeted = h.value("targeted", false);
  const Index numel = shape.empty() ? 0 : shape_numel(shape);
  auto read_tensor = [&]() {
    if (shape.empty()) return Tensor<float>();
    Tensor<float> t(shape);
    for (Index i = 0; i < numel; ++i) t[i] = r.f32();
    return t;
  };
  b.originals = read_tensor();
  b.adversarials = read_tensor();
  const Index n = shape.empty() ? 0 : shape[0];
  auto read_labels = [&]() {
    std::vector<int> ls(static_cast<std::size_t>(n));
    for (auto& l : ls) l = r.u16();
    return ls;
  };
  b.labels = read_labels();
  if (targeted) b.targets = read_labels();
  if (r.remaining() != 0) throw FormatError("adversarial batch has " + std::to_string(r.remaining()) + " trailing bytes");
  return b;
}

void save_adv_batch(const std::string& path, const AdvBatch<float>& batch) {
  io::write_file_atomic(path, encode_adv_batch(batch));
}

AdvBatch<float> load_adv_batch(const std::string& path) { return decode_adv_batch(io::read_file(path)); }

}  // namespace flatsurr
