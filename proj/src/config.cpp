#include "flatsurr/bench/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace flatsurr {

using nlohmann::json;

namespace {

// Allowed keys per section; null marks a leaf.
const json& schema() {
  static const json s = [] {
    const json leaf = nullptr;
    const json arch = {{"family", leaf}, {"widths", leaf}, {"blocks", leaf}, {"batch_norm", leaf}};
    const json opt = {{"preset", leaf},       {"rule", leaf},      {"lr", leaf},           {"decays", leaf},
                      {"momentum", leaf},     {"weight_decay", leaf}, {"rho", leaf},        {"alpha_gsam", leaf},
                      {"looksam_k", leaf},    {"looksam_warmup", leaf}, {"looksam_alpha", leaf},
                      {"swa_fraction", leaf}};
    return json{
        {"name", leaf},
        {"data",
         {{"kind", leaf}, {"n_train", leaf}, {"n_test", leaf}, {"classes", leaf}, {"noise", leaf}, {"side", leaf},
          {"channels", leaf}, {"seed", leaf}}},
        {"surrogate", {{"arch", arch}, {"optimizer", opt}, {"epochs", leaf}, {"batch_size", leaf}, {"seeds", leaf}}},
        {"targets",
         {{"archs", leaf}, {"validation_archs", leaf}, {"seeds", leaf}, {"optimizer", opt}, {"epochs", leaf},
          {"batch_size", leaf}}},
        {"attack",
         {{"spec", leaf}, {"eval_n", leaf}, {"eval_seed", leaf}, {"validation_n", leaf}, {"epochs", leaf},
          {"lgv", {{"lr", leaf}, {"epochs", leaf}, {"per_epoch", leaf}}}}},
        {"diagnostics",
         {{"sharpness", leaf}, {"sharpness_epochs", leaf}, {"hessian_subset", leaf}, {"probes", leaf},
          {"max_iters", leaf}, {"worst_case", leaf}, {"alpha_every", leaf}}},
        {"sweep", {{"path", leaf}, {"values", leaf}}},
        {"output", {{"dir", leaf}, {"shared_dir", leaf}}}};
  }();
  return s;
}

void check_keys(const json& doc, const json& sch, const std::string& where) {
  if (!doc.is_object()) throw ConfigError((where.empty() ? std::string("config") : where) + " must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!sch.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    if (sch.at(it.key()).is_object()) check_keys(it.value(), sch.at(it.key()), path);
  }
}

template <typename T>
T get(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  return doc.contains(key) ? doc.at(key) : empty;
}

std::vector<ArchSpec> default_zoo(const Shape& in, Index classes) {
  std::vector<ArchSpec> z = {ArchSpec{Family::smallcnn, {8, 8}, 0, in, classes},
                             ArchSpec{Family::smallcnn, {8, 16}, 0, in, classes},
                             ArchSpec{Family::mlp, {64}, 0, in, classes},
                             ArchSpec{Family::mlp, {128, 64}, 0, in, classes},
                             ArchSpec{Family::miniresnet, {8}, 1, in, classes},
                             ArchSpec{Family::smallcnn, {16, 16}, 0, in, classes}};
  return z;
}

std::vector<ArchSpec> parse_archs(const json& j, const Shape& in, Index classes, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError("config key '" + where + "' must be a non-empty list");
  std::vector<ArchSpec> out;
  for (const auto& a : j) out.push_back(parse_arch(a, in, classes));
  return out;
}

std::vector<std::uint64_t> parse_seeds(const json& j, const std::string& where) {
  std::vector<std::uint64_t> s;
  try {
    s = j.get<std::vector<std::uint64_t>>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "' must be a list of non-negative integers");
  }
  if (s.empty()) throw ConfigError("config key '" + where + "' must not be empty");
  return s;
}

json::json_pointer pointer_of(const std::string& dotted) {
  std::string p;
  std::istringstream is(dotted);
  std::string part;
  while (std::getline(is, part, '.')) p += "/" + part;
  return json::json_pointer(p);
}

void check_path(const std::string& path) {
  const json* node = &schema();
  std::istringstream is(path);
  std::string part;
  bool leaf = false;
  while (std::getline(is, part, '.')) {
    if (leaf || !node->is_object() || !node->contains(part)) throw ConfigError("unknown config path '" + path + "'");
    node = &node->at(part);
    leaf = node->is_null();
  }
  if (!leaf) throw ConfigError("config path '" + path + "' does not name a value");
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ArchSpec parse_arch(const json& j, Shape input_shape, Index classes) {
  check_keys(j, schema()["surrogate"]["arch"], "arch");
  ArchSpec a;
  a.family = parse_family(get<std::string>(j, "family", "smallcnn", "arch"));
  a.widths = get<std::vector<Index>>(j, "widths", std::vector<Index>{16, 32}, "arch");
  a.blocks = get<int>(j, "blocks", a.family == Family::miniresnet ? 1 : 0, "arch");
  a.batch_norm = get<bool>(j, "batch_norm", true, "arch");
  a.input_shape = std::move(input_shape);
  a.classes = classes;
  a.validate();
  return a;
}

json arch_json(const ArchSpec& a) {
  return {{"family", family_name(a.family)}, {"widths", a.widths}, {"blocks", a.blocks}, {"batch_norm", a.batch_norm}};
}

OptimizerSpec parse_optimizer(const json& j) {
  check_keys(j, schema()["surrogate"]["optimizer"], "optimizer");
  const std::string w = "optimizer";
  OptimizerSpec s;
  if (j.contains("preset")) s = OptimizerSpec::preset(get<std::string>(j, "preset", "sgd", w));
  if (j.contains("rule")) s.rule = parse_rule(get<std::string>(j, "rule", "sgd", w));
  s.schedule.lr0 = get<double>(j, "lr", s.schedule.lr0, w);
  if (j.contains("decays")) {
    s.schedule.decays.clear();
    for (const auto& d : j.at("decays")) {
      if (d.is_number_integer()) {
        s.schedule.decays.emplace_back(d.get<int>(), 10.0);
      } else if (d.is_array() && d.size() == 2) {
        s.schedule.decays.emplace_back(d[0].get<int>(), d[1].get<double>());
      } else {
        throw ConfigError("optimizer.decays entries must be an epoch or [epoch, divisor]");
      }
    }
  }
  s.momentum = get<double>(j, "momentum", s.momentum, w);
  s.weight_decay = get<double>(j, "weight_decay", s.weight_decay, w);
  s.rho = get<double>(j, "rho", s.rho, w);
  s.alpha_gsam = get<double>(j, "alpha_gsam", s.alpha_gsam, w);
  s.looksam_k = get<int>(j, "looksam_k", s.looksam_k, w);
  s.looksam_warmup_epochs = get<int>(j, "looksam_warmup", s.looksam_warmup_epochs, w);
  s.looksam_alpha = get<double>(j, "looksam_alpha", s.looksam_alpha, w);
  s.swa_fraction = get<double>(j, "swa_fraction", s.swa_fraction, w);
  try {
    s.validate();
  } catch (const SpecError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

json optimizer_json(const OptimizerSpec& s) {
  json decays = json::array();
  for (const auto& [e, d] : s.schedule.decays) decays.push_back({e, d});
  return {{"rule", rule_name(s.rule)},
          {"lr", s.schedule.lr0},
          {"decays", decays},
          {"momentum", s.momentum},
          {"weight_decay", s.weight_decay},
          {"rho", s.rho},
          {"alpha_gsam", s.alpha_gsam},
          {"looksam_k", s.looksam_k},
          {"looksam_warmup", s.looksam_warmup_epochs},
          {"looksam_alpha", s.looksam_alpha},
          {"swa_fraction", s.swa_fraction}};
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  check_keys(doc, schema(), "");
  ExperimentConfig c;
  c.doc = doc;
  c.name = get<std::string>(doc, "name", c.name, "config");

  try {
    const json& d = section(doc, "data");
    c.data.kind = parse_synthetic_kind(get<std::string>(d, "kind", "patterned-images", "data"));
    c.n_train = get<Index>(d, "n_train", c.n_train, "data");
    c.n_test = get<Index>(d, "n_test", c.n_test, "data");
    c.data.classes = get<Index>(d, "classes", 4, "data");
    c.data.noise = get<double>(d, "noise", 0.4, "data");
    c.data.side = get<Index>(d, "side", 8, "data");
    c.data.channels = get<Index>(d, "channels", 1, "data");
    c.data.seed = get<std::uint64_t>(d, "seed", 1, "data");
    c.data.n = c.n_train + c.n_test;
    if (c.n_train < 1 || c.n_test < 1) throw ConfigError("data.n_train and data.n_test must be >= 1");
    const Shape in = c.data.kind == SyntheticKind::patterned_images ? Shape{c.data.channels, c.data.side, c.data.side}
                                                                    : Shape{2};

    const json& s = section(doc, "surrogate");
    c.surrogate_arch = parse_arch(section(s, "arch"), in, c.data.classes);
    c.surrogate_opt = parse_optimizer(section(s, "optimizer"));
    c.surrogate_epochs = get<int>(s, "epochs", c.surrogate_epochs, "surrogate");
    c.surrogate_batch = get<Index>(s, "batch_size", c.surrogate_batch, "surrogate");
    if (s.contains("seeds")) c.seeds = parse_seeds(s.at("seeds"), "surrogate.seeds");
    if (c.surrogate_epochs < 1) throw ConfigError("surrogate.epochs must be >= 1");

    const json& t = section(doc, "targets");
    c.target_archs = t.contains("archs") ? parse_archs(t.at("archs"), in, c.data.classes, "targets.archs")
                                         : default_zoo(in, c.data.classes);
    if (t.contains("validation_archs"))
      c.validation_archs = parse_archs(t.at("validation_archs"), in, c.data.classes, "targets.validation_archs");
    if (t.contains("seeds")) c.target_seeds = parse_seeds(t.at("seeds"), "targets.seeds");
    c.target_opt = t.contains("optimizer") ? parse_optimizer(t.at("optimizer")) : [] {
      OptimizerSpec o;
      o.schedule = Schedule{0.05, {{10, 10.0}, {20, 10.0}}};
      return o;
    }();
    c.target_epochs = get<int>(t, "epochs", c.target_epochs, "targets");
    c.target_batch = get<Index>(t, "batch_size", c.target_batch, "targets");

    const json& a = section(doc, "attack");
    if (a.contains("spec")) {
      c.attack = AttackSpec::from_json(a.at("spec").dump());
    } else {
      c.attack.epsilon = 0.1;
    }
    c.eval_n = get<Index>(a, "eval_n", c.eval_n, "attack");
    c.eval_seed = get<std::uint64_t>(a, "eval_seed", c.eval_seed, "attack");
    c.validation_n = get<Index>(a, "validation_n", c.validation_n, "attack");
    if (a.contains("epochs")) {
      const json& e = a.at("epochs");
      c.attack_epochs = AttackEpochs{};
      if (e == "all") {
        c.attack_epochs.all = true;
      } else if (e == "final") {
        c.attack_epochs.final = true;
      } else if (e.is_array()) {
        c.attack_epochs.final = false;
        c.attack_epochs.list = e.get<std::vector<int>>();
        for (int ep : c.attack_epochs.list)
          if (ep < 0 || ep >= c.surrogate_epochs) throw ConfigError("attack.epochs entry " + std::to_string(ep) + " is outside the run");
      } else {
        throw ConfigError("attack.epochs must be \"all\", \"final\" or a list of epochs");
      }
    }
    c.lgv_enabled = c.attack.lgv;
    c.lgv.lr = c.surrogate_opt.schedule.lr0 / 2;
    c.lgv.batch_size = c.surrogate_batch;
    c.lgv.momentum = c.surrogate_opt.momentum;
    c.lgv.weight_decay = c.surrogate_opt.weight_decay;
    if (a.contains("lgv")) {
      const json& l = a.at("lgv");
      c.lgv.lr = get<double>(l, "lr", c.lgv.lr, "attack.lgv");
      c.lgv.epochs = get<int>(l, "epochs", c.lgv.epochs, "attack.lgv");
      c.lgv.per_epoch = get<int>(l, "per_epoch", c.lgv.per_epoch, "attack.lgv");
    }

    const json& g = section(doc, "diagnostics");
    c.sharpness = get<bool>(g, "sharpness", false, "diagnostics");
    c.sharpness_epochs = get<std::vector<int>>(g, "sharpness_epochs", {}, "diagnostics");
    c.sharpness_opts.subset = get<Index>(g, "hessian_subset", c.sharpness_opts.subset, "diagnostics");
    c.sharpness_opts.probes = get<int>(g, "probes", c.sharpness_opts.probes, "diagnostics");
    c.sharpness_opts.max_iters = get<int>(g, "max_iters", c.sharpness_opts.max_iters, "diagnostics");
    c.sharpness_opts.worst_case = get<bool>(g, "worst_case", false, "diagnostics");
    c.alpha_every = get<int>(g, "alpha_every", 0, "diagnostics");
    if (c.alpha_every < 0) throw ConfigError("diagnostics.alpha_every must be >= 0");

    const json& w = section(doc, "sweep");
    c.sweep_path = get<std::string>(w, "path", "", "sweep");
    if (w.contains("values")) c.sweep_values = w.at("values");
    if (!c.sweep_path.empty()) {
      if (!c.sweep_values.is_array() || c.sweep_values.size() < 2)
        throw ConfigError("sweep.values must list at least two values");
      if (c.sweep_path.rfind("sweep", 0) == 0 || c.sweep_path.rfind("output", 0) == 0)
        throw ConfigError("config path '" + c.sweep_path + "' cannot be swept");
      check_path(c.sweep_path);
    }

    const json& o = section(doc, "output");
    c.output_dir = get<std::string>(o, "dir", "runs/" + c.name, "output");
    c.shared_dir = get<std::string>(o, "shared_dir", c.output_dir + "/shared", "output");
  } catch (const SpecError& e) {
    throw ConfigError(e.what());
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(doc);
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

ExperimentConfig ExperimentConfig::with_override(const std::string& path, const json& value) const {
  check_path(path);
  json doc2 = doc;
  doc2[pointer_of(path)] = value;
  return from_json(doc2);
}

std::string ExperimentConfig::zoo_hash() const {
  json z = {{"data", section(doc, "data")}, {"targets", section(doc, "targets")}};
  const std::string s = z.dump();
  return hex64(fnv1a64(s.data(), s.size()));
}

std::string ExperimentConfig::hash() const {
  const std::string s = doc.dump();
  return hex64(fnv1a64(s.data(), s.size()));
}

}  // namespace flatsurr
