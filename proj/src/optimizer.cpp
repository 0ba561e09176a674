#include "flatsurr/optim/optimizer.hpp"

#include <sstream>

namespace flatsurr {

namespace {

struct RuleName {
  Rule rule;
  const char* name;
};

constexpr RuleName kRules[] = {{Rule::sgd, "sgd"},     {Rule::swa, "swa"},         {Rule::sam, "sam"},
                               {Rule::asam, "asam"},   {Rule::gsam, "gsam"},       {Rule::agsam, "agsam"},
                               {Rule::looksam, "looksam"}, {Rule::wasam, "wasam"}};

struct Preset {
  const char* name;
  Rule rule;
  double rho;
};

constexpr Preset kPresets[] = {
    {"sgd", Rule::sgd, 0.0},         {"swa", Rule::swa, 0.0},
    {"sam", Rule::sam, 0.05},        {"l-sam", Rule::sam, 0.4},
    {"l-sam-0.3", Rule::sam, 0.3},   {"gsam", Rule::gsam, 0.05},
    {"l-gsam", Rule::gsam, 0.2},     {"asam", Rule::asam, 0.5},
    {"l-asam", Rule::asam, 3.0},     {"agsam", Rule::agsam, 0.5},
    {"l-agsam", Rule::agsam, 4.0},   {"looksam", Rule::looksam, 0.05},
    {"l-looksam", Rule::looksam, 0.3}, {"wasam", Rule::wasam, 0.05},
};

}  // namespace

const char* rule_name(Rule r) {
  for (const auto& e : kRules)
    if (e.rule == r) return e.name;
  return "?";
}

Rule parse_rule(const std::string& name) {
  for (const auto& e : kRules)
    if (name == e.name) return e.rule;
  throw SpecError("unknown optimizer rule '" + name + "'");
}

Schedule Schedule::step_every(double lr0, int period, int epochs, double divisor) {
  if (period < 1) throw SpecError("decay period must be >= 1");
  Schedule s{lr0, {}};
  for (int e = period; e < epochs; e += period) s.decays.emplace_back(e, divisor);
  return s;
}

void OptimizerSpec::validate() const {
  if (!(schedule.lr0 > 0)) throw SpecError("learning rate must be positive");
  for (const auto& [at, divisor] : schedule.decays) {
    if (at < 0) throw SpecError("decay epoch must be >= 0");
    if (!(divisor > 0)) throw SpecError("decay divisor must be positive");
  }
  if (!(momentum >= 0 && momentum < 1)) throw SpecError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw SpecError("weight decay must be >= 0");
  if (!(rho >= 0)) throw SpecError("rho must be >= 0");
  if (!(alpha_gsam >= 0)) throw SpecError("alpha_gsam must be >= 0");
  if (looksam_k < 1) throw SpecError("looksam period k must be >= 1");
  if (looksam_warmup_epochs < 0) throw SpecError("looksam warmup must be >= 0");
  if (!(swa_fraction > 0 && swa_fraction <= 1)) throw SpecError("swa window fraction must lie in (0, 1]");
}

std::string OptimizerSpec::describe() const {
  std::ostringstream os;
  os << rule_name(rule) << " lr0=" << schedule.lr0 << " mu=" << momentum << " wd=" << weight_decay;
  if (is_sam_family(rule)) os << " rho=" << rho;
  if (rule == Rule::gsam || rule == Rule::agsam) os << " alpha=" << alpha_gsam;
  if (rule == Rule::looksam) os << " k=" << looksam_k << " warmup=" << looksam_warmup_epochs;
  if (averages_weights(rule)) os << " swa_fraction=" << swa_fraction;
  for (const auto& [at, divisor] : schedule.decays) os << " /" << divisor << "@" << at;
  return os.str();
}

OptimizerSpec OptimizerSpec::preset(const std::string& name) {
  for (const auto& p : kPresets) {
    if (name != p.name) continue;
    OptimizerSpec s;
    s.rule = p.rule;
    s.rho = p.rho;
    return s;
  }
  throw SpecError("unknown optimizer preset '" + name + "'");
}

std::vector<std::string> OptimizerSpec::preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

}  // namespace flatsurr
