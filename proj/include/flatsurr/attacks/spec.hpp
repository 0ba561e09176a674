#pragma once

#include <optional>
#include <string>

namespace flatsurr {

struct MomentumConfig {
  double decay = 1.2;
};

struct DiConfig {
  double resize_rate = 0.85;
  double prob = 0.8;
};

struct SiConfig {
  int copies = 5;
};

struct VtConfig {
  double beta = 1.8;
  int samples = 5;
};

struct RapConfig {
  int inner_steps = 5;
  double radius_ratio = 2.0 / 3.0;  // eps_n = ratio * eps
  int late_start = 10;
};

struct GnConfig {
  double lo = 0.7;
  double hi = 1.3;
};

struct SgmConfig {
  double gamma = 0.5;
};

/// L-infinity BIM with optional technique plugins. `step` <= 0 means eps/10.
struct AttackSpec {
  double epsilon = 8.0 / 255.0;
  int iterations = 50;
  double step = 0.0;
  bool targeted = false;

  std::optional<MomentumConfig> mi;
  std::optional<MomentumConfig> ni;  // the "ni" preset uses decay 0.6
  std::optional<DiConfig> di;
  std::optional<SiConfig> si;
  std::optional<VtConfig> vt;
  std::optional<RapConfig> rap;
  std::optional<GnConfig> gn;
  std::optional<SgmConfig> sgm;
  bool lgv = false;

  double step_size() const { return step > 0 ? step : epsilon / 10.0; }
  void validate() const;
  std::string to_json() const;
  static AttackSpec from_json(const std::string& text);
  /// Short hex digest of the canonical JSON form.
  std::string hash() const;
  /// Technique label, e.g. "bim", "mi", "di+si".
  std::string technique() const;

  /// Plugin presets by name: bim, mi, ni, di, si, vt, rap, gn, sgm, lgv.
  static AttackSpec with_technique(const std::string& name, double epsilon = 8.0 / 255.0);
};

}  // namespace flatsurr
