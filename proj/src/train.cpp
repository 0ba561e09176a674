#include "flatsurr/optim/train.hpp"

#include <json.hpp>

namespace flatsurr {

std::string metrics_json(const EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch},
                      {"lr", m.lr},
                      {"train_loss", m.train_loss},
                      {"train_acc", m.train_acc},
                      {"eval_acc", nullptr},
                      {"wallclock_s", m.wallclock_s},
                      {"fwdbwd_passes", m.fwdbwd_passes}};
  if (m.eval_acc) j["eval_acc"] = *m.eval_acc;
  return j.dump();
}

}  // namespace flatsurr
