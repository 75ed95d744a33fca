#pragma once

#include <filesystem>
#include <ostream>

#include "volnet/config.hpp"
#include "volnet/metrics.hpp"

namespace volnet {

struct TrainResult {
  double best_macro_f1 = -1;  // -1 when no validation split exists
  index_t epochs_run = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

TrainResult cmd_train(const RunConfig& cfg);
MetricsReport cmd_eval(const RunConfig& cfg, std::ostream& out);
void cmd_predict(const RunConfig& cfg, std::ostream& out);
void cmd_synth(const RunConfig& cfg, std::ostream& out);
void cmd_preprocess(const RunConfig& cfg, std::ostream& out);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out);  // 0 = all checks passed
void cmd_ablate(const RunConfig& cfg, std::ostream& out);

}  // namespace volnet
