#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "bevrecon/config.hpp"
#include "bevrecon/denoiser.hpp"

namespace bevrecon {

struct TrainLogRow {
  int64_t step = 0;
  double total = 0, simple = 0, vlb = 0;
  double val_simple = 0;     // fixed-draw noise-prediction loss on the val set
  double val_recon_mse = 0;  // 5-step reconstruction MSE on the val set
  double elapsed_s = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  double val_simple_step0 = 0;
  double val_simple_final = 0;
  double val_recon_final = 0;
};

struct TrainOptions {
  std::string out_dir;               // when set: checkpoint_latest.bin + train_log.csv
  std::ostream* progress = nullptr;  // one line per validation when set
};

/// Runs the optimization loop on an existing model (fresh or
/// distill-initialized). cfg.model must match the model's configuration.
void train_loop(Model<float>& model, const RunConfig& cfg, const TrainOptions& opts = {},
                TrainResult* result = nullptr);

/// Builds a model from cfg and trains it for cfg.opt.steps steps.
std::unique_ptr<Model<float>> train(const RunConfig& cfg, const TrainOptions& opts = {},
                                    TrainResult* result = nullptr);

}  // namespace bevrecon
