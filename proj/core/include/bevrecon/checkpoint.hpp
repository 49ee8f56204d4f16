#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "bevrecon/config.hpp"
#include "bevrecon/denoiser.hpp"

namespace bevrecon {

/// Flat archive: parameter names (dot-separated paths) mapped to tensors in
/// the container format, followed by a key=value metadata record holding the
/// full run configuration and the training step count.
void save_checkpoint(const std::string& path, const Model<float>& model,
                     const RunConfig& config, int64_t step);

struct LoadedCheckpoint {
  RunConfig config;
  int64_t step = 0;
  std::unique_ptr<Model<float>> model;
};

/// Rebuilds the model from the stored configuration and fills every
/// parameter by name. Mismatched names or shapes raise ConfigError.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace bevrecon
