#pragma once

#include <cstdint>
#include <string>

#include "bevrecon/bev.hpp"
#include "bevrecon/config.hpp"

namespace bevrecon {

/// On-disk layout: manifest.txt plus pair_%06d.{ego,co,meta}; tensors in the
/// container format, meta as key=value text.
struct DatasetInfo {
  int count = 0;
  int h = 0, w = 0, c = 0;
  std::string config_hash;
};

void write_dataset(const std::string& dir, const GeneratorConfig& config, uint64_t seed,
                   int count);
DatasetInfo read_manifest(const std::string& dir);

void write_pair(const std::string& dir, int index, const ScenePair& pair);
ScenePair read_pair(const std::string& dir, int index);

std::string pair_basename(int index);  // "pair_%06d"

}  // namespace bevrecon
