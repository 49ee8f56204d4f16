#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bevrecon/config.hpp"
#include "bevrecon/tensor.hpp"

namespace bevrecon {

/// A bird's-eye-view feature grid with its placement in the world.
/// data is H x W x C: rows are longitudinal cells, columns lateral cells.
struct BEVFeature {
  TensorF data;
  std::array<float, 2> roi_origin{0.f, 0.f};  // world meters, corner of cell (0,0)
  float cell_size = 1.f;                      // meters per cell
  std::array<float, 3> agent_pose{0.f, 0.f, 0.f};

  int h() const { return data.shape[0]; }
  int w() const { return data.shape[1]; }
  int channels() const { return data.shape[2]; }

  /// World coordinates of the center of cell (row, col).
  std::array<float, 2> cell_center(int row, int col) const {
    return {roi_origin[0] + (static_cast<float>(row) + 0.5f) * cell_size,
            roi_origin[1] + (static_cast<float>(col) + 0.5f) * cell_size};
  }
};

struct SceneObject {
  std::array<float, 2> center{};       // world meters
  float amplitude = 0.f;               // positive peak activation
  std::vector<float> channel_signature;  // unit norm, length C
  float radius = 0.f;                  // meters, >= one cell_size
};

/// One synthetic sample: matched ego/co-agent features over the same RoI,
/// the relative pose, and per-object visibility from each viewpoint.
struct ScenePair {
  BEVFeature ego;
  BEVFeature co;
  std::array<float, 3> delta{};  // co pose minus ego pose
  std::vector<SceneObject> objects;
  std::vector<uint8_t> vis_ego;
  std::vector<uint8_t> vis_co;
};

/// Pure function of (config, seed): same inputs give a bit-identical pair.
ScenePair generate_scene_pair(const GeneratorConfig& config, uint64_t seed);

/// Learned 1x1 spatial projection over the channel axis, used to bring
/// externally produced high-C tensors down to the working channel count.
class ChannelProjection {
 public:
  static ChannelProjection identity(int channels);
  static ChannelProjection random(int c_in, int c_out, uint64_t seed);

  BEVFeature apply(const BEVFeature& feature) const;

  int c_in() const { return c_in_; }
  int c_out() const { return c_out_; }

 private:
  ChannelProjection(int c_in, int c_out)
      : c_in_(c_in), c_out_(c_out),
        weight_(static_cast<size_t>(c_in) * c_out, 0.f),
        bias_(static_cast<size_t>(c_out), 0.f) {}

  int c_in_;
  int c_out_;
  std::vector<float> weight_;  // (c_out, c_in) row-major
  std::vector<float> bias_;
};

/// Convenience wrapper mirroring the operation-level contract: projects the
/// feature to c_out channels with a seeded learned map (identity when
/// c_out == C and identity_if_square is requested).
BEVFeature channel_compress(const BEVFeature& feature, int c_out, uint64_t seed = 0,
                            bool identity_if_square = true);

}  // namespace bevrecon
