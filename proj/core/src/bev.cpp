#include "bevrecon/bev.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bevrecon/rng.hpp"

namespace bevrecon {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

std::vector<uint8_t> visibility_from(const std::array<float, 2>& agent_xy,
                                     const std::vector<SceneObject>& objects,
                                     const GeneratorConfig& cfg) {
  const size_t n = objects.size();
  std::vector<uint8_t> visible(n, 0);

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(n);
  for (size_t i = 0; i < n; ++i) {
    const double dx = objects[i].center[0] - agent_xy[0];
    const double dy = objects[i].center[1] - agent_xy[1];
    dist[i] = std::sqrt(dx * dx + dy * dy);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dist[a] < dist[b]; });

  std::vector<uint8_t> occupied(static_cast<size_t>(cfg.occlusion_sectors), 0);
  for (size_t idx : order) {
    if (dist[idx] > cfg.range_limit) continue;  // beyond range, never visible
    if (!cfg.occlusion) {
      visible[idx] = 1;
      continue;
    }
    const double dx = objects[idx].center[0] - agent_xy[0];
    const double dy = objects[idx].center[1] - agent_xy[1];
    const double ang = std::atan2(dy, dx) + 3.14159265358979323846;  // [0, 2pi]
    int sector = static_cast<int>(ang / kTwoPi * cfg.occlusion_sectors);
    sector = std::clamp(sector, 0, cfg.occlusion_sectors - 1);
    if (!occupied[static_cast<size_t>(sector)]) {
      visible[idx] = 1;
      occupied[static_cast<size_t>(sector)] = 1;
    }
  }
  return visible;
}

void render_agent(BEVFeature& feature, const std::vector<SceneObject>& objects,
                  const std::vector<uint8_t>& visible, const GeneratorConfig& cfg,
                  Rng& rng) {
  const int h = cfg.h, w = cfg.w, c = cfg.c;
  for (size_t k = 0; k < objects.size(); ++k) {
    if (!visible[k]) continue;
    const SceneObject& obj = objects[k];
    const double inv_two_r2 = 1.0 / (2.0 * obj.radius * obj.radius);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const auto p = feature.cell_center(i, j);
        const double dx = p[0] - obj.center[0];
        const double dy = p[1] - obj.center[1];
        const double g = obj.amplitude * std::exp(-(dx * dx + dy * dy) * inv_two_r2);
        float* cell = &feature.data.at(i, j, 0);
        for (int ch = 0; ch < c; ++ch) {
          cell[ch] += static_cast<float>(g * obj.channel_signature[static_cast<size_t>(ch)]);
        }
      }
    }
  }
  if (cfg.noise_std > 0) {
    for (float& v : feature.data.data) {
      v += static_cast<float>(rng.normal() * cfg.noise_std);
    }
  }
}

}  // namespace

ScenePair generate_scene_pair(const GeneratorConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);

  ScenePair pair;
  const float half_h = 0.5f * static_cast<float>(config.h) * static_cast<float>(config.cell_size);
  const float half_w = 0.5f * static_cast<float>(config.w) * static_cast<float>(config.cell_size);

  pair.ego.data = TensorF::zeros({config.h, config.w, config.c});
  pair.ego.cell_size = static_cast<float>(config.cell_size);
  pair.ego.agent_pose = {0.f, 0.f, 0.f};
  pair.ego.roi_origin = {-half_h, -half_w};

  // Co-agent offset: uniform in a disc, planar.
  const double ang = kTwoPi * rng.uniform();
  const double rad = config.delta_radius * std::sqrt(rng.uniform());
  pair.delta = {static_cast<float>(rad * std::cos(ang)),
                static_cast<float>(rad * std::sin(ang)), 0.f};

  pair.co.data = TensorF::zeros({config.h, config.w, config.c});
  pair.co.cell_size = pair.ego.cell_size;
  pair.co.roi_origin = pair.ego.roi_origin;  // co-agent crops to the ego RoI
  pair.co.agent_pose = {pair.ego.agent_pose[0] + pair.delta[0],
                        pair.ego.agent_pose[1] + pair.delta[1],
                        pair.ego.agent_pose[2] + pair.delta[2]};

  const int n_obj = rng.uniform_int(config.objects_min, config.objects_max);
  pair.objects.reserve(static_cast<size_t>(n_obj));
  for (int k = 0; k < n_obj; ++k) {
    SceneObject obj;
    obj.center = {static_cast<float>(rng.uniform(-half_h, half_h)),
                  static_cast<float>(rng.uniform(-half_w, half_w))};
    obj.amplitude = static_cast<float>(rng.uniform(config.amp_min, config.amp_max));
    obj.radius = static_cast<float>(rng.uniform(config.radius_min, config.radius_max));
    obj.channel_signature.resize(static_cast<size_t>(config.c));
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (float& s : obj.channel_signature) {
        // Non-negative signatures keep elementwise-max fusion meaningful
        // downstream.
        s = static_cast<float>(std::fabs(rng.normal()));
        norm2 += static_cast<double>(s) * s;
      }
    } while (norm2 < 1e-12);
    const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
    for (float& s : obj.channel_signature) s *= inv;
    pair.objects.push_back(std::move(obj));
  }

  pair.vis_ego = visibility_from({pair.ego.agent_pose[0], pair.ego.agent_pose[1]},
                                 pair.objects, config);
  pair.vis_co = visibility_from({pair.co.agent_pose[0], pair.co.agent_pose[1]},
                                pair.objects, config);

  render_agent(pair.ego, pair.objects, pair.vis_ego, config, rng);
  render_agent(pair.co, pair.objects, pair.vis_co, config, rng);
  return pair;
}

ChannelProjection ChannelProjection::identity(int channels) {
  if (channels <= 0) throw std::invalid_argument("channels must be positive");
  ChannelProjection p(channels, channels);
  for (int i = 0; i < channels; ++i) {
    p.weight_[static_cast<size_t>(i) * channels + i] = 1.f;
  }
  return p;
}

ChannelProjection ChannelProjection::random(int c_in, int c_out, uint64_t seed) {
  if (c_in <= 0 || c_out <= 0) throw std::invalid_argument("channel counts must be positive");
  ChannelProjection p(c_in, c_out);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c_in));
  for (float& v : p.weight_) v = static_cast<float>(rng.normal() * scale);
  return p;
}

BEVFeature ChannelProjection::apply(const BEVFeature& feature) const {
  if (feature.data.rank() != 3) throw std::invalid_argument("expected H x W x C feature");
  if (feature.channels() != c_in_) {
    throw std::invalid_argument("channel projection input mismatch: feature has " +
                                std::to_string(feature.channels()) + " channels, map expects " +
                                std::to_string(c_in_));
  }
  if (!feature.data.all_finite()) throw std::invalid_argument("non-finite feature");

  BEVFeature out;
  out.roi_origin = feature.roi_origin;
  out.cell_size = feature.cell_size;
  out.agent_pose = feature.agent_pose;
  out.data = TensorF::zeros({feature.h(), feature.w(), c_out_});
  const int hw = feature.h() * feature.w();
  for (int cell = 0; cell < hw; ++cell) {
    const float* src = &feature.data.data[static_cast<size_t>(cell) * c_in_];
    float* dst = &out.data.data[static_cast<size_t>(cell) * c_out_];
    for (int o = 0; o < c_out_; ++o) {
      double acc = bias_[static_cast<size_t>(o)];
      const float* wrow = &weight_[static_cast<size_t>(o) * c_in_];
      for (int i = 0; i < c_in_; ++i) acc += static_cast<double>(wrow[i]) * src[i];
      dst[o] = static_cast<float>(acc);
    }
  }
  return out;
}

BEVFeature channel_compress(const BEVFeature& feature, int c_out, uint64_t seed,
                            bool identity_if_square) {
  const int c = feature.channels();
  if (c_out <= 0 || c_out > c) {
    throw std::invalid_argument("c_out must be in [1, C]; got " + std::to_string(c_out) +
                                " with C=" + std::to_string(c));
  }
  const ChannelProjection proj = (identity_if_square && c_out == c)
                                     ? ChannelProjection::identity(c)
                                     : ChannelProjection::random(c, c_out, seed);
  return proj.apply(feature);
}

}  // namespace bevrecon
