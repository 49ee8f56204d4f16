#include "bevrecon/bev.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "bevrecon/rng.hpp"

namespace bevrecon {
namespace {

TEST(SceneGenerator, DeterministicInConfigAndSeed) {
  GeneratorConfig cfg;
  const ScenePair a = generate_scene_pair(cfg, 12345);
  const ScenePair b = generate_scene_pair(cfg, 12345);
  EXPECT_EQ(a.ego.data.data, b.ego.data.data);
  EXPECT_EQ(a.co.data.data, b.co.data.data);
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(a.vis_ego, b.vis_ego);
  EXPECT_EQ(a.vis_co, b.vis_co);
  ASSERT_EQ(a.objects.size(), b.objects.size());
  for (size_t i = 0; i < a.objects.size(); ++i) {
    EXPECT_EQ(a.objects[i].center, b.objects[i].center);
    EXPECT_EQ(a.objects[i].channel_signature, b.objects[i].channel_signature);
  }
  const ScenePair c = generate_scene_pair(cfg, 12346);
  EXPECT_NE(a.ego.data.data, c.ego.data.data);
}

TEST(SceneGenerator, IdenticalViewpointGivesIdenticalTensors) {
  GeneratorConfig cfg;
  cfg.delta_radius = 0.0;
  cfg.occlusion = false;
  cfg.noise_std = 0.0;
  for (uint64_t seed : {1u, 2u, 3u}) {
    const ScenePair p = generate_scene_pair(cfg, seed);
    EXPECT_EQ(p.delta, (std::array<float, 3>{0.f, 0.f, 0.f}));
    EXPECT_EQ(p.ego.data.data, p.co.data.data);
  }
}

TEST(SceneGenerator, RoiAlignmentAndPoseDelta) {
  GeneratorConfig cfg;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const ScenePair p = generate_scene_pair(cfg, seed);
    EXPECT_EQ(p.ego.data.shape, p.co.data.shape);
    EXPECT_EQ(p.ego.roi_origin, p.co.roi_origin);
    EXPECT_EQ(p.ego.cell_size, p.co.cell_size);
    for (int k = 0; k < 3; ++k) {
      EXPECT_EQ(p.delta[static_cast<size_t>(k)],
                p.co.agent_pose[static_cast<size_t>(k)] -
                    p.ego.agent_pose[static_cast<size_t>(k)]);
    }
    EXPECT_EQ(p.delta[2], 0.f);  // planar offsets
    EXPECT_TRUE(p.ego.data.all_finite());
    EXPECT_TRUE(p.co.data.all_finite());
  }
}

TEST(SceneGenerator, ObjectInvariants) {
  GeneratorConfig cfg;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const ScenePair p = generate_scene_pair(cfg, seed);
    for (const SceneObject& o : p.objects) {
      double norm2 = 0;
      for (float s : o.channel_signature) norm2 += static_cast<double>(s) * s;
      EXPECT_NEAR(norm2, 1.0, 1e-5);
      EXPECT_GE(o.radius, cfg.cell_size);
      EXPECT_GT(o.amplitude, 0.f);
    }
  }
}

// With the generator's own visibility metadata as the oracle: the ego/co
// discrepancy restricted to mutually visible objects' support is strictly
// smaller than over the whole grid, because the full grid includes the
// single-agent objects.
TEST(SceneGenerator, MutuallyVisibleSupportHasLowerDiscrepancy) {
  GeneratorConfig cfg;
  double num_support = 0, den_support = 0, num_full = 0, den_full = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const ScenePair p = generate_scene_pair(cfg, seed);
    const int h = cfg.h, w = cfg.w, c = cfg.c;
    std::vector<uint8_t> support(static_cast<size_t>(h) * w, 0);
    for (size_t o = 0; o < p.objects.size(); ++o) {
      if (!(p.vis_ego[o] && p.vis_co[o])) continue;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const auto cc = p.ego.cell_center(i, j);
          const double dx = cc[0] - p.objects[o].center[0];
          const double dy = cc[1] - p.objects[o].center[1];
          if (std::sqrt(dx * dx + dy * dy) <= 3.0 * p.objects[o].radius) {
            support[static_cast<size_t>(i) * w + j] = 1;
          }
        }
      }
    }
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        for (int k = 0; k < c; ++k) {
          const double d = static_cast<double>(p.ego.data.at(i, j, k)) - p.co.data.at(i, j, k);
          num_full += d * d;
          den_full += 1;
          if (support[static_cast<size_t>(i) * w + j]) {
            num_support += d * d;
            den_support += 1;
          }
        }
      }
    }
  }
  ASSERT_GT(den_support, 0);
  EXPECT_LT(num_support / den_support, num_full / den_full);
}

TEST(SceneGenerator, OcclusionCreatesSingleAgentObjects) {
  GeneratorConfig cfg;  // occlusion on by default
  int unique = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const ScenePair p = generate_scene_pair(cfg, seed);
    for (size_t o = 0; o < p.objects.size(); ++o) {
      if (p.vis_ego[o] != p.vis_co[o]) ++unique;
    }
  }
  EXPECT_GT(unique, 0);
}

TEST(SceneGenerator, RejectsInvalidConfigs) {
  GeneratorConfig bad;
  bad.h = 43;  // not divisible by patch
  EXPECT_THROW(generate_scene_pair(bad, 0), std::invalid_argument);
  GeneratorConfig neg;
  neg.noise_std = -1;
  EXPECT_THROW(generate_scene_pair(neg, 0), std::invalid_argument);
  GeneratorConfig range;
  range.range_limit = -5;
  EXPECT_THROW(generate_scene_pair(range, 0), std::invalid_argument);
}

TEST(ChannelCompress, IdentityWhenSquare) {
  GeneratorConfig cfg;
  const ScenePair p = generate_scene_pair(cfg, 5);
  const BEVFeature out = channel_compress(p.ego, cfg.c);
  EXPECT_EQ(out.data.data, p.ego.data.data);
  EXPECT_EQ(out.roi_origin, p.ego.roi_origin);
  EXPECT_EQ(out.agent_pose, p.ego.agent_pose);
}

TEST(ChannelCompress, FullScaleReduction) {
  // 352 x 96 x 256 -> 352 x 96 x 4: the 64x element reduction.
  BEVFeature big;
  big.data = TensorF({352, 96, 256});
  Rng rng(11);
  for (auto& v : big.data.data) v = static_cast<float>(rng.normal());
  const BEVFeature small = channel_compress(big, 4, /*seed=*/3);
  EXPECT_EQ(small.data.shape, (std::vector<int>{352, 96, 4}));
  EXPECT_EQ(big.data.numel(), 64 * small.data.numel());
  EXPECT_TRUE(small.data.all_finite());
}

TEST(ChannelCompress, RejectsBadChannelCounts) {
  GeneratorConfig cfg;
  const ScenePair p = generate_scene_pair(cfg, 6);
  EXPECT_THROW(channel_compress(p.ego, 0), std::invalid_argument);
  EXPECT_THROW(channel_compress(p.ego, cfg.c + 1), std::invalid_argument);
  BEVFeature nonfinite = p.ego;
  nonfinite.data[0] = std::nanf("");
  EXPECT_THROW(channel_compress(nonfinite, 2), std::invalid_argument);
}

}  // namespace
}  // namespace bevrecon
