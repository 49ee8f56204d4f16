#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bevrecon {

/// Ordered key=value text. Lines starting with '#' and blank lines are
/// ignored; everything else must be `key=value`.
using KvPairs = std::vector<std::pair<std::string, std::string>>;

KvPairs parse_kv_text(const std::string& text);
std::string serialize_kv(const KvPairs& pairs);

uint64_t fnv1a64(const std::string& s);
std::string to_hex(uint64_t v);

/// Synthetic world settings for paired BEV feature generation.
struct GeneratorConfig {
  int h = 44;
  int w = 24;
  int c = 4;
  int patch_h = 2;  // used to validate grid divisibility
  int patch_w = 2;
  int objects_min = 8;
  int objects_max = 8;
  double range_limit = 30.0;   // meters, circular visibility limit per agent
  bool occlusion = true;
  int occlusion_sectors = 64;  // angular occlusion resolution
  double noise_std = 0.05;     // per-element sensor noise
  double amp_min = 0.5;
  double amp_max = 1.0;
  double radius_min = 1.5;  // meters
  double radius_max = 3.5;
  double cell_size = 1.0;     // meters per cell
  double delta_radius = 20.0; // co-agent offset sampled in a disc of this radius

  void validate() const;  // throws std::invalid_argument
};

/// Denoiser network hyperparameters.
struct DenoiserConfig {
  int patch_h = 2;
  int patch_w = 2;
  int hidden_dim = 64;
  int depth = 4;
  int heads = 4;
  int semantic_len = 512;  // L, the wire code length
  int code_width = 512;    // fixed pre-bottleneck code width
  double mlp_ratio = 4.0;
  int se_c1 = 32;
  int se_c2 = 64;
  int se_c3 = 128;
  bool use_ego_semantic = true;  // condition on v_e as well as v_c
  // Fixed normalization into the diffusion space: features are multiplied by
  // this on entry to the network and sampler output is divided by it. Brings
  // the synthetic features to roughly unit variance under the N(0, I) prior.
  double data_scale = 5.0;

  int mlp_hidden() const { return static_cast<int>(hidden_dim * mlp_ratio); }
  void validate() const;
};

struct ScheduleConfig {
  int t_diff = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

struct OptimConfig {
  std::string algorithm = "adamw";
  double lr = 2e-4;
  double weight_decay = 0.0;
  int batch_size = 16;
  int steps = 6000;
  double lambda_vlb = 1e-3;
  int val_interval = 500;
  int val_pairs = 16;
};

struct EvalConfig {
  std::vector<int> steps_list = {2, 3, 5, 8};
  std::vector<int> l_list = {512, 256, 128, 64, 32, 16};
  int set_size = 200;
  int downstream_scenes = 500;
  double eta = 0.0;
  int topk = 25;
  double freq_hz = 10.0;
  double det_threshold = 0.30;
  int det_nms_radius = 2;       // cells
  double det_match_radius = 2.5;  // meters
};

/// Everything needed to reproduce a run: generator, model, schedule,
/// optimizer, evaluation grid, master seed.
struct RunConfig {
  GeneratorConfig gen;
  DenoiserConfig model;
  ScheduleConfig sched;
  OptimConfig opt;
  EvalConfig eval;
  uint64_t seed = 0;

  static RunConfig from_text(const std::string& text);  // throws ConfigError on unknown keys
  static RunConfig from_file(const std::string& path);
  std::string to_text() const;  // canonical ordering, exact roundtrip
  std::string hash() const;     // hash of canonical text
  void validate() const;

  // Derived seed streams.
  uint64_t seed_init() const;
  uint64_t seed_train_data() const;
  uint64_t seed_val_data() const;
  uint64_t seed_eval_data() const;
  uint64_t seed_downstream() const;
  uint64_t seed_sampler() const;
};

/// Parses a generator-only config (same key namespace as RunConfig; any
/// recognized key accepted, unknown keys rejected).
GeneratorConfig generator_config_from_file(const std::string& path);

std::string generator_config_text(const GeneratorConfig& gen);
std::string generator_config_hash(const GeneratorConfig& gen);

}  // namespace bevrecon
