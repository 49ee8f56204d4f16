#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "bevrecon/bev.hpp"
#include "bevrecon/config.hpp"
#include "bevrecon/denoiser.hpp"
#include "bevrecon/schedule.hpp"
#include "bevrecon/wire.hpp"

namespace bevrecon {

/// Transmitter side: semantic vector from the co-agent feature (half
/// precision, as it travels), the pose delta, optionally the top-K set of
/// the true co-agent tensor.
CollabPayload make_payload(Model<float>& model, const ScenePair& pair, int topk_k = 0);

/// Ego side: draws f_T from the seed, conditions on the payload (v_e is
/// computed locally from the ego feature), runs eta-DDIM, then applies the
/// top-K overwrite when the payload carries one. The co-agent's raw tensor
/// never enters this path.
BEVFeature reconstruct(Model<float>& model, const NoiseSchedule& sched, const BEVFeature& ego,
                       const CollabPayload& payload, int steps, uint64_t seed, double eta = 0.0);

/// The only thing the ego side may ask of the collaborator link. Tests
/// substitute counting doubles here to prove the information barrier.
class CollabSource {
 public:
  virtual ~CollabSource() = default;
  virtual CollabPayload payload() const = 0;
};

BEVFeature reconstruct_via(Model<float>& model, const NoiseSchedule& sched,
                           const BEVFeature& ego, const CollabSource& source, int steps,
                           uint64_t seed, double eta = 0.0);

double mse(const TensorF& a, const TensorF& b);

// ---------------------------------------------------------------------------
// Reconstruction grid (semantic length x sampling steps).
// ---------------------------------------------------------------------------

struct EvalGridReport {
  std::vector<int> l_values;
  std::vector<int> steps_values;
  std::vector<double> rate_kibps;            // per L, recomputed from encoded payloads
  std::vector<std::vector<double>> mse;      // [L][steps]
  std::vector<std::vector<double>> wall_ms;  // [L][steps], mean per reconstruction

  std::string to_csv() const;
};

EvalGridReport eval_grid(const std::vector<std::pair<int, Model<float>*>>& models_by_l,
                         const RunConfig& cfg);

/// grid.csv, rate_vs_mse.svg, steps_vs_mse.svg under out_dir.
void write_eval_grid_outputs(const EvalGridReport& report, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Toy downstream detection task.
// ---------------------------------------------------------------------------

enum class Regime { kNoCollab, kRecon, kReconTopk, kTopkOnly, kOracle };

const char* regime_name(Regime regime);
std::optional<Regime> parse_regime(const std::string& name);
std::vector<Regime> all_regimes();

struct SceneCounts {
  int tp = 0, fp = 0, fn = 0;
};

struct Detection {
  std::array<float, 2> position;  // world meters
  float score = 0;
};

/// Local maxima of the per-cell channel norm above a threshold; suppression
/// within a Chebyshev cell radius.
std::vector<Detection> detect_blob_centers(const TensorF& hwc, const BEVFeature& meta,
                                           double threshold, int nms_radius);

/// Greedy score-ordered matching against ground-truth centers.
SceneCounts match_detections(const std::vector<Detection>& detections,
                             const std::vector<std::array<float, 2>>& truth, double radius_m);

struct RegimeResult {
  Regime regime = Regime::kNoCollab;
  double precision = 0, recall = 0, f1 = 0;
  double rate_kibps = 0;  // payload-section rate for this regime
  std::vector<SceneCounts> per_scene;
};

struct DownstreamReport {
  int scenes = 0;
  std::vector<RegimeResult> regimes;

  const RegimeResult& find(Regime r) const;
  std::string to_csv() const;
};

DownstreamReport eval_downstream(Model<float>& model, const RunConfig& cfg,
                                 const std::vector<Regime>& regimes);

/// Micro-averaged F1 over scene counts.
double micro_f1(const std::vector<SceneCounts>& counts);

/// Percentile bootstrap CI (lo, hi) of micro_f1(a) - micro_f1(b) over scenes.
std::pair<double, double> bootstrap_f1_diff(const RegimeResult& a, const RegimeResult& b,
                                            int iterations, uint64_t seed,
                                            double confidence = 0.95);

}  // namespace bevrecon
