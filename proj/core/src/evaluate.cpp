#include "bevrecon/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bevrecon/diffusion.hpp"
#include "bevrecon/errors.hpp"
#include "bevrecon/half.hpp"
#include "bevrecon/plot.hpp"
#include "bevrecon/rng.hpp"

namespace bevrecon {

CollabPayload make_payload(Model<float>& model, const ScenePair& pair, int topk_k) {
  CollabPayload p;
  p.delta = pair.delta;
  TensorF co_scaled = pair.co.data;
  const float s = static_cast<float>(model.config().data_scale);
  for (auto& v : co_scaled.data) v *= s;
  const auto v = model.extract_semantic(co_scaled);
  p.semantic.resize(static_cast<size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    p.semantic[static_cast<size_t>(i)] = float_to_half(v(i));
  }
  // The top-K section carries the tensor's own values, not the scaled ones.
  if (topk_k > 0) p.topk = select_topk(pair.co.data, topk_k);
  return p;
}

BEVFeature reconstruct(Model<float>& model, const NoiseSchedule& sched, const BEVFeature& ego,
                       const CollabPayload& payload, int steps, uint64_t seed, double eta) {
  const GridShape grid = model.grid();
  if (ego.data.rank() != 3 || ego.h() != grid.h || ego.w() != grid.w ||
      ego.channels() != grid.c) {
    throw std::invalid_argument("reconstruct: ego feature shape mismatch");
  }
  if (payload.semantic_len() != model.config().semantic_len) {
    throw ConfigError("checkpoint/config mismatch: payload carries L=" +
                      std::to_string(payload.semantic_len()) + ", model expects L=" +
                      std::to_string(model.config().semantic_len));
  }
  // v_c is exactly the wire-recovered vector; v_e is recomputed locally.
  const std::vector<float> vc_values = payload.semantic_values();
  nn::Vec<float> v_c(static_cast<Eigen::Index>(vc_values.size()));
  for (size_t i = 0; i < vc_values.size(); ++i) v_c(static_cast<Eigen::Index>(i)) = vc_values[i];
  const nn::Vec<float> v_e = model.extract_semantic(ego.data);

  Rng rng(seed);
  TensorF f_t({grid.h, grid.w, grid.c});
  for (int64_t i = 0; i < f_t.numel(); ++i) f_t[i] = static_cast<float>(rng.normal());

  auto fn = model.bind(ego.data, payload.delta, v_c, v_e);
  TensorF rec = ddim_sample<float>(fn, std::move(f_t), sched, steps, eta,
                                   eta > 0 ? &rng : nullptr);
  if (payload.topk) rec = apply_topk(std::move(rec), *payload.topk);

  BEVFeature out;
  out.data = std::move(rec);
  out.roi_origin = ego.roi_origin;
  out.cell_size = ego.cell_size;
  out.agent_pose = {ego.agent_pose[0] + payload.delta[0], ego.agent_pose[1] + payload.delta[1],
                    ego.agent_pose[2] + payload.delta[2]};
  return out;
}

BEVFeature reconstruct_via(Model<float>& model, const NoiseSchedule& sched,
                           const BEVFeature& ego, const CollabSource& source, int steps,
                           uint64_t seed, double eta) {
  // Only payload bytes cross this boundary.
  return reconstruct(model, sched, ego, source.payload(), steps, seed, eta);
}

double mse(const TensorF& a, const TensorF& b) {
  require_same_shape(a, b, "mse");
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

// ---------------------------------------------------------------------------
// Grid evaluation.
// ---------------------------------------------------------------------------

namespace {

/// Semantic-section byte count taken from the actual encoded payload, so the
/// reported rate always reflects what would be transmitted.
int64_t encoded_semantic_bytes(const CollabPayload& p) {
  const std::vector<uint8_t> bytes = encode_payload(p);
  int64_t n = static_cast<int64_t>(bytes.size()) - payload_header_bytes() - 12;
  if (p.topk) n -= topk_section_bytes(p.topk->k());
  return n;
}

}  // namespace

EvalGridReport eval_grid(const std::vector<std::pair<int, Model<float>*>>& models_by_l,
                         const RunConfig& cfg) {
  EvalGridReport report;
  report.steps_values = cfg.eval.steps_list;
  const NoiseSchedule sched = build_schedule(cfg.sched.t_diff, cfg.sched.beta_start,
                                             cfg.sched.beta_end);

  std::vector<ScenePair> pairs;
  pairs.reserve(static_cast<size_t>(cfg.eval.set_size));
  for (int i = 0; i < cfg.eval.set_size; ++i) {
    pairs.push_back(generate_scene_pair(cfg.gen, mix_seed(cfg.seed_eval_data(), i)));
  }

  for (const auto& [l, model] : models_by_l) {
    if (model == nullptr) throw std::invalid_argument("eval_grid: missing model for L");
    if (model->config().semantic_len != l) {
      throw ConfigError("checkpoint/config mismatch: model for L=" + std::to_string(l) +
                        " has semantic_len=" + std::to_string(model->config().semantic_len));
    }
    report.l_values.push_back(l);

    std::vector<CollabPayload> payloads;
    payloads.reserve(pairs.size());
    for (const auto& pair : pairs) payloads.push_back(make_payload(*model, pair, 0));
    report.rate_kibps.push_back(
        compute_rate(encoded_semantic_bytes(payloads.front()), cfg.eval.freq_hz));

    std::vector<double> row_mse, row_wall;
    for (int steps : cfg.eval.steps_list) {
      double acc = 0, wall = 0;
      for (size_t i = 0; i < pairs.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const BEVFeature rec = reconstruct(*model, sched, pairs[i].ego, payloads[i], steps,
                                           mix_seed(cfg.seed_sampler(), i), cfg.eval.eta);
        wall += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
        acc += mse(rec.data, pairs[i].co.data);
      }
      row_mse.push_back(acc / static_cast<double>(pairs.size()));
      row_wall.push_back(wall / static_cast<double>(pairs.size()));
    }
    report.mse.push_back(std::move(row_mse));
    report.wall_ms.push_back(std::move(row_wall));
  }
  return report;
}

std::string EvalGridReport::to_csv() const {
  std::ostringstream os;
  os << "L,rate_kibps,steps,mse,wall_ms\n";
  for (size_t li = 0; li < l_values.size(); ++li) {
    for (size_t si = 0; si < steps_values.size(); ++si) {
      os << l_values[li] << ',' << rate_kibps[li] << ',' << steps_values[si] << ','
         << mse[li][si] << ',' << wall_ms[li][si] << '\n';
    }
  }
  return os.str();
}

void write_eval_grid_outputs(const EvalGridReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir + "/grid.csv", std::ios::trunc);
  csv << report.to_csv();
  csv.close();

  // Rate/accuracy trade-off: one curve per step count.
  std::vector<PlotSeries> rate_series;
  for (size_t si = 0; si < report.steps_values.size(); ++si) {
    PlotSeries s;
    s.label = std::to_string(report.steps_values[si]) + " steps";
    for (size_t li = 0; li < report.l_values.size(); ++li) {
      s.x.push_back(report.rate_kibps[li]);
      s.y.push_back(report.mse[li][si]);
    }
    rate_series.push_back(std::move(s));
  }
  write_svg_plot(out_dir + "/rate_vs_mse.svg", "Reconstruction error vs data rate",
                 "data rate (Kibit/s)", "MSE", rate_series, /*log_x=*/true);

  std::vector<PlotSeries> step_series;
  for (size_t li = 0; li < report.l_values.size(); ++li) {
    PlotSeries s;
    s.label = "L=" + std::to_string(report.l_values[li]);
    for (size_t si = 0; si < report.steps_values.size(); ++si) {
      s.x.push_back(report.steps_values[si]);
      s.y.push_back(report.mse[li][si]);
    }
    step_series.push_back(std::move(s));
  }
  write_svg_plot(out_dir + "/steps_vs_mse.svg", "Reconstruction error vs sampling steps",
                 "DDIM steps", "MSE", step_series);
}

// ---------------------------------------------------------------------------
// Downstream detection proxy.
// ---------------------------------------------------------------------------

const char* regime_name(Regime regime) {
  switch (regime) {
    case Regime::kNoCollab: return "no-collab";
    case Regime::kRecon: return "recon";
    case Regime::kReconTopk: return "recon+topk";
    case Regime::kTopkOnly: return "topk-only";
    case Regime::kOracle: return "oracle";
  }
  return "?";
}

std::optional<Regime> parse_regime(const std::string& name) {
  for (Regime r : all_regimes()) {
    if (name == regime_name(r)) return r;
  }
  return std::nullopt;
}

std::vector<Regime> all_regimes() {
  return {Regime::kNoCollab, Regime::kRecon, Regime::kReconTopk, Regime::kTopkOnly,
          Regime::kOracle};
}

std::vector<Detection> detect_blob_centers(const TensorF& hwc, const BEVFeature& meta,
                                           double threshold, int nms_radius) {
  const int h = hwc.shape[0], w = hwc.shape[1], c = hwc.shape[2];
  std::vector<float> norm(static_cast<size_t>(h) * w, 0.f);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0;
      const float* cell = &hwc.data[(static_cast<size_t>(i) * w + j) * c];
      for (int k = 0; k < c; ++k) acc += static_cast<double>(cell[k]) * cell[k];
      norm[static_cast<size_t>(i) * w + j] = static_cast<float>(std::sqrt(acc));
    }
  }
  std::vector<Detection> out;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const float v = norm[static_cast<size_t>(i) * w + j];
      if (v <= threshold) continue;
      bool is_peak = true;
      for (int di = -nms_radius; di <= nms_radius && is_peak; ++di) {
        for (int dj = -nms_radius; dj <= nms_radius && is_peak; ++dj) {
          if (di == 0 && dj == 0) continue;
          const int ni = i + di, nj = j + dj;
          if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
          const float nv = norm[static_cast<size_t>(ni) * w + nj];
          // Strict dominance with index tie-break keeps one peak per plateau.
          if (nv > v || (nv == v && (static_cast<int64_t>(ni) * w + nj) <
                                        (static_cast<int64_t>(i) * w + j))) {
            is_peak = false;
          }
        }
      }
      if (is_peak) {
        Detection d;
        d.position = meta.cell_center(i, j);
        d.score = v;
        out.push_back(d);
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

SceneCounts match_detections(const std::vector<Detection>& detections,
                             const std::vector<std::array<float, 2>>& truth, double radius_m) {
  SceneCounts counts;
  std::vector<bool> used(truth.size(), false);
  for (const Detection& det : detections) {
    int best = -1;
    double best_d = radius_m;
    for (size_t g = 0; g < truth.size(); ++g) {
      if (used[g]) continue;
      const double dx = det.position[0] - truth[g][0];
      const double dy = det.position[1] - truth[g][1];
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (dist <= best_d) {
        best_d = dist;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[static_cast<size_t>(best)] = true;
      ++counts.tp;
    } else {
      ++counts.fp;
    }
  }
  for (bool u : used) {
    if (!u) ++counts.fn;
  }
  return counts;
}

double micro_f1(const std::vector<SceneCounts>& counts) {
  int64_t tp = 0, fp = 0, fn = 0;
  for (const SceneCounts& c : counts) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0 ? 2.0 * tp / denom : 0.0;
}

const RegimeResult& DownstreamReport::find(Regime r) const {
  for (const auto& res : regimes) {
    if (res.regime == r) return res;
  }
  throw std::invalid_argument("regime not present in report");
}

std::string DownstreamReport::to_csv() const {
  std::ostringstream os;
  os << "regime,rate_kibps,precision,recall,f1,scenes\n";
  for (const auto& r : regimes) {
    os << regime_name(r.regime) << ',' << r.rate_kibps << ',' << r.precision << ',' << r.recall
       << ',' << r.f1 << ',' << scenes << '\n';
  }
  return os.str();
}

DownstreamReport eval_downstream(Model<float>& model, const RunConfig& cfg,
                                 const std::vector<Regime>& regimes) {
  const NoiseSchedule sched = build_schedule(cfg.sched.t_diff, cfg.sched.beta_start,
                                             cfg.sched.beta_end);
  const int scenes = cfg.eval.downstream_scenes;
  const int k = cfg.eval.topk;
  const bool needs_recon =
      std::any_of(regimes.begin(), regimes.end(), [](Regime r) {
        return r == Regime::kRecon || r == Regime::kReconTopk;
      });

  DownstreamReport report;
  report.scenes = scenes;
  for (Regime r : regimes) {
    RegimeResult res;
    res.regime = r;
    res.per_scene.resize(static_cast<size_t>(scenes));
    report.regimes.push_back(std::move(res));
  }

  int64_t rate_semantic_bytes = 0;
  const GridShape grid = model.grid();

  for (int s = 0; s < scenes; ++s) {
    const ScenePair pair = generate_scene_pair(cfg.gen, mix_seed(cfg.seed_downstream(), s));
    const CollabPayload payload = make_payload(model, pair, k);
    if (s == 0) rate_semantic_bytes = encoded_semantic_bytes(payload);

    std::vector<std::array<float, 2>> truth;
    for (size_t o = 0; o < pair.objects.size(); ++o) {
      if (pair.vis_ego[o] || pair.vis_co[o]) truth.push_back(pair.objects[o].center);
    }

    TensorF recon_base;
    if (needs_recon) {
      CollabPayload plain = payload;
      plain.topk.reset();
      recon_base =
          reconstruct(model, sched, pair.ego, plain, 5, mix_seed(cfg.seed_sampler(), 7000 + s))
              .data;
    }

    for (auto& res : report.regimes) {
      TensorF fused = pair.ego.data;
      const TensorF* co_est = nullptr;
      TensorF storage;
      switch (res.regime) {
        case Regime::kNoCollab:
          break;  // the payload is ignored entirely
        case Regime::kRecon:
          co_est = &recon_base;
          break;
        case Regime::kReconTopk:
          storage = apply_topk(recon_base, *payload.topk);
          co_est = &storage;
          break;
        case Regime::kTopkOnly:
          storage = apply_topk(TensorF::zeros(pair.co.data.shape), *payload.topk);
          co_est = &storage;
          break;
        case Regime::kOracle:
          co_est = &pair.co.data;
          break;
      }
      if (co_est) {
        for (int64_t i = 0; i < fused.numel(); ++i) {
          fused[i] = std::max(fused[i], (*co_est)[i]);
        }
      }
      const auto dets = detect_blob_centers(fused, pair.ego, cfg.eval.det_threshold,
                                            cfg.eval.det_nms_radius);
      res.per_scene[static_cast<size_t>(s)] =
          match_detections(dets, truth, cfg.eval.det_match_radius);
    }
  }

  for (auto& res : report.regimes) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (const SceneCounts& c : res.per_scene) {
      tp += c.tp;
      fp += c.fp;
      fn += c.fn;
    }
    res.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    res.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    res.f1 = micro_f1(res.per_scene);
    switch (res.regime) {
      case Regime::kNoCollab:
        res.rate_kibps = 0;
        break;
      case Regime::kRecon:
        res.rate_kibps = compute_rate(rate_semantic_bytes, cfg.eval.freq_hz);
        break;
      case Regime::kReconTopk:
        res.rate_kibps =
            compute_rate(rate_semantic_bytes + topk_entries_bytes(k), cfg.eval.freq_hz);
        break;
      case Regime::kTopkOnly:
        res.rate_kibps = compute_rate(topk_entries_bytes(k), cfg.eval.freq_hz);
        break;
      case Regime::kOracle:
        res.rate_kibps = compute_rate(static_cast<int64_t>(grid.elems()) * 4, cfg.eval.freq_hz);
        break;
    }
  }
  return report;
}

std::pair<double, double> bootstrap_f1_diff(const RegimeResult& a, const RegimeResult& b,
                                            int iterations, uint64_t seed, double confidence) {
  if (a.per_scene.size() != b.per_scene.size() || a.per_scene.empty()) {
    throw std::invalid_argument("bootstrap_f1_diff: mismatched per-scene counts");
  }
  const int n = static_cast<int>(a.per_scene.size());
  Rng rng(seed);
  std::vector<double> diffs(static_cast<size_t>(iterations));
  std::vector<SceneCounts> sa(static_cast<size_t>(n)), sb(static_cast<size_t>(n));
  for (int it = 0; it < iterations; ++it) {
    for (int i = 0; i < n; ++i) {
      const int j = rng.uniform_int(0, n - 1);
      sa[static_cast<size_t>(i)] = a.per_scene[static_cast<size_t>(j)];
      sb[static_cast<size_t>(i)] = b.per_scene[static_cast<size_t>(j)];
    }
    diffs[static_cast<size_t>(it)] = micro_f1(sa) - micro_f1(sb);
  }
  std::sort(diffs.begin(), diffs.end());
  const double alpha = (1.0 - confidence) / 2.0;
  const auto pick = [&](double q) {
    const double pos = q * (iterations - 1);
    return diffs[static_cast<size_t>(std::lround(pos))];
  };
  return {pick(alpha), pick(1.0 - alpha)};
}

}  // namespace bevrecon
