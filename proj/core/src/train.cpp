#include "bevrecon/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "bevrecon/bev.hpp"
#include "bevrecon/checkpoint.hpp"
#include "bevrecon/diffusion.hpp"
#include "bevrecon/rng.hpp"
#include "bevrecon/schedule.hpp"

namespace bevrecon {

namespace {

using MatF = nn::Mat<float>;

void fill_row(MatF& m, int row, const TensorF& t) {
  for (int64_t i = 0; i < t.numel(); ++i) m(row, i) = t[i];
}

TensorF row_to_tensor(const MatF& m, int row, const GridShape& grid) {
  TensorF t({grid.h, grid.w, grid.c});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = m(row, i);
  return t;
}

struct ValSet {
  std::vector<ScenePair> pairs;
  MatF f_e, f0_c, delta;
  std::vector<int> ts;
  MatF eps;
};

ValSet build_val_set(const RunConfig& cfg, const GridShape& grid) {
  ValSet vs;
  const int n = cfg.opt.val_pairs;
  vs.f_e.resize(n, grid.elems());
  vs.f0_c.resize(n, grid.elems());
  vs.delta.resize(n, 3);
  vs.eps.resize(n, grid.elems());
  vs.ts.resize(static_cast<size_t>(n));
  Rng rng(mix_seed(cfg.seed_val_data(), 0xfeed));
  const NoiseSchedule probe = build_schedule(cfg.sched.t_diff, cfg.sched.beta_start,
                                             cfg.sched.beta_end);
  for (int i = 0; i < n; ++i) {
    ScenePair pair = generate_scene_pair(cfg.gen, mix_seed(cfg.seed_val_data(), i));
    fill_row(vs.f_e, i, pair.ego.data);
    fill_row(vs.f0_c, i, pair.co.data);
    vs.delta(i, 0) = pair.delta[0];
    vs.delta(i, 1) = pair.delta[1];
    vs.delta(i, 2) = pair.delta[2];
    vs.ts[static_cast<size_t>(i)] = rng.uniform_int(1, probe.t_diff);
    for (Eigen::Index j = 0; j < vs.eps.cols(); ++j) {
      vs.eps(i, j) = static_cast<float>(rng.normal());
    }
    vs.pairs.push_back(std::move(pair));
  }
  return vs;
}

/// Noise-prediction loss on the validation set with its frozen (t, eps)
/// draws, so the value is comparable across steps. Features enter the
/// network in the scaled diffusion space.
double val_simple_loss(Model<float>& model, const ValSet& vs, const NoiseSchedule& sched) {
  const int n = static_cast<int>(vs.f_e.rows());
  const float s = static_cast<float>(model.config().data_scale);
  const MatF f_e = s * vs.f_e;
  const MatF f0 = s * vs.f0_c;
  MatF ft(n, vs.f_e.cols());
  for (int i = 0; i < n; ++i) {
    const double abar = sched.alpha_bar(vs.ts[static_cast<size_t>(i)]);
    ft.row(i) = static_cast<float>(std::sqrt(abar)) * f0.row(i) +
                static_cast<float>(std::sqrt(1.0 - abar)) * vs.eps.row(i);
  }
  MatF v_stack(2 * n, model.grid().elems());
  v_stack.topRows(n) = f0;
  v_stack.bottomRows(n) = f_e;
  const MatF v = model.se.forward(v_stack, false);
  const auto out = model.net.forward(f_e, ft, vs.ts, vs.delta, v.topRows(n), v.bottomRows(n),
                                     false);
  return (out.eps_hat - vs.eps).array().square().sum() /
         static_cast<double>(out.eps_hat.size());
}

/// Mean 5-step DDIM reconstruction MSE over the validation pairs, in the
/// original feature units.
double val_recon_mse(Model<float>& model, const ValSet& vs, const NoiseSchedule& sched,
                     uint64_t seed) {
  const GridShape grid = model.grid();
  const float s = static_cast<float>(model.config().data_scale);
  double acc = 0;
  for (size_t i = 0; i < vs.pairs.size(); ++i) {
    const ScenePair& pair = vs.pairs[i];
    TensorF ego = pair.ego.data;
    TensorF co_scaled = pair.co.data;
    for (auto& v : ego.data) v *= s;
    for (auto& v : co_scaled.data) v *= s;
    const auto v_c = model.extract_semantic(co_scaled);
    const auto v_e = model.extract_semantic(ego);
    Rng rng(mix_seed(seed, i));
    TensorF f_t({grid.h, grid.w, grid.c});
    for (int64_t j = 0; j < f_t.numel(); ++j) f_t[j] = static_cast<float>(rng.normal());
    auto fn = model.bind(ego, pair.delta, v_c, v_e);
    const TensorF rec = ddim_sample<float>(fn, std::move(f_t), sched, 5, 0.0);
    double mse = 0;
    for (int64_t j = 0; j < rec.numel(); ++j) {
      const double d = static_cast<double>(rec[j]) / s - pair.co.data[j];
      mse += d * d;
    }
    acc += mse / static_cast<double>(rec.numel());
  }
  return acc / static_cast<double>(vs.pairs.size());
}

void write_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) return;
  os << "step,total,simple,vlb,val_simple,val_recon_mse,elapsed_s\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.total << ',' << r.simple << ',' << r.vlb << ',' << r.val_simple
       << ',' << r.val_recon_mse << ',' << r.elapsed_s << '\n';
  }
}

}  // namespace

void train_loop(Model<float>& model, const RunConfig& cfg, const TrainOptions& opts,
                TrainResult* result) {
  cfg.validate();
  const GridShape grid{cfg.gen.h, cfg.gen.w, cfg.gen.c};
  if (!(model.grid() == grid)) {
    throw std::invalid_argument("train_loop: model grid does not match the generator config");
  }
  if (model.config().semantic_len != cfg.model.semantic_len) {
    throw std::invalid_argument("train_loop: cfg.model.semantic_len does not match the model");
  }
  const NoiseSchedule sched = build_schedule(cfg.sched.t_diff, cfg.sched.beta_start,
                                             cfg.sched.beta_end);
  const int B = cfg.opt.batch_size;
  const int64_t N = grid.elems();
  const double lambda = cfg.opt.lambda_vlb;

  nn::AdamW<float> adamw(cfg.opt.lr, cfg.opt.weight_decay);
  nn::Sgd<float> sgd(cfg.opt.lr);
  const bool use_adamw = cfg.opt.algorithm == "adamw";

  Rng noise_rng(mix_seed(cfg.seed_train_data(), 0x9042));
  uint64_t sample_counter = 0;

  ValSet val = build_val_set(cfg, grid);
  TrainResult local;
  TrainResult& res = result ? *result : local;
  res.log.clear();

  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };
  auto log_val = [&](int64_t step, double total, double simple, double vlb) {
    TrainLogRow row;
    row.step = step;
    row.total = total;
    row.simple = simple;
    row.vlb = vlb;
    row.val_simple = val_simple_loss(model, val, sched);
    row.val_recon_mse = val_recon_mse(model, val, sched, cfg.seed_sampler());
    row.elapsed_s = elapsed();
    res.log.push_back(row);
    if (opts.progress) {
      (*opts.progress) << "step " << row.step << "  loss " << row.total << "  val_simple "
                       << row.val_simple << "  val_recon " << row.val_recon_mse << "  ("
                       << row.elapsed_s << " s)\n"
                       << std::flush;
    }
    if (!opts.out_dir.empty()) {
      std::filesystem::create_directories(opts.out_dir);
      RunConfig eff = cfg;
      eff.model = model.config();
      save_checkpoint(opts.out_dir + "/checkpoint_latest.bin", model, eff, step);
      write_log_csv(opts.out_dir + "/train_log.csv", res.log);
    }
  };

  log_val(0, 0, 0, 0);
  res.val_simple_step0 = res.log.front().val_simple;

  MatF f_e(B, N), f0_c(B, N), ft(B, N), eps(B, N), delta(B, 3);
  std::vector<int> ts(static_cast<size_t>(B));

  const float data_scale = static_cast<float>(model.config().data_scale);
  for (int64_t step = 1; step <= cfg.opt.steps; ++step) {
    for (int b = 0; b < B; ++b) {
      const ScenePair pair =
          generate_scene_pair(cfg.gen, mix_seed(cfg.seed_train_data(), sample_counter++));
      fill_row(f_e, b, pair.ego.data);
      fill_row(f0_c, b, pair.co.data);
      f_e.row(b) *= data_scale;
      f0_c.row(b) *= data_scale;
      delta(b, 0) = pair.delta[0];
      delta(b, 1) = pair.delta[1];
      delta(b, 2) = pair.delta[2];
      const int t = noise_rng.uniform_int(1, sched.t_diff);
      ts[static_cast<size_t>(b)] = t;
      const float a = static_cast<float>(std::sqrt(sched.alpha_bar(t)));
      const float s = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar(t)));
      for (int64_t i = 0; i < N; ++i) {
        const float e = static_cast<float>(noise_rng.normal());
        eps(b, i) = e;
        ft(b, i) = a * f0_c(b, i) + s * e;
      }
    }

    MatF v_stack(2 * B, N);
    v_stack.topRows(B) = f0_c;
    v_stack.bottomRows(B) = f_e;
    const MatF v = model.se.forward(v_stack, true);
    const auto out = model.net.forward(f_e, ft, ts, delta, v.topRows(B), v.bottomRows(B), true);

    const BatchLoss<float> loss =
        hybrid_loss_batch<float>(out.eps_hat, out.var_interp, eps, f0_c, ft, ts, sched, lambda);
    const double total = loss.values.total;
    const double simple = loss.values.simple;
    const double vlb = loss.values.vlb;
    if (!std::isfinite(total)) {
      throw std::runtime_error("training diverged at step " + std::to_string(step) +
                               " (non-finite loss)");
    }

    model.params.zero_grad();
    const auto grads = model.net.backward(loss.d_eps_hat, loss.d_var_pre);
    MatF d_v_stack(2 * B, model.config().semantic_len);
    d_v_stack.topRows(B) = grads.d_v_c;
    d_v_stack.bottomRows(B) = grads.d_v_e;
    model.se.backward(d_v_stack);

    if (use_adamw) {
      adamw.step(model.params);
    } else {
      sgd.step(model.params);
    }

    if (step % cfg.opt.val_interval == 0 || step == cfg.opt.steps) {
      log_val(step, total, simple, vlb);
    }
  }

  res.val_simple_final = res.log.back().val_simple;
  res.val_recon_final = res.log.back().val_recon_mse;
}

std::unique_ptr<Model<float>> train(const RunConfig& cfg, const TrainOptions& opts,
                                    TrainResult* result) {
  cfg.validate();
  const GridShape grid{cfg.gen.h, cfg.gen.w, cfg.gen.c};
  auto model = std::make_unique<Model<float>>(cfg.model, grid, cfg.seed_init());
  train_loop(*model, cfg, opts, result);
  return model;
}

}  // namespace bevrecon
