// Command-line front end: dataset synthesis, training, reconstruction,
// evaluation grids, the toy downstream task, rate accounting, and report
// rendering.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "bevrecon/checkpoint.hpp"
#include "bevrecon/dataset.hpp"
#include "bevrecon/errors.hpp"
#include "bevrecon/evaluate.hpp"
#include "bevrecon/plot.hpp"
#include "bevrecon/tensor_io.hpp"
#include "bevrecon/threads.hpp"
#include "bevrecon/train.hpp"
#include "bevrecon/wire.hpp"

namespace {

using namespace bevrecon;

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

RunConfig load_config(const std::string& path, bool seed_set, uint64_t seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::from_file(path);
  if (seed_set) cfg.seed = seed;
  cfg.validate();
  return cfg;
}

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string s = ss.str();
  return {s.begin(), s.end()};
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

int cmd_synth(const std::string& config, bool seed_set, uint64_t seed, const std::string& out,
              int count) {
  RunConfig cfg = load_config(config, seed_set, seed);
  write_dataset(out, cfg.gen, cfg.seed, count);
  std::cout << "wrote " << count << " pairs to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config, bool seed_set, uint64_t seed, const std::string& out) {
  RunConfig cfg = load_config(config, seed_set, seed);
  std::filesystem::create_directories(out);
  TrainOptions opts;
  opts.out_dir = out;
  opts.progress = &std::cout;
  TrainResult result;
  auto model = train(cfg, opts, &result);
  save_checkpoint(out + "/checkpoint.bin", *model, cfg, cfg.opt.steps);
  std::cout << "checkpoint: " << out << "/checkpoint.bin  (val_recon_mse "
            << result.val_recon_final << ")\n";
  return 0;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& pair_base,
                    const std::string& ego_path, const std::string& payload_path, int steps,
                    bool seed_set, uint64_t seed, const std::string& out, int topk, double eta) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const NoiseSchedule sched = build_schedule(ckpt.config.sched.t_diff,
                                             ckpt.config.sched.beta_start,
                                             ckpt.config.sched.beta_end);
  const uint64_t sampler_seed = seed_set ? seed : ckpt.config.seed_sampler();

  BEVFeature ego;
  CollabPayload payload;
  const TensorF* co_truth = nullptr;
  ScenePair pair;

  if (!pair_base.empty()) {
    const auto slash = pair_base.find_last_of('/');
    const std::string dir = slash == std::string::npos ? "." : pair_base.substr(0, slash);
    const std::string base =
        slash == std::string::npos ? pair_base : pair_base.substr(slash + 1);
    int index = -1;
    if (std::sscanf(base.c_str(), "pair_%d", &index) != 1) {
      throw std::runtime_error("cannot parse pair index from " + pair_base);
    }
    pair = read_pair(dir, index);
    ego = pair.ego;
    payload = make_payload(*ckpt.model, pair, topk);
    co_truth = &pair.co.data;
    const std::vector<uint8_t> bytes = encode_payload(payload);
    write_bytes(out + ".payload", bytes);
    std::ofstream hex(out + ".payload.hex", std::ios::trunc);
    hex_dump_payload(bytes, hex);
  } else {
    ego.data = read_tensor_file(ego_path);
    if (ego.data.rank() != 3) throw std::runtime_error("ego tensor must be H x W x C");
    ego.cell_size = static_cast<float>(ckpt.config.gen.cell_size);
    ego.roi_origin = {-0.5f * ego.h() * ego.cell_size, -0.5f * ego.w() * ego.cell_size};
    payload = decode_payload(read_bytes(payload_path));
    std::ofstream hex(out + ".payload.hex", std::ios::trunc);
    hex_dump_payload(encode_payload(payload), hex);
  }

  const BEVFeature rec = reconstruct(*ckpt.model, sched, ego, payload, steps, sampler_seed, eta);
  write_tensor_file(out + ".recon", rec.data);
  std::cout << "reconstruction: " << out << ".recon\n";
  if (co_truth) std::cout << "mse vs ground truth: " << fmt_g(mse(rec.data, *co_truth)) << "\n";
  return 0;
}

int cmd_eval_grid(const std::vector<std::string>& ckpt_specs, const std::string& config,
                  bool seed_set, uint64_t seed, const std::string& out) {
  if (ckpt_specs.empty()) throw std::runtime_error("at least one --checkpoint L=path required");
  RunConfig cfg = load_config(config, seed_set, seed);

  std::vector<LoadedCheckpoint> loaded;
  std::vector<std::pair<int, Model<float>*>> models;
  for (const std::string& spec : ckpt_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("--checkpoint expects L=path, got " + spec);
    }
    const int l = std::stoi(spec.substr(0, eq));
    loaded.push_back(load_checkpoint(spec.substr(eq + 1)));
    models.emplace_back(l, loaded.back().model.get());
  }
  const EvalGridReport report = eval_grid(models, cfg);
  write_eval_grid_outputs(report, out);
  std::cout << report.to_csv();
  return 0;
}

int cmd_eval_downstream(const std::string& ckpt_path, const std::string& config, bool seed_set,
                        uint64_t seed, const std::string& out, const std::string& regimes_csv) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = config.empty() ? ckpt.config : load_config(config, false, 0);
  if (seed_set) cfg.seed = seed;
  cfg.validate();

  std::vector<Regime> regimes;
  std::istringstream ss(regimes_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto r = parse_regime(item);
    if (!r) throw std::runtime_error("unknown regime: " + item);
    regimes.push_back(*r);
  }
  const DownstreamReport report = eval_downstream(*ckpt.model, cfg, regimes);

  std::filesystem::create_directories(out);
  std::ofstream csv(out + "/downstream.csv", std::ios::trunc);
  csv << report.to_csv();
  std::cout << report.to_csv();

  std::vector<PlotSeries> series;
  for (const auto& r : report.regimes) {
    PlotSeries s;
    s.label = regime_name(r.regime);
    s.x = {r.rate_kibps};
    s.y = {r.f1};
    series.push_back(std::move(s));
  }
  write_svg_plot(out + "/downstream.svg", "Toy detection F1 vs data rate", "data rate (Kibit/s)",
                 "F1", series);
  return 0;
}

int cmd_rates(const std::string& l_csv, double hz, int topk) {
  std::cout << "L,rate_kibps\n";
  std::istringstream ss(l_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const int l = std::stoi(item);
    if (l <= 0) throw std::runtime_error("L must be positive");
    std::cout << l << ',' << fmt_g(compute_rate(payload_semantic_bytes(l), hz)) << "\n";
  }
  if (topk > 0) {
    std::cout << "topk" << topk << ','
              << fmt_g(compute_rate(topk_entries_bytes(topk), hz)) << "\n";
  }
  return 0;
}

int cmd_report(const std::string& in, const std::string& out) {
  std::ifstream is(in + "/grid.csv");
  if (!is) throw std::runtime_error("no grid.csv in " + in);
  std::string line;
  std::getline(is, line);  // header
  EvalGridReport report;
  // Rows are grouped by L in file order.
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f;
    std::getline(row, f, ',');
    const int l = std::stoi(f);
    std::getline(row, f, ',');
    const double rate = std::stod(f);
    std::getline(row, f, ',');
    const int steps = std::stoi(f);
    std::getline(row, f, ',');
    const double m = std::stod(f);
    std::getline(row, f, ',');
    const double wall = std::stod(f);
    if (report.l_values.empty() || report.l_values.back() != l) {
      report.l_values.push_back(l);
      report.rate_kibps.push_back(rate);
      report.mse.emplace_back();
      report.wall_ms.emplace_back();
    }
    if (report.l_values.size() == 1) report.steps_values.push_back(steps);
    report.mse.back().push_back(m);
    report.wall_ms.back().push_back(wall);
  }
  if (report.l_values.empty()) throw std::runtime_error("grid.csv is empty");
  write_eval_grid_outputs(report, out);
  std::cout << "plots written to " << out << "\n";
  return 0;
}

int cmd_dump_payload(const std::string& path) {
  hex_dump_payload(read_bytes(path), std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Eigen::setNbThreads(bevrecon::configured_threads());

  CLI::App app{"BEV feature reconstruction over a compact semantic payload"};
  app.require_subcommand(1);

  std::string config, out = ".", ckpt, pair_base, ego_path, payload_path, regimes, l_csv, in;
  uint64_t seed = 0;
  int count = 100, steps = 5, topk = 0;
  double hz = 10.0, eta = 0.0;
  std::vector<std::string> ckpt_specs;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key=value config file");
    sub->add_option("--seed", seed, "master seed override");
    sub->add_option("--out", out, "output path");
  };

  CLI::App* synth = app.add_subcommand("synth", "emit a dataset of scene pairs");
  add_common(synth);
  synth->add_option("--count", count, "number of pairs");

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from the config");
  add_common(train_cmd);

  CLI::App* rec = app.add_subcommand("reconstruct", "reconstruct one pair");
  add_common(rec);
  rec->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  rec->add_option("--pair", pair_base, "dataset pair base path (pair_NNNNNN)");
  rec->add_option("--ego", ego_path, "ego tensor file (with --payload)");
  rec->add_option("--payload", payload_path, "encoded payload file (with --ego)");
  rec->add_option("--steps", steps, "DDIM steps");
  rec->add_option("--topk", topk, "attach a top-K section when encoding from a pair");
  rec->add_option("--eta", eta, "DDIM eta");

  CLI::App* grid = app.add_subcommand("eval-grid", "reconstruction MSE over (L, steps)");
  add_common(grid);
  grid->add_option("--checkpoint", ckpt_specs, "L=path, repeatable")->required();

  CLI::App* down = app.add_subcommand("eval-downstream", "toy detection over regimes");
  add_common(down);
  down->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  down->add_option("--regimes", regimes, "comma list of regimes")
      ->default_val("no-collab,recon,recon+topk,topk-only,oracle");

  CLI::App* rates = app.add_subcommand("rates", "semantic-payload data rates");
  add_common(rates);
  rates->add_option("--L", l_csv, "comma list of semantic lengths")
      ->default_val("512,256,128,64,32,16");
  rates->add_option("--hz", hz, "perception frequency")->default_val(10.0);
  rates->add_option("--topk", topk, "also print the top-K entries rate");

  CLI::App* report = app.add_subcommand("report", "render plots from an eval-grid directory");
  add_common(report);
  report->add_option("--in", in, "directory containing grid.csv")->required();

  CLI::App* dump = app.add_subcommand("dump-payload", "annotated payload hex dump");
  add_common(dump);
  dump->add_option("--payload", payload_path, "encoded payload file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    const bool seed_set = app.count_all() && (synth->count("--seed") || train_cmd->count("--seed") ||
                                              rec->count("--seed") || grid->count("--seed") ||
                                              down->count("--seed") || rates->count("--seed") ||
                                              report->count("--seed") || dump->count("--seed"));
    if (synth->parsed()) return cmd_synth(config, seed_set, seed, out, count);
    if (train_cmd->parsed()) return cmd_train(config, seed_set, seed, out);
    if (rec->parsed()) {
      if (pair_base.empty() && (ego_path.empty() || payload_path.empty())) {
        throw std::runtime_error("reconstruct needs --pair or both --ego and --payload");
      }
      return cmd_reconstruct(ckpt, pair_base, ego_path, payload_path, steps, seed_set, seed, out,
                             topk, eta);
    }
    if (grid->parsed()) return cmd_eval_grid(ckpt_specs, config, seed_set, seed, out);
    if (down->parsed()) return cmd_eval_downstream(ckpt, config, seed_set, seed, out, regimes);
    if (rates->parsed()) return cmd_rates(l_csv, hz, topk);
    if (report->parsed()) return cmd_report(in, out);
    if (dump->parsed()) return cmd_dump_payload(payload_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
