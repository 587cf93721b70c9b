#include <CLI11.hpp>
#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "trajdiff/curation.hpp"
#include "trajdiff/errors.hpp"
#include "trajdiff/io.hpp"
#include "trajdiff/losses.hpp"
#include "trajdiff/metrics.hpp"
#include "trajdiff/model.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/schedule.hpp"
#include "trajdiff/synth.hpp"
#include "trajdiff/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trajdiff;

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  if (out.empty()) throw InvalidSpec("empty integer list: " + s);
  return out;
}

model::ModelConfig load_model_config(const std::string& path) {
  model::ModelConfig cfg;
  if (!path.empty()) cfg = json::parse(io::read_file(path)).get<model::ModelConfig>();
  return cfg;
}

train::TrainConfig load_train_config(const std::string& path) {
  train::TrainConfig cfg;
  if (!path.empty()) cfg = json::parse(io::read_file(path)).get<train::TrainConfig>();
  return cfg;
}

std::string pose_json_line(const se3::Pose& p) { return io::pose_to_json(p).dump(); }

/// Projected coordinate axes per predicted step, opacity fading with the step
/// index; context poses in gray.
std::string trajectory_svg(const tokens::TrajectoryWindow& w,
                           const std::vector<se3::Pose>& pred) {
  const double fx = w.intrinsics(0), fy = w.intrinsics(1), cx = w.intrinsics(2),
               cy = w.intrinsics(3);
  const int width = static_cast<int>(std::lround(2.0 * cx));
  const int height = static_cast<int>(std::lround(2.0 * cy));
  constexpr double kAxisLen = 0.05;  // meters

  std::ostringstream svg;
  svg.precision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const auto project = [&](const se3::Vec3& p) {
    return std::pair<double, double>(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
  };
  const auto draw_pose = [&](const se3::Pose& pose, double opacity, bool colored) {
    if (pose.translation.z() <= 0.0) return;
    const auto [ox, oy] = project(pose.translation);
    const char* colors[3] = {"#d62728", "#2ca02c", "#1f77b4"};
    for (int a = 0; a < 3; ++a) {
      const se3::Vec3 tip = pose.translation + kAxisLen * pose.rotation.col(a);
      if (tip.z() <= 0.0) continue;
      const auto [tx, ty] = project(tip);
      svg << "<line x1=\"" << ox << "\" y1=\"" << oy << "\" x2=\"" << tx << "\" y2=\"" << ty
          << "\" stroke=\"" << (colored ? colors[a] : "#888888") << "\" stroke-width=\"2\" "
          << "stroke-opacity=\"" << opacity << "\"/>\n";
    }
  };

  for (const se3::Pose& p : w.context_poses) draw_pose(p, 0.8, false);
  const std::size_t h = pred.size();
  for (std::size_t k = 0; k < h; ++k) {
    const double opacity = h > 1 ? 1.0 - 0.75 * static_cast<double>(k) / (h - 1) : 1.0;
    draw_pose(pred[k], opacity, true);
  }
  svg << "</svg>\n";
  return svg.str();
}

int cmd_synth_gen(const std::string& config_path, const std::string& out_dir,
                  std::uint64_t seed) {
  synth::DatasetConfig cfg = synth::dataset_config_from_json(io::read_file(config_path));
  synth::write_dataset(cfg, seed, out_dir);
  std::cout << "wrote " << cfg.count << " windows to " << out_dir << "\n";
  return 0;
}

int cmd_curate(const std::string& in_path, const std::string& out_dir, int c, int h) {
  curation::CurationConfig cfg;
  cfg.context_len = c;
  cfg.horizon = h;
  cfg.link.min_len = c + h;
  const auto records = curation::parse_stream_jsonl(io::read_file(in_path));
  const curation::CurationResult result = curation::curate_stream(records, cfg);
  fs::create_directories(out_dir);
  io::write_windows_jsonl((fs::path(out_dir) / "windows.jsonl").string(),
                          (fs::path(out_dir) / "points.ofpc").string(), result.windows);
  io::write_file((fs::path(out_dir) / "funnel.csv").string(), result.funnel.to_csv());
  std::cout << result.funnel.to_csv();
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& eval_path,
              const std::string& out_dir, const std::string& model_cfg_path,
              const std::string& train_cfg_path, int steps, std::uint64_t seed, int jobs) {
  const auto windows = io::read_windows_jsonl(data_path);
  if (windows.empty()) throw DataMismatch("no windows in " + data_path);

  model::ModelConfig mcfg = load_model_config(model_cfg_path);
  mcfg.context_len = windows.front().context_len;
  mcfg.horizon = windows.front().horizon;
  train::TrainConfig tcfg = load_train_config(train_cfg_path);
  if (steps > 0) tcfg.steps = steps;
  tcfg.seed = seed;
  if (jobs > 0) tcfg.jobs = jobs;

  std::vector<tokens::TrajectoryWindow> eval_windows;
  if (!eval_path.empty()) eval_windows = io::read_windows_jsonl(eval_path);

  const train::TrainResult result = train::train(windows, mcfg, tcfg, {}, eval_windows);
  fs::create_directories(out_dir);
  train::save_model_checkpoint((fs::path(out_dir) / "checkpoint.ofck").string(), result.params,
                               mcfg, result.stats, tcfg.seed, result.trained_steps);
  io::write_file((fs::path(out_dir) / "curve.csv").string(), result.loss_curve_csv);
  if (!result.eval_curve_csv.empty())
    io::write_file((fs::path(out_dir) / "eval_curve.csv").string(), result.eval_curve_csv);
  std::cout << "trained " << result.trained_steps << " steps -> " << out_dir << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& data_path,
               const std::string& window_id, std::uint64_t seed, const std::string& out_dir) {
  const train::LoadedModel m = train::load_model_checkpoint(ckpt_path);
  const auto windows = io::read_windows_jsonl(data_path);

  const tokens::TrajectoryWindow* w = nullptr;
  for (const auto& cand : windows)
    if (cand.clip_id == window_id) w = &cand;
  if (!w) {
    try {
      const std::size_t idx = std::stoul(window_id);
      if (idx < windows.size()) w = &windows[idx];
    } catch (const std::exception&) {
    }
  }
  if (!w) throw DataMismatch("window not found: " + window_id);

  const diffusion::Schedule sched =
      diffusion::build_schedule(m.config.diffusion_steps, m.config.sampling_steps);
  const std::vector<se3::Pose> pred =
      model::predict_trajectory(*w, m.params, m.config, m.stats, sched, seed);

  json j;
  j["clip_id"] = w->clip_id;
  j["seed"] = seed;
  json poses = json::array();
  for (const auto& p : pred) poses.push_back(io::pose_to_json(p));
  j["poses"] = std::move(poses);

  fs::create_directories(out_dir);
  io::write_file((fs::path(out_dir) / "trajectory.json").string(), j.dump(2) + "\n");
  io::write_file((fs::path(out_dir) / "overlay.svg").string(), trajectory_svg(*w, pred));
  std::cout << "sampled " << pred.size() << " poses for " << w->clip_id << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& baseline, int samples, std::uint64_t seed,
             const std::string& out_dir) {
  const auto windows = io::read_windows_jsonl(data_path);
  if (windows.empty()) throw DataMismatch("no windows in " + data_path);

  metrics::Predictor predictor;
  if (baseline == "constant_pose") {
    predictor = [](const tokens::TrajectoryWindow& w, std::uint64_t) {
      return metrics::baseline_constant_pose(w);
    };
  } else if (baseline == "constant_velocity") {
    predictor = [](const tokens::TrajectoryWindow& w, std::uint64_t) {
      return metrics::baseline_constant_velocity(w);
    };
  } else if (!baseline.empty()) {
    throw InvalidSpec("unknown baseline: " + baseline);
  } else {
    const train::LoadedModel m = train::load_model_checkpoint(ckpt_path);
    const diffusion::Schedule sched =
        diffusion::build_schedule(m.config.diffusion_steps, m.config.sampling_steps);
    predictor = [m = std::make_shared<train::LoadedModel>(m), sched, samples](
                    const tokens::TrajectoryWindow& w, std::uint64_t s) {
      std::vector<se3::Pose> best;
      double best_ade = -1.0;
      for (int i = 0; i < std::max(1, samples); ++i) {
        auto pred = model::predict_trajectory(w, m->params, m->config, m->stats, sched,
                                              rng_derive(s, static_cast<std::uint64_t>(i)));
        const double ade = metrics::evaluate(pred, w.future_poses).ade;
        if (best_ade < 0.0 || ade < best_ade) {
          best_ade = ade;
          best = std::move(pred);
        }
      }
      return best;
    };
  }

  const metrics::MetricReport rep = metrics::evaluate_batch(windows, predictor, seed);
  fs::create_directories(out_dir);
  io::write_file((fs::path(out_dir) / "metrics.csv").string(), metrics::report_csv(rep));
  io::write_file((fs::path(out_dir) / "metrics.json").string(), metrics::report_json(rep) + "\n");
  std::cout << metrics::report_csv(rep);
  return 0;
}

int cmd_ablate(const std::string& train_path, const std::string& eval_path,
               const std::string& c_list, const std::string& h_list,
               const std::string& model_cfg_path, const std::string& train_cfg_path,
               std::uint64_t seed, const std::string& out_path) {
  const auto train_windows = io::read_windows_jsonl(train_path);
  const auto eval_windows = io::read_windows_jsonl(eval_path);
  model::ModelConfig mcfg = load_model_config(model_cfg_path);
  train::TrainConfig tcfg = load_train_config(train_cfg_path);
  tcfg.seed = seed;
  const std::vector<int> cs = parse_int_list(c_list);
  const std::vector<int> hs = parse_int_list(h_list);
  const std::string csv = train::ablation_sweep(train_windows, eval_windows, mcfg, tcfg, cs, hs);
  io::write_file(out_path, csv);
  std::cout << csv;
  return 0;
}

int cmd_gradcheck(const std::string& model_cfg_path, int probes, std::uint64_t seed, double tol) {
  model::ModelConfig mcfg;
  mcfg.width = 64;
  mcfg.depth = 2;
  mcfg.n_points = 64;
  mcfg.ctx_dim = 64;
  if (!model_cfg_path.empty())
    mcfg = json::parse(io::read_file(model_cfg_path)).get<model::ModelConfig>();

  synth::DatasetConfig dcfg;
  dcfg.count = 1;
  dcfg.context_len = mcfg.context_len;
  dcfg.horizon = mcfg.horizon;
  dcfg.n_points = mcfg.n_points;
  dcfg.noise_trans = 0.002;
  dcfg.noise_rot = 0.01;
  const auto windows = synth::generate_windows(dcfg, rng_derive(seed, "gradcheck-data"));
  const tokens::TrajectoryWindow& w = windows.front();

  const diffusion::Schedule sched =
      diffusion::build_schedule(mcfg.diffusion_steps, mcfg.sampling_steps);
  tokens::StatsAccumulator acc;
  acc.add(tokens::tokenize(w.future_poses));
  const tokens::TokenStats stats = acc.freeze();

  const Eigen::MatrixXd ctx_std = tokens::standardize(tokens::tokenize(w.context_poses), stats);
  const Eigen::MatrixXd y0 = tokens::standardize(tokens::tokenize(w.future_poses), stats);
  CounterRng rng(rng_derive(seed, "gradcheck-noise"));
  Eigen::MatrixXd eps(mcfg.horizon, 9);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.next_gaussian();
  const int t = 400;
  const Eigen::MatrixXd y_t = diffusion::q_sample(y0, t, eps, sched);
  const Eigen::MatrixXd v_tgt = diffusion::v_target(y0, eps, t, sched);
  const std::vector<int> knn = model::knn_indices(w.anchor_points, mcfg.knn_k);
  const Eigen::VectorXd hw = diffusion::horizon_weights(mcfg.horizon);
  const losses::LossWeights lw;

  model::ParamStore params = model::init_params(mcfg, rng_derive(seed, "gradcheck-init"));
  model::activate_zero_init(params, mcfg, rng_derive(seed, "gradcheck-activate"), 0.5);
  const model::GraphBuilder build = [&](ad::Tape& tape, model::TapeParams& tp) {
    ad::Expr ctx = model::encode_context(tape, tp, mcfg, ctx_std, w.context_boxes);
    ad::Expr z = model::encode_scene(tape, tp, mcfg, w.anchor_points, knn, ctx,
                                     w.anchor_pose().translation);
    ad::Expr v_pred = model::dit_forward(tape, tp, mcfg, y_t, t, ctx_std, z);
    return losses::total_loss_ad(tape, v_pred, y_t, v_tgt, t, sched, stats, w.future_poses, lw, hw)
        .total;
  };
  const double max_rel = model::gradient_check(params, build, probes, seed, 1e-5, 1e-3);
  std::printf("gradcheck: max relative error %.3e over %d probes (tolerance %.1e)\n", max_rel,
              probes, tol);
  if (!std::isfinite(max_rel) || max_rel > tol) return 3;
  return 0;
}

int cmd_inspect(const std::string& path) {
  const fs::path p(path);
  const std::string ext = p.extension().string();
  if (ext == ".jsonl") {
    const std::string text = io::read_file(path);
    std::istringstream is(text);
    std::string line;
    std::size_t n = 0;
    std::string first;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (n == 0) first = line;
      ++n;
    }
    std::cout << path << ": " << n << " records\n";
    if (!first.empty()) {
      const json j = json::parse(first);
      std::cout << "first record keys:";
      for (auto it = j.begin(); it != j.end(); ++it) std::cout << " " << it.key();
      std::cout << "\n";
      if (j.contains("C")) std::cout << "C=" << j["C"] << " H=" << j["H"] << "\n";
    }
    return 0;
  }
  if (ext == ".ofpc") {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::size_t clouds = 0, points = 0;
    while (f.peek() != EOF) {
      const auto offset = static_cast<std::uint64_t>(f.tellg());
      const Eigen::MatrixXd pts = io::read_pointcloud(f, offset);
      ++clouds;
      points += static_cast<std::size_t>(pts.rows());
    }
    std::cout << path << ": " << clouds << " clouds, " << points << " points total\n";
    return 0;
  }
  if (ext == ".ofck") {
    const io::Checkpoint ckpt = io::load_checkpoint(path);
    std::cout << path << ": checkpoint\nheader: " << ckpt.header.dump(2) << "\n";
    std::size_t total = 0;
    for (const auto& [name, m] : ckpt.params) {
      std::cout << "  " << name << " [" << m.rows() << " x " << m.cols() << "]\n";
      total += static_cast<std::size_t>(m.size());
    }
    std::cout << "total parameters: " << total << "\n";
    return 0;
  }
  if (ext == ".csv" || ext == ".json" || ext == ".svg") {
    std::cout << io::read_file(path);
    return 0;
  }
  throw DataMismatch("do not know how to inspect " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object 6-DoF trajectory forecasting: synthetic data, curation, diffusion "
               "training, sampling, and evaluation"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int jobs = 0;

  std::string config_path, out_dir = "out";
  auto* synth_gen = app.add_subcommand("synth-gen", "generate a deterministic synthetic dataset");
  synth_gen->add_option("--config", config_path, "dataset config JSON")->required();
  synth_gen->add_option("--out", out_dir, "output directory");
  synth_gen->add_option("--seed", seed, "RNG seed");

  std::string in_path;
  int opt_c = 3, opt_h = 8;
  auto* curate = app.add_subcommand("curate", "run the curation pipeline over a detection stream");
  curate->add_option("--in", in_path, "detection stream JSONL")->required();
  curate->add_option("--out", out_dir, "output directory");
  curate->add_option("--C", opt_c, "context length");
  curate->add_option("--H", opt_h, "prediction horizon");

  std::string data_path, eval_path, model_cfg_path, train_cfg_path;
  int steps = 0;
  auto* train_cmd = app.add_subcommand("train", "train the forecaster");
  train_cmd->add_option("--data", data_path, "training windows JSONL")->required();
  train_cmd->add_option("--eval-data", eval_path, "optional eval windows JSONL");
  train_cmd->add_option("--out", out_dir, "output directory");
  train_cmd->add_option("--model", model_cfg_path, "model config JSON");
  train_cmd->add_option("--config", train_cfg_path, "train config JSON");
  train_cmd->add_option("--steps", steps, "override training steps");
  train_cmd->add_option("--seed", seed, "RNG seed");
  train_cmd->add_option("--jobs", jobs, "per-sample fan-out threads");

  std::string ckpt_path, window_id;
  auto* sample_cmd = app.add_subcommand("sample", "sample one future trajectory");
  sample_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  sample_cmd->add_option("--data", data_path, "windows JSONL")->required();
  sample_cmd->add_option("--window", window_id, "clip_id or index")->required();
  sample_cmd->add_option("--seed", seed, "RNG seed");
  sample_cmd->add_option("--out", out_dir, "output directory");

  std::string baseline;
  int samples = 1;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or baseline");
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file");
  eval_cmd->add_option("--data", data_path, "windows JSONL")->required();
  eval_cmd->add_option("--baseline", baseline, "constant_pose or constant_velocity");
  eval_cmd->add_option("--samples", samples, "best-of-N samples per window");
  eval_cmd->add_option("--seed", seed, "RNG seed");
  eval_cmd->add_option("--out", out_dir, "output directory");

  std::string train_data, eval_data, c_list = "3", h_list = "8", grid_out = "grid.csv";
  auto* ablate_cmd = app.add_subcommand("ablate", "context/horizon ablation sweep");
  ablate_cmd->add_option("--train-data", train_data, "training windows JSONL (max C/H)")->required();
  ablate_cmd->add_option("--eval-data", eval_data, "eval windows JSONL (max C/H)")->required();
  ablate_cmd->add_option("--C", c_list, "comma list of context lengths");
  ablate_cmd->add_option("--H", h_list, "comma list of horizons");
  ablate_cmd->add_option("--model", model_cfg_path, "model config JSON");
  ablate_cmd->add_option("--config", train_cfg_path, "train config JSON");
  ablate_cmd->add_option("--seed", seed, "RNG seed");
  ablate_cmd->add_option("--out", grid_out, "grid CSV path");

  int probes = 200;
  double tol = 1e-4;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck_cmd->add_option("--model", model_cfg_path, "model config JSON");
  gradcheck_cmd->add_option("--probes", probes, "sampled parameters");
  gradcheck_cmd->add_option("--seed", seed, "RNG seed");
  gradcheck_cmd->add_option("--tol", tol, "max relative error tolerance");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "human-readable dump of an artifact file");
  inspect_cmd->add_option("--file", inspect_path, "file to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth_gen->parsed()) return cmd_synth_gen(config_path, out_dir, seed);
    if (curate->parsed()) return cmd_curate(in_path, out_dir, opt_c, opt_h);
    if (train_cmd->parsed())
      return cmd_train(data_path, eval_path, out_dir, model_cfg_path, train_cfg_path, steps, seed,
                       jobs);
    if (sample_cmd->parsed()) return cmd_sample(ckpt_path, data_path, window_id, seed, out_dir);
    if (eval_cmd->parsed())
      return cmd_eval(ckpt_path, data_path, baseline, samples, seed, out_dir);
    if (ablate_cmd->parsed())
      return cmd_ablate(train_data, eval_data, c_list, h_list, model_cfg_path, train_cfg_path,
                        seed, grid_out);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(model_cfg_path, probes, seed, tol);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_path);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
