#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajdiff/losses.hpp"
#include "trajdiff/model.hpp"
#include "trajdiff/tokens.hpp"

namespace trajdiff::train {

struct TrainConfig {
  int batch_size = 16;
  int steps = 2000;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  int k_warmup = 50;   // warmup batches for token statistics
  int eval_every = 0;  // 0 disables in-run eval
  int jobs = 1;        // per-sample fan-out; gradient reduction order is fixed per job count
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainResult {
  model::ParamStore params;
  tokens::TokenStats stats;
  std::string loss_curve_csv;  // step,loss,loss_v,loss_aux,loss_vel,loss_acc,loss_zmin
  std::string eval_curve_csv;  // step,ade (empty unless eval ran)
  int trained_steps = 0;
};

/// Scales the gradient set so the global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_global_norm(std::vector<Eigen::MatrixXd>& grads, double max_norm);

/// Deterministic training: seeded shuffle, uniform timestep draws, Gaussian
/// noise, total loss, global-norm clipping, Adam. Token statistics are fitted
/// on the first k_warmup batches (future tokens) and frozen before step 0.
/// Aborts with NumericError on a non-finite loss.
TrainResult train(std::span<const tokens::TrajectoryWindow> dataset,
                  const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  const losses::LossWeights& weights = {},
                  std::span<const tokens::TrajectoryWindow> eval_windows = {});

void save_model_checkpoint(const std::string& path, const model::ParamStore& params,
                           const model::ModelConfig& mcfg, const tokens::TokenStats& stats,
                           std::uint64_t seed, int trained_steps);

struct LoadedModel {
  model::ParamStore params;
  model::ModelConfig config;
  tokens::TokenStats stats;
  std::uint64_t seed = 0;
  int trained_steps = 0;
};

LoadedModel load_model_checkpoint(const std::string& path);

/// Keeps the anchor fixed: the last `context_len` context frames and the first
/// `horizon` future frames.
tokens::TrajectoryWindow trim_window(const tokens::TrajectoryWindow& w, int context_len,
                                     int horizon);

/// Trains one model per (C, H) cell on trimmed copies of the training set and
/// evaluates against the max-C/max-H evaluation set, cropping predictions and
/// ground truth per evaluation horizon. Returns the grid CSV; infeasible cells
/// (eval horizon beyond the train horizon) print "-".
std::string ablation_sweep(std::span<const tokens::TrajectoryWindow> train_windows,
                           std::span<const tokens::TrajectoryWindow> eval_windows,
                           const model::ModelConfig& base_mcfg, const TrainConfig& base_tcfg,
                           std::span<const int> context_lens, std::span<const int> horizons);

}  // namespace trajdiff::train
