#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <unordered_map>
#include <vector>

#include "trajdiff/ad.hpp"
#include "trajdiff/schedule.hpp"
#include "trajdiff/tokens.hpp"

namespace trajdiff::model {

struct ModelConfig {
  int ctx_dim = 256;   // context vector width D_ctx
  int width = 128;     // DiT width W
  int depth = 2;       // DiT blocks
  int geom_dim = 512;  // scene embedding width
  int n_points = 512;
  int knn_k = 16;
  double pool_tau = 0.2;  // meters, pooling distance bias temperature
  int context_len = 3;    // C
  int horizon = 8;        // H
  int diffusion_steps = 1000;  // T
  int sampling_steps = 50;     // S
  std::array<int, 3> point_widths = {64, 128, 256};
  int time_embed_dim = 128;
  int ctx_heads = 4;

  int n_heads() const { return std::max(1, width / 32); }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Ordered, name-addressed parameter arrays. Order is creation order and is
/// the serialization order.
class ParamStore {
 public:
  Eigen::MatrixXd& add(const std::string& name, Eigen::MatrixXd init);
  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, Eigen::MatrixXd>>& items() const { return items_; }
  std::vector<std::pair<std::string, Eigen::MatrixXd>>& items() { return items_; }
  std::size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Eigen::MatrixXd>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Fresh parameters. AdaLN gate bands and the final output head start at
/// exactly zero; everything else is uniform U(-a, a) with a = 1/sqrt(fan_in)
/// from a per-name seeded stream, so initialization does not depend on
/// creation order.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Fills the zero-initialized arrays (residual gates, output head) with small
/// seeded values. Gradient checking needs this: at a fresh init those zeros
/// cut gradient flow to almost every other parameter, so finite-difference
/// probes would only compare zeros against zeros.
void activate_zero_init(ParamStore& params, const ModelConfig& cfg, std::uint64_t seed,
                        double scale = 0.05);

/// Binds parameters of a store to leaves of one tape (lazily, so unused
/// parameters never enter the graph).
class TapeParams {
 public:
  TapeParams(ad::Tape& tape, const ParamStore& store) : tape_(&tape), store_(&store) {}
  ad::Expr operator()(const std::string& name);

  /// Gradients aligned with store.items(); zeros for parameters that never
  /// entered the graph.
  std::vector<Eigen::MatrixXd> grads() const;

 private:
  ad::Tape* tape_;
  const ParamStore* store_;
  std::unordered_map<std::string, ad::Expr> bound_;
};

/// Sinusoidal position code, one row per position; dim must be even.
Eigen::MatrixXd sincos_embedding(const std::vector<double>& positions, int dim);

/// Indices of the k nearest neighbors (self included, ties by index) over the
/// first three columns; flattened row-major, k entries per point.
std::vector<int> knn_indices(const Eigen::MatrixXd& points, int k);

/// Pools C context tokens (standardized 9D) + boxes into one D_ctx vector:
/// 13D projection, scaled sinusoidal relative-time code, anchor-query
/// attention with a residual from the anchor embedding. Returns 1 x D_ctx.
ad::Expr encode_context(ad::Tape& tape, TapeParams& p, const ModelConfig& cfg,
                        const Eigen::MatrixXd& ctx_tokens, const Eigen::MatrixXd& boxes);

struct SceneTrace {
  Eigen::RowVectorXd pool_weights;  // 1 x N softmax weights
};

/// FiLM-conditioned point-set encoder: per-point MLP, two k-NN max-aggregation
/// stages, object-biased attention pooling, linear head to geom_dim.
/// Returns 1 x geom_dim.
ad::Expr encode_scene(ad::Tape& tape, TapeParams& p, const ModelConfig& cfg,
                      const Eigen::MatrixXd& points, const std::vector<int>& knn, ad::Expr ctx,
                      const Eigen::Vector3d& centroid, SceneTrace* trace = nullptr);

struct DitTrace {
  std::vector<Eigen::MatrixXd> block_in;
  std::vector<Eigen::MatrixXd> block_out;
};

/// AdaLN-Zero diffusion transformer over [C context | H noised future] tokens.
/// Full bidirectional attention; returns the H future rows of the v head.
ad::Expr dit_forward(ad::Tape& tape, TapeParams& p, const ModelConfig& cfg,
                     const Eigen::MatrixXd& y_t, int t, const Eigen::MatrixXd& ctx_tokens,
                     ad::Expr z_geom, DitTrace* trace = nullptr);

/// Conditioning values for one window (computed once per window).
struct Conditioning {
  Eigen::MatrixXd context_tokens;  // C x 9, standardized
  Eigen::MatrixXd boxes;           // C x 4
  Eigen::RowVectorXd ctx;          // 1 x D_ctx
  Eigen::RowVectorXd z_geom;       // 1 x geom_dim
};

Conditioning encode_conditioning(const tokens::TrajectoryWindow& w, const ParamStore& params,
                                 const ModelConfig& cfg, const tokens::TokenStats& stats);

/// Value-level v prediction (fresh tape inside, no gradients kept).
Eigen::MatrixXd forward_v(const ParamStore& params, const ModelConfig& cfg,
                          const Conditioning& cond, const Eigen::MatrixXd& y_t, int t);

/// Full sampling path: tokenize + standardize context, encode conditioning,
/// DDIM-sample standardized future tokens, decode back to poses in the anchor
/// camera frame. Deterministic given the seed.
std::vector<se3::Pose> predict_trajectory(const tokens::TrajectoryWindow& w,
                                          const ParamStore& params, const ModelConfig& cfg,
                                          const tokens::TokenStats& stats,
                                          const diffusion::Schedule& sched, std::uint64_t seed);

/// Sampling with precomputed conditioning (for drawing many futures from one
/// context without re-encoding it).
std::vector<se3::Pose> predict_with_conditioning(const Conditioning& cond,
                                                 const ParamStore& params,
                                                 const ModelConfig& cfg,
                                                 const tokens::TokenStats& stats,
                                                 const diffusion::Schedule& sched,
                                                 std::uint64_t seed, const std::string& tag = "");

using GraphBuilder = std::function<ad::Expr(ad::Tape&, TapeParams&)>;

/// Central-finite-difference check (h = 1e-5) of the analytic gradient over
/// `probes` randomly sampled scalar parameters. Returns the max relative error
/// with denominator max(|analytic|, |numeric|, 1e-8).
///
/// min_grad filters the probe set to coordinates with |analytic| at or above
/// the floor. Central differences of an O(1) loss at h = 1e-5 carry ~1e-8 of
/// cancellation noise in gradient units, so coordinates below ~1e-4 compare
/// noise rather than gradients; 1e-3 leaves a wide margin. Out-and-out wrong
/// backward code still shows up above any floor because it corrupts the
/// strong coordinates of the same subgraph.
double gradient_check(ParamStore& params, const GraphBuilder& build, int probes,
                      std::uint64_t seed, double h = 1e-5, double min_grad = 0.0);

}  // namespace trajdiff::model
