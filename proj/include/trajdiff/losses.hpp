#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "trajdiff/ad.hpp"
#include "trajdiff/schedule.hpp"
#include "trajdiff/se3.hpp"
#include "trajdiff/tokens.hpp"

namespace trajdiff::losses {

struct LossWeights {
  double lambda_rot = 2.0;
  double lambda_trans = 20.0;
  double lambda_vel = 0.5;
  double lambda_acc = 0.1;
  double z_min = 0.05;  // meters
  double floor_coeff = 0.01;
};

struct Breakdown {
  double total = 0.0;
  double v = 0.0;
  double aux = 0.0;
  double vel = 0.0;
  double acc = 0.0;
  double zmin = 0.0;
};

/// Differentiable decode of physical 9D tokens into pose pieces. Rotations are
/// carried transposed (rows = columns of R̂). The Gram-Schmidt normalizations
/// are floored at 1e-8 so the graph stays total on corrupted tokens.
struct DecodedPoses {
  std::vector<ad::Expr> trans;  // 1x3 each
  std::vector<ad::Expr> rot_t;  // 3x3 each, R̂ᵀ
  std::vector<ad::Expr> depth;  // 1x1 each, ẑ
};

DecodedPoses decode_tokens_ad(ad::Tape& tape, ad::Expr phys_tokens);

/// Constant DecodedPoses from an already-decoded pose sequence.
DecodedPoses poses_as_constants(ad::Tape& tape, std::span<const se3::Pose> poses);

// Graph builders. v_tgt / ground truth enter as constants.
ad::Expr loss_v_ad(ad::Tape& tape, ad::Expr v_pred, const Eigen::MatrixXd& v_tgt, int t,
                   const diffusion::Schedule& sched, const Eigen::VectorXd& horizon_w);
ad::Expr loss_aux_ad(ad::Tape& tape, const DecodedPoses& pred, std::span<const se3::Pose> gt,
                     int t, const diffusion::Schedule& sched, const LossWeights& w);
ad::Expr loss_vel_ad(ad::Tape& tape, const DecodedPoses& pred, std::span<const se3::Pose> gt,
                     int t, const diffusion::Schedule& sched);
ad::Expr loss_acc_ad(ad::Tape& tape, const DecodedPoses& pred, std::span<const se3::Pose> gt,
                     int t, const diffusion::Schedule& sched);
ad::Expr loss_zmin_ad(ad::Tape& tape, const DecodedPoses& pred, const LossWeights& w);

struct LossExprs {
  ad::Expr total, v, aux, vel, acc, zmin;
};

/// Full objective from a v prediction: ŷ₀ via the closed-form reconstruction,
/// destandardize, depth-decode, then L_v + L_aux + L_zmin + λ_vel L_vel +
/// λ_acc L_acc.
LossExprs total_loss_ad(ad::Tape& tape, ad::Expr v_pred, const Eigen::MatrixXd& y_t,
                        const Eigen::MatrixXd& v_tgt, int t, const diffusion::Schedule& sched,
                        const tokens::TokenStats& stats, std::span<const se3::Pose> gt_future,
                        const LossWeights& w, const Eigen::VectorXd& horizon_w);

// Value-level entry points (same graph code run on constants).
double loss_v(const Eigen::MatrixXd& v_pred, const Eigen::MatrixXd& v_tgt, int t,
              const diffusion::Schedule& sched, const Eigen::VectorXd& horizon_w);
double loss_aux(std::span<const se3::Pose> pred, std::span<const se3::Pose> gt, int t,
                const diffusion::Schedule& sched, const LossWeights& w);
double loss_vel(std::span<const se3::Pose> pred, std::span<const se3::Pose> gt, int t,
                const diffusion::Schedule& sched);
double loss_acc(std::span<const se3::Pose> pred, std::span<const se3::Pose> gt, int t,
                const diffusion::Schedule& sched);
double loss_zmin(std::span<const se3::Pose> pred, const LossWeights& w);
Breakdown total_loss(const Eigen::MatrixXd& v_pred, const Eigen::MatrixXd& y_t,
                     const Eigen::MatrixXd& v_tgt, int t, const diffusion::Schedule& sched,
                     const tokens::TokenStats& stats, std::span<const se3::Pose> gt_future,
                     const LossWeights& w);

}  // namespace trajdiff::losses
