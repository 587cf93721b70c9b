#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "trajdiff/se3.hpp"

namespace trajdiff::tokens {

/// Depth-normalized 9D pose token, layout [u, v, s, a1, a2, a3, b1, b2, b3]
/// with u = x/z, v = y/z, s = ln z and a/b the 6D rotation code.
using Token9 = Eigen::Matrix<double, 9, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

inline constexpr double kDepthFloor = 1e-4;  // z_min_data, meters
inline constexpr double kSigmaFloor = 1e-6;

Token9 depth_normalize(const se3::Pose& p);
se3::Pose depth_denormalize(const Token9& y);

/// Rows of depth_normalize over a pose sequence (n x 9).
Eigen::MatrixXd tokenize(std::span<const se3::Pose> poses);
std::vector<se3::Pose> detokenize(const Eigen::MatrixXd& toks);

/// Channel-wise standardization statistics, immutable once frozen.
struct TokenStats {
  Vec9 mu = Vec9::Zero();
  Vec9 sigma = Vec9::Ones();
  bool frozen = false;
};

/// Streaming accumulator for warmup-batch statistics. Population std,
/// sigma floored at kSigmaFloor.
class StatsAccumulator {
 public:
  void add(const Eigen::MatrixXd& batch_tokens);  // n x 9
  TokenStats freeze();
  std::size_t batches_seen() const { return batches_; }

 private:
  Vec9 sum_ = Vec9::Zero();
  Vec9 sumsq_ = Vec9::Zero();
  std::size_t count_ = 0;
  std::size_t batches_ = 0;
  bool frozen_ = false;
};

TokenStats fit_standardization(std::span<const Eigen::MatrixXd> warmup_batches);

Eigen::MatrixXd standardize(const Eigen::MatrixXd& toks, const TokenStats& stats);
Eigen::MatrixXd destandardize(const Eigen::MatrixXd& toks, const TokenStats& stats);

/// One training/eval sample. All poses in anchor-camera coordinates; the
/// anchor is the last observed frame (index C, 1-based).
struct TrajectoryWindow {
  std::string clip_id;
  double fps = 6.0;
  int context_len = 3;  // C
  int horizon = 8;      // H
  Eigen::Vector4d intrinsics = Eigen::Vector4d(500.0, 500.0, 320.0, 240.0);  // fx fy cx cy
  std::vector<se3::Pose> context_poses;  // C
  Eigen::MatrixXd context_boxes;         // C x 4, [cx cy w h] normalized
  std::vector<se3::Pose> future_poses;   // H
  Eigen::MatrixXd anchor_points;         // N x 6: camera xyz, object-frame xyz

  const se3::Pose& anchor_pose() const { return context_poses.back(); }
};

/// Canonicalizes a raw C+H sequence into a window: every pose is re-expressed
/// in the anchor camera (frame C, the last observed), removing ego-motion.
/// Throws NonPositiveDepth if any re-expressed pose has z below kDepthFloor.
TrajectoryWindow build_window(std::string clip_id, double fps, int context_len, int horizon,
                              const Eigen::Vector4d& intrinsics,
                              std::span<const se3::Pose> poses_in_cam,
                              std::span<const se3::Pose> cam_to_world,
                              const Eigen::MatrixXd& boxes, Eigen::MatrixXd anchor_points);

}  // namespace trajdiff::tokens
