#include "trajdiff/tokens.hpp"

#include <cmath>
#include <utility>

#include "trajdiff/errors.hpp"

namespace trajdiff::tokens {

Token9 depth_normalize(const se3::Pose& p) {
  const double z = p.translation.z();
  if (z < kDepthFloor) throw NonPositiveDepth(z);
  Token9 y;
  y(0) = p.translation.x() / z;
  y(1) = p.translation.y() / z;
  y(2) = std::log(z);
  const se3::Rot6d r6 = se3::rot6d_encode(p.rotation);
  y.segment<3>(3) = r6.a;
  y.segment<3>(6) = r6.b;
  return y;
}

se3::Pose depth_denormalize(const Token9& y) {
  se3::Pose p;
  const double z = std::exp(y(2));
  p.translation = se3::Vec3(y(0) * z, y(1) * z, z);
  p.rotation = se3::rot6d_decode(se3::Rot6d{y.segment<3>(3), y.segment<3>(6)});
  return p;
}

Eigen::MatrixXd tokenize(std::span<const se3::Pose> poses) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(poses.size()), 9);
  for (std::size_t i = 0; i < poses.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = depth_normalize(poses[i]).transpose();
  return out;
}

std::vector<se3::Pose> detokenize(const Eigen::MatrixXd& toks) {
  if (toks.cols() != 9) throw ShapeMismatch("token matrix must have 9 columns");
  std::vector<se3::Pose> out(static_cast<std::size_t>(toks.rows()));
  for (Eigen::Index i = 0; i < toks.rows(); ++i) out[static_cast<std::size_t>(i)] = depth_denormalize(toks.row(i).transpose());
  return out;
}

void StatsAccumulator::add(const Eigen::MatrixXd& batch_tokens) {
  if (frozen_) throw AlreadyFrozen();
  if (batch_tokens.cols() != 9) throw ShapeMismatch("token batch must have 9 columns");
  sum_ += batch_tokens.colwise().sum().transpose();
  sumsq_ += batch_tokens.array().square().colwise().sum().matrix().transpose();
  count_ += static_cast<std::size_t>(batch_tokens.rows());
  ++batches_;
}

TokenStats StatsAccumulator::freeze() {
  if (frozen_) throw AlreadyFrozen();
  if (count_ == 0) throw InvalidCounts("cannot freeze statistics over zero tokens");
  frozen_ = true;
  TokenStats stats;
  const double n = static_cast<double>(count_);
  stats.mu = sum_ / n;
  const Vec9 var = (sumsq_ / n - stats.mu.cwiseProduct(stats.mu)).cwiseMax(0.0);
  stats.sigma = var.cwiseSqrt().cwiseMax(kSigmaFloor);
  stats.frozen = true;
  return stats;
}

TokenStats fit_standardization(std::span<const Eigen::MatrixXd> warmup_batches) {
  StatsAccumulator acc;
  for (const auto& b : warmup_batches) acc.add(b);
  return acc.freeze();
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& toks, const TokenStats& stats) {
  if (!stats.frozen) throw UnfrozenStats();
  if (toks.cols() != 9) throw ShapeMismatch("token matrix must have 9 columns");
  return (toks.rowwise() - stats.mu.transpose()).array().rowwise() /
         stats.sigma.transpose().array();
}

Eigen::MatrixXd destandardize(const Eigen::MatrixXd& toks, const TokenStats& stats) {
  if (!stats.frozen) throw UnfrozenStats();
  if (toks.cols() != 9) throw ShapeMismatch("token matrix must have 9 columns");
  return (toks.array().rowwise() * stats.sigma.transpose().array()).matrix().rowwise() +
         stats.mu.transpose();
}

TrajectoryWindow build_window(std::string clip_id, double fps, int context_len, int horizon,
                              const Eigen::Vector4d& intrinsics,
                              std::span<const se3::Pose> poses_in_cam,
                              std::span<const se3::Pose> cam_to_world,
                              const Eigen::MatrixXd& boxes, Eigen::MatrixXd anchor_points) {
  const std::size_t n = static_cast<std::size_t>(context_len + horizon);
  if (poses_in_cam.size() != n || cam_to_world.size() != n)
    throw ShapeMismatch("build_window needs C+H poses and extrinsics");
  if (boxes.rows() != context_len || boxes.cols() != 4)
    throw ShapeMismatch("build_window needs C x 4 boxes");
  if (anchor_points.rows() < 1 || anchor_points.cols() != 6)
    throw ShapeMismatch("anchor point cloud must be N x 6 with N >= 1");

  const se3::Pose& anchor_cam = cam_to_world[static_cast<std::size_t>(context_len - 1)];
  TrajectoryWindow w;
  w.clip_id = std::move(clip_id);
  w.fps = fps;
  w.context_len = context_len;
  w.horizon = horizon;
  w.intrinsics = intrinsics;
  w.context_boxes = boxes;
  w.anchor_points = std::move(anchor_points);
  for (std::size_t i = 0; i < n; ++i) {
    se3::Pose p = se3::reexpress_in_anchor(poses_in_cam[i], cam_to_world[i], anchor_cam);
    if (p.translation.z() < kDepthFloor) throw NonPositiveDepth(p.translation.z());
    if (static_cast<int>(i) < w.context_len)
      w.context_poses.push_back(std::move(p));
    else
      w.future_poses.push_back(std::move(p));
  }
  return w;
}

}  // namespace trajdiff::tokens
