#include "trajdiff/losses.hpp"

#include <cmath>

#include "trajdiff/errors.hpp"

namespace trajdiff::losses {

using ad::Expr;
using Mat = Eigen::MatrixXd;

namespace {

Expr scalar_const(ad::Tape& t, double v) { return t.constant(Mat::Constant(1, 1, v)); }

/// acos((tr(R_gtᵀ R̂) − 1) / 2) given R̂ᵀ on tape and a constant ground truth.
Expr geodesic_vs_const(ad::Tape& t, Expr rot_t, const se3::Mat3& gt) {
  Expr tr = ad::sum(ad::cmul(rot_t, t.constant(gt.transpose())));
  return ad::acos_clamped(ad::scale(ad::sub(tr, scalar_const(t, 1.0)), 0.5));
}

/// Same, for a plain (non-transposed) 3x3 rotation expression.
Expr geodesic_plain_vs_const(ad::Tape& t, Expr rot, const se3::Mat3& gt) {
  Expr tr = ad::sum(ad::cmul(rot, t.constant(gt)));
  return ad::acos_clamped(ad::scale(ad::sub(tr, scalar_const(t, 1.0)), 0.5));
}

Expr row_norm(ad::Tape&, Expr row) { return ad::sqrt_elem(ad::sum(ad::square(row))); }

void check_lengths(std::size_t pred, std::size_t gt, const char* what) {
  if (pred != gt) throw LengthMismatch(std::string(what) + ": pred/gt horizon lengths differ");
}

}  // namespace

DecodedPoses decode_tokens_ad(ad::Tape& tape, Expr phys_tokens) {
  if (phys_tokens.cols() != 9) throw ShapeMismatch("decode_tokens_ad: tokens must be H x 9");
  DecodedPoses out;
  const Eigen::Index h = phys_tokens.rows();
  for (Eigen::Index k = 0; k < h; ++k) {
    Expr row = ad::block(phys_tokens, k, 0, 1, 9);
    Expr u = ad::block(row, 0, 0, 1, 1);
    Expr v = ad::block(row, 0, 1, 1, 1);
    Expr s = ad::block(row, 0, 2, 1, 1);
    Expr z = ad::exp_elem(s);
    Expr x = ad::cmul(u, z);
    Expr y = ad::cmul(v, z);
    out.trans.push_back(ad::hstack(ad::hstack(x, y), z));
    out.depth.push_back(z);

    Expr a = ad::block(row, 0, 3, 1, 3);
    Expr b = ad::block(row, 0, 6, 1, 3);
    Expr c1 = ad::normalize_rows(a);
    Expr proj = ad::matmul(c1, ad::transpose(b));  // 1x1
    Expr b_perp = ad::sub(b, ad::mul_scalar(c1, proj));
    Expr c2 = ad::normalize_rows(b_perp);
    Expr c3 = ad::cross3(c1, c2);
    out.rot_t.push_back(ad::vstack(ad::vstack(c1, c2), c3));
  }
  return out;
}

DecodedPoses poses_as_constants(ad::Tape& tape, std::span<const se3::Pose> poses) {
  DecodedPoses out;
  for (const se3::Pose& p : poses) {
    out.trans.push_back(tape.constant(p.translation.transpose()));
    out.rot_t.push_back(tape.constant(p.rotation.transpose()));
    out.depth.push_back(scalar_const(tape, p.translation.z()));
  }
  return out;
}

Expr loss_v_ad(ad::Tape& tape, Expr v_pred, const Mat& v_tgt, int t,
               const diffusion::Schedule& sched, const Eigen::VectorXd& horizon_w) {
  if (v_pred.rows() != v_tgt.rows() || v_pred.cols() != v_tgt.cols())
    throw ShapeMismatch("loss_v: prediction/target shapes differ");
  if (horizon_w.size() != v_pred.rows()) throw ShapeMismatch("loss_v: horizon weight length");
  // per-step weights normalized to mean 1, replicated across the 9 channels
  const Eigen::VectorXd wn = horizon_w / horizon_w.mean();
  Mat wmat = wn.replicate(1, v_tgt.cols());
  Expr diff = ad::sub(v_pred, tape.constant(v_tgt));
  Expr weighted = ad::cmul(ad::square(diff), tape.constant(wmat));
  return ad::scale(ad::mean(weighted), sched.p2_weight(t));
}

Expr loss_aux_ad(ad::Tape& tape, const DecodedPoses& pred, std::span<const se3::Pose> gt, int t,
                 const diffusion::Schedule& sched, const LossWeights& w) {
  check_lengths(pred.trans.size(), gt.size(), "loss_aux");
  const double inv_h = 1.0 / static_cast<double>(gt.size());
  Expr rot_sum = scalar_const(tape, 0.0);
  Expr trans_sum = scalar_const(tape, 0.0);
  for (std::size_t k = 0; k < gt.size(); ++k) {
    rot_sum = ad::add(rot_sum, geodesic_vs_const(tape, pred.rot_t[k], gt[k].rotation));
    Expr d = ad::sub(pred.trans[k], tape.constant(gt[k].translation.transpose()));
    trans_sum = ad::add(trans_sum, row_norm(tape, d));
  }
  Expr combined = ad::add(ad::scale(rot_sum, w.lambda_rot * inv_h),
                          ad::scale(trans_sum, w.lambda_trans * inv_h));
  return ad::scale(combined, sched.alpha_bar(t));
}

namespace {

struct IncrementsAd {
  std::vector<Expr> dt;  // 1x3
  std::vector<Expr> dr;  // 3x3, plain orientation
};

IncrementsAd increments_ad(const DecodedPoses& p) {
  IncrementsAd out;
  for (std::size_t k = 0; k + 1 < p.trans.size(); ++k) {
    out.dt.push_back(ad::sub(p.trans[k + 1], p.trans[k]));
    // ΔR̂ = R̂ₖᵀ R̂ₖ₊₁ = rot_t[k] * rot_t[k+1]ᵀ
    out.dr.push_back(ad::matmul(p.rot_t[k], ad::transpose(p.rot_t[k + 1])));
  }
  return out;
}

Expr increment_mismatch(ad::Tape& tape, const std::vector<Expr>& dt, const std::vector<Expr>& dr,
                        const std::vector<se3::Increment>& gt) {
  Expr acc = scalar_const(tape, 0.0);
  for (std::size_t k = 0; k < gt.size(); ++k) {
    Expr trans_term = ad::sum(ad::square(ad::sub(dt[k], tape.constant(gt[k].dt.transpose()))));
    Expr rot_term = ad::square(geodesic_plain_vs_const(tape, dr[k], gt[k].dr));
    acc = ad::add(acc, ad::add(trans_term, rot_term));
  }
  return ad::scale(acc, 1.0 / static_cast<double>(gt.size()));
}

}  // namespace

Expr loss_vel_ad(ad::Tape& tape, const DecodedPoses& pred, std::span<const se3::Pose> gt, int t,
                 const diffusion::Schedule& sched) {
  check_lengths(pred.trans.size(), gt.size(), "loss_vel");
  if (gt.size() < 2) return scalar_const(tape, 0.0);
  const IncrementsAd inc = increments_ad(pred);
  const std::vector<se3::Increment> gt_inc = se3::increments(gt);
  return ad::scale(increment_mismatch(tape, inc.dt, inc.dr, gt_inc), sched.alpha_bar(t));
}

Expr loss_acc_ad(ad::Tape& tape, const DecodedPoses& pred, std::span<const se3::Pose> gt, int t,
                 const diffusion::Schedule& sched) {
  check_lengths(pred.trans.size(), gt.size(), "loss_acc");
  if (gt.size() < 3) return scalar_const(tape, 0.0);
  const IncrementsAd inc = increments_ad(pred);
  std::vector<Expr> d2t, d2r;
  for (std::size_t k = 0; k + 1 < inc.dt.size(); ++k) {
    d2t.push_back(ad::sub(inc.dt[k + 1], inc.dt[k]));
    d2r.push_back(ad::matmul(ad::transpose(inc.dr[k]), inc.dr[k + 1]));
  }
  const std::vector<se3::Increment> gt_inc = se3::increments(gt);
  const std::vector<se3::Increment> gt_d2 = se3::second_difference(gt_inc);
  return ad::scale(increment_mismatch(tape, d2t, d2r, gt_d2), sched.alpha_bar(t));
}

Expr loss_zmin_ad(ad::Tape& tape, const DecodedPoses& pred, const LossWeights& w) {
  Expr acc = scalar_const(tape, 0.0);
  for (const Expr& z : pred.depth)
    acc = ad::add(acc, ad::relu(ad::sub(scalar_const(tape, w.z_min), z)));
  return ad::scale(acc, w.floor_coeff / static_cast<double>(pred.depth.size()));
}

LossExprs total_loss_ad(ad::Tape& tape, Expr v_pred, const Mat& y_t, const Mat& v_tgt, int t,
                        const diffusion::Schedule& sched, const tokens::TokenStats& stats,
                        std::span<const se3::Pose> gt_future, const LossWeights& w,
                        const Eigen::VectorXd& horizon_w) {
  if (!stats.frozen) throw UnfrozenStats();
  const double ab = sched.alpha_bar(t);
  // ŷ₀ = √ᾱ y_t − √(1-ᾱ) v, in standardized space
  Expr y0_hat = ad::sub(tape.constant(std::sqrt(ab) * y_t), ad::scale(v_pred, std::sqrt(1.0 - ab)));
  Expr phys = ad::add_rowvec(ad::mul_rowvec(y0_hat, tape.constant(stats.sigma.transpose())),
                             tape.constant(stats.mu.transpose()));
  const DecodedPoses decoded = decode_tokens_ad(tape, phys);

  LossExprs e;
  e.v = loss_v_ad(tape, v_pred, v_tgt, t, sched, horizon_w);
  e.aux = loss_aux_ad(tape, decoded, gt_future, t, sched, w);
  e.vel = loss_vel_ad(tape, decoded, gt_future, t, sched);
  e.acc = loss_acc_ad(tape, decoded, gt_future, t, sched);
  e.zmin = loss_zmin_ad(tape, decoded, w);
  e.total = ad::add(ad::add(ad::add(e.v, e.aux), e.zmin),
                    ad::add(ad::scale(e.vel, w.lambda_vel), ad::scale(e.acc, w.lambda_acc)));
  return e;
}

double loss_v(const Mat& v_pred, const Mat& v_tgt, int t, const diffusion::Schedule& sched,
              const Eigen::VectorXd& horizon_w) {
  ad::Tape tape;
  return tape.value(loss_v_ad(tape, tape.constant(v_pred), v_tgt, t, sched, horizon_w))(0, 0);
}

double loss_aux(std::span<const se3::Pose> pred, std::span<const se3::Pose> gt, int t,
                const diffusion::Schedule& sched, const LossWeights& w) {
  ad::Tape tape;
  return tape.value(loss_aux_ad(tape, poses_as_constants(tape, pred), gt, t, sched, w))(0, 0);
}

double loss_vel(std::span<const se3::Pose> pred, std::span<const se3::Pose> gt, int t,
                const diffusion::Schedule& sched) {
  ad::Tape tape;
  return tape.value(loss_vel_ad(tape, poses_as_constants(tape, pred), gt, t, sched))(0, 0);
}

double loss_acc(std::span<const se3::Pose> pred, std::span<const se3::Pose> gt, int t,
                const diffusion::Schedule& sched) {
  ad::Tape tape;
  return tape.value(loss_acc_ad(tape, poses_as_constants(tape, pred), gt, t, sched))(0, 0);
}

double loss_zmin(std::span<const se3::Pose> pred, const LossWeights& w) {
  ad::Tape tape;
  return tape.value(loss_zmin_ad(tape, poses_as_constants(tape, pred), w))(0, 0);
}

Breakdown total_loss(const Mat& v_pred, const Mat& y_t, const Mat& v_tgt, int t,
                     const diffusion::Schedule& sched, const tokens::TokenStats& stats,
                     std::span<const se3::Pose> gt_future, const LossWeights& w) {
  ad::Tape tape;
  const LossExprs e = total_loss_ad(tape, tape.constant(v_pred), y_t, v_tgt, t, sched, stats,
                                    gt_future, w, diffusion::horizon_weights(static_cast<int>(gt_future.size())));
  Breakdown b;
  b.total = tape.value(e.total)(0, 0);
  b.v = tape.value(e.v)(0, 0);
  b.aux = tape.value(e.aux)(0, 0);
  b.vel = tape.value(e.vel)(0, 0);
  b.acc = tape.value(e.acc)(0, 0);
  b.zmin = tape.value(e.zmin)(0, 0);
  return b;
}

}  // namespace trajdiff::losses
