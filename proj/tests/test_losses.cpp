#include <doctest.h>

#include <cmath>
#include <numbers>

#include "trajdiff/errors.hpp"
#include "trajdiff/losses.hpp"
#include "trajdiff/rng.hpp"

using namespace trajdiff;
using Mat = Eigen::MatrixXd;
using se3::Pose;
using se3::Vec3;

namespace {

Mat gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  CounterRng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.next_gaussian();
  return m;
}

std::vector<Pose> random_path(int n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Pose> out(static_cast<std::size_t>(n));
  for (auto& p : out) {
    p.rotation = se3::random_rotation(rng);
    p.translation = Vec3(rng.next_gaussian() * 0.2, rng.next_gaussian() * 0.2,
                         1.0 + 0.5 * rng.next_double());
  }
  return out;
}

}  // namespace

TEST_CASE("loss_v values") {
  const auto sched = diffusion::build_schedule(1000, 50);
  const int t = 321;
  const Mat v = gaussian(2, 9, 1);
  const auto hw = diffusion::horizon_weights(2);

  CHECK(losses::loss_v(v, v, t, sched, hw) == doctest::Approx(0.0));

  // uniform error e with H=2 weights [1,3] normalized to mean 1 -> p2 * e^2
  const double e = 0.37;
  const Mat vp = v.array() + e;
  CHECK(losses::loss_v(vp, v, t, sched, hw) ==
        doctest::Approx(sched.p2_weight(t) * e * e).epsilon(1e-12));

  // linear in p2: the ratio between two timesteps is the p2 ratio
  const int t2 = 777;
  CHECK(losses::loss_v(vp, v, t2, sched, hw) / losses::loss_v(vp, v, t, sched, hw) ==
        doctest::Approx(sched.p2_weight(t2) / sched.p2_weight(t)).epsilon(1e-12));
}

TEST_CASE("loss_aux hand values") {
  const auto sched = diffusion::build_schedule(1000, 50);
  const losses::LossWeights w;
  const int t = 250;
  const double ab = sched.alpha_bar(t);
  // identity rotations keep the acos path exact at angle zero
  auto gt = random_path(8, 2);
  for (auto& p : gt) p.rotation.setIdentity();

  CHECK(losses::loss_aux(gt, gt, t, sched, w) == doctest::Approx(0.0));

  // uniform 0.1 m translation offset, exact rotations -> ab * 20 * 0.1
  auto off = gt;
  for (auto& p : off) p.translation += Vec3(0.1, 0, 0);
  CHECK(losses::loss_aux(off, gt, t, sched, w) == doctest::Approx(ab * 2.0).epsilon(1e-9));

  // uniform pi/2 rotation error about z, exact translations -> ab * 2 * pi/2
  auto rot = gt;
  const se3::Mat3 rz = se3::axis_angle(Vec3::UnitZ(), std::numbers::pi / 2);
  for (auto& p : rot) p.rotation = p.rotation * rz;
  CHECK(losses::loss_aux(rot, gt, t, sched, w) ==
        doctest::Approx(ab * std::numbers::pi).epsilon(1e-9));
}

TEST_CASE("velocity and acceleration losses") {
  const auto sched = diffusion::build_schedule(1000, 50);
  const int t = 100;
  const double ab = sched.alpha_bar(t);

  // constant-velocity ground truth
  std::vector<Pose> gt(8);
  for (std::size_t k = 0; k < gt.size(); ++k) gt[k].translation = Vec3(0, 0, 1.0 + 0.05 * k);

  CHECK(losses::loss_vel(gt, gt, t, sched) == doctest::Approx(0.0));
  CHECK(losses::loss_acc(gt, gt, t, sched) == doctest::Approx(0.0));

  // constant offset leaves increments identical
  auto shifted = gt;
  for (auto& p : shifted) p.translation += Vec3(0.3, -0.2, 0.1);
  CHECK(losses::loss_vel(shifted, gt, t, sched) == doctest::Approx(0.0));

  // different constant speed: vel = ab*|delta|^2, acc stays 0
  auto faster = gt;
  const Vec3 delta(0, 0, 0.03);
  for (std::size_t k = 0; k < faster.size(); ++k)
    faster[k].translation = Vec3(0, 0, 1.0) + static_cast<double>(k) * (Vec3(0, 0, 0.05) + delta);
  CHECK(losses::loss_vel(faster, gt, t, sched) ==
        doctest::Approx(ab * delta.squaredNorm()).epsilon(1e-9));
  CHECK(losses::loss_acc(faster, gt, t, sched) == doctest::Approx(0.0).epsilon(1e-12));

  // degenerate horizons are defined as zero
  const auto one = random_path(1, 3);
  const auto two = random_path(2, 4);
  CHECK(losses::loss_vel(one, one, t, sched) == 0.0);
  CHECK(losses::loss_acc(two, two, t, sched) == 0.0);
}

TEST_CASE("depth floor penalty") {
  const losses::LossWeights w;
  std::vector<Pose> pred(8);
  for (auto& p : pred) p.translation = Vec3(0, 0, 1.0);
  CHECK(losses::loss_zmin(pred, w) == doctest::Approx(0.0));

  pred[3].translation.z() = w.z_min - 0.1;
  CHECK(losses::loss_zmin(pred, w) == doctest::Approx(1.25e-4).epsilon(1e-9));

  // slope below the floor is -0.01/H per unit depth (finite difference)
  const double h = 1e-6;
  auto lo = pred, hi = pred;
  lo[3].translation.z() -= h;
  hi[3].translation.z() += h;
  const double slope = (losses::loss_zmin(hi, w) - losses::loss_zmin(lo, w)) / (2 * h);
  CHECK(slope == doctest::Approx(-0.01 / 8).epsilon(1e-4));
}

TEST_CASE("rigid-frame invariance of the SE(3) losses") {
  const auto sched = diffusion::build_schedule(1000, 50);
  const losses::LossWeights w;
  const int t = 432;
  const auto gt = random_path(6, 5);
  const auto pred = random_path(6, 6);

  CounterRng rng(7);
  Pose frame;
  frame.rotation = se3::random_rotation(rng);
  frame.translation = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian());

  auto apply = [&](const std::vector<Pose>& ps) {
    std::vector<Pose> out;
    out.reserve(ps.size());
    for (const Pose& p : ps) out.push_back(se3::compose(frame, p));
    return out;
  };
  const auto gt2 = apply(gt);
  const auto pred2 = apply(pred);

  CHECK(losses::loss_aux(pred2, gt2, t, sched, w) ==
        doctest::Approx(losses::loss_aux(pred, gt, t, sched, w)).epsilon(1e-9));
  CHECK(losses::loss_vel(pred2, gt2, t, sched) ==
        doctest::Approx(losses::loss_vel(pred, gt, t, sched)).epsilon(1e-9));
  CHECK(losses::loss_acc(pred2, gt2, t, sched) ==
        doctest::Approx(losses::loss_acc(pred, gt, t, sched)).epsilon(1e-9));
}

TEST_CASE("alpha-bar weighting decreases with t") {
  const auto sched = diffusion::build_schedule(1000, 50);
  const losses::LossWeights w;
  const auto gt = random_path(5, 8);
  auto off = gt;
  for (auto& p : off) p.translation += Vec3(0.05, 0, 0);
  CHECK(losses::loss_aux(off, gt, 900, sched, w) <= losses::loss_aux(off, gt, 50, sched, w));
}

TEST_CASE("total_loss wiring") {
  const auto sched = diffusion::build_schedule(1000, 50);
  losses::LossWeights w;
  const int h = 8;
  const auto gt = random_path(h, 9);

  tokens::StatsAccumulator acc;
  acc.add(tokens::tokenize(gt));
  const auto stats = acc.freeze();
  const Mat y0 = tokens::standardize(tokens::tokenize(gt), stats);
  const Mat eps = gaussian(h, 9, 10);

  SUBCASE("oracle v at a low-noise step gives a near-zero total") {
    const int t = 2;
    const Mat y_t = diffusion::q_sample(y0, t, eps, sched);
    const Mat v_tgt = diffusion::v_target(y0, eps, t, sched);
    const auto b = losses::total_loss(v_tgt, y_t, v_tgt, t, sched, stats, gt, w);
    CHECK(b.v == doctest::Approx(0.0));
    CHECK(b.total == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(b.aux < 1e-6);
  }

  SUBCASE("zero prediction is finite and positive") {
    const int t = 500;
    const Mat y_t = diffusion::q_sample(y0, t, eps, sched);
    const Mat v_tgt = diffusion::v_target(y0, eps, t, sched);
    const auto b = losses::total_loss(Mat::Zero(h, 9), y_t, v_tgt, t, sched, stats, gt, w);
    CHECK(std::isfinite(b.total));
    CHECK(b.total > 0.0);
  }

  SUBCASE("scaling lambda_vel scales only the vel contribution") {
    const int t = 500;
    const Mat y_t = diffusion::q_sample(y0, t, eps, sched);
    const Mat v_tgt = diffusion::v_target(y0, eps, t, sched);
    const Mat v_pred = 0.5 * v_tgt;
    const auto b1 = losses::total_loss(v_pred, y_t, v_tgt, t, sched, stats, gt, w);
    losses::LossWeights w2 = w;
    w2.lambda_vel *= 2.0;
    const auto b2 = losses::total_loss(v_pred, y_t, v_tgt, t, sched, stats, gt, w2);
    CHECK(b2.v == doctest::Approx(b1.v));
    CHECK(b2.aux == doctest::Approx(b1.aux));
    CHECK(b2.acc == doctest::Approx(b1.acc));
    CHECK(b2.zmin == doctest::Approx(b1.zmin));
    CHECK(b2.vel == doctest::Approx(b1.vel));  // term itself unchanged
    CHECK(b2.total - b1.total == doctest::Approx(w.lambda_vel * b1.vel).epsilon(1e-9));
  }
}

TEST_CASE("total_loss gradient against finite differences in v_pred") {
  const auto sched = diffusion::build_schedule(1000, 50);
  const losses::LossWeights w;
  const int h = 5, t = 350;
  const auto gt = random_path(h, 11);
  tokens::StatsAccumulator acc;
  acc.add(tokens::tokenize(gt));
  const auto stats = acc.freeze();
  const Mat y0 = tokens::standardize(tokens::tokenize(gt), stats);
  const Mat eps = gaussian(h, 9, 12);
  const Mat y_t = diffusion::q_sample(y0, t, eps, sched);
  const Mat v_tgt = diffusion::v_target(y0, eps, t, sched);
  const Mat v_pred = gaussian(h, 9, 13);
  const auto hw = diffusion::horizon_weights(h);

  ad::Tape tape;
  ad::Expr v = tape.leaf(v_pred);
  const auto exprs = losses::total_loss_ad(tape, v, y_t, v_tgt, t, sched, stats, gt, w, hw);
  tape.backward(exprs.total);
  const Mat analytic = tape.grad(v);

  const double fd_h = 1e-6;
  double max_rel = 0.0;
  Mat probe = v_pred;
  for (Eigen::Index i = 0; i < probe.size(); ++i) {
    const auto eval = [&](double d) {
      probe.data()[i] = v_pred.data()[i] + d;
      ad::Tape t2;
      const auto e2 =
          losses::total_loss_ad(t2, t2.leaf(probe), y_t, v_tgt, t, sched, stats, gt, w, hw);
      probe.data()[i] = v_pred.data()[i];
      return t2.value(e2.total)(0, 0);
    };
    const double numeric = (eval(fd_h) - eval(-fd_h)) / (2 * fd_h);
    const double a = analytic.data()[i];
    max_rel = std::max(max_rel,
                       std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
  }
  CHECK(max_rel < 1e-5);
}
