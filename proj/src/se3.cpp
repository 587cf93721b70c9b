#include "trajdiff/se3.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "trajdiff/errors.hpp"

namespace trajdiff::se3 {

bool is_rotation(const Mat3& m, double tol) {
  const Mat3 gram = m.transpose() * m;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(m.determinant() - 1.0) <= tol;
}

Rot6d rot6d_encode(const Mat3& r) { return Rot6d{r.col(0), r.col(1)}; }

Mat3 rot6d_decode(const Rot6d& r, double eps) {
  const double na = r.a.norm();
  if (na <= eps) throw DegenerateRotation();
  const Vec3 c1 = r.a / na;
  const Vec3 b_perp = r.b - c1.dot(r.b) * c1;
  const double nb = b_perp.norm();
  if (nb <= eps) throw DegenerateRotation();
  const Vec3 c2 = b_perp / nb;
  Mat3 out;
  out.col(0) = c1;
  out.col(1) = c2;
  out.col(2) = c1.cross(c2);
  return out;
}

double geodesic_angle(const Mat3& r1, const Mat3& r2) {
  const double tr = (r1.transpose() * r2).trace();
  return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

double rotation_deviation(const Mat3& r1, const Mat3& r2) {
  const double f = (r1 - r2).norm() / (2.0 * std::sqrt(2.0));
  return 2.0 * std::asin(std::clamp(f, 0.0, 1.0));
}

Increment pose_increment(const Pose& a, const Pose& b) {
  return Increment{b.translation - a.translation, a.rotation.transpose() * b.rotation};
}

std::vector<Increment> increments(std::span<const Pose> poses) {
  if (poses.size() < 2) throw SequenceTooShort("increments need at least 2 poses");
  std::vector<Increment> out;
  out.reserve(poses.size() - 1);
  for (std::size_t i = 0; i + 1 < poses.size(); ++i) out.push_back(pose_increment(poses[i], poses[i + 1]));
  return out;
}

std::vector<Increment> second_difference(std::span<const Increment> incs) {
  if (incs.size() < 2) throw SequenceTooShort("second differences need at least 3 poses");
  std::vector<Increment> out;
  out.reserve(incs.size() - 1);
  for (std::size_t i = 0; i + 1 < incs.size(); ++i) {
    out.push_back(Increment{incs[i + 1].dt - incs[i].dt, incs[i].dr.transpose() * incs[i + 1].dr});
  }
  return out;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose inverse(const Pose& p) {
  const Mat3 rt = p.rotation.transpose();
  return Pose{rt, -(rt * p.translation)};
}

Pose reexpress_in_anchor(const Pose& pose_in_cam_t, const Pose& cam_t_to_world,
                         const Pose& cam_anchor_to_world) {
  return compose(compose(inverse(cam_anchor_to_world), cam_t_to_world), pose_in_cam_t);
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Mat3 random_rotation(CounterRng& rng) {
  Eigen::Quaterniond q(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian(),
                       rng.next_gaussian());
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace trajdiff::se3
