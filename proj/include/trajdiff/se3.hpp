#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "trajdiff/rng.hpp"

namespace trajdiff::se3 {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Continuous 6D rotation code: the first two columns of a rotation matrix.
struct Rot6d {
  Vec3 a = Vec3::UnitX();
  Vec3 b = Vec3::UnitY();
};

/// Rigid pose in camera coordinates (x right, y down, z forward).
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

inline constexpr double kRotationTol = 1e-9;
inline constexpr double kDecodeEps = 1e-8;

/// mᵀm = I and det(m) = +1, both within tol.
bool is_rotation(const Mat3& m, double tol = kRotationTol);

Rot6d rot6d_encode(const Mat3& r);

/// Gram-Schmidt decode. Throws DegenerateRotation when ‖a‖ ≤ eps or a, b are
/// parallel within eps; callers substitute identity and log if they want to
/// survive corrupted tokens.
Mat3 rot6d_decode(const Rot6d& r, double eps = kDecodeEps);

/// SO(3) geodesic angle in [0, π]; the trace argument is clamped to [-1, 1].
double geodesic_angle(const Mat3& r1, const Mat3& r2);

/// Same angle via 2·asin(‖R₁-R₂‖_F / (2√2)). The acos form bottoms out around
/// √(2ε) ≈ 2e-8 rad; this one resolves deviations down to machine precision,
/// which sub-1e-9 assertions need.
double rotation_deviation(const Mat3& r1, const Mat3& r2);

struct Increment {
  Vec3 dt = Vec3::Zero();
  Mat3 dr = Mat3::Identity();
};

/// Δt = t₂ − t₁, ΔR = R₁ᵀ R₂.
Increment pose_increment(const Pose& a, const Pose& b);

/// Consecutive increments of a pose sequence (size n-1).
std::vector<Increment> increments(std::span<const Pose> poses);

/// Second differences of an increment sequence: Δ²tₖ = Δtₖ₊₁ − Δtₖ,
/// Δ²Rₖ = ΔRₖᵀ ΔRₖ₊₁. Throws SequenceTooShort for fewer than 2 increments
/// (i.e. fewer than 3 poses).
std::vector<Increment> second_difference(std::span<const Increment> incs);

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Re-expresses an object pose observed in camera frame t in the coordinates
/// of the anchor camera: (cam_anchor_to_world)⁻¹ ∘ cam_t_to_world ∘ pose.
Pose reexpress_in_anchor(const Pose& pose_in_cam_t, const Pose& cam_t_to_world,
                         const Pose& cam_anchor_to_world);

Mat3 axis_angle(const Vec3& axis, double angle);

/// Uniform random rotation via normalized quaternion sampling.
Mat3 random_rotation(CounterRng& rng);

}  // namespace trajdiff::se3
