#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "trajdiff/se3.hpp"
#include "trajdiff/tokens.hpp"

namespace trajdiff::synth {

/// World frame: z up, table in the z = table_height plane. The default camera
/// sits at (0, -0.85, 0.35) looking along +y, with the usual x-right / y-down /
/// z-forward camera axes (so "up" in the world is -y in the camera).
enum class PrimitiveKind { kStatic, kLift, kSlide, kArcRotate, kPlace, kPickPlace };
enum class RampKind { kConstantVelocity, kCosineRamp };

struct MotionPrimitive {
  PrimitiveKind kind = PrimitiveKind::kStatic;
  double distance = 0.0;                 // meters
  double angle = 0.0;                    // radians
  se3::Vec3 axis = se3::Vec3::UnitX();   // slide direction / rotation axis (world)
  int duration = 1;                      // inter-frame steps the motion spans
  int start_step = 0;                    // first moving inter-frame step
  RampKind ramp = RampKind::kConstantVelocity;
};

struct SceneSpec {
  se3::Vec3 object_extent = se3::Vec3(0.08, 0.12, 0.08);  // full widths, object frame
  se3::Pose object_start;                                 // object -> world
  double table_height = 0.0;                              // world z
  Eigen::Vector2d table_extent = Eigen::Vector2d(0.8, 0.8);
  Eigen::Vector4d intrinsics = Eigen::Vector4d(500.0, 500.0, 320.0, 240.0);
  Eigen::Vector2i image_size = Eigen::Vector2i(640, 480);
  std::vector<se3::Pose> camera_motion;  // cam -> world per frame; default camera if empty
  double noise_trans = 0.0;              // per-frame pose jitter std, meters
  double noise_rot = 0.0;                // radians
};

se3::Pose default_camera();

struct GeneratedTrajectory {
  std::vector<se3::Pose> poses_cam;     // object pose per frame, that frame's camera coords
  std::vector<se3::Pose> cam_to_world;  // per frame
  std::vector<se3::Pose> poses_world;   // object pose per frame, world coords
};

/// Smooth pose sequence for one primitive over C+H frames, with optional
/// ego-motion and seeded pose jitter.
GeneratedTrajectory generate_trajectory(const MotionPrimitive& primitive, const SceneSpec& scene,
                                        int context_len, int horizon, double fps,
                                        std::uint64_t seed);

/// Pinhole projection of the 8 object-box corners; min/max box normalized by
/// the image size and clamped to the unit square. Throws BehindCamera if any
/// corner has non-positive depth.
Eigen::Vector4d project_box(const se3::Pose& pose_in_cam, const se3::Vec3& extent,
                            const Eigen::Vector4d& intrinsics, const Eigen::Vector2i& image_size);

/// N x 6 anchor cloud: ~60% on the object box surface, rest on the table
/// plane. Columns: camera xyz, object-frame xyz.
Eigen::MatrixXd sample_pointcloud(const SceneSpec& scene, const se3::Pose& anchor_pose_cam,
                                  const se3::Pose& anchor_cam_to_world, int n, std::uint64_t seed);

struct PrimitiveMix {
  std::string name = "lift";
  MotionPrimitive primitive;
  double weight = 1.0;
  double distance_lo = 0.1, distance_hi = 0.3;
  double angle_lo = 0.5, angle_hi = 1.5;  // radians, rotation primitives
};

struct DatasetConfig {
  int count = 100;
  int context_len = 3;
  int horizon = 8;
  double fps = 6.0;
  int n_points = 512;
  double noise_trans = 0.0;
  double noise_rot = 0.0;
  bool bimodal = false;  // identical contexts, futures split 50/50 lift vs slide
  std::vector<PrimitiveMix> mix;
  se3::Vec3 ego_trans = se3::Vec3::Zero();  // camera translation per step, world
  double ego_yaw_rate = 0.0;                // camera yaw per step, radians
};

DatasetConfig dataset_config_from_json(const std::string& json_text);

/// Deterministic windows: a pure function of (config, seed).
std::vector<tokens::TrajectoryWindow> generate_windows(const DatasetConfig& cfg,
                                                       std::uint64_t seed);

/// generate_windows + JSONL/OFPC serialization into out_dir
/// (windows.jsonl, points.ofpc). Byte-deterministic.
void write_dataset(const DatasetConfig& cfg, std::uint64_t seed, const std::string& out_dir);

}  // namespace trajdiff::synth
