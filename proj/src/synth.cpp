#include "trajdiff/synth.hpp"

#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <numbers>

#include "trajdiff/errors.hpp"
#include "trajdiff/io.hpp"
#include "trajdiff/rng.hpp"

namespace trajdiff::synth {

using nlohmann::json;

se3::Pose default_camera() {
  se3::Pose cam;
  // camera x -> world x, camera y (down) -> world -z, camera z (forward) -> world +y
  cam.rotation.col(0) = se3::Vec3(1, 0, 0);
  cam.rotation.col(1) = se3::Vec3(0, 0, -1);
  cam.rotation.col(2) = se3::Vec3(0, 1, 0);
  cam.translation = se3::Vec3(0.0, -0.85, 0.35);
  return cam;
}

namespace {

double ramp_fraction(RampKind ramp, double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  if (ramp == RampKind::kConstantVelocity) return tau;
  return tau - std::sin(2.0 * std::numbers::pi * tau) / (2.0 * std::numbers::pi);
}

se3::Pose object_world_pose(const MotionPrimitive& prim, const SceneSpec& scene, int frame) {
  const double steps = static_cast<double>(std::max(1, prim.duration));
  const double tau = (static_cast<double>(frame) - prim.start_step) / steps;
  const double s = ramp_fraction(prim.ramp, tau);
  se3::Pose p = scene.object_start;
  switch (prim.kind) {
    case PrimitiveKind::kStatic:
      break;
    case PrimitiveKind::kLift:
      p.translation += prim.distance * s * se3::Vec3::UnitZ();
      break;
    case PrimitiveKind::kSlide:
      p.translation += prim.distance * s * prim.axis.normalized();
      break;
    case PrimitiveKind::kArcRotate:
      p.rotation = se3::axis_angle(prim.axis, prim.angle * s) * p.rotation;
      break;
    case PrimitiveKind::kPlace:
      p.translation -= prim.distance * s * se3::Vec3::UnitZ();
      break;
    case PrimitiveKind::kPickPlace: {
      // up 30% of the time, across 40%, down 30%; vertical leg = 0.4 * distance
      const double up = 0.4 * prim.distance;
      const se3::Vec3 lateral = prim.distance * prim.axis.normalized();
      if (s < 0.3) {
        p.translation += up * (s / 0.3) * se3::Vec3::UnitZ();
      } else if (s < 0.7) {
        p.translation += up * se3::Vec3::UnitZ() + lateral * ((s - 0.3) / 0.4);
      } else {
        p.translation += up * (1.0 - (s - 0.7) / 0.3) * se3::Vec3::UnitZ() + lateral;
      }
      break;
    }
  }
  return p;
}

}  // namespace

GeneratedTrajectory generate_trajectory(const MotionPrimitive& primitive, const SceneSpec& scene,
                                        int context_len, int horizon, double fps,
                                        std::uint64_t seed) {
  if (context_len < 1 || horizon < 1) throw InvalidSpec("need C >= 1 and H >= 1");
  if (primitive.duration < 1) throw InvalidSpec("primitive duration must be >= 1");
  if (primitive.distance < 0.0) throw InvalidSpec("primitive distance must be >= 0");
  if (fps <= 0.0) throw InvalidSpec("fps must be positive");
  if (scene.object_start.translation.z() <= 0.0)
    throw InvalidSpec("object must start above the table plane (world z > 0)");
  if ((scene.intrinsics.array() <= 0.0).any()) throw InvalidSpec("intrinsics must be positive");

  const int frames = context_len + horizon;
  if (!scene.camera_motion.empty() &&
      static_cast<int>(scene.camera_motion.size()) != frames)
    throw InvalidSpec("camera_motion must have one pose per frame");

  GeneratedTrajectory out;
  out.poses_world.reserve(static_cast<std::size_t>(frames));
  out.cam_to_world.reserve(static_cast<std::size_t>(frames));
  out.poses_cam.reserve(static_cast<std::size_t>(frames));

  CounterRng jitter(seed);
  const se3::Pose cam_default = default_camera();
  for (int f = 0; f < frames; ++f) {
    se3::Pose obj = object_world_pose(primitive, scene, f);
    if (scene.noise_trans > 0.0 || scene.noise_rot > 0.0) {
      obj.translation += scene.noise_trans * se3::Vec3(jitter.next_gaussian(),
                                                       jitter.next_gaussian(),
                                                       jitter.next_gaussian());
      se3::Vec3 axis(jitter.next_gaussian(), jitter.next_gaussian(), jitter.next_gaussian());
      const double angle = scene.noise_rot * jitter.next_gaussian();
      if (axis.norm() > 1e-12 && angle != 0.0)
        obj.rotation = se3::axis_angle(axis, angle) * obj.rotation;
    }
    const se3::Pose cam =
        scene.camera_motion.empty() ? cam_default : scene.camera_motion[static_cast<std::size_t>(f)];
    out.poses_world.push_back(obj);
    out.cam_to_world.push_back(cam);
    out.poses_cam.push_back(se3::compose(se3::inverse(cam), obj));
  }
  return out;
}

Eigen::Vector4d project_box(const se3::Pose& pose_in_cam, const se3::Vec3& extent,
                            const Eigen::Vector4d& intrinsics, const Eigen::Vector2i& image_size) {
  const double fx = intrinsics(0), fy = intrinsics(1), cx = intrinsics(2), cy = intrinsics(3);
  double u_min = 1e300, u_max = -1e300, v_min = 1e300, v_max = -1e300;
  for (int corner = 0; corner < 8; ++corner) {
    const se3::Vec3 o(((corner & 1) ? 0.5 : -0.5) * extent.x(),
                      ((corner & 2) ? 0.5 : -0.5) * extent.y(),
                      ((corner & 4) ? 0.5 : -0.5) * extent.z());
    const se3::Vec3 p = pose_in_cam.rotation * o + pose_in_cam.translation;
    if (p.z() <= 0.0) throw BehindCamera();
    const double u = fx * p.x() / p.z() + cx;
    const double v = fy * p.y() / p.z() + cy;
    u_min = std::min(u_min, u);
    u_max = std::max(u_max, u);
    v_min = std::min(v_min, v);
    v_max = std::max(v_max, v);
  }
  const double lo_u = std::clamp(u_min / image_size.x(), 0.0, 1.0);
  const double hi_u = std::clamp(u_max / image_size.x(), 0.0, 1.0);
  const double lo_v = std::clamp(v_min / image_size.y(), 0.0, 1.0);
  const double hi_v = std::clamp(v_max / image_size.y(), 0.0, 1.0);
  return Eigen::Vector4d((lo_u + hi_u) / 2.0, (lo_v + hi_v) / 2.0, hi_u - lo_u, hi_v - lo_v);
}

Eigen::MatrixXd sample_pointcloud(const SceneSpec& scene, const se3::Pose& anchor_pose_cam,
                                  const se3::Pose& anchor_cam_to_world, int n, std::uint64_t seed) {
  if (n < 1) throw InvalidSpec("point count must be >= 1");
  CounterRng rng(seed);
  const int n_obj = static_cast<int>(std::llround(0.6 * n));
  const int n_table = n - n_obj;
  Eigen::MatrixXd pts(n, 6);

  const se3::Vec3 e = scene.object_extent;
  const double areas[6] = {e.y() * e.z(), e.y() * e.z(), e.x() * e.z(),
                           e.x() * e.z(), e.x() * e.y(), e.x() * e.y()};
  double total_area = 0.0;
  for (const double a : areas) total_area += a;

  for (int i = 0; i < n_obj; ++i) {
    double pick = rng.next_double() * total_area;
    int face = 0;
    while (face < 5 && pick > areas[face]) {
      pick -= areas[face];
      ++face;
    }
    se3::Vec3 o;
    const double ua = rng.next_uniform(-0.5, 0.5);
    const double ub = rng.next_uniform(-0.5, 0.5);
    switch (face) {
      case 0: o = se3::Vec3(0.5 * e.x(), ua * e.y(), ub * e.z()); break;
      case 1: o = se3::Vec3(-0.5 * e.x(), ua * e.y(), ub * e.z()); break;
      case 2: o = se3::Vec3(ua * e.x(), 0.5 * e.y(), ub * e.z()); break;
      case 3: o = se3::Vec3(ua * e.x(), -0.5 * e.y(), ub * e.z()); break;
      case 4: o = se3::Vec3(ua * e.x(), ub * e.y(), 0.5 * e.z()); break;
      default: o = se3::Vec3(ua * e.x(), ub * e.y(), -0.5 * e.z()); break;
    }
    const se3::Vec3 cam = anchor_pose_cam.rotation * o + anchor_pose_cam.translation;
    pts.row(i) << cam.x(), cam.y(), cam.z(), o.x(), o.y(), o.z();
  }

  const se3::Pose obj_world = se3::compose(anchor_cam_to_world, anchor_pose_cam);
  const se3::Pose cam_from_world = se3::inverse(anchor_cam_to_world);
  const se3::Pose obj_from_cam = se3::inverse(anchor_pose_cam);
  for (int i = 0; i < n_table; ++i) {
    const se3::Vec3 w(obj_world.translation.x() + rng.next_uniform(-0.5, 0.5) * scene.table_extent.x(),
                      obj_world.translation.y() + rng.next_uniform(-0.5, 0.5) * scene.table_extent.y(),
                      scene.table_height);
    const se3::Vec3 cam = cam_from_world.rotation * w + cam_from_world.translation;
    const se3::Vec3 o = obj_from_cam.rotation * cam + obj_from_cam.translation;
    pts.row(n_obj + i) << cam.x(), cam.y(), cam.z(), o.x(), o.y(), o.z();
  }
  return pts;
}

namespace {

PrimitiveKind kind_from_string(const std::string& s) {
  if (s == "static") return PrimitiveKind::kStatic;
  if (s == "lift") return PrimitiveKind::kLift;
  if (s == "slide") return PrimitiveKind::kSlide;
  if (s == "arc_rotate") return PrimitiveKind::kArcRotate;
  if (s == "place") return PrimitiveKind::kPlace;
  if (s == "pick_place") return PrimitiveKind::kPickPlace;
  throw InvalidSpec("unknown primitive kind: " + s);
}

std::vector<PrimitiveMix> default_mix() {
  std::vector<PrimitiveMix> mix;
  const char* names[] = {"lift", "slide", "arc_rotate", "place", "pick_place"};
  for (const char* n : names) {
    PrimitiveMix m;
    m.name = n;
    m.primitive.kind = kind_from_string(n);
    m.primitive.ramp = RampKind::kCosineRamp;
    mix.push_back(m);
  }
  return mix;
}

}  // namespace

DatasetConfig dataset_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("bad dataset config: ") + e.what());
  }
  DatasetConfig cfg;
  cfg.count = j.value("count", cfg.count);
  cfg.context_len = j.value("C", cfg.context_len);
  cfg.horizon = j.value("H", cfg.horizon);
  cfg.fps = j.value("fps", cfg.fps);
  cfg.n_points = j.value("n_points", cfg.n_points);
  cfg.noise_trans = j.value("noise_trans", cfg.noise_trans);
  cfg.noise_rot = j.value("noise_rot", cfg.noise_rot);
  cfg.bimodal = j.value("bimodal", cfg.bimodal);
  if (j.contains("ego_trans")) {
    const auto v = j["ego_trans"].get<std::vector<double>>();
    if (v.size() != 3) throw InvalidSpec("ego_trans must have 3 entries");
    cfg.ego_trans = se3::Vec3(v[0], v[1], v[2]);
  }
  cfg.ego_yaw_rate = j.value("ego_yaw_rate", cfg.ego_yaw_rate);
  if (j.contains("mix")) {
    for (const auto& mj : j["mix"]) {
      PrimitiveMix m;
      m.name = mj.value("name", mj.value("kind", std::string("lift")));
      m.primitive.kind = kind_from_string(mj.value("kind", std::string("lift")));
      m.primitive.ramp = mj.value("ramp", std::string("cosine")) == "constant"
                             ? RampKind::kConstantVelocity
                             : RampKind::kCosineRamp;
      m.weight = mj.value("weight", 1.0);
      if (mj.contains("distance")) {
        m.distance_lo = mj["distance"][0].get<double>();
        m.distance_hi = mj["distance"][1].get<double>();
      }
      if (mj.contains("angle")) {
        m.angle_lo = mj["angle"][0].get<double>();
        m.angle_hi = mj["angle"][1].get<double>();
      }
      cfg.mix.push_back(m);
    }
  }
  if (cfg.count < 1) throw InvalidSpec("dataset count must be >= 1");
  return cfg;
}

namespace {

struct WindowDraw {
  SceneSpec scene;
  MotionPrimitive primitive;
  std::string label;
};

SceneSpec draw_scene(const DatasetConfig& cfg, CounterRng& rng) {
  SceneSpec scene;
  scene.object_extent = se3::Vec3(rng.next_uniform(0.06, 0.14), rng.next_uniform(0.06, 0.14),
                                  rng.next_uniform(0.06, 0.14));
  scene.object_start.translation =
      se3::Vec3(rng.next_uniform(-0.12, 0.12), rng.next_uniform(-0.10, 0.10),
                scene.object_extent.z() / 2.0 + 0.001);
  scene.object_start.rotation =
      se3::axis_angle(se3::Vec3::UnitZ(), rng.next_uniform(0.0, 2.0 * std::numbers::pi));
  scene.noise_trans = cfg.noise_trans;
  scene.noise_rot = cfg.noise_rot;
  return scene;
}

void apply_ego_motion(const DatasetConfig& cfg, SceneSpec& scene, int frames) {
  if (cfg.ego_trans.norm() == 0.0 && cfg.ego_yaw_rate == 0.0) return;
  scene.camera_motion.clear();
  const se3::Pose base = default_camera();
  for (int f = 0; f < frames; ++f) {
    se3::Pose cam = base;
    cam.translation += cfg.ego_trans * static_cast<double>(f);
    if (cfg.ego_yaw_rate != 0.0)
      cam.rotation = se3::axis_angle(se3::Vec3::UnitZ(), cfg.ego_yaw_rate * f) * cam.rotation;
    scene.camera_motion.push_back(cam);
  }
}

WindowDraw draw_window(const DatasetConfig& cfg, std::size_t index, std::uint64_t seed) {
  const std::vector<PrimitiveMix> mix = cfg.mix.empty() ? default_mix() : cfg.mix;
  const int frames = cfg.context_len + cfg.horizon;

  WindowDraw d;
  if (cfg.bimodal) {
    // pairs share one RNG stream: identical scene and magnitudes, the label
    // alone decides the future
    const std::size_t pair = index / 2;
    CounterRng rng(rng_derive(rng_derive(seed, "pair"), pair));
    DatasetConfig quiet = cfg;
    quiet.noise_trans = 0.0;
    quiet.noise_rot = 0.0;
    d.scene = draw_scene(quiet, rng);
    const double dist = rng.next_uniform(0.15, 0.25);
    const bool lift = (index % 2 == 0);
    d.label = lift ? "lift" : "slide";
    d.primitive.kind = lift ? PrimitiveKind::kLift : PrimitiveKind::kSlide;
    d.primitive.axis = se3::Vec3::UnitX();
    d.primitive.distance = dist;
    d.primitive.ramp = RampKind::kCosineRamp;
    d.primitive.start_step = cfg.context_len - 1;  // motion begins at the anchor
    d.primitive.duration = cfg.horizon;
  } else {
    CounterRng rng(rng_derive(rng_derive(seed, "window"), index));
    d.scene = draw_scene(cfg, rng);
    double total = 0.0;
    for (const auto& m : mix) total += m.weight;
    double pick = rng.next_double() * total;
    std::size_t mi = 0;
    while (mi + 1 < mix.size() && pick > mix[mi].weight) {
      pick -= mix[mi].weight;
      ++mi;
    }
    const PrimitiveMix& m = mix[mi];
    d.label = m.name;
    d.primitive = m.primitive;
    d.primitive.distance = rng.next_uniform(m.distance_lo, m.distance_hi);
    d.primitive.angle = rng.next_uniform(m.angle_lo, m.angle_hi);
    d.primitive.duration = frames - 1;
    d.primitive.start_step = 0;
    switch (d.primitive.kind) {
      case PrimitiveKind::kSlide:
      case PrimitiveKind::kPickPlace: {
        const double theta = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
        d.primitive.axis = se3::Vec3(std::cos(theta), std::sin(theta), 0.0);
        break;
      }
      case PrimitiveKind::kArcRotate: {
        se3::Vec3 axis(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian());
        if (axis.norm() < 1e-9) axis = se3::Vec3::UnitZ();
        d.primitive.axis = axis.normalized();
        break;
      }
      case PrimitiveKind::kPlace:
        // keep it above the table: drop at most to the surface
        d.primitive.distance =
            std::min(d.primitive.distance, d.scene.object_start.translation.z() - 0.01);
        d.scene.object_start.translation.z() += d.primitive.distance;
        break;
      default:
        break;
    }
  }
  apply_ego_motion(cfg, d.scene, frames);
  return d;
}

}  // namespace

std::vector<tokens::TrajectoryWindow> generate_windows(const DatasetConfig& cfg,
                                                       std::uint64_t seed) {
  if (cfg.count < 1) throw InvalidSpec("dataset count must be >= 1");
  std::vector<tokens::TrajectoryWindow> out;
  out.reserve(static_cast<std::size_t>(cfg.count));
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.count); ++i) {
    const WindowDraw d = draw_window(cfg, i, seed);
    const std::uint64_t wseed = rng_derive(rng_derive(seed, "traj"), i);

    tokens::TrajectoryWindow w;
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 10 && !ok; ++attempt) {
      const GeneratedTrajectory traj = generate_trajectory(
          d.primitive, d.scene, cfg.context_len, cfg.horizon, cfg.fps, rng_derive(wseed, attempt));
      Eigen::MatrixXd boxes(cfg.context_len, 4);
      try {
        for (int f = 0; f < cfg.context_len; ++f)
          boxes.row(f) = project_box(traj.poses_cam[static_cast<std::size_t>(f)],
                                     d.scene.object_extent, d.scene.intrinsics, d.scene.image_size)
                             .transpose();
        const Eigen::MatrixXd cloud = sample_pointcloud(
            d.scene, traj.poses_cam[static_cast<std::size_t>(cfg.context_len - 1)],
            traj.cam_to_world[static_cast<std::size_t>(cfg.context_len - 1)], cfg.n_points,
            rng_derive(rng_derive(seed, "cloud"), i));
        char id[64];
        std::snprintf(id, sizeof(id), "synth-%06zu-%s", i, d.label.c_str());
        w = tokens::build_window(id, cfg.fps, cfg.context_len, cfg.horizon, d.scene.intrinsics,
                                 traj.poses_cam, traj.cam_to_world, boxes, cloud);
        ok = true;
      } catch (const DataError&) {
        // pathological jitter draw; deterministic retry with a salted seed
      }
    }
    if (!ok) throw InvalidSpec("could not generate a valid window for index " + std::to_string(i));
    out.push_back(std::move(w));
  }
  return out;
}

void write_dataset(const DatasetConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  const std::vector<tokens::TrajectoryWindow> windows = generate_windows(cfg, seed);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  io::write_windows_jsonl((fs::path(out_dir) / "windows.jsonl").string(),
                          (fs::path(out_dir) / "points.ofpc").string(), windows);
}

}  // namespace trajdiff::synth
