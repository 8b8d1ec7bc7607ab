#include "lcms/simulator.hpp"

#include <algorithm>
#include <cmath>

namespace lcms::sim {

double min_jerk(double u) {
  u = std::clamp(u, 0.0, 1.0);
  const double u3 = u * u * u;
  return u3 * (10.0 - 15.0 * u + 6.0 * u * u);
}

namespace {

double smooth_step(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

}  // namespace

Vector7d home_normalized(const ArmModel& arm) {
  Vector7d raw;
  raw << arm.home, 1.0;
  return normalize(arm, raw);
}

Demonstration plan_demonstration(const Scene& scene, const ArmModel& arm,
                                 const dmp::DmpConfig& config, const DemoTiming& timing) {
  scene.validate();
  const int frames = config.frame_count();
  const Eigen::Vector3d start = forward_kinematics(arm, arm.home);
  const Eigen::Vector2d bowl = scene.target().position;
  const Eigen::Vector3d goal{bowl.x(), bowl.y(), timing.hover_height};

  Demonstration demo;
  demo.scene = scene;
  demo.joints.dt = config.dt_out;
  demo.joints.frames.resize(frames, kControlDims);
  demo.ee_path.resize(frames, 3);

  Vector6d q = arm.home;
  const double motion_start = timing.motion_begin * config.tau;
  const double motion_time = (timing.motion_end - timing.motion_begin) * config.tau;
  IkOptions ik;
  ik.joint_weights = timing.joint_weights;
  const double open_begin = timing.release_begin * config.tau;
  const double open_time = (timing.release_end - timing.release_begin) * config.tau;
  for (int k = 0; k < frames; ++k) {
    const double t = k * config.dt_out;
    const Eigen::Vector3d p = start + min_jerk((t - motion_start) / motion_time) * (goal - start);
    try {
      q = ik_solve(arm, p, q, ik).q;
    } catch (const NoConvergence& e) {
      throw PlanningFailed("plan_demonstration: frame " + std::to_string(k) + ": " + e.what());
    }
    // 1 = closed, smooth step to 0 = open.
    const double grip = 1.0 - smooth_step((t - open_begin) / open_time);
    Vector7d raw;
    raw << q, grip;
    demo.joints.frames.row(k) = normalize(arm, raw).transpose();
    demo.ee_path.row(k) = forward_kinematics(arm, q).transpose();
  }
  return demo;
}

dmp::RowMatrix ee_path(const dmp::Trajectory& joints, const ArmModel& arm) {
  if (joints.n_dims() != kControlDims) throw InvalidArgument("ee_path: expected 7 dims");
  dmp::RowMatrix path(joints.length(), 3);
  for (int k = 0; k < joints.length(); ++k) {
    const Vector7d raw = denormalize(arm, joints.frames.row(k).transpose());
    path.row(k) = forward_kinematics(arm, arm.clamp(raw.head<6>())).transpose();
  }
  return path;
}

ExecutionResult execute(const dmp::Trajectory& joints, const Scene& scene, const ArmModel& arm) {
  if (joints.n_dims() != kControlDims) throw InvalidArgument("execute: expected 7 dims");
  ExecutionResult result;
  result.cube = scene.cube;
  for (int k = 0; k < joints.length(); ++k) {
    const Vector7d raw = denormalize(arm, joints.frames.row(k).transpose());
    result.cube = forward_kinematics(arm, arm.clamp(raw.head<6>())).head<2>();
    if (raw[6] <= 0.5) {
      result.release_frame = k;
      break;
    }
  }
  return result;
}

bool check_success(const Scene& scene, const Eigen::Vector2d& cube_xy) {
  const Bowl& target = scene.target();
  const double half = target.edge() / 2.0;
  const Eigen::Vector2d d = cube_xy - target.position;
  return std::abs(d.x()) <= half && std::abs(d.y()) <= half;
}

Eigen::Vector2d landing_point(const ArmModel& arm, const Vector7d& normalized_goal) {
  const Vector7d raw = denormalize(arm, normalized_goal);
  return forward_kinematics(arm, arm.clamp(raw.head<6>())).head<2>();
}

}  // namespace lcms::sim
