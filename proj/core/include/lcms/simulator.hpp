#pragma once

#include <Eigen/Dense>
#include <string>

#include "lcms/arm.hpp"
#include "lcms/dmp.hpp"
#include "lcms/scene.hpp"

namespace lcms::sim {

/// Timing of planned demonstrations, as fractions of the primitive duration.
struct DemoTiming {
  double motion_begin = 0.0;   // hold at the pickup hover until here
  double motion_end = 0.70;    // min-jerk transfer finishes, then hold
  double release_begin = 0.90;  // gripper starts opening
  double release_end = 0.95;    // gripper fully open
  double hover_height = 0.15;   // m above the bowl center
  /// IK step weights used while tracking the path. The two roll joints only
  /// add redundancy for a position target and stay at home.
  Vector6d joint_weights = (Vector6d() << 1.0, 1.0, 1.0, 0.0, 1.0, 0.0).finished();
};

struct Demonstration {
  Scene scene;
  std::string sentence;
  dmp::Trajectory joints;  // T x 7, normalized joint coordinates
  dmp::RowMatrix ee_path;  // T x 3, m
};

class PlanningFailed : public Error {
 public:
  using Error::Error;
};

/// s(u) = 10u^3 - 15u^4 + 6u^5 for u clamped to [0, 1].
double min_jerk(double u);

/// Canonical home configuration in normalized coordinates (gripper closed).
Vector7d home_normalized(const ArmModel& arm);

/// Cartesian min-jerk transfer from the pickup hover to hover above the target
/// bowl, tracked by IK seeded with the previous frame; the gripper opens with
/// a smooth step near the end. Throws PlanningFailed on IK failure.
Demonstration plan_demonstration(const Scene& scene, const ArmModel& arm,
                                 const dmp::DmpConfig& config = {}, const DemoTiming& timing = {});

/// End-effector path of a normalized 7-dim joint trajectory (joints clamped to limits).
dmp::RowMatrix ee_path(const dmp::Trajectory& joints, const ArmModel& arm);

struct ExecutionResult {
  Eigen::Vector2d cube;        // final cube xy
  int release_frame = -1;      // -1 if never released
};

/// The cube follows the end effector while gripper > 0.5 and drops vertically
/// at the first frame where gripper <= 0.5.
ExecutionResult execute(const dmp::Trajectory& joints, const Scene& scene, const ArmModel& arm);

/// True iff the cube lies inside the target bowl's axis-aligned bounding box.
bool check_success(const Scene& scene, const Eigen::Vector2d& cube_xy);

/// Landing xy implied by releasing at a joint configuration (normalized).
Eigen::Vector2d landing_point(const ArmModel& arm, const Vector7d& normalized_goal);

}  // namespace lcms::sim
