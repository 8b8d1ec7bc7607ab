#pragma once

#include <Eigen/Dense>
#include <array>

#include "lcms/common.hpp"

namespace lcms::sim {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix36d = Eigen::Matrix<double, 3, 6>;

struct JointSpec {
  Eigen::Vector3d offset;  // translation from the previous joint frame (m)
  Eigen::Vector3d axis;    // rotation axis in the local frame (unit)
  double lower;            // rad
  double upper;            // rad
};

/// Serial 6R arm standing in front of the table. Joint 1 yaws about the
/// vertical axis; joints 2, 3 and 5 pitch; joints 4 and 6 roll.
///
/// Standard geometry (m): base at (0, -0.65, 0) in table frame, shoulder
/// height 0.30, upper arm 0.55, forearm 0.25 + 0.25, wrist 0.05, tool 0.10.
/// At zero yaw the arm reaches towards +y.
struct ArmModel {
  Eigen::Vector3d base;
  std::array<JointSpec, 6> joints;
  Eigen::Vector3d tool;
  Vector6d home;

  static ArmModel standard();

  bool within_limits(const Vector6d& q, double tolerance = 1e-9) const;
  Vector6d clamp(const Vector6d& q) const;
  Vector6d lower() const;
  Vector6d upper() const;
};

/// End-effector position of ArmModel::standard() at its home configuration,
/// hovering 0.15 m above the pickup zone. Evaluated by hand from the chain.
inline const Eigen::Vector3d kStandardHomePosition{0.0, -0.30055865274315446, 0.1504882869679579};

/// Throws InvalidArgument if q is outside the joint limits.
Eigen::Vector3d forward_kinematics(const ArmModel& arm, const Vector6d& q);

/// Position Jacobian d(ee)/dq.
Matrix36d position_jacobian(const ArmModel& arm, const Vector6d& q);

struct IkOptions {
  double tolerance = 1e-3;  // m
  int max_iterations = 200;
  double damping = 0.05;
  double max_step = 0.2;  // rad, per iteration
  /// Per-joint step weights; 0 locks a joint, 1 is plain DLS.
  Vector6d joint_weights = Vector6d::Ones();
};

struct IkResult {
  Vector6d q;
  int iterations = 0;
  double residual = 0.0;  // m
};

class NoConvergence : public Error {
 public:
  NoConvergence(const Vector6d& best_q, double residual);
  const Vector6d& best_q() const { return best_q_; }
  double residual() const { return residual_; }

 private:
  Vector6d best_q_;
  double residual_;
};

/// Damped least-squares position IK. Joint limits are enforced by clamping
/// after every step. Throws NoConvergence with the best iterate otherwise.
IkResult ik_solve(const ArmModel& arm, const Eigen::Vector3d& target, const Vector6d& seed,
                  const IkOptions& options = {});

// Joint-space normalization. The 7-vector layout is (q0..q5, gripper) with the
// gripper in [0, 1] (1 = closed); every channel maps its range onto [-1, 1].
inline constexpr int kControlDims = 7;
using Vector7d = Eigen::Matrix<double, kControlDims, 1>;

Vector7d normalize(const ArmModel& arm, const Vector7d& raw);
Vector7d denormalize(const ArmModel& arm, const Vector7d& normalized);

}  // namespace lcms::sim
