#include "lcms/arm.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <sstream>

namespace lcms::sim {

ArmModel ArmModel::standard() {
  const Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d pitch = -Eigen::Vector3d::UnitX();  // positive tilts towards +y
  ArmModel arm;
  arm.base = {0.0, -0.65, 0.0};
  arm.joints = {{
      {{0.0, 0.0, 0.30}, up, -1.7, 1.7},
      {{0.0, 0.0, 0.00}, pitch, -0.6, 2.0},
      {{0.0, 0.0, 0.55}, pitch, -0.3, 2.8},
      {{0.0, 0.0, 0.25}, up, -1.6, 1.6},
      {{0.0, 0.0, 0.25}, pitch, -0.8, 2.2},
      {{0.0, 0.0, 0.05}, up, -1.6, 1.6},
  }};
  arm.tool = {0.0, 0.0, 0.10};
  arm.home << 0.0, 0.47, 2.47, 0.0, 0.20, 0.0;
  return arm;
}

Vector6d ArmModel::lower() const {
  Vector6d v;
  for (int j = 0; j < 6; ++j) v[j] = joints[j].lower;
  return v;
}

Vector6d ArmModel::upper() const {
  Vector6d v;
  for (int j = 0; j < 6; ++j) v[j] = joints[j].upper;
  return v;
}

bool ArmModel::within_limits(const Vector6d& q, double tolerance) const {
  for (int j = 0; j < 6; ++j) {
    if (!(q[j] >= joints[j].lower - tolerance && q[j] <= joints[j].upper + tolerance)) return false;
  }
  return true;
}

Vector6d ArmModel::clamp(const Vector6d& q) const { return q.cwiseMax(lower()).cwiseMin(upper()); }

namespace {

struct Chain {
  std::array<Eigen::Vector3d, 6> origins;
  std::array<Eigen::Vector3d, 6> axes;
  Eigen::Vector3d tip;
};

Chain evaluate_chain(const ArmModel& arm, const Vector6d& q) {
  Chain chain;
  Eigen::Isometry3d frame = Eigen::Isometry3d::Identity();
  frame.translation() = arm.base;
  for (int j = 0; j < 6; ++j) {
    frame.translate(arm.joints[j].offset);
    chain.origins[j] = frame.translation();
    chain.axes[j] = frame.linear() * arm.joints[j].axis;
    frame.rotate(Eigen::AngleAxisd(q[j], arm.joints[j].axis));
  }
  chain.tip = frame * arm.tool;
  return chain;
}

}  // namespace

Eigen::Vector3d forward_kinematics(const ArmModel& arm, const Vector6d& q) {
  if (!arm.within_limits(q)) {
    std::ostringstream msg;
    msg << "forward_kinematics: configuration outside joint limits: " << q.transpose();
    throw InvalidArgument(msg.str());
  }
  return evaluate_chain(arm, q).tip;
}

Matrix36d position_jacobian(const ArmModel& arm, const Vector6d& q) {
  const Chain chain = evaluate_chain(arm, q);
  Matrix36d jac;
  for (int j = 0; j < 6; ++j) jac.col(j) = chain.axes[j].cross(chain.tip - chain.origins[j]);
  return jac;
}

NoConvergence::NoConvergence(const Vector6d& best_q, double residual)
    : Error("ik_solve: no convergence (residual " + std::to_string(residual) + " m)"),
      best_q_(best_q),
      residual_(residual) {}

IkResult ik_solve(const ArmModel& arm, const Eigen::Vector3d& target, const Vector6d& seed,
                  const IkOptions& options) {
  IkResult best{arm.clamp(seed), 0, std::numeric_limits<double>::infinity()};
  Vector6d q = best.q;
  const double lambda2 = options.damping * options.damping;
  for (int it = 0; it <= options.max_iterations; ++it) {
    const Chain chain = evaluate_chain(arm, q);
    const Eigen::Vector3d error = target - chain.tip;
    const double residual = error.norm();
    if (residual < best.residual) best = {q, it, residual};
    if (residual < options.tolerance) return best;
    if (it == options.max_iterations) break;

    Matrix36d jac;
    for (int j = 0; j < 6; ++j) jac.col(j) = chain.axes[j].cross(chain.tip - chain.origins[j]);
    const Matrix36d jw = jac * options.joint_weights.asDiagonal();
    const Eigen::Matrix3d jjt = jw * jac.transpose() + lambda2 * Eigen::Matrix3d::Identity();
    Vector6d step = jw.transpose() * jjt.ldlt().solve(error);
    const double largest = step.cwiseAbs().maxCoeff();
    if (largest > options.max_step) step *= options.max_step / largest;
    q = arm.clamp(q + step);
  }
  throw NoConvergence(best.q, best.residual);
}

Vector7d normalize(const ArmModel& arm, const Vector7d& raw) {
  Vector7d out;
  for (int j = 0; j < 6; ++j) {
    const auto& js = arm.joints[j];
    out[j] = 2.0 * (raw[j] - js.lower) / (js.upper - js.lower) - 1.0;
  }
  out[6] = 2.0 * raw[6] - 1.0;
  return out;
}

Vector7d denormalize(const ArmModel& arm, const Vector7d& normalized) {
  Vector7d out;
  for (int j = 0; j < 6; ++j) {
    const auto& js = arm.joints[j];
    out[j] = js.lower + 0.5 * (normalized[j] + 1.0) * (js.upper - js.lower);
  }
  out[6] = 0.5 * (normalized[6] + 1.0);
  return out;
}

}  // namespace lcms::sim
