#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "lcms/common.hpp"

namespace lcms::dmp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Second-order point-attractor primitive, one per output dimension:
///
///   tau * z' = alpha_z * (beta_z * (g - y) - z) + f(x)
///   tau * y' = z
///   x(t)     = exp(-alpha_x * t / tau)
///
/// Defaults give a critically damped system whose phase reaches 0.01 at t = tau.
struct DmpConfig {
  int n_dims = 7;
  int n_basis = 20;
  double alpha_z = 25.0;
  double beta_z = 6.25;
  double alpha_x = 4.6052;
  double tau = 5.0;
  double dt_out = 0.05;
  int substeps = 5;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
  /// Number of output frames, round(tau / dt_out) + 1.
  int frame_count() const;

  bool operator==(const DmpConfig&) const = default;
};

struct BasisSet {
  Eigen::VectorXd centers;  // phase coordinates, strictly decreasing, c_0 = 1
  Eigen::VectorXd widths;

  int size() const { return static_cast<int>(centers.size()); }
  /// Unnormalized activations psi_i(x).
  Eigen::VectorXd activations(double x) const;
};

struct DmpParams {
  RowMatrix weights;      // n_dims x n_basis
  Eigen::VectorXd goal;   // n_dims
  Eigen::VectorXd start;  // n_dims

  int n_dims() const { return static_cast<int>(goal.size()); }
  /// Throws InvalidArgument if shapes disagree with `config` or any entry is non-finite.
  void check(const DmpConfig& config) const;

  bool operator==(const DmpParams& other) const {
    return weights == other.weights && goal == other.goal && start == other.start;
  }
};

/// Uniformly sampled positions (T x o), normalized joint coordinates.
struct Trajectory {
  RowMatrix frames;
  double dt = 0.0;
  std::optional<RowMatrix> velocities;

  int length() const { return static_cast<int>(frames.rows()); }
  int n_dims() const { return static_cast<int>(frames.cols()); }
  double time(int k) const { return k * dt; }
  /// Throws InvalidArgument unless T >= 2, dt > 0 and every value is finite.
  void check() const;
};

/// Minimum gap between neighbouring centers used when computing widths.
inline constexpr double kMinCenterGap = 1e-6;
/// Ridge term in the locally weighted regression denominator.
inline constexpr double kRidge = 1e-8;
/// Below this total activation the forcing term is treated as zero.
inline constexpr double kActivationFloor = 1e-12;

BasisSet build_basis(const DmpConfig& config);

double canonical_phase(double t, const DmpConfig& config);

/// Forcing term f(x) = x * sum_i psi_i(x) w_i / sum_i psi_i(x), unscaled by (g - y0).
Eigen::VectorXd forcing(double x, const DmpParams& params, const BasisSet& basis);

/// Integrates the primitive from (start, z = 0) with fixed-step RK4.
Trajectory rollout(const DmpParams& params, const DmpConfig& config, const BasisSet& basis);

/// Fits weights to a demonstration by per-basis locally weighted regression.
DmpParams fit(const Trajectory& demo, const DmpConfig& config, const BasisSet& basis);

// Trajectory CSV: header `t,q0,...,q5,grip` (7 dims) or `t,q0,...,q{o-1}`, %.9g, LF.
std::string trajectory_csv_header(int n_dims);
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);
void save_trajectory_csv(const std::string& path, const Trajectory& trajectory);
Trajectory read_trajectory_csv(std::istream& in);
Trajectory load_trajectory_csv(const std::string& path);

// JSON: {"weights": [[...] x o], "goal": [...], "start": [...]}.
nlohmann::json to_json(const DmpParams& params);
DmpParams dmp_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DmpConfig& config);
DmpConfig dmp_config_from_json(const nlohmann::json& j);

}  // namespace lcms::dmp
