#include "lcms/dmp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lcms::dmp {

void DmpConfig::validate() const {
  if (n_dims < 1) throw InvalidArgument("DmpConfig: n_dims must be >= 1");
  if (n_basis < 2) throw InvalidArgument("DmpConfig: n_basis must be >= 2");
  if (!(alpha_z > 0) || !(beta_z > 0) || !(alpha_x > 0))
    throw InvalidArgument("DmpConfig: gains must be positive");
  if (!(tau > 0) || !(dt_out > 0)) throw InvalidArgument("DmpConfig: tau and dt_out must be positive");
  if (substeps < 1) throw InvalidArgument("DmpConfig: substeps must be >= 1");
}

int DmpConfig::frame_count() const { return static_cast<int>(std::lround(tau / dt_out)) + 1; }

Eigen::VectorXd BasisSet::activations(double x) const {
  return (-(widths.array() * (x - centers.array()).square())).exp().matrix();
}

void DmpParams::check(const DmpConfig& config) const {
  if (weights.rows() != config.n_dims || weights.cols() != config.n_basis)
    throw InvalidArgument("DmpParams: weight matrix must be n_dims x n_basis");
  if (goal.size() != config.n_dims || start.size() != config.n_dims)
    throw InvalidArgument("DmpParams: goal and start must have n_dims entries");
  if (!weights.allFinite() || !goal.allFinite() || !start.allFinite())
    throw InvalidArgument("DmpParams: non-finite entry");
}

void Trajectory::check() const {
  if (frames.rows() < 2) throw InvalidArgument("Trajectory: need at least 2 frames");
  if (frames.cols() < 1) throw InvalidArgument("Trajectory: need at least 1 dimension");
  if (!(dt > 0) || !std::isfinite(dt)) throw InvalidArgument("Trajectory: dt must be positive");
  if (!frames.allFinite()) throw InvalidArgument("Trajectory: non-finite frame value");
}

BasisSet build_basis(const DmpConfig& config) {
  config.validate();
  const int b = config.n_basis;
  BasisSet basis;
  basis.centers.resize(b);
  basis.widths.resize(b);
  for (int i = 0; i < b; ++i)
    basis.centers[i] = std::exp(-config.alpha_x * static_cast<double>(i) / (b - 1));
  for (int i = 0; i + 1 < b; ++i) {
    if (!(basis.centers[i + 1] < basis.centers[i]))
      throw InvalidArgument("build_basis: basis centers collide; reduce n_basis");
    const double gap = std::max(basis.centers[i] - basis.centers[i + 1], kMinCenterGap);
    basis.widths[i] = 1.0 / (2.0 * gap * gap);
  }
  basis.widths[b - 1] = basis.widths[b - 2];
  return basis;
}

double canonical_phase(double t, const DmpConfig& config) {
  return std::exp(-config.alpha_x * t / config.tau);
}

Eigen::VectorXd forcing(double x, const DmpParams& params, const BasisSet& basis) {
  const Eigen::VectorXd psi = basis.activations(x);
  const double total = psi.sum();
  if (total < kActivationFloor) return Eigen::VectorXd::Zero(params.weights.rows());
  return (params.weights * psi) * (x / total);
}

namespace {

struct State {
  Eigen::VectorXd y;
  Eigen::VectorXd z;
};

State derivative(const State& s, double t, const DmpParams& params, const DmpConfig& config,
                 const BasisSet& basis) {
  const double x = canonical_phase(t, config);
  const Eigen::VectorXd f = forcing(x, params, basis);
  State d;
  d.y = s.z / config.tau;
  d.z = (config.alpha_z * (config.beta_z * (params.goal - s.y) - s.z) + f) / config.tau;
  return d;
}

}  // namespace

Trajectory rollout(const DmpParams& params, const DmpConfig& config, const BasisSet& basis) {
  config.validate();
  params.check(config);
  if (basis.size() != config.n_basis) throw InvalidArgument("rollout: basis size mismatch");

  const int frames = config.frame_count();
  const double h = config.dt_out / config.substeps;
  Trajectory out;
  out.dt = config.dt_out;
  out.frames.resize(frames, config.n_dims);
  RowMatrix velocities(frames, config.n_dims);

  State s{params.start, Eigen::VectorXd::Zero(config.n_dims)};
  out.frames.row(0) = s.y.transpose();
  velocities.row(0).setZero();
  for (int k = 1; k < frames; ++k) {
    for (int j = 0; j < config.substeps; ++j) {
      const double t = (k - 1) * config.dt_out + j * h;
      const State k1 = derivative(s, t, params, config, basis);
      const State k2 = derivative({s.y + 0.5 * h * k1.y, s.z + 0.5 * h * k1.z}, t + 0.5 * h, params,
                                  config, basis);
      const State k3 = derivative({s.y + 0.5 * h * k2.y, s.z + 0.5 * h * k2.z}, t + 0.5 * h, params,
                                  config, basis);
      const State k4 = derivative({s.y + h * k3.y, s.z + h * k3.z}, t + h, params, config, basis);
      s.y += (h / 6.0) * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y);
      s.z += (h / 6.0) * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z);
    }
    out.frames.row(k) = s.y.transpose();
    velocities.row(k) = (s.z / config.tau).transpose();
  }
  out.velocities = std::move(velocities);
  return out;
}

DmpParams fit(const Trajectory& demo, const DmpConfig& config, const BasisSet& basis) {
  config.validate();
  demo.check();
  const int T = demo.length();
  const int o = demo.n_dims();
  if (T < 5) throw InvalidArgument("fit: demonstration needs at least 5 frames");
  if (o != config.n_dims) throw InvalidArgument("fit: demonstration dimension mismatch");
  if (basis.size() != config.n_basis) throw InvalidArgument("fit: basis size mismatch");

  const RowMatrix& y = demo.frames;
  const double dt = demo.dt;
  RowMatrix yd(T, o);
  RowMatrix ydd(T, o);
  for (int k = 1; k + 1 < T; ++k) {
    yd.row(k) = (y.row(k + 1) - y.row(k - 1)) / (2.0 * dt);
    ydd.row(k) = (y.row(k + 1) - 2.0 * y.row(k) + y.row(k - 1)) / (dt * dt);
  }
  // Second-order one-sided stencils at the ends.
  yd.row(0) = (-3.0 * y.row(0) + 4.0 * y.row(1) - y.row(2)) / (2.0 * dt);
  yd.row(T - 1) = (3.0 * y.row(T - 1) - 4.0 * y.row(T - 2) + y.row(T - 3)) / (2.0 * dt);
  ydd.row(0) = (2.0 * y.row(0) - 5.0 * y.row(1) + 4.0 * y.row(2) - y.row(3)) / (dt * dt);
  ydd.row(T - 1) =
      (2.0 * y.row(T - 1) - 5.0 * y.row(T - 2) + 4.0 * y.row(T - 3) - y.row(T - 4)) / (dt * dt);

  DmpParams params;
  params.start = y.row(0).transpose();
  params.goal = y.row(T - 1).transpose();
  params.weights = RowMatrix::Zero(o, config.n_basis);

  const double tau = config.tau;
  const int b = config.n_basis;
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(o, b);
  Eigen::VectorXd den = Eigen::VectorXd::Zero(b);
  for (int k = 0; k < T; ++k) {
    const double x = canonical_phase(demo.time(k), config);
    const Eigen::VectorXd psi = basis.activations(x);
    const Eigen::VectorXd target =
        (tau * tau * ydd.row(k).transpose() -
         config.alpha_z * (config.beta_z * (params.goal - y.row(k).transpose()) -
                           tau * yd.row(k).transpose()));
    num.noalias() += (x * target) * psi.transpose();
    den += (x * x) * psi;
  }
  for (int i = 0; i < b; ++i) params.weights.col(i) = num.col(i) / (den[i] + kRidge);
  return params;
}

std::string trajectory_csv_header(int n_dims) {
  std::string header = "t";
  const int joints = n_dims == 7 ? 6 : n_dims;
  for (int j = 0; j < joints; ++j) header += ",q" + std::to_string(j);
  if (n_dims == 7) header += ",grip";
  return header;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  out << trajectory_csv_header(trajectory.n_dims()) << '\n';
  char buf[64];
  for (int k = 0; k < trajectory.length(); ++k) {
    std::snprintf(buf, sizeof buf, "%.9g", trajectory.time(k));
    out << buf;
    for (int j = 0; j < trajectory.n_dims(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.9g", trajectory.frames(k, j));
      out << buf;
    }
    out << '\n';
  }
}

void save_trajectory_csv(const std::string& path, const Trajectory& trajectory) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_trajectory_csv(out, trajectory);
  if (!out) throw IoError("write failed: " + path);
}

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("trajectory csv: missing header");
  const auto columns = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2 || line.rfind("t,", 0) != 0) throw IoError("trajectory csv: bad header");
  const int o = columns - 1;

  std::vector<double> times;
  std::vector<double> values;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    int col = 0;
    while (std::getline(fields, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw IoError("trajectory csv: bad number on line " + std::to_string(row));
      (col == 0 ? times : values).push_back(v);
      ++col;
    }
    if (col != columns)
      throw IoError("trajectory csv: wrong column count on line " + std::to_string(row));
  }
  const int T = static_cast<int>(times.size());
  if (T < 2) throw IoError("trajectory csv: need at least 2 rows");

  Trajectory traj;
  traj.frames = Eigen::Map<RowMatrix>(values.data(), T, o);
  traj.dt = (times.back() - times.front()) / (T - 1);
  traj.check();
  return traj;
}

Trajectory load_trajectory_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_trajectory_csv(in);
}

namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json to_json(const DmpParams& params) {
  nlohmann::json weights = nlohmann::json::array();
  for (Eigen::Index j = 0; j < params.weights.rows(); ++j)
    weights.push_back(to_vector(params.weights.row(j).transpose()));
  return {{"weights", weights}, {"goal", to_vector(params.goal)}, {"start", to_vector(params.start)}};
}

DmpParams dmp_params_from_json(const nlohmann::json& j) {
  try {
    DmpParams p;
    p.goal = from_vector(j.at("goal").get<std::vector<double>>());
    p.start = from_vector(j.at("start").get<std::vector<double>>());
    const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
    const Eigen::Index cols = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
    p.weights.resize(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<Eigen::Index>(rows[r].size()) != cols) throw InvalidArgument("DMP weights: ragged rows");
      p.weights.row(static_cast<Eigen::Index>(r)) = from_vector(rows[r]).transpose();
    }
    if (p.weights.rows() != p.goal.size() || p.start.size() != p.goal.size())
      throw InvalidArgument("DMP params: weights, goal and start disagree in dimension");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("DMP params: ") + e.what());
  }
}

nlohmann::json to_json(const DmpConfig& c) {
  return {{"n_dims", c.n_dims},   {"n_basis", c.n_basis}, {"alpha_z", c.alpha_z},
          {"beta_z", c.beta_z},   {"alpha_x", c.alpha_x}, {"tau", c.tau},
          {"dt_out", c.dt_out},   {"substeps", c.substeps}};
}

DmpConfig dmp_config_from_json(const nlohmann::json& j) {
  DmpConfig c;
  try {
    c.n_dims = j.value("n_dims", c.n_dims);
    c.n_basis = j.value("n_basis", c.n_basis);
    c.alpha_z = j.value("alpha_z", c.alpha_z);
    c.beta_z = j.value("beta_z", c.beta_z);
    c.alpha_x = j.value("alpha_x", c.alpha_x);
    c.tau = j.value("tau", c.tau);
    c.dt_out = j.value("dt_out", c.dt_out);
    c.substeps = j.value("substeps", c.substeps);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("DMP config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace lcms::dmp
