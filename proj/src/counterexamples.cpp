#include "crl/counterexamples.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "crl/metrics.hpp"

namespace crl {

void FlowSpec::validate() const {
  if (r0 <= 0 || r1 <= r0) throw std::invalid_argument("FlowSpec: need 0 < r0 < r1");
  if (rho <= 0) throw std::invalid_argument("FlowSpec: rho must be positive");
  if (step <= 0 || step > kMaxStep)
    throw std::invalid_argument("FlowSpec: step must lie in (0, 0.05]");
  if (amplitude <= 0) throw std::invalid_argument("FlowSpec: amplitude must be positive");
}

Eigen::Vector2d radius_rotation(const Eigen::Vector2d& z,
                                const std::function<double(double)>& angle_fn) {
  const double angle = angle_fn(z.norm());
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * z(0) - s * z(1), s * z(0) + c * z(1)};
}

FlowMap::FlowMap(Field field, double time, double step, const Eigen::Matrix2d& pre,
                 const Eigen::Matrix2d& post)
    : field_(std::move(field)), time_(time), step_(step), pre_(pre), post_(post) {}

Eigen::Vector2d FlowMap::map(const Eigen::Vector2d& z, double t) const {
  Eigen::Vector2d w = pre_ * z;
  const double h = t >= 0 ? step_ : -step_;
  const int full_steps = static_cast<int>(std::floor(std::abs(t) / step_));
  const double rest = t - full_steps * h;
  auto rk4 = [&](const Eigen::Vector2d& y, double dt) {
    const Eigen::Vector2d k1 = field_(y);
    const Eigen::Vector2d k2 = field_(y + 0.5 * dt * k1);
    const Eigen::Vector2d k3 = field_(y + 0.5 * dt * k2);
    const Eigen::Vector2d k4 = field_(y + dt * k3);
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  };
  for (int i = 0; i < full_steps; ++i) w = rk4(w, h);
  if (rest != 0.0) w = rk4(w, rest);
  return post_ * w;
}

Eigen::MatrixXd FlowMap::push(const Eigen::MatrixXd& z) const {
  if (z.cols() != 2) throw std::invalid_argument("FlowMap::push: two columns expected");
  Eigen::MatrixXd out(z.rows(), 2);
  for (int r = 0; r < z.rows(); ++r) out.row(r) = (*this)(Eigen::Vector2d(z.row(r))).transpose();
  return out;
}

namespace {

// C^2 bump (1 - u^2)^3 on |u| < 1.
double poly_bump(double u) {
  const double a = 1.0 - u * u;
  return a > 0 ? a * a * a : 0.0;
}

}  // namespace

FlowMap gaussian_pair_flow(const Eigen::Matrix2d& sigma0, const Eigen::Matrix2d& sigma1,
                           const FlowSpec& spec) {
  spec.validate();
  const Eigen::Matrix2d diff = sigma1 - sigma0;
  {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(diff);
    if (es.eigenvalues().minCoeff() <= 0)
      throw std::invalid_argument("gaussian_pair_flow: sigma1 - sigma0 must be positive definite");
  }

  // Coordinates w = T z in which Theta0 - Theta1 = Id: whiten sigma0,
  // diagonalize, then rescale axis j by sqrt(1 - 1/lambda_j).
  const Eigen::Matrix2d l0 = sigma0.llt().matrixL();
  const Eigen::Matrix2d l0_inv = l0.inverse();
  const Eigen::Matrix2d m = l0_inv * sigma1 * l0_inv.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(m);
  const Eigen::Vector2d lambda = es.eigenvalues();
  const Eigen::Matrix2d u = es.eigenvectors();
  Eigen::Vector2d c;
  for (int j = 0; j < 2; ++j) c(j) = std::sqrt(1.0 - 1.0 / lambda(j));
  const Eigen::Matrix2d t_fwd = c.asDiagonal() * u.transpose() * l0_inv;
  const Eigen::Matrix2d t_inv = t_fwd.inverse();

  // In w-coordinates the environment densities differ by a radial factor, so
  // the field f(|w|) X0(w) / p0(w) with a rotational X0 preserves both.
  const double norm_const = 1.0 / (2.0 * std::numbers::pi * c(0) * c(1));
  const Eigen::Vector2d c2 = c.cwiseProduct(c);
  auto raw_speed = [=](const Eigen::Vector2d& w) {
    const double r = w.norm();
    const double mid = 0.5 * (spec.r0 + spec.r1);
    const double halfw = 0.5 * (spec.r1 - spec.r0);
    const double f = poly_bump((r - mid) / halfw);
    const double p0 = norm_const * std::exp(-0.5 * (w(0) * w(0) / c2(0) + w(1) * w(1) / c2(1)));
    return f / p0 * r;
  };
  // Peak speed over the support, for rescaling to spec.amplitude.
  double peak = 0.0;
  const int grid = 200;
  for (int i = 0; i <= grid; ++i) {
    const double r = spec.r0 + (spec.r1 - spec.r0) * i / grid;
    for (int a = 0; a < grid; ++a) {
      const double phi = 2.0 * std::numbers::pi * a / grid;
      peak = std::max(peak, raw_speed({r * std::cos(phi), r * std::sin(phi)}));
    }
  }
  if (peak <= 0) throw std::invalid_argument("gaussian_pair_flow: empty bump support");
  const double scale = spec.amplitude / peak;

  auto field = [=](const Eigen::Vector2d& w) -> Eigen::Vector2d {
    const double r = w.norm();
    if (r <= spec.r0 || r >= spec.r1) return Eigen::Vector2d::Zero();
    const double mid = 0.5 * (spec.r0 + spec.r1);
    const double halfw = 0.5 * (spec.r1 - spec.r0);
    const double f = poly_bump((r - mid) / halfw);
    const double p0 = norm_const * std::exp(-0.5 * (w(0) * w(0) / c2(0) + w(1) * w(1) / c2(1)));
    return scale * (f / p0) * Eigen::Vector2d(-w(1), w(0));
  };
  return FlowMap(field, spec.time, spec.step, t_fwd, t_inv);
}

FlowMap do_intervention_flow(const FlowSpec& spec) {
  spec.validate();
  if (spec.center_x - spec.rho <= 0 || spec.center_y - spec.rho <= 0)
    throw std::invalid_argument("do_intervention_flow: bump support touches an axis");

  const Eigen::Vector2d center(spec.center_x, spec.center_y);
  // X0 = perpendicular gradient of psi(z) = bump(|z - center| / rho); then
  // X = X0 / p0 satisfies div(p0 X) = div X0 = 0.
  auto grad_psi = [=](const Eigen::Vector2d& z) -> Eigen::Vector2d {
    const Eigen::Vector2d rel = z - center;
    const double u2 = rel.squaredNorm() / (spec.rho * spec.rho);
    if (u2 >= 1.0) return Eigen::Vector2d::Zero();
    const double a = 1.0 - u2;
    // d/dz (1-u^2)^3 = -6 (1-u^2)^2 rel / rho^2
    return (-6.0 * a * a / (spec.rho * spec.rho)) * rel;
  };
  auto raw_field = [=](const Eigen::Vector2d& z) -> Eigen::Vector2d {
    const Eigen::Vector2d g = grad_psi(z);
    if (g(0) == 0.0 && g(1) == 0.0) return Eigen::Vector2d::Zero();
    const double p0 = std::exp(-0.5 * z.squaredNorm()) / (2.0 * std::numbers::pi);
    return Eigen::Vector2d(-g(1), g(0)) / p0;
  };
  double peak = 0.0;
  const int grid = 300;
  for (int i = 0; i <= grid; ++i) {
    for (int j = 0; j <= grid; ++j) {
      const Eigen::Vector2d z(spec.center_x - spec.rho + 2.0 * spec.rho * i / grid,
                              spec.center_y - spec.rho + 2.0 * spec.rho * j / grid);
      peak = std::max(peak, raw_field(z).norm());
    }
  }
  const double scale = spec.amplitude / peak;
  auto field = [=](const Eigen::Vector2d& z) -> Eigen::Vector2d { return scale * raw_field(z); };
  return FlowMap(field, spec.time, spec.step);
}

ShiftCounterexampleResult shift_counterexample(const ScmFamily& family,
                                               const Eigen::MatrixXd& b_tilde,
                                               const MixingFunction& mixing, int n_draws, Rng& rng) {
  const int d = family.d();
  for (std::size_t e = 1; e < family.environments.size(); ++e) {
    if (family.environments[e].kind != InterventionKind::pure_shift)
      throw std::invalid_argument("shift_counterexample: all interventions must be pure shifts");
  }
  if (b_tilde.rows() != d || b_tilde.cols() != d)
    throw std::invalid_argument("shift_counterexample: B_tilde shape mismatch");
  for (int j = 0; j < d; ++j)
    if (b_tilde(j, j) <= 0)
      throw std::invalid_argument("shift_counterexample: B_tilde diagonal must be positive");

  // Recover (A_tilde, D_tilde) from B_tilde and require an acyclic support.
  Eigen::VectorXd d_tilde(d);
  Eigen::MatrixXd a_tilde = Eigen::MatrixXd::Zero(d, d);
  std::vector<std::pair<int, int>> edges;
  for (int j = 0; j < d; ++j) {
    d_tilde(j) = 1.0 / (b_tilde(j, j) * b_tilde(j, j));
    for (int i = 0; i < d; ++i) {
      if (i == j) continue;
      a_tilde(j, i) = -b_tilde(j, i) / b_tilde(j, j);
      if (a_tilde(j, i) != 0.0) edges.emplace_back(i, j);
    }
  }

  ShiftCounterexampleResult res;
  res.alt_family.dag = Dag::from_edges(d, edges);  // throws on cycles
  res.alt_family.A = a_tilde;
  res.alt_family.D = d_tilde;
  for (const ScmEnvironment& env : family.environments) {
    ScmEnvironment alt = env;
    alt.B = b_tilde;
    res.alt_family.environments.push_back(std::move(alt));
  }
  res.shd_between_graphs = shd(family.dag.edges, res.alt_family.dag.edges);

  const Eigen::MatrixXd b_obs = family.observational().B;
  res.transfer = Eigen::PartialPivLU<Eigen::MatrixXd>(b_obs).solve(b_tilde);

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu_b(b_obs);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu_bt(b_tilde);
  double max_diff = 0.0;
  for (std::size_t e = 0; e < family.environments.size(); ++e) {
    const ScmEnvironment& env = family.environments[e];
    Eigen::MatrixXd eps(d, n_draws);
    for (int col = 0; col < n_draws; ++col)
      for (int row = 0; row < d; ++row) eps(row, col) = rng.normal();
    if (env.target >= 0) eps.row(env.target).array() += env.eta;
    const Eigen::MatrixXd z = lu_b.solve(eps).transpose();        // n x d
    const Eigen::MatrixXd z_tilde = lu_bt.solve(eps).transpose();
    const Eigen::MatrixXd x = mixing.apply(z);
    const Eigen::MatrixXd x_tilde = mixing.apply(z_tilde * res.transfer.transpose());
    max_diff = std::max(max_diff, (x - x_tilde).cwiseAbs().maxCoeff());
  }
  res.max_pathwise_diff = max_diff;
  return res;
}

double uniform_counterexample_psi(double t) {
  const double s = std::abs(t) - 1.0;
  if (s <= 0) return 1.0;
  // C^1 descent from 1 to 0 over width 1.5 with |psi'| <= 0.8: the slope
  // profile is a trapezoid with ramps of length 0.25 and plateau 0.8.
  const double len = 1.5, ramp = 0.25, slope = 1.0 / (len - ramp);
  if (s >= len) return 0.0;
  double integral;
  if (s <= ramp)
    integral = slope * s * s / (2.0 * ramp);
  else if (s <= len - ramp)
    integral = slope * ramp / 2.0 + slope * (s - ramp);
  else
    integral = 1.0 - slope * (len - s) * (len - s) / (2.0 * ramp);
  return 1.0 - integral;
}

Eigen::Vector2d uniform_counterexample_map(const Eigen::Vector2d& z) {
  return {z(0), z(1) + uniform_counterexample_psi(z(1)) * z(0)};
}

EnergyTestResult energy_distance_test(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                      int n_permutations, Rng& rng, int max_points) {
  if (a.rows() == 0 || b.rows() == 0)
    throw std::invalid_argument("energy_distance_test: empty sample set");
  if (a.cols() != b.cols()) throw std::invalid_argument("energy_distance_test: dimension mismatch");
  if (n_permutations < 1) throw std::invalid_argument("energy_distance_test: need permutations");

  auto subsample = [&](const Eigen::MatrixXd& m) {
    if (m.rows() <= max_points) return m;
    std::vector<int> idx(m.rows());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    Eigen::MatrixXd out(max_points, m.cols());
    for (int r = 0; r < max_points; ++r) out.row(r) = m.row(idx[r]);
    return out;
  };
  const Eigen::MatrixXd sa = subsample(a);
  const Eigen::MatrixXd sb = subsample(b);
  const int na = static_cast<int>(sa.rows()), nb = static_cast<int>(sb.rows());
  const int n = na + nb;

  Eigen::MatrixXd pooled(n, sa.cols());
  pooled.topRows(na) = sa;
  pooled.bottomRows(nb) = sb;

  // Pairwise distances once; permutations only re-partition the index set.
  Eigen::MatrixXd dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      const double v = (pooled.row(i) - pooled.row(j)).norm();
      dist(i, j) = v;
      dist(j, i) = v;
    }
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) total += dist(i, j);

  auto statistic = [&](const std::vector<int>& idx) {
    double s_a = 0.0, s_b = 0.0;
    for (int i = 0; i < na; ++i)
      for (int j = i + 1; j < na; ++j) s_a += dist(idx[i], idx[j]);
    for (int i = na; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s_b += dist(idx[i], idx[j]);
    const double s_ab = total - s_a - s_b;
    return 2.0 * s_ab / (static_cast<double>(na) * nb) - 2.0 * s_a / (static_cast<double>(na) * na) -
           2.0 * s_b / (static_cast<double>(nb) * nb);
  };

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  EnergyTestResult res;
  res.points_used_a = na;
  res.points_used_b = nb;
  res.statistic = statistic(idx);

  int geq = 0;
  for (int p = 0; p < n_permutations; ++p) {
    rng.shuffle(idx);
    if (statistic(idx) >= res.statistic) ++geq;
  }
  res.p_value = (1.0 + geq) / (1.0 + n_permutations);
  return res;
}

}  // namespace crl
