#include "crl/verify.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "crl/counterexamples.hpp"
#include "crl/mixing.hpp"
#include "crl/oracle.hpp"

namespace crl {

ScmFamily random_family(int d, double k, const std::vector<InterventionKind>& kinds,
                        bool with_shifts, Rng& rng) {
  if (kinds.empty()) throw std::invalid_argument("random_family: no kinds given");
  ScmFamily family;
  family.dag = sample_er_dag(d, k, rng);
  sample_weights(family.dag, {0.25, 1.0, 1.0, 2.0}, rng, family.A, family.D);
  ScmEnvironment obs;
  obs.B = family.observational_b();
  family.environments.push_back(obs);
  for (int t = 0; t < d; ++t) {
    InterventionSpec spec;
    spec.target = t;
    spec.kind = kinds[rng.uniform_int(static_cast<int>(kinds.size()))];
    spec.eta = with_shifts || spec.kind == InterventionKind::pure_shift
                   ? rng.uniform_signed_band(0.5, 1.5)
                   : 0.0;
    if (spec.kind == InterventionKind::perfect)
      spec.lambda = 1.0 / std::sqrt(rng.uniform(0.3, 3.0));
    spec.resample = {0.25, 1.0, 1.0, 2.0};
    family.environments.push_back(apply_intervention(family, spec, rng));
  }
  return family;
}

void VerifyReport::add(const std::string& name, const std::string& metric, double value,
                       double threshold, bool ok) {
  checks.push_back({name, value, metric, threshold, ok});
  pass = pass && ok;
}

nlohmann::json VerifyReport::to_json() const {
  nlohmann::json j;
  j["pass"] = pass;
  nlohmann::json arr = nlohmann::json::array();
  for (const VerifyCheck& c : checks)
    arr.push_back({{"name", c.name}, {"metric", c.metric}, {"value", c.value},
                   {"threshold", c.threshold}, {"pass", c.pass}});
  j["checks"] = std::move(arr);
  return j;
}

namespace {

int symmetric_rank(const Eigen::MatrixXd& m) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
  if (scale <= 0) return 0;
  int rank = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (std::abs(es.eigenvalues()(i)) > 1e-8 * scale) ++rank;
  return rank;
}

}  // namespace

VerifyReport verify_oracle(const OracleVerifyConfig& cfg) {
  VerifyReport report;
  Rng rng(cfg.seed);
  const std::vector<InterventionKind> kinds = {InterventionKind::perfect,
                                               InterventionKind::imperfect,
                                               InterventionKind::pure_shift};

  double max_log_odds = 0.0, max_perfect_cross = 0.0;
  for (int f = 0; f < cfg.families; ++f) {
    const int d = 1 + rng.uniform_int(cfg.d_max);
    const ScmFamily family = random_family(d, 1.5, kinds, true, rng);
    std::vector<GaussianStats> stats;
    for (const ScmEnvironment& env : family.environments) stats.push_back(gaussian_stats(env));
    const int n_envs = static_cast<int>(family.environments.size());
    for (int p = 0; p < cfg.points; ++p) {
      Eigen::VectorXd z(d);
      for (int i = 0; i < d; ++i) z(i) = 2.0 * rng.normal();
      const int e = 1 + (p % (n_envs - 1));
      const double reference = gaussian_log_density(stats[e], z) - gaussian_log_density(stats[0], z);
      const double expr = log_odds_difference(family, e, z);
      max_log_odds = std::max(max_log_odds, std::abs(expr - reference));
      if (family.environments[e].kind == InterventionKind::perfect) {
        const double closed = analytic_log_odds(family, e, z);
        max_perfect_cross = std::max(max_perfect_cross, std::abs(closed - reference));
      }
    }
  }
  report.add("log_odds_vs_density_difference", "max_abs_residual", max_log_odds, cfg.tol_log_odds,
             max_log_odds < cfg.tol_log_odds);
  report.add("perfect_closed_form_vs_density_difference", "max_abs_residual", max_perfect_cross,
             cfg.tol_log_odds, max_perfect_cross < cfg.tol_log_odds);

  double max_lemma2 = 0.0, max_cs_linear = 0.0, max_cs_quadratic = 0.0;
  bool rank_ok = true;
  int worst_rank = 0;
  for (int f = 0; f < cfg.lemma2_families; ++f) {
    const int d = 1 + rng.uniform_int(cfg.d_max);
    const ScmFamily family = random_family(d, 1.5, kinds, true, rng);
    const Eigen::MatrixXd b0 = family.observational().B;
    for (std::size_t e = 1; e < family.environments.size(); ++e) {
      const ScmEnvironment& env = family.environments[e];
      const PrecisionDifference pd = precision_difference(env, family.observational());
      const Eigen::MatrixXd outer =
          pd.s_tilde * pd.s_tilde.transpose() - pd.s * pd.s.transpose();
      max_lemma2 = std::max(max_lemma2, (pd.delta - outer).cwiseAbs().maxCoeff());

      const int rank = symmetric_rank(pd.delta);
      worst_rank = std::max(worst_rank, rank);
      if (rank > 2) rank_ok = false;
      if (family.dag.is_source(env.target) && env.kind != InterventionKind::pure_shift && rank != 1)
        rank_ok = false;

      if (env.kind != InterventionKind::pure_shift) {
        const CompleteSquare cs = complete_square(family, static_cast<int>(e));
        max_cs_linear = std::max(
            max_cs_linear, (pd.delta * cs.mu_prime - env.eta * pd.s_tilde).cwiseAbs().maxCoeff());
        const GaussianStats st = gaussian_stats(env);
        for (int p = 0; p < 100; ++p) {
          Eigen::VectorXd z(d);
          for (int i = 0; i < d; ++i) z(i) = 2.0 * rng.normal();
          const Eigen::VectorXd zc = z - st.mu;
          const double lhs = zc.dot(st.theta * zc) - z.dot(b0.transpose() * b0 * z);
          const Eigen::VectorXd zp = z - cs.mu_prime;
          const double rhs = zp.dot(pd.delta * zp) + cs.c;
          max_cs_quadratic = std::max(max_cs_quadratic, std::abs(lhs - rhs));
        }
      }
    }
  }
  report.add("lemma2_identity", "max_abs_residual", max_lemma2, cfg.tol_lemma2,
             max_lemma2 < cfg.tol_lemma2);
  report.add("delta_rank", "max_rank", static_cast<double>(worst_rank), 2.0, rank_ok);
  report.add("complete_square_linear_system", "max_abs_residual", max_cs_linear,
             cfg.tol_complete_square, max_cs_linear < cfg.tol_complete_square);
  report.add("complete_square_quadratic", "max_abs_residual", max_cs_quadratic,
             cfg.tol_complete_square, max_cs_quadratic < cfg.tol_complete_square);
  return report;
}

namespace {

Eigen::MatrixXd standard_normal_matrix(int n, int d, Rng& rng) {
  Eigen::MatrixXd m(n, d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) m(r, c) = rng.normal();
  return m;
}

// Relative residual of the best affine fit z -> h(z); large values witness
// nonlinearity of the map.
double affine_fit_residual(const Eigen::MatrixXd& z, const Eigen::MatrixXd& hz) {
  const int n = static_cast<int>(z.rows());
  Eigen::MatrixXd design(n, z.cols() + 1);
  design.leftCols(z.cols()) = z;
  design.col(z.cols()).setOnes();
  const Eigen::MatrixXd coef = design.colPivHouseholderQr().solve(hz);
  const double sse = (design * coef - hz).squaredNorm();
  const Eigen::MatrixXd centered = hz.rowwise() - hz.colwise().mean();
  return std::sqrt(sse / centered.squaredNorm());
}

void check_preserves(VerifyReport& report, const std::string& name, const Eigen::MatrixXd& pushed,
                     const Eigen::MatrixXd& fresh, const CounterexampleVerifyConfig& cfg, Rng& rng) {
  const EnergyTestResult res =
      energy_distance_test(pushed, fresh, cfg.permutations, rng, cfg.test_max_points);
  report.add(name, "p_value", res.p_value, cfg.p_threshold, res.p_value > cfg.p_threshold);
}

void verify_rotation(VerifyReport& report, const CounterexampleVerifyConfig& cfg, Rng& rng) {
  auto angle = [](double r) { return 1.5 * std::sin(r); };
  const Eigen::MatrixXd z = standard_normal_matrix(cfg.n_samples, 2, rng);
  Eigen::MatrixXd pushed(z.rows(), 2);
  double max_norm_drift = 0.0;
  for (int r = 0; r < z.rows(); ++r) {
    const Eigen::Vector2d out = radius_rotation(z.row(r).transpose(), angle);
    pushed.row(r) = out.transpose();
    max_norm_drift = std::max(max_norm_drift, std::abs(out.norm() - z.row(r).norm()));
  }
  report.add("rotation_norm_preserved", "max_abs_residual", max_norm_drift, 1e-12,
             max_norm_drift < 1e-12);
  const Eigen::MatrixXd fresh = standard_normal_matrix(cfg.n_samples, 2, rng);
  check_preserves(report, "rotation_pushforward_N01", pushed, fresh, cfg, rng);
  const double lin_res = affine_fit_residual(z.topRows(5000), pushed.topRows(5000));
  report.add("rotation_nonlinearity", "relative_residual", lin_res, 1e-2, lin_res > 1e-2);
}

void verify_pair_flow(VerifyReport& report, const CounterexampleVerifyConfig& cfg, Rng& rng) {
  const Eigen::Matrix2d sigma0 = Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d sigma1 = 2.0 * Eigen::Matrix2d::Identity();
  FlowSpec spec;
  const FlowMap h = gaussian_pair_flow(sigma0, sigma1, spec);

  const Eigen::MatrixXd z0 = standard_normal_matrix(cfg.n_samples, 2, rng);
  const Eigen::MatrixXd z1 = std::sqrt(2.0) * standard_normal_matrix(cfg.n_samples, 2, rng);
  const Eigen::MatrixXd p0 = h.push(z0);
  const Eigen::MatrixXd p1 = h.push(z1);
  check_preserves(report, "pair_flow_env0", p0, standard_normal_matrix(cfg.n_samples, 2, rng), cfg, rng);
  check_preserves(report, "pair_flow_env1", p1,
                  Eigen::MatrixXd(std::sqrt(2.0) * standard_normal_matrix(cfg.n_samples, 2, rng)),
                  cfg, rng);

  double max_inv = 0.0;
  for (int r = 0; r < 1000; ++r) {
    const Eigen::Vector2d z = z0.row(r).transpose();
    max_inv = std::max(max_inv, (h.inverse(h(z)) - z).norm());
  }
  report.add("pair_flow_invertible", "max_abs_residual", max_inv, 1e-6, max_inv < 1e-6);

  const double lin_res = affine_fit_residual(z0.topRows(5000), p0.topRows(5000));
  report.add("pair_flow_nonlinearity", "relative_residual", lin_res, 1e-2, lin_res > 1e-2);
}

void verify_do_flow(VerifyReport& report, const CounterexampleVerifyConfig& cfg, Rng& rng) {
  FlowSpec spec;
  const FlowMap h = do_intervention_flow(spec);

  const Eigen::MatrixXd z = standard_normal_matrix(cfg.n_samples, 2, rng);
  const Eigen::MatrixXd pushed = h.push(z);
  check_preserves(report, "do_flow_pushforward_N01", pushed,
                  standard_normal_matrix(cfg.n_samples, 2, rng), cfg, rng);

  double max_axis = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double v = -5.0 + 10.0 * i / 499.0;
    max_axis = std::max(max_axis, (h(Eigen::Vector2d(v, 0.0)) - Eigen::Vector2d(v, 0.0)).norm());
    max_axis = std::max(max_axis, (h(Eigen::Vector2d(0.0, v)) - Eigen::Vector2d(0.0, v)).norm());
  }
  report.add("do_flow_fixes_axes", "max_abs_residual", max_axis, 1e-12, max_axis < 1e-12);

  double max_disp = 0.0;
  for (int r = 0; r < 2000; ++r) {
    const Eigen::Vector2d p(spec.center_x - spec.rho + 2 * spec.rho * rng.uniform(),
                            spec.center_y - spec.rho + 2 * spec.rho * rng.uniform());
    max_disp = std::max(max_disp, (h(p) - p).norm());
  }
  report.add("do_flow_moves_bump_interior", "max_displacement", max_disp, 0.01, max_disp > 0.01);

  double max_inv = 0.0;
  for (int r = 0; r < 1000; ++r) {
    const Eigen::Vector2d p = z.row(r).transpose();
    max_inv = std::max(max_inv, (h.inverse(h(p)) - p).norm());
  }
  report.add("do_flow_invertible", "max_abs_residual", max_inv, 1e-6, max_inv < 1e-6);
}

void verify_shift(VerifyReport& report, const CounterexampleVerifyConfig& cfg, Rng& rng) {
  const int d = 3;
  ScmFamily family = random_family(d, 1.0, {InterventionKind::pure_shift}, true, rng);
  // Any acyclic B_tilde: a weighted chain with unit diagonal.
  Eigen::MatrixXd b_tilde = Eigen::MatrixXd::Identity(d, d);
  b_tilde(1, 0) = -0.8;
  b_tilde(2, 1) = 0.6;
  Rng rng_mix = rng.split();
  const MixingFunction mixing = MixingFunction::mlp(d, 6, rng_mix);
  const ShiftCounterexampleResult res =
      shift_counterexample(family, b_tilde, mixing, cfg.shift_draws, rng);
  report.add("shift_pathwise_match", "max_abs_residual", res.max_pathwise_diff, 1e-9,
             res.max_pathwise_diff < 1e-9);
  report.add("shift_graphs_differ", "shd", static_cast<double>(res.shd_between_graphs), 0.0,
             res.shd_between_graphs > 0);
}

void verify_uniform(VerifyReport& report, const CounterexampleVerifyConfig& cfg, Rng& rng) {
  const Eigen::Vector2d a = uniform_counterexample_map({0.5, 0.5});
  const Eigen::Vector2d b = uniform_counterexample_map({0.5, 2.8});
  report.add("uniform_plateau_region", "max_abs_residual",
             (a - Eigen::Vector2d(0.5, 1.0)).cwiseAbs().maxCoeff(), 1e-12,
             (a - Eigen::Vector2d(0.5, 1.0)).cwiseAbs().maxCoeff() < 1e-12);
  report.add("uniform_vanishing_region", "max_abs_residual",
             (b - Eigen::Vector2d(0.5, 2.8)).cwiseAbs().maxCoeff(), 1e-12,
             (b - Eigen::Vector2d(0.5, 2.8)).cwiseAbs().maxCoeff() < 1e-12);

  bool monotone = true;
  for (double z1 : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 1000; ++i) {
      const double z2 = -3.0 + 6.0 * i / 999.0;
      const double v = uniform_counterexample_map({z1, z2})(1);
      if (v <= prev) monotone = false;
      prev = v;
    }
  }
  report.add("uniform_monotone_in_z2", "boolean", monotone ? 1.0 : 0.0, 1.0, monotone);

  double max_slope = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const double t = -3.0 + 6.0 * i / 1999.0;
    const double h = 1e-6;
    max_slope = std::max(max_slope, std::abs(uniform_counterexample_psi(t + h) -
                                             uniform_counterexample_psi(t - h)) /
                                        (2 * h));
  }
  report.add("uniform_psi_slope_below_one", "max_abs_slope", max_slope, 1.0, max_slope < 1.0);

  // Pushforwards of the two uniform environments against their targets.
  const int n = cfg.n_samples;
  Eigen::MatrixXd z0(n, 2), target0(n, 2), z1(n, 2), target1(n, 2);
  for (int r = 0; r < n; ++r) {
    const double e1 = rng.uniform(-1, 1), e2 = rng.uniform(-1, 1);
    z0.row(r) << e1, e2;
    const double f1 = rng.uniform(-1, 1), f2 = rng.uniform(-1, 1);
    target0.row(r) << f1, f1 + f2;
    const double g1 = rng.uniform(-3, 3), g2 = rng.uniform(-1, 1);
    z1.row(r) << g1, g2;
    const double h1 = rng.uniform(-3, 3), h2 = rng.uniform(-1, 1);
    target1.row(r) << h1, h1 + h2;
  }
  Eigen::MatrixXd pushed0(n, 2), pushed1(n, 2);
  for (int r = 0; r < n; ++r) {
    pushed0.row(r) = uniform_counterexample_map(z0.row(r).transpose()).transpose();
    pushed1.row(r) = uniform_counterexample_map(z1.row(r).transpose()).transpose();
  }
  check_preserves(report, "uniform_env0_pushforward", pushed0, target0, cfg, rng);
  check_preserves(report, "uniform_env1_pushforward", pushed1, target1, cfg, rng);
}

}  // namespace

VerifyReport verify_counterexamples(const CounterexampleVerifyConfig& cfg, const std::string& which) {
  VerifyReport report;
  Rng rng(cfg.seed);
  const bool all = which == "all" || which.empty();
  if (all || which == "rotation") verify_rotation(report, cfg, rng);
  if (all || which == "pair-flow") verify_pair_flow(report, cfg, rng);
  if (all || which == "do-flow") verify_do_flow(report, cfg, rng);
  if (all || which == "shift") verify_shift(report, cfg, rng);
  if (all || which == "uniform") verify_uniform(report, cfg, rng);
  if (report.checks.empty())
    throw std::invalid_argument("verify_counterexamples: unknown selection " + which);
  return report;
}

}  // namespace crl
