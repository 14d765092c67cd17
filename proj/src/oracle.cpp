#include "crl/oracle.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace crl {

double gaussian_log_density(const GaussianStats& stats, const Eigen::VectorXd& z) {
  const int d = static_cast<int>(stats.theta.rows());
  if (z.size() != d) throw std::invalid_argument("gaussian_log_density: dimension mismatch");
  const Eigen::VectorXd centered = z - stats.mu;
  const double quad = centered.dot(stats.theta * centered);
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * stats.logdet_sigma - 0.5 * quad;
}

namespace {

const ScmEnvironment& checked_env(const ScmFamily& family, int env_index) {
  if (env_index <= 0 || env_index >= static_cast<int>(family.environments.size()))
    throw std::invalid_argument("oracle: env_index must name an interventional environment");
  return family.environments[env_index];
}

// c_i = -(1/2) ln(|Sigma_i|/|Sigma_0|) - (1/2) mu^T Theta_i mu; the second
// term equals eta^2 / 2 because Theta_i mu = eta * s_tilde and mu^T s_tilde = eta.
double log_odds_constant(const ScmFamily& family, const ScmEnvironment& env) {
  const GaussianStats st_i = gaussian_stats(env);
  const GaussianStats st_0 = gaussian_stats(family.observational());
  return -0.5 * (st_i.logdet_sigma - st_0.logdet_sigma) - 0.5 * env.eta * env.eta;
}

}  // namespace

double analytic_log_odds(const ScmFamily& family, int env_index, const Eigen::VectorXd& z) {
  const ScmEnvironment& env = checked_env(family, env_index);
  if (env.kind != InterventionKind::perfect)
    throw std::invalid_argument("analytic_log_odds: perfect intervention required");
  const int t = env.target;
  const double lambda = env.B(t, t);
  const Eigen::VectorXd s = family.observational().B.row(t).transpose();
  const double c = log_odds_constant(family, env);
  const double zt = z(t);
  const double dot = s.dot(z);
  return c - 0.5 * lambda * lambda * zt * zt + env.eta * lambda * zt + 0.5 * dot * dot;
}

double log_odds_difference(const ScmFamily& family, int env_index, const Eigen::VectorXd& z) {
  const ScmEnvironment& env = checked_env(family, env_index);
  const PrecisionDifference pd = precision_difference(env, family.observational());
  const double c = log_odds_constant(family, env);
  const double dot_tilde = pd.s_tilde.dot(z);
  const double dot_obs = pd.s.dot(z);
  return c - 0.5 * dot_tilde * dot_tilde + 0.5 * dot_obs * dot_obs + env.eta * dot_tilde;
}

CompleteSquare complete_square(const ScmFamily& family, int env_index) {
  const ScmEnvironment& env = checked_env(family, env_index);
  const PrecisionDifference pd = precision_difference(env, family.observational());
  if (pd.delta.cwiseAbs().maxCoeff() < 1e-14)
    throw std::invalid_argument("complete_square: Theta_i equals Theta_0 (pure shift)");

  const Eigen::VectorXd& s = pd.s;
  const Eigen::VectorXd& st = pd.s_tilde;
  const double eta = env.eta;

  // Solve (Theta_i - Theta_0) mu' = eta * s_tilde on span{s, s_tilde}.
  CompleteSquare out;
  const double cross = s.dot(st);
  const double s2 = s.squaredNorm(), st2 = st.squaredNorm();
  const bool collinear = std::abs(cross * cross - s2 * st2) <= 1e-12 * s2 * st2;
  if (collinear) {
    // s_tilde = kappa * s; mu' = t * s_tilde with t * st2 * (1 - 1/kappa^2) = eta.
    const double kappa2 = st2 / s2;
    const double denom = st2 * (1.0 - 1.0 / kappa2);
    if (std::abs(denom) < 1e-14)
      throw std::invalid_argument("complete_square: degenerate collinear rows");
    out.mu_prime = (eta / denom) * st;
  } else {
    // mu'^T s = 0 and mu'^T s_tilde = eta.
    const Eigen::VectorXd orth = st - (cross / s2) * s;
    out.mu_prime = (eta / st.dot(orth)) * orth;
  }

  const GaussianStats st_i = gaussian_stats(env);
  const double lhs0 = st_i.mu.dot(st_i.theta * st_i.mu);          // LHS at z = 0
  const double rhs0 = out.mu_prime.dot(pd.delta * out.mu_prime);  // quadratic at z = 0
  out.c = lhs0 - rhs0;
  return out;
}

OracleFit oracle_head_fit(const ScmFamily& family, const Eigen::MatrixXd* linear_mixing) {
  const int d = family.d();
  Eigen::VectorXd alpha(d), beta(d), gamma(d);
  Eigen::MatrixXd w(d, d);
  const Eigen::MatrixXd b_obs = family.observational().B;

  for (int i = 0; i < d; ++i) {
    bool found = false;
    for (std::size_t e = 1; e < family.environments.size(); ++e) {
      const ScmEnvironment& env = family.environments[e];
      if (env.target != i) continue;
      if (env.kind != InterventionKind::perfect)
        throw std::invalid_argument("oracle_head_fit: all interventions must be perfect");
      const double lambda = env.B(i, i);
      alpha(i) = log_odds_constant(family, env);
      beta(i) = 0.5 * lambda * lambda;
      gamma(i) = env.eta * lambda;
      found = true;
      break;
    }
    if (!found) throw std::invalid_argument("oracle_head_fit: node without intervention");
  }
  // The head's <h, w_i>^2 term carries no 1/2, so W = B / sqrt(2) makes it
  // equal the <z, s_i>^2 / 2 term of the log-odds.
  w = b_obs / std::numbers::sqrt2;

  OracleFit fit{HeadParams::from_w(alpha, beta, gamma, w), std::nullopt};
  if (linear_mixing != nullptr) {
    const Eigen::MatrixXd& l = *linear_mixing;
    fit.encoder_pinv = (l.transpose() * l).ldlt().solve(l.transpose());
  }
  return fit;
}

}  // namespace crl
