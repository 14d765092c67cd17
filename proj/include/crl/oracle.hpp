#pragma once

#include <Eigen/Dense>
#include <optional>

#include "crl/contrastive.hpp"
#include "crl/scm.hpp"

namespace crl {

// Exact multivariate normal log density at z.
double gaussian_log_density(const GaussianStats& stats, const Eigen::VectorXd& z);

// Closed-form log-odds ln p_i(z) - ln p_0(z) for a perfect intervention:
//   c_i - lambda^2 z_t^2 / 2 + eta * lambda * z_t + <z, s>^2 / 2
// with c_i = -ln(|Sigma_i|/|Sigma_0|)/2 - eta^2/2. Throws for other kinds.
double analytic_log_odds(const ScmFamily& family, int env_index, const Eigen::VectorXd& z);

// Same quantity for any single-node intervention, written through the rank-2
// precision difference:
//   c_i - <z, s_tilde>^2 / 2 + <z, s>^2 / 2 + eta * <s_tilde, z>.
double log_odds_difference(const ScmFamily& family, int env_index, const Eigen::VectorXd& z);

struct CompleteSquare {
  Eigen::VectorXd mu_prime;
  double c = 0.0;
};

// Vector mu' and constant c with
//   (z - mu)^T Theta_i (z - mu) - z^T Theta_0 z = (z - mu')^T Delta (z - mu') + c,
// solved on the span of {s, s_tilde}. Errors on pure shifts (Delta = 0).
CompleteSquare complete_square(const ScmFamily& family, int env_index);

struct OracleFit {
  HeadParams head;
  // Left pseudo-inverse recovering z from x for linear mixings; the encoder
  // stub h(x) = pinv * x.
  std::optional<Eigen::MatrixXd> encoder_pinv;
};

// Bayes-optimal head for a family whose interventions are all perfect:
// alpha_i = c_i, beta_i = lambda_i^2 / 2, gamma_i = eta_i * lambda_i and
// W = B / sqrt(2), so that plugging the true z into the head reproduces
// the analytic log-odds exactly.
OracleFit oracle_head_fit(const ScmFamily& family, const Eigen::MatrixXd* linear_mixing = nullptr);

}  // namespace crl
