#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "crl/mixing.hpp"
#include "crl/rng.hpp"
#include "crl/scm.hpp"

namespace crl {

// Parameters of the flow constructions. For the gaussian-pair field the
// radial bump lives on [r0, r1] with r0 > 0; for the do-intervention field a
// C^2 bump of radius rho sits at (center_x, center_y), strictly inside the
// open positive quadrant. `amplitude` is the peak speed of the integrated
// field (the field is rescaled so its maximum magnitude equals it), `time`
// the integration time and `step` the fixed RK4 step.
struct FlowSpec {
  double r0 = 0.5, r1 = 2.5;
  double center_x = 1.0, center_y = 1.0, rho = 0.8;
  double amplitude = 1.0;
  double time = 1.0;
  double step = 1e-3;

  static constexpr double kMaxStep = 0.05;
  void validate() const;
};

// Rotation of z by angle_fn(|z|); |z| is preserved.
Eigen::Vector2d radius_rotation(const Eigen::Vector2d& z,
                                const std::function<double(double)>& angle_fn);

// Numerical flow map h = T^{-1} o Phi_t o T for a planar vector field given
// in transformed coordinates; invertible by integrating backwards.
class FlowMap {
 public:
  using Field = std::function<Eigen::Vector2d(const Eigen::Vector2d&)>;

  FlowMap(Field field, double time, double step,
          const Eigen::Matrix2d& pre = Eigen::Matrix2d::Identity(),
          const Eigen::Matrix2d& post = Eigen::Matrix2d::Identity());

  Eigen::Vector2d operator()(const Eigen::Vector2d& z) const { return map(z, time_); }
  Eigen::Vector2d inverse(const Eigen::Vector2d& z) const { return map(z, -time_); }
  Eigen::MatrixXd push(const Eigen::MatrixXd& z) const;  // rowwise

 private:
  Eigen::Vector2d map(const Eigen::Vector2d& z, double t) const;

  Field field_;
  double time_, step_;
  Eigen::Matrix2d pre_, post_;
};

// Measure-preserving nonlinear map for a pair N(0, sigma0), N(0, sigma1)
// with sigma1 - sigma0 positive definite (d = 2): a radius-dependent swirl
// in coordinates where the precision difference is the identity.
FlowMap gaussian_pair_flow(const Eigen::Matrix2d& sigma0, const Eigen::Matrix2d& sigma1,
                           const FlowSpec& spec);

// Flow of X0 / p0 for a divergence-free X0 (perpendicular gradient of a
// compact bump in the open positive quadrant): preserves N(0, Id) and fixes
// both axes pointwise.
FlowMap do_intervention_flow(const FlowSpec& spec);

struct ShiftCounterexampleResult {
  ScmFamily alt_family;
  Eigen::MatrixXd transfer;     // B^{-1} B_tilde, so f_tilde = f o transfer
  double max_pathwise_diff = 0.0;
  int shd_between_graphs = 0;
};

// For a family whose interventions are all pure shifts, any acyclic B_tilde
// generates identical observations through f_tilde = f o (B^{-1} B_tilde);
// verified pathwise on shared noise draws.
ShiftCounterexampleResult shift_counterexample(const ScmFamily& family,
                                               const Eigen::MatrixXd& b_tilde,
                                               const MixingFunction& mixing, int n_draws, Rng& rng);

// (z1, z2 + psi(z2) z1) with psi = 1 on [-1, 1], 0 outside [-5/2, 5/2] and
// |psi'| <= 0.8; bijective on [-1, 1] x [-3, 3].
Eigen::Vector2d uniform_counterexample_map(const Eigen::Vector2d& z);
double uniform_counterexample_psi(double t);

struct EnergyTestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int points_used_a = 0, points_used_b = 0;
};

// Permutation test on the energy-distance V-statistic. Sample sets larger
// than max_points are subsampled (deterministically through rng) before the
// pooled pairwise distances are formed.
EnergyTestResult energy_distance_test(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                      int n_permutations, Rng& rng, int max_points = 2000);

}  // namespace crl
