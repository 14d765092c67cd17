#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <vector>

#include "crl/rng.hpp"

namespace crl {

enum class MixingKind { linear, mlp, image };

struct ImageConfig {
  int side = 64;
  int radius = 5;
  std::vector<std::array<double, 3>> colors;  // per ball; defaults assigned if empty
};

// Renders filled disks on a black side x side RGB canvas; ball b sits at
// pixel (floor((z_{2b}+0.5)*side), floor((z_{2b+1}+0.5)*side)). Returns
// nullopt when any disk leaves the frame. Channel-last row layout.
std::optional<Eigen::VectorXd> render_balls(const Eigen::VectorXd& z, const ImageConfig& cfg);

// Data-generating map f: R^d -> R^d'. Immutable after construction.
class MixingFunction {
 public:
  // Entries i.i.d. N(0,1); rank-deficient draws are resampled (and counted).
  static MixingFunction linear(int d, int d_prime, Rng& rng);
  // FC 512 + LeakyReLU(0.2), three hidden layers, final FC d'; weights
  // U(+-1/sqrt(fan_in)), no biases.
  static MixingFunction mlp(int d, int d_prime, Rng& rng);
  static MixingFunction image(int d, ImageConfig cfg = {});

  MixingKind kind() const { return kind_; }
  int input_dim() const { return d_; }
  int output_dim() const { return d_prime_; }

  // Rowwise application. For the image variant rejected rows are dropped and
  // their indices reported through `rejected`.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& z, std::vector<int>* rejected = nullptr) const;
  std::optional<Eigen::VectorXd> apply_row(const Eigen::VectorXd& z) const;

  const Eigen::MatrixXd& matrix() const;                     // linear only
  const std::vector<Eigen::MatrixXd>& layer_weights() const; // mlp only
  double leaky_slope() const { return slope_; }
  const ImageConfig& image_config() const;
  int resample_count() const { return resamples_; }

 private:
  MixingKind kind_ = MixingKind::linear;
  int d_ = 0, d_prime_ = 0;
  Eigen::MatrixXd matrix_;                   // d' x d
  std::vector<Eigen::MatrixXd> weights_;     // mlp, stored in x out
  double slope_ = 0.2;
  ImageConfig img_;
  int resamples_ = 0;
};

}  // namespace crl
