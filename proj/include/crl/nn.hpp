#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "crl/rng.hpp"

namespace crl {

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

enum class EncoderKind { linear, mlp, conv };

// Reverse-mode record of one forward pass. A tape is tied to the parameter
// version it was produced with; using it after an optimizer step throws.
struct Tape {
  std::vector<Eigen::MatrixXd> layer_inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> aux;           // e.g. maxpool argmax indices
  std::uint64_t version = 0;
  int batch = 0;
};

// Fixed-architecture encoder h(x, theta): batch-major dense tensors, exact
// reverse-mode gradients. Variants:
//   linear:  FC(out)
//   mlp:     FC(hidden) -> LeakyReLU(slope) -> FC(out)
//   conv:    Conv 3->1 k5 s3 -> ReLU -> MaxPool k2 s2 -> FC 64 -> LeakyReLU -> FC(out)
// Weights start uniform +-1/sqrt(fan_in), biases zero.
class EncoderNet {
 public:
  static EncoderNet linear(int in_dim, int out_dim, Rng& rng);
  static EncoderNet mlp(int in_dim, int out_dim, int hidden, double slope, Rng& rng);
  static EncoderNet conv(int side, int channels, int out_dim, double slope, Rng& rng);

  EncoderKind kind() const { return kind_; }
  int input_dim() const { return in_dim_; }
  int output_dim() const { return out_dim_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape* tape = nullptr) const;

  // Accumulates parameter gradients into `param_grads` (shapes of params())
  // and returns the gradient with respect to the input batch.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& d_out,
                           std::vector<Eigen::MatrixXd>& param_grads) const;

  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::vector<Eigen::MatrixXd> zero_grads() const;

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

 private:
  struct Layer {
    enum class Type { dense, leaky_relu, relu, conv2d, maxpool } type;
    int param_index = -1;  // first NamedTensor of this layer (dense/conv)
    double slope = 0.0;
    // conv/pool geometry
    int in_side = 0, in_channels = 0, kernel = 0, stride = 0, out_side = 0;
  };

  EncoderKind kind_ = EncoderKind::mlp;
  int in_dim_ = 0, out_dim_ = 0;
  std::vector<Layer> layers_;
  std::vector<NamedTensor> params_;
  std::uint64_t version_ = 0;

  static Eigen::MatrixXd init_dense(int in, int out, Rng& rng);
};

// Flat view of one trainable tensor and its gradient.
struct ParamView {
  double* value = nullptr;
  const double* grad = nullptr;
  std::ptrdiff_t size = 0;
};

// Standard bias-corrected Adam; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
// First/second moment buffers mirror the parameter shapes (stored flat).
class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<std::ptrdiff_t>& sizes, double base_lr);
  static AdamState for_params(const std::vector<NamedTensor>& params, double base_lr);

  void step(const std::vector<ParamView>& views, double lr);
  void step(std::vector<NamedTensor>& params, const std::vector<Eigen::MatrixXd>& grads, double lr);

  int step_count() const { return step_; }
  double base_lr() const { return base_lr_; }

 private:
  std::vector<Eigen::VectorXd> m_, v_;
  int step_ = 0;
  double base_lr_ = 5e-4;
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
};

// Cosine annealing from base_lr at epoch 0 to 0 at total_epochs.
double cosine_lr(double base_lr, int epoch, int total_epochs);

}  // namespace crl
