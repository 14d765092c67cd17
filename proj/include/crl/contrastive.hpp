#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "crl/nn.hpp"
#include "crl/rng.hpp"

namespace crl {

// Quadratic log-odds head. The matrix W is factored as D_w (Id - A_w) with
// D_w = exp(dw_log) kept positive by construction and A_w carrying a masked
// (zero, non-learnable) diagonal. Row i of W scores intervention i, i.e. the
// convention t_i = i.
struct HeadParams {
  Eigen::VectorXd alpha, beta, gamma;
  Eigen::VectorXd dw_log;
  Eigen::MatrixXd aw;

  int d() const { return static_cast<int>(alpha.size()); }
  Eigen::MatrixXd w() const;   // D_w (Id - A_w)
  Eigen::MatrixXd w0() const;  // w() with main diagonal zeroed

  // alpha = 0, beta = 1/2, gamma = 0, D_w = Id, A_w = 0.
  static HeadParams init(int d);
  // Exact representation of a given W with positive diagonal.
  static HeadParams from_w(const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta,
                           const Eigen::VectorXd& gamma, const Eigen::MatrixXd& w);
};

// g_i(h) = alpha_i - beta_i h_i^2 + gamma_i h_i + <h, w_i>^2  (i zero-based).
double log_odds_head(const Eigen::VectorXd& h, int i, const HeadParams& head);

// Binary cross entropy of a logit, -[label*g - ln(1+e^g)], softplus-stable.
double ce_loss(double logit, int label);

struct NotearsResult {
  double value = 0.0;
  Eigen::MatrixXd grad;
};

// tr exp(W0 o W0) - d and its closed-form gradient exp(W0 o W0)^T o 2 W0.
NotearsResult notears_penalty(const Eigen::MatrixXd& w0);

struct TrainConfig {
  double tau1 = 1e-5;
  double tau2 = 1e-4;
  double lr = 5e-4;
  int batch = 512;
  int epochs = 200;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  EncoderKind encoder = EncoderKind::mlp;
  int hidden = 512;
  double encoder_slope = 0.01;  // trained encoder; the data-generating MLP uses 0.2
  int image_side = 64;
  int image_channels = 3;
  bool verbose = false;
};

struct EpochStats {
  int epoch = 0;
  double train_ce = 0.0, val_ce = 0.0, notears = 0.0, lr = 0.0;
};

struct ContrastiveModel {
  EncoderNet encoder;
  HeadParams head;
  Eigen::VectorXd center;  // mean of h over the observational samples
  std::vector<EpochStats> curve;
  int best_epoch = -1;
  double best_val_ce = 0.0;

  // h(X, theta) minus the stored observational mean.
  Eigen::MatrixXd embed(const Eigen::MatrixXd& x) const;
  // |W0| off-diagonals; entry (i, j) scores the edge j -> i.
  Eigen::MatrixXd edge_scores() const;
  // Top-m scores as (parent, child) pairs; ties broken by (row, col) order.
  std::vector<std::pair<int, int>> extract_graph(int expected_edges) const;
};

// Row access to the per-environment datasets. Index 0 is observational;
// index i >= 1 the intervention targeting node i-1. Implementations may keep
// rows in compact storage (e.g. byte images) and materialize on gather.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual int env_count() const = 0;
  virtual int rows(int env) const = 0;
  virtual int dim() const = 0;
  virtual Eigen::MatrixXd gather(int env, const int* idx, int m) const = 0;
  Eigen::MatrixXd all(int env) const;
};

class MatrixDataSource : public DataSource {
 public:
  explicit MatrixDataSource(std::vector<Eigen::MatrixXd> envs);
  int env_count() const override { return static_cast<int>(envs_.size()); }
  int rows(int env) const override { return static_cast<int>(envs_.at(env).rows()); }
  int dim() const override { return static_cast<int>(envs_.at(0).cols()); }
  Eigen::MatrixXd gather(int env, const int* idx, int m) const override;

 private:
  std::vector<Eigen::MatrixXd> envs_;
};

// Images quantized to bytes (value/255); lossless for palette colors whose
// channels are 0 or 1.
class ByteImageDataSource : public DataSource {
 public:
  ByteImageDataSource(int dim, int env_count);
  void append(int env, const Eigen::VectorXd& row);  // values in [0, 1]
  int env_count() const override { return static_cast<int>(data_.size()); }
  int rows(int env) const override;
  int dim() const override { return dim_; }
  Eigen::MatrixXd gather(int env, const int* idx, int m) const override;

 private:
  int dim_ = 0;
  std::vector<std::vector<std::uint8_t>> data_;
};

// One batch set: a shared observational batch plus one interventional batch
// per head, paired row-by-row with the observational batch.
struct BatchSet {
  Eigen::MatrixXd obs;                // m x in_dim
  std::vector<Eigen::MatrixXd> ints;  // d matrices, m x in_dim
};

struct LossGrads {
  double total = 0.0;
  double ce = 0.0;
  double notears_value = 0.0;
  std::vector<Eigen::MatrixXd> encoder_grads;
  Eigen::VectorXd d_alpha, d_beta, d_gamma, d_dw_log;
  Eigen::MatrixXd d_aw;
};

// Eq.-(9)-style objective on one batch set: sum_i CE_i + tau1 * NOTEARS(A_w)
// + tau2 * |A_w|_1, with both regularizers acting on A_w only.
LossGrads total_loss(const EncoderNet& encoder, const HeadParams& head, const BatchSet& batches,
                     double tau1, double tau2);

// Cross entropy alone (the validation criterion), no gradients.
double ce_only(const EncoderNet& encoder, const HeadParams& head, const BatchSet& batches);

// Datasets are subsampled to a common size, split 80/20, and the best
// validation-CE parameters are returned.
ContrastiveModel train(const DataSource& data, const TrainConfig& cfg);
ContrastiveModel train(const std::vector<Eigen::MatrixXd>& env_data, const TrainConfig& cfg);

// Chunked embed over one environment of a data source.
Eigen::MatrixXd embed_all(const ContrastiveModel& model, const DataSource& data, int env);

struct EtaZeroDiagnostic {
  Eigen::VectorXd corr_z;      // |pearson(Zhat_i, Z_i)|
  Eigen::VectorXd corr_abs_z;  // |pearson(Zhat_i, |Z_i|)|
};

// Per-coordinate correlation magnitudes of the embedding with Z and with |Z|
// under the identity pairing implied by t_i = i.
EtaZeroDiagnostic eta_zero_diagnostic(const Eigen::MatrixXd& z_hat, const Eigen::MatrixXd& z_true);
EtaZeroDiagnostic eta_zero_diagnostic(const ContrastiveModel& model, const Eigen::MatrixXd& x_obs,
                                      const Eigen::MatrixXd& z_true);

}  // namespace crl
