#include "crl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unsupported/Eigen/MatrixFunctions>

#include "crl/metrics.hpp"

namespace crl {

Eigen::MatrixXd HeadParams::w() const {
  const int n = d();
  return dw_log.array().exp().matrix().asDiagonal() * (Eigen::MatrixXd::Identity(n, n) - aw);
}

Eigen::MatrixXd HeadParams::w0() const {
  Eigen::MatrixXd m = w();
  m.diagonal().setZero();
  return m;
}

HeadParams HeadParams::init(int d) {
  HeadParams h;
  h.alpha = Eigen::VectorXd::Zero(d);
  h.beta = Eigen::VectorXd::Constant(d, 0.5);
  h.gamma = Eigen::VectorXd::Zero(d);
  h.dw_log = Eigen::VectorXd::Zero(d);
  h.aw = Eigen::MatrixXd::Zero(d, d);
  return h;
}

HeadParams HeadParams::from_w(const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta,
                              const Eigen::VectorXd& gamma, const Eigen::MatrixXd& w) {
  const int d = static_cast<int>(alpha.size());
  if (w.rows() != d || w.cols() != d) throw std::invalid_argument("HeadParams::from_w: shape mismatch");
  HeadParams h;
  h.alpha = alpha;
  h.beta = beta;
  h.gamma = gamma;
  h.dw_log.resize(d);
  h.aw = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    if (w(i, i) <= 0) throw std::invalid_argument("HeadParams::from_w: diagonal must be positive");
    h.dw_log(i) = std::log(w(i, i));
    for (int k = 0; k < d; ++k)
      if (k != i) h.aw(i, k) = -w(i, k) / w(i, i);
  }
  return h;
}

double log_odds_head(const Eigen::VectorXd& h, int i, const HeadParams& head) {
  if (i < 0 || i >= head.d()) throw std::invalid_argument("log_odds_head: index out of range");
  const Eigen::MatrixXd w = head.w();
  const double dot = w.row(i).dot(h);
  return head.alpha(i) - head.beta(i) * h(i) * h(i) + head.gamma(i) * h(i) + dot * dot;
}

namespace {

double softplus(double g) { return std::max(g, 0.0) + std::log1p(std::exp(-std::abs(g))); }

double sigmoid(double g) {
  if (g >= 0) return 1.0 / (1.0 + std::exp(-g));
  const double e = std::exp(g);
  return e / (1.0 + e);
}

}  // namespace

double ce_loss(double logit, int label) {
  if (!std::isfinite(logit)) throw std::invalid_argument("ce_loss: non-finite logit");
  if (label != 0 && label != 1) throw std::invalid_argument("ce_loss: label must be 0 or 1");
  return softplus(logit) - label * logit;
}

NotearsResult notears_penalty(const Eigen::MatrixXd& w0) {
  if (w0.rows() != w0.cols()) throw std::invalid_argument("notears_penalty: square matrix expected");
  if (!w0.allFinite()) throw std::invalid_argument("notears_penalty: non-finite entries");
  const Eigen::MatrixXd hadamard = w0.cwiseProduct(w0);
  const Eigen::MatrixXd e = hadamard.exp();  // scaling-and-squaring via Eigen
  NotearsResult res;
  res.value = e.trace() - static_cast<double>(w0.rows());
  res.grad = e.transpose().cwiseProduct(2.0 * w0);
  return res;
}

Eigen::MatrixXd DataSource::all(int env) const {
  std::vector<int> idx(rows(env));
  std::iota(idx.begin(), idx.end(), 0);
  return gather(env, idx.data(), static_cast<int>(idx.size()));
}

MatrixDataSource::MatrixDataSource(std::vector<Eigen::MatrixXd> envs) : envs_(std::move(envs)) {
  if (envs_.empty()) throw std::invalid_argument("MatrixDataSource: no environments");
  for (const auto& m : envs_)
    if (m.cols() != envs_[0].cols()) throw std::invalid_argument("MatrixDataSource: width mismatch");
}

Eigen::MatrixXd MatrixDataSource::gather(int env, const int* idx, int m) const {
  const Eigen::MatrixXd& src = envs_.at(env);
  Eigen::MatrixXd out(m, src.cols());
  for (int r = 0; r < m; ++r) out.row(r) = src.row(idx[r]);
  return out;
}

ByteImageDataSource::ByteImageDataSource(int dim, int env_count) : dim_(dim), data_(env_count) {}

void ByteImageDataSource::append(int env, const Eigen::VectorXd& row) {
  if (row.size() != dim_) throw std::invalid_argument("ByteImageDataSource: width mismatch");
  auto& store = data_.at(env);
  store.reserve(store.size() + dim_);
  for (int j = 0; j < dim_; ++j) {
    const double v = std::clamp(row(j), 0.0, 1.0);
    store.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
}

int ByteImageDataSource::rows(int env) const {
  return static_cast<int>(data_.at(env).size() / static_cast<std::size_t>(dim_));
}

Eigen::MatrixXd ByteImageDataSource::gather(int env, const int* idx, int m) const {
  const auto& store = data_.at(env);
  Eigen::MatrixXd out(m, dim_);
  for (int r = 0; r < m; ++r) {
    const std::uint8_t* base = store.data() + static_cast<std::size_t>(idx[r]) * dim_;
    for (int j = 0; j < dim_; ++j) out(r, j) = static_cast<double>(base[j]) / 255.0;
  }
  return out;
}

namespace {

struct HeadGradients {
  Eigen::VectorXd d_alpha, d_beta, d_gamma;
  Eigen::MatrixXd d_w;

  explicit HeadGradients(int d)
      : d_alpha(Eigen::VectorXd::Zero(d)),
        d_beta(Eigen::VectorXd::Zero(d)),
        d_gamma(Eigen::VectorXd::Zero(d)),
        d_w(Eigen::MatrixXd::Zero(d, d)) {}
};

// CE terms of one head on one batch (all rows share `label`), with gradient
// accumulation into dH and the head gradients. `weight` multiplies the mean.
double head_ce_batch(const Eigen::MatrixXd& h, const Eigen::MatrixXd& w, const HeadParams& head,
                     int i, int label, double weight, Eigen::MatrixXd* d_h, HeadGradients* hg) {
  const int m = static_cast<int>(h.rows());
  const Eigen::VectorXd hcol = h.col(i);
  const Eigen::VectorXd u = h * w.row(i).transpose();
  Eigen::VectorXd g = u.array().square().matrix();
  g.array() += head.alpha(i);
  g.array() += -head.beta(i) * hcol.array().square() + head.gamma(i) * hcol.array();

  double ce = 0.0;
  for (int r = 0; r < m; ++r) ce += softplus(g(r)) - label * g(r);
  ce = weight * ce / m;

  if (d_h != nullptr) {
    Eigen::VectorXd dg(m);
    for (int r = 0; r < m; ++r) dg(r) = (sigmoid(g(r)) - label) * weight / m;
    d_h->col(i) += dg.cwiseProduct((-2.0 * head.beta(i)) * hcol +
                                   Eigen::VectorXd::Constant(m, head.gamma(i)));
    const Eigen::VectorXd du = 2.0 * dg.cwiseProduct(u);
    d_h->noalias() += du * w.row(i);
    hg->d_alpha(i) += dg.sum();
    hg->d_beta(i) -= dg.dot(hcol.cwiseProduct(hcol));
    hg->d_gamma(i) += dg.dot(hcol);
    hg->d_w.row(i) += du.transpose() * h;
  }
  return ce;
}

void chain_w_gradients(const HeadParams& head, const Eigen::MatrixXd& w, const Eigen::MatrixXd& d_w,
                       Eigen::VectorXd& d_dw_log, Eigen::MatrixXd& d_aw) {
  const int d = head.d();
  d_dw_log = Eigen::VectorXd::Zero(d);
  d_aw = Eigen::MatrixXd::Zero(d, d);
  const Eigen::VectorXd dw = head.dw_log.array().exp();
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k) {
      d_dw_log(i) += d_w(i, k) * w(i, k);
      if (k != i) d_aw(i, k) = -dw(i) * d_w(i, k);
    }
  }
}

}  // namespace

LossGrads total_loss(const EncoderNet& encoder, const HeadParams& head, const BatchSet& batches,
                     double tau1, double tau2) {
  const int d = head.d();
  if (static_cast<int>(batches.ints.size()) != d)
    throw std::invalid_argument("total_loss: expected one interventional batch per head");
  if (batches.obs.rows() == 0) throw std::invalid_argument("total_loss: empty batch");

  LossGrads out;
  out.encoder_grads = encoder.zero_grads();

  Tape tape_obs;
  const Eigen::MatrixXd h_obs = encoder.forward(batches.obs, &tape_obs);
  Eigen::MatrixXd d_h_obs = Eigen::MatrixXd::Zero(h_obs.rows(), h_obs.cols());

  const Eigen::MatrixXd w = head.w();
  HeadGradients hg(d);

  double ce = 0.0;
  for (int i = 0; i < d; ++i) {
    ce += head_ce_batch(h_obs, w, head, i, 0, 0.5, &d_h_obs, &hg);
    Tape tape_i;
    const Eigen::MatrixXd h_int = encoder.forward(batches.ints[i], &tape_i);
    Eigen::MatrixXd d_h_int = Eigen::MatrixXd::Zero(h_int.rows(), h_int.cols());
    ce += head_ce_batch(h_int, w, head, i, 1, 0.5, &d_h_int, &hg);
    encoder.backward(tape_i, d_h_int, out.encoder_grads);
  }
  encoder.backward(tape_obs, d_h_obs, out.encoder_grads);

  chain_w_gradients(head, w, hg.d_w, out.d_dw_log, out.d_aw);
  out.d_alpha = hg.d_alpha;
  out.d_beta = hg.d_beta;
  out.d_gamma = hg.d_gamma;

  const NotearsResult nt = notears_penalty(head.aw);
  const double l1 = head.aw.cwiseAbs().sum();
  out.d_aw += tau1 * nt.grad + tau2 * head.aw.unaryExpr([](double v) {
    return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
  });
  out.d_aw.diagonal().setZero();  // masked, non-learnable

  out.ce = ce;
  out.notears_value = nt.value;
  out.total = ce + tau1 * nt.value + tau2 * l1;
  return out;
}

double ce_only(const EncoderNet& encoder, const HeadParams& head, const BatchSet& batches) {
  const int d = head.d();
  const Eigen::MatrixXd w = head.w();
  const Eigen::MatrixXd h_obs = encoder.forward(batches.obs);
  double ce = 0.0;
  for (int i = 0; i < d; ++i) {
    ce += head_ce_batch(h_obs, w, head, i, 0, 0.5, nullptr, nullptr);
    const Eigen::MatrixXd h_int = encoder.forward(batches.ints[i]);
    ce += head_ce_batch(h_int, w, head, i, 1, 0.5, nullptr, nullptr);
  }
  return ce;
}

Eigen::MatrixXd ContrastiveModel::embed(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd h = encoder.forward(x);
  h.rowwise() -= center.transpose();
  return h;
}

Eigen::MatrixXd ContrastiveModel::edge_scores() const {
  Eigen::MatrixXd scores = head.w0().cwiseAbs();
  scores.diagonal().setZero();
  return scores;
}

std::vector<std::pair<int, int>> ContrastiveModel::extract_graph(int expected_edges) const {
  const Eigen::MatrixXd scores = edge_scores();
  const int d = head.d();
  struct Entry {
    double score;
    int row, col;
  };
  std::vector<Entry> entries;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j && scores(i, j) != 0.0) entries.push_back({scores(i, j), i, j});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  const int m = std::min<int>(expected_edges, static_cast<int>(entries.size()));
  std::vector<std::pair<int, int>> edges;
  for (int k = 0; k < m; ++k) edges.emplace_back(entries[k].col, entries[k].row);  // (parent, child)
  std::sort(edges.begin(), edges.end());
  return edges;
}

namespace {

BatchSet gather_batchset(const DataSource& data, const std::vector<std::vector<int>>& idx,
                         int offset, int m) {
  BatchSet bs;
  bs.obs = data.gather(0, idx[0].data() + offset, m);
  const int d = static_cast<int>(idx.size()) - 1;
  bs.ints.reserve(d);
  for (int i = 0; i < d; ++i) bs.ints.push_back(data.gather(i + 1, idx[i + 1].data() + offset, m));
  return bs;
}

}  // namespace

ContrastiveModel train(const DataSource& data, const TrainConfig& cfg) {
  const int d = data.env_count() - 1;
  if (d < 1) throw std::invalid_argument("train: need at least one interventional environment");
  const int in_dim = data.dim();

  int n_min = data.rows(0);
  for (int e = 1; e <= d; ++e) n_min = std::min(n_min, data.rows(e));
  if (n_min < 2) throw std::invalid_argument("train: not enough samples");
  const int n_train = std::max(1, static_cast<int>(std::lround(n_min * (1.0 - cfg.val_fraction))));
  const int n_val = n_min - n_train;

  Rng rng(cfg.seed);
  Rng rng_init = rng.split();
  Rng rng_shuffle = rng.split();

  EncoderNet encoder = [&] {
    switch (cfg.encoder) {
      case EncoderKind::linear: return EncoderNet::linear(in_dim, d, rng_init);
      case EncoderKind::mlp: return EncoderNet::mlp(in_dim, d, cfg.hidden, cfg.encoder_slope, rng_init);
      case EncoderKind::conv:
        if (cfg.image_side * cfg.image_side * cfg.image_channels != in_dim)
          throw std::invalid_argument("train: conv encoder input size mismatch");
        return EncoderNet::conv(cfg.image_side, cfg.image_channels, d, cfg.encoder_slope, rng_init);
    }
    throw std::logic_error("train: unknown encoder kind");
  }();
  HeadParams head = HeadParams::init(d);

  std::vector<std::ptrdiff_t> sizes;
  for (const NamedTensor& p : encoder.params()) sizes.push_back(p.value.size());
  for (int k = 0; k < 4; ++k) sizes.push_back(d);
  sizes.push_back(static_cast<std::ptrdiff_t>(d) * d);
  AdamState adam(sizes, cfg.lr);

  std::vector<std::vector<int>> train_idx(d + 1), val_idx(d + 1);
  for (int e = 0; e <= d; ++e) {
    train_idx[e].resize(n_train);
    std::iota(train_idx[e].begin(), train_idx[e].end(), 0);
    val_idx[e].resize(n_val);
    std::iota(val_idx[e].begin(), val_idx[e].end(), n_train);
  }

  ContrastiveModel model{std::move(encoder), std::move(head), Eigen::VectorXd::Zero(d), {}, -1, 0.0};
  std::vector<NamedTensor> best_encoder_params = model.encoder.params();
  HeadParams best_head = model.head;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  const double divergence_bound = 10.0 * d * std::numbers::ln2;
  const int n_batches = (n_train + cfg.batch - 1) / cfg.batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
    for (int e = 0; e <= d; ++e) rng_shuffle.shuffle(train_idx[e]);

    double epoch_ce = 0.0;
    for (int b = 0; b < n_batches; ++b) {
      const int offset = b * cfg.batch;
      const int m = std::min(cfg.batch, n_train - offset);
      const BatchSet bs = gather_batchset(data, train_idx, offset, m);
      LossGrads lg = total_loss(model.encoder, model.head, bs, cfg.tau1, cfg.tau2);
      if (!std::isfinite(lg.total) || lg.ce > divergence_bound) {
        std::ostringstream msg;
        msg << "train: loss diverged at epoch " << epoch << " batch " << b << " (ce=" << lg.ce
            << ", bound=" << divergence_bound << ")";
        throw std::runtime_error(msg.str());
      }
      epoch_ce += lg.ce * m;

      std::vector<ParamView> views;
      auto& enc_params = model.encoder.params();
      for (std::size_t k = 0; k < enc_params.size(); ++k)
        views.push_back({enc_params[k].value.data(), lg.encoder_grads[k].data(),
                         enc_params[k].value.size()});
      views.push_back({model.head.alpha.data(), lg.d_alpha.data(), d});
      views.push_back({model.head.beta.data(), lg.d_beta.data(), d});
      views.push_back({model.head.gamma.data(), lg.d_gamma.data(), d});
      views.push_back({model.head.dw_log.data(), lg.d_dw_log.data(), d});
      views.push_back({model.head.aw.data(), lg.d_aw.data(), static_cast<std::ptrdiff_t>(d) * d});
      adam.step(views, lr);
      model.encoder.bump_version();
      model.head.aw.diagonal().setZero();
    }
    epoch_ce /= n_train;

    double val_ce = epoch_ce;
    if (n_val > 0) {
      const BatchSet val_bs = gather_batchset(data, val_idx, 0, n_val);
      val_ce = ce_only(model.encoder, model.head, val_bs);
    }
    const double notears_value = notears_penalty(model.head.aw).value;
    model.curve.push_back({epoch, epoch_ce, val_ce, notears_value, lr});
    if (val_ce < best_val) {
      best_val = val_ce;
      best_epoch = epoch;
      best_encoder_params = model.encoder.params();
      best_head = model.head;
    }
  }

  if (best_epoch >= 0) {
    model.encoder.params() = best_encoder_params;
    model.encoder.bump_version();
    model.head = best_head;
  }
  model.best_epoch = best_epoch;
  model.best_val_ce = std::isfinite(best_val) ? best_val : 0.0;

  // Center on the observational environment.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  const int n_obs = data.rows(0);
  const int chunk = 4096;
  std::vector<int> idx(chunk);
  for (int start = 0; start < n_obs; start += chunk) {
    const int m = std::min(chunk, n_obs - start);
    std::iota(idx.begin(), idx.begin() + m, start);
    sum += model.encoder.forward(data.gather(0, idx.data(), m)).colwise().sum().transpose();
  }
  model.center = sum / n_obs;
  return model;
}

ContrastiveModel train(const std::vector<Eigen::MatrixXd>& env_data, const TrainConfig& cfg) {
  return train(MatrixDataSource(env_data), cfg);
}

Eigen::MatrixXd embed_all(const ContrastiveModel& model, const DataSource& data, int env) {
  const int n = data.rows(env);
  Eigen::MatrixXd out(n, model.encoder.output_dim());
  const int chunk = 4096;
  std::vector<int> idx(chunk);
  for (int start = 0; start < n; start += chunk) {
    const int m = std::min(chunk, n - start);
    std::iota(idx.begin(), idx.begin() + m, start);
    out.middleRows(start, m) = model.embed(data.gather(env, idx.data(), m));
  }
  return out;
}

EtaZeroDiagnostic eta_zero_diagnostic(const Eigen::MatrixXd& z_hat, const Eigen::MatrixXd& z_true) {
  if (z_hat.rows() != z_true.rows() || z_hat.cols() != z_true.cols())
    throw std::invalid_argument("eta_zero_diagnostic: shape mismatch");
  const int d = static_cast<int>(z_true.cols());
  EtaZeroDiagnostic diag;
  diag.corr_z.resize(d);
  diag.corr_abs_z.resize(d);
  for (int i = 0; i < d; ++i) {
    diag.corr_z(i) = std::abs(pearson(z_hat.col(i), z_true.col(i)));
    diag.corr_abs_z(i) = std::abs(pearson(z_hat.col(i), z_true.col(i).cwiseAbs()));
  }
  return diag;
}

EtaZeroDiagnostic eta_zero_diagnostic(const ContrastiveModel& model, const Eigen::MatrixXd& x_obs,
                                      const Eigen::MatrixXd& z_true) {
  if (x_obs.rows() != z_true.rows())
    throw std::invalid_argument("eta_zero_diagnostic: row count mismatch");
  return eta_zero_diagnostic(model.embed(x_obs), z_true);
}

}  // namespace crl
