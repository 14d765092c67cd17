#include "crl/mixing.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace crl {

namespace {

const std::array<double, 3> kPalette[] = {
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1},
};

}  // namespace

std::optional<Eigen::VectorXd> render_balls(const Eigen::VectorXd& z, const ImageConfig& cfg) {
  const int d = static_cast<int>(z.size());
  if (d % 2 != 0 || d == 0) throw std::invalid_argument("render_balls: d must be even");
  const int n_balls = d / 2;
  const int side = cfg.side, r = cfg.radius;

  std::vector<std::pair<int, int>> centers(n_balls);
  for (int b = 0; b < n_balls; ++b) {
    const int cx = static_cast<int>(std::floor((z(2 * b) + 0.5) * side));
    const int cy = static_cast<int>(std::floor((z(2 * b + 1) + 0.5) * side));
    if (cx < r || cx > side - 1 - r || cy < r || cy > side - 1 - r) return std::nullopt;
    centers[b] = {cx, cy};
  }

  Eigen::VectorXd img = Eigen::VectorXd::Zero(static_cast<std::ptrdiff_t>(side) * side * 3);
  for (int b = 0; b < n_balls; ++b) {
    const auto [cx, cy] = centers[b];
    const std::array<double, 3>& color = b < static_cast<int>(cfg.colors.size())
                                             ? cfg.colors[b]
                                             : kPalette[b % std::size(kPalette)];
    for (int y = cy - r; y <= cy + r; ++y) {
      for (int x = cx - r; x <= cx + r; ++x) {
        const int dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r) {
          const std::ptrdiff_t base = (static_cast<std::ptrdiff_t>(y) * side + x) * 3;
          img(base) = color[0];
          img(base + 1) = color[1];
          img(base + 2) = color[2];
        }
      }
    }
  }
  return img;
}

MixingFunction MixingFunction::linear(int d, int d_prime, Rng& rng) {
  if (d_prime < d || d < 1) throw std::invalid_argument("MixingFunction::linear: need d' >= d >= 1");
  MixingFunction f;
  f.kind_ = MixingKind::linear;
  f.d_ = d;
  f.d_prime_ = d_prime;
  for (;;) {
    f.matrix_.resize(d_prime, d);
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d_prime; ++i) f.matrix_(i, j) = rng.normal();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(f.matrix_);
    if (svd.singularValues().minCoeff() > 1e-8) break;
    ++f.resamples_;
    std::cerr << "MixingFunction::linear: resampling rank-deficient draw\n";
  }
  return f;
}

MixingFunction MixingFunction::mlp(int d, int d_prime, Rng& rng) {
  if (d_prime < d || d < 1) throw std::invalid_argument("MixingFunction::mlp: need d' >= d >= 1");
  MixingFunction f;
  f.kind_ = MixingKind::mlp;
  f.d_ = d;
  f.d_prime_ = d_prime;
  f.slope_ = 0.2;
  const int hidden = 512;
  const int dims[] = {d, hidden, hidden, hidden, d_prime};
  for (int layer = 0; layer < 4; ++layer) {
    const int in = dims[layer], out = dims[layer + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Eigen::MatrixXd w(in, out);
    for (int j = 0; j < out; ++j)
      for (int i = 0; i < in; ++i) w(i, j) = rng.uniform(-bound, bound);
    f.weights_.push_back(std::move(w));
  }
  return f;
}

MixingFunction MixingFunction::image(int d, ImageConfig cfg) {
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("MixingFunction::image: d must be even");
  MixingFunction f;
  f.kind_ = MixingKind::image;
  f.d_ = d;
  f.d_prime_ = cfg.side * cfg.side * 3;
  f.img_ = std::move(cfg);
  return f;
}

Eigen::MatrixXd MixingFunction::apply(const Eigen::MatrixXd& z, std::vector<int>* rejected) const {
  if (z.cols() != d_) throw std::invalid_argument("MixingFunction::apply: column count mismatch");
  if (rejected) rejected->clear();
  switch (kind_) {
    case MixingKind::linear:
      return z * matrix_.transpose();
    case MixingKind::mlp: {
      Eigen::MatrixXd h = z;
      for (std::size_t layer = 0; layer + 1 < weights_.size(); ++layer) {
        h = (h * weights_[layer])
                .unaryExpr([s = slope_](double v) { return v > 0 ? v : s * v; });
      }
      return h * weights_.back();
    }
    case MixingKind::image: {
      std::vector<Eigen::VectorXd> rows;
      rows.reserve(z.rows());
      for (int r = 0; r < z.rows(); ++r) {
        auto img = render_balls(z.row(r).transpose(), img_);
        if (img) {
          rows.push_back(std::move(*img));
        } else if (rejected) {
          rejected->push_back(r);
        }
      }
      Eigen::MatrixXd out(static_cast<int>(rows.size()), d_prime_);
      for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<int>(r)) = rows[r].transpose();
      return out;
    }
  }
  throw std::logic_error("MixingFunction::apply: unknown kind");
}

std::optional<Eigen::VectorXd> MixingFunction::apply_row(const Eigen::VectorXd& z) const {
  if (kind_ == MixingKind::image) return render_balls(z, img_);
  const Eigen::MatrixXd out = apply(z.transpose());
  return Eigen::VectorXd(out.row(0).transpose());
}

const Eigen::MatrixXd& MixingFunction::matrix() const {
  if (kind_ != MixingKind::linear) throw std::logic_error("MixingFunction::matrix: not linear");
  return matrix_;
}

const std::vector<Eigen::MatrixXd>& MixingFunction::layer_weights() const {
  if (kind_ != MixingKind::mlp) throw std::logic_error("MixingFunction::layer_weights: not mlp");
  return weights_;
}

const ImageConfig& MixingFunction::image_config() const {
  if (kind_ != MixingKind::image) throw std::logic_error("MixingFunction::image_config: not image");
  return img_;
}

}  // namespace crl
