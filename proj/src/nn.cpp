#include "crl/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace crl {

Eigen::MatrixXd EncoderNet::init_dense(int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Eigen::MatrixXd w(in, out);
  for (int j = 0; j < out; ++j)
    for (int i = 0; i < in; ++i) w(i, j) = rng.uniform(-bound, bound);
  return w;
}

EncoderNet EncoderNet::linear(int in_dim, int out_dim, Rng& rng) {
  EncoderNet net;
  net.kind_ = EncoderKind::linear;
  net.in_dim_ = in_dim;
  net.out_dim_ = out_dim;
  net.params_.push_back({"fc0.w", init_dense(in_dim, out_dim, rng)});
  net.params_.push_back({"fc0.b", Eigen::MatrixXd::Zero(1, out_dim)});
  net.layers_.push_back({Layer::Type::dense, 0});
  return net;
}

EncoderNet EncoderNet::mlp(int in_dim, int out_dim, int hidden, double slope, Rng& rng) {
  EncoderNet net;
  net.kind_ = EncoderKind::mlp;
  net.in_dim_ = in_dim;
  net.out_dim_ = out_dim;
  net.params_.push_back({"fc0.w", init_dense(in_dim, hidden, rng)});
  net.params_.push_back({"fc0.b", Eigen::MatrixXd::Zero(1, hidden)});
  net.params_.push_back({"fc1.w", init_dense(hidden, out_dim, rng)});
  net.params_.push_back({"fc1.b", Eigen::MatrixXd::Zero(1, out_dim)});
  net.layers_.push_back({Layer::Type::dense, 0});
  Layer act{Layer::Type::leaky_relu, -1};
  act.slope = slope;
  net.layers_.push_back(act);
  net.layers_.push_back({Layer::Type::dense, 2});
  return net;
}

EncoderNet EncoderNet::conv(int side, int channels, int out_dim, double slope, Rng& rng) {
  EncoderNet net;
  net.kind_ = EncoderKind::conv;
  net.in_dim_ = side * side * channels;
  net.out_dim_ = out_dim;

  const int kernel = 5, stride = 3;
  const int conv_side = (side - kernel) / stride + 1;
  const int pool_side = conv_side / 2;
  const int flat = pool_side * pool_side;  // single output channel
  const int fc_hidden = 64;
  if (flat <= 0) throw std::invalid_argument("EncoderNet::conv: image too small");

  net.params_.push_back({"conv0.w", init_dense(kernel * kernel * channels, 1, rng)});
  net.params_.push_back({"conv0.b", Eigen::MatrixXd::Zero(1, 1)});
  net.params_.push_back({"fc0.w", init_dense(flat, fc_hidden, rng)});
  net.params_.push_back({"fc0.b", Eigen::MatrixXd::Zero(1, fc_hidden)});
  net.params_.push_back({"fc1.w", init_dense(fc_hidden, out_dim, rng)});
  net.params_.push_back({"fc1.b", Eigen::MatrixXd::Zero(1, out_dim)});

  Layer conv{Layer::Type::conv2d, 0};
  conv.in_side = side;
  conv.in_channels = channels;
  conv.kernel = kernel;
  conv.stride = stride;
  conv.out_side = conv_side;
  net.layers_.push_back(conv);
  net.layers_.push_back({Layer::Type::relu, -1});
  Layer pool{Layer::Type::maxpool, -1};
  pool.in_side = conv_side;
  pool.in_channels = 1;
  pool.kernel = 2;
  pool.stride = 2;
  pool.out_side = pool_side;
  net.layers_.push_back(pool);
  net.layers_.push_back({Layer::Type::dense, 2});
  Layer act{Layer::Type::leaky_relu, -1};
  act.slope = slope;
  net.layers_.push_back(act);
  net.layers_.push_back({Layer::Type::dense, 4});
  return net;
}

namespace {

// Patch layout: (ky, kx, channel) fastest-last; input rows are images stored
// channel-last, index (y * side + x) * channels + c.
Eigen::MatrixXd im2col(const Eigen::MatrixXd& x, int side, int channels, int kernel, int stride,
                       int out_side) {
  const int batch = static_cast<int>(x.rows());
  const int patch = kernel * kernel * channels;
  Eigen::MatrixXd cols(static_cast<std::int64_t>(batch) * out_side * out_side, patch);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out_side; ++oy) {
      for (int ox = 0; ox < out_side; ++ox) {
        const std::int64_t r = (static_cast<std::int64_t>(b) * out_side + oy) * out_side + ox;
        int col = 0;
        for (int ky = 0; ky < kernel; ++ky) {
          const int y = oy * stride + ky;
          for (int kx = 0; kx < kernel; ++kx) {
            const int xpix = ox * stride + kx;
            const int base = (y * side + xpix) * channels;
            for (int c = 0; c < channels; ++c) cols(r, col++) = x(b, base + c);
          }
        }
      }
    }
  }
  return cols;
}

}  // namespace

Eigen::MatrixXd EncoderNet::forward(const Eigen::MatrixXd& x, Tape* tape) const {
  if (x.cols() != in_dim_) throw std::invalid_argument("EncoderNet::forward: input width mismatch");
  if (tape) {
    tape->layer_inputs.clear();
    tape->aux.clear();
    tape->version = version_;
    tape->batch = static_cast<int>(x.rows());
  }
  Eigen::MatrixXd cur = x;
  for (const Layer& layer : layers_) {
    if (tape) tape->layer_inputs.push_back(cur);
    switch (layer.type) {
      case Layer::Type::dense: {
        const Eigen::MatrixXd& w = params_[layer.param_index].value;
        const Eigen::MatrixXd& b = params_[layer.param_index + 1].value;
        cur = (cur * w).rowwise() + b.row(0);
        break;
      }
      case Layer::Type::leaky_relu:
        cur = cur.unaryExpr([s = layer.slope](double v) { return v > 0 ? v : s * v; });
        break;
      case Layer::Type::relu:
        cur = cur.cwiseMax(0.0);
        break;
      case Layer::Type::conv2d: {
        const int batch = static_cast<int>(cur.rows());
        const Eigen::MatrixXd cols =
            im2col(cur, layer.in_side, layer.in_channels, layer.kernel, layer.stride, layer.out_side);
        if (tape) tape->aux.push_back(cols);
        const Eigen::MatrixXd& w = params_[layer.param_index].value;  // patch x 1
        const double bias = params_[layer.param_index + 1].value(0, 0);
        Eigen::MatrixXd flat = cols * w;
        flat.array() += bias;
        cur = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            flat.data(), batch, layer.out_side * layer.out_side);
        break;
      }
      case Layer::Type::maxpool: {
        const int batch = static_cast<int>(cur.rows());
        const int in_side = layer.in_side, out_side = layer.out_side;
        Eigen::MatrixXd out(batch, out_side * out_side);
        Eigen::MatrixXd argmax(batch, out_side * out_side);
        for (int b = 0; b < batch; ++b) {
          for (int oy = 0; oy < out_side; ++oy) {
            for (int ox = 0; ox < out_side; ++ox) {
              int best_idx = -1;
              double best = -std::numeric_limits<double>::infinity();
              for (int ky = 0; ky < layer.kernel; ++ky) {
                for (int kx = 0; kx < layer.kernel; ++kx) {
                  const int idx = (oy * layer.stride + ky) * in_side + ox * layer.stride + kx;
                  const double v = cur(b, idx);
                  if (v > best) {  // strict: first index wins on ties
                    best = v;
                    best_idx = idx;
                  }
                }
              }
              out(b, oy * out_side + ox) = best;
              argmax(b, oy * out_side + ox) = best_idx;
            }
          }
        }
        if (tape) tape->aux.push_back(argmax);
        cur = std::move(out);
        break;
      }
    }
  }
  return cur;
}

Eigen::MatrixXd EncoderNet::backward(const Tape& tape, const Eigen::MatrixXd& d_out,
                                     std::vector<Eigen::MatrixXd>& param_grads) const {
  if (tape.version != version_)
    throw std::runtime_error("EncoderNet::backward: stale tape (parameters changed)");
  if (tape.layer_inputs.size() != layers_.size())
    throw std::runtime_error("EncoderNet::backward: tape does not match architecture");
  if (param_grads.size() != params_.size())
    throw std::invalid_argument("EncoderNet::backward: grad buffer size mismatch");

  Eigen::MatrixXd grad = d_out;
  int aux_index = static_cast<int>(tape.aux.size());
  for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
    const Layer& layer = layers_[li];
    const Eigen::MatrixXd& input = tape.layer_inputs[li];
    switch (layer.type) {
      case Layer::Type::dense: {
        const Eigen::MatrixXd& w = params_[layer.param_index].value;
        param_grads[layer.param_index].noalias() += input.transpose() * grad;
        param_grads[layer.param_index + 1].row(0) += grad.colwise().sum();
        grad = grad * w.transpose();
        break;
      }
      case Layer::Type::leaky_relu:
        grad = grad.cwiseProduct(
            input.unaryExpr([s = layer.slope](double v) { return v > 0 ? 1.0 : s; }));
        break;
      case Layer::Type::relu:
        grad = grad.cwiseProduct(input.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; }));
        break;
      case Layer::Type::conv2d: {
        const Eigen::MatrixXd& cols = tape.aux[--aux_index];
        const int batch = static_cast<int>(input.rows());
        const std::int64_t n_out = static_cast<std::int64_t>(batch) * layer.out_side * layer.out_side;
        // Row-major flattening of grad so that row r = (b, oy, ox) lines up with im2col rows.
        const Eigen::MatrixXd grad_t = grad.transpose();
        const Eigen::Map<const Eigen::VectorXd> flat(grad_t.data(), n_out);
        param_grads[layer.param_index].noalias() += cols.transpose() * flat;
        param_grads[layer.param_index + 1](0, 0) += flat.sum();
        // col2im for the input gradient
        const Eigen::MatrixXd& w = params_[layer.param_index].value;
        Eigen::MatrixXd d_in = Eigen::MatrixXd::Zero(batch, input.cols());
        for (int b = 0; b < batch; ++b) {
          for (int oy = 0; oy < layer.out_side; ++oy) {
            for (int ox = 0; ox < layer.out_side; ++ox) {
              const double g = grad(b, oy * layer.out_side + ox);
              if (g == 0.0) continue;
              int col = 0;
              for (int ky = 0; ky < layer.kernel; ++ky) {
                const int y = oy * layer.stride + ky;
                for (int kx = 0; kx < layer.kernel; ++kx) {
                  const int xpix = ox * layer.stride + kx;
                  const int base = (y * layer.in_side + xpix) * layer.in_channels;
                  for (int c = 0; c < layer.in_channels; ++c) d_in(b, base + c) += g * w(col++, 0);
                }
              }
            }
          }
        }
        grad = std::move(d_in);
        break;
      }
      case Layer::Type::maxpool: {
        const Eigen::MatrixXd& argmax = tape.aux[--aux_index];
        Eigen::MatrixXd d_in = Eigen::MatrixXd::Zero(input.rows(), input.cols());
        for (int b = 0; b < input.rows(); ++b)
          for (int j = 0; j < grad.cols(); ++j)
            d_in(b, static_cast<int>(argmax(b, j))) += grad(b, j);
        grad = std::move(d_in);
        break;
      }
    }
  }
  return grad;
}

std::vector<Eigen::MatrixXd> EncoderNet::zero_grads() const {
  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(params_.size());
  for (const NamedTensor& p : params_)
    grads.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
  return grads;
}

AdamState::AdamState(const std::vector<std::ptrdiff_t>& sizes, double base_lr) : base_lr_(base_lr) {
  for (std::ptrdiff_t n : sizes) {
    m_.push_back(Eigen::VectorXd::Zero(n));
    v_.push_back(Eigen::VectorXd::Zero(n));
  }
}

AdamState AdamState::for_params(const std::vector<NamedTensor>& params, double base_lr) {
  std::vector<std::ptrdiff_t> sizes;
  for (const NamedTensor& p : params) sizes.push_back(p.value.size());
  return AdamState(sizes, base_lr);
}

void AdamState::step(std::vector<NamedTensor>& params, const std::vector<Eigen::MatrixXd>& grads,
                     double lr) {
  std::vector<ParamView> views;
  for (std::size_t i = 0; i < params.size(); ++i)
    views.push_back({params[i].value.data(), grads[i].data(), params[i].value.size()});
  step(views, lr);
}

void AdamState::step(const std::vector<ParamView>& views, double lr) {
  if (views.size() != m_.size()) throw std::invalid_argument("AdamState::step: size mismatch");
  ++step_;
  const double bc1 = 1.0 - std::pow(kBeta1, step_);
  const double bc2 = 1.0 - std::pow(kBeta2, step_);
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].size != m_[i].size()) throw std::invalid_argument("AdamState::step: shape mismatch");
    Eigen::Map<Eigen::ArrayXd> p(views[i].value, views[i].size);
    Eigen::Map<const Eigen::ArrayXd> g(views[i].grad, views[i].size);
    m_[i].array() = kBeta1 * m_[i].array() + (1.0 - kBeta1) * g;
    v_[i].array() = kBeta2 * v_[i].array() + (1.0 - kBeta2) * g.square();
    p -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + kEps);
  }
}

double cosine_lr(double base_lr, int epoch, int total_epochs) {
  if (epoch < 0 || epoch > total_epochs || total_epochs <= 0)
    throw std::invalid_argument("cosine_lr: epoch out of range");
  const double phase = std::numbers::pi * static_cast<double>(epoch) / total_epochs;
  const double lr = base_lr * (1.0 + std::cos(phase)) / 2.0;
  return std::max(lr, 0.0);
}

}  // namespace crl
