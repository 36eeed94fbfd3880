#include "sscl/nn.hpp"

#include <cmath>

namespace sscl::nn {
namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

void uniform_fill(std::span<double> out, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : out) v = u(rng);
}

}  // namespace

std::vector<SubBatch> ghost_split(Eigen::Index batch_rows, int subbatches) {
  require(subbatches > 0, ErrorKind::Config, "ghost split needs a positive sub-batch count");
  require(batch_rows % subbatches == 0, ErrorKind::Config,
          "batch of " + std::to_string(batch_rows) + " is not divisible into " + std::to_string(subbatches) +
              " ghost sub-batches");
  const Eigen::Index size = batch_rows / subbatches;
  std::vector<SubBatch> out;
  out.reserve(static_cast<std::size_t>(subbatches));
  for (int g = 0; g < subbatches; ++g) out.push_back({g * size, size});
  return out;
}

// ---------------------------------------------------------------- Linear

void Linear::init(std::span<double> params, std::span<double>, Rng& rng) const {
  uniform_fill(params, 1.0 / std::sqrt(static_cast<double>(in_)), rng);
}

Matrix Linear::forward(std::span<const double> params, std::span<double>, const Matrix& x, const Context&,
                       Cache& cache) const {
  require(x.cols() == in_, ErrorKind::Shape, "linear layer input width mismatch");
  ConstMap W(params.data(), out_, in_);
  Eigen::Map<const Eigen::RowVectorXd> b(params.data() + static_cast<std::ptrdiff_t>(out_) * in_, out_);
  cache.input = x;
  Matrix y = x * W.transpose();
  y.rowwise() += b;
  return y;
}

Matrix Linear::backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                        std::span<double> grad_params) const {
  ConstMap W(params.data(), out_, in_);
  MutMap dW(grad_params.data(), out_, in_);
  Eigen::Map<Eigen::RowVectorXd> db(grad_params.data() + static_cast<std::ptrdiff_t>(out_) * in_, out_);
  dW.noalias() += dy.transpose() * cache.input;
  db += dy.colwise().sum();
  return dy * W;
}

// -------------------------------------------------------- GhostBatchNorm

void GhostBatchNorm::init(std::span<double> params, std::span<double> buffers, Rng&) const {
  for (int c = 0; c < channels_; ++c) {
    params[static_cast<std::size_t>(c)] = 1.0;              // gamma
    params[static_cast<std::size_t>(channels_ + c)] = 0.0;  // beta
  }
  if (!buffers.empty()) {
    for (int c = 0; c < channels_; ++c) {
      buffers[static_cast<std::size_t>(c)] = 0.0;              // running mean
      buffers[static_cast<std::size_t>(channels_ + c)] = 1.0;  // running var
    }
  }
}

Matrix GhostBatchNorm::forward(std::span<const double> params, std::span<double> buffers, const Matrix& x,
                               const Context& ctx, Cache& cache) const {
  require(x.cols() == out_size(), ErrorKind::Shape, "normalization layer input width mismatch");
  const double* gamma = params.data();
  const double* beta = params.data() + channels_;
  const Eigen::Index S = spatial_;
  Matrix y(x.rows(), x.cols());
  cache.aux.resize(x.rows(), x.cols());

  if (ctx.mode == Mode::Eval) {
    require(!buffers.empty(), ErrorKind::Misuse, "eval-mode normalization needs running statistics");
    cache.groups = 0;
    cache.inv_std.assign(static_cast<std::size_t>(channels_), 0.0);
    for (int c = 0; c < channels_; ++c) {
      const double mean = buffers[static_cast<std::size_t>(c)];
      const double inv = 1.0 / std::sqrt(buffers[static_cast<std::size_t>(channels_ + c)] + kEps);
      cache.inv_std[static_cast<std::size_t>(c)] = inv;
      auto xs = x.middleCols(c * S, S);
      cache.aux.middleCols(c * S, S) = (xs.array() - mean) * inv;
      y.middleCols(c * S, S) = (cache.aux.middleCols(c * S, S).array() * gamma[c] + beta[c]).matrix();
    }
    return y;
  }

  const auto groups = ghost_split(x.rows(), ctx.ghost_subbatches);
  cache.groups = static_cast<int>(groups.size());
  cache.inv_std.assign(groups.size() * static_cast<std::size_t>(channels_), 0.0);
  std::vector<double> mean_acc(static_cast<std::size_t>(channels_), 0.0);
  std::vector<double> var_acc(static_cast<std::size_t>(channels_), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto [r0, n] = groups[g];
    const double count = static_cast<double>(n * S);
    for (int c = 0; c < channels_; ++c) {
      auto xs = x.block(r0, c * S, n, S);
      const double mean = xs.mean();
      const double var = (xs.array() - mean).square().sum() / count;
      const double inv = 1.0 / std::sqrt(var + kEps);
      cache.inv_std[g * static_cast<std::size_t>(channels_) + static_cast<std::size_t>(c)] = inv;
      cache.aux.block(r0, c * S, n, S) = (xs.array() - mean) * inv;
      y.block(r0, c * S, n, S) = (cache.aux.block(r0, c * S, n, S).array() * gamma[c] + beta[c]).matrix();
      mean_acc[static_cast<std::size_t>(c)] += mean;
      var_acc[static_cast<std::size_t>(c)] += count > 1.0 ? var * count / (count - 1.0) : var;
    }
  }
  if (!buffers.empty()) {
    const double k = static_cast<double>(groups.size());
    for (int c = 0; c < channels_; ++c) {
      auto cu = static_cast<std::size_t>(c);
      buffers[cu] = (1.0 - kRunningMomentum) * buffers[cu] + kRunningMomentum * mean_acc[cu] / k;
      auto vu = static_cast<std::size_t>(channels_ + c);
      buffers[vu] = (1.0 - kRunningMomentum) * buffers[vu] + kRunningMomentum * var_acc[cu] / k;
    }
  }
  return y;
}

Matrix GhostBatchNorm::backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                                std::span<double> grad_params) const {
  const double* gamma = params.data();
  double* dgamma = grad_params.data();
  double* dbeta = grad_params.data() + channels_;
  const Eigen::Index S = spatial_;
  Matrix dx(dy.rows(), dy.cols());

  for (int c = 0; c < channels_; ++c) {
    auto d = dy.middleCols(c * S, S);
    auto xh = cache.aux.middleCols(c * S, S);
    dgamma[c] += (d.array() * xh.array()).sum();
    dbeta[c] += d.sum();
  }

  if (cache.groups == 0) {
    for (int c = 0; c < channels_; ++c) {
      dx.middleCols(c * S, S) = dy.middleCols(c * S, S) * (gamma[c] * cache.inv_std[static_cast<std::size_t>(c)]);
    }
    return dx;
  }

  const auto groups = ghost_split(dy.rows(), cache.groups);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto [r0, n] = groups[g];
    const double count = static_cast<double>(n * S);
    for (int c = 0; c < channels_; ++c) {
      const double inv = cache.inv_std[g * static_cast<std::size_t>(channels_) + static_cast<std::size_t>(c)];
      auto xh = cache.aux.block(r0, c * S, n, S).array();
      const Eigen::ArrayXXd dxh = dy.block(r0, c * S, n, S).array() * gamma[c];
      const double sum_dxh = dxh.sum();
      const double sum_dxh_xh = (dxh * xh).sum();
      dx.block(r0, c * S, n, S) = ((count * dxh - sum_dxh - xh * sum_dxh_xh) * (inv / count)).matrix();
    }
  }
  return dx;
}

// ------------------------------------------------------------------ Relu

Matrix Relu::forward(std::span<const double>, std::span<double>, const Matrix& x, const Context&,
                     Cache& cache) const {
  cache.input = x;
  return x.cwiseMax(0.0);
}

Matrix Relu::backward(std::span<const double>, const Cache& cache, const Matrix& dy, std::span<double>) const {
  return (cache.input.array() > 0.0).select(dy, 0.0);
}

// --------------------------------------------------------------- Conv3x3

namespace {

// Column matrix (cin*9) x (h*w) for one channel-major sample.
void im2col(const double* x, int cin, int h, int w, Matrix& col) {
  col.setZero(static_cast<Eigen::Index>(cin) * 9, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = (c * 3 + ky) * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            col(row, y * w + xx) = x[(c * h + sy) * w + sx];
          }
        }
      }
    }
  }
}

void col2im_add(const Matrix& col, int cin, int h, int w, double* dx) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = (c * 3 + ky) * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            dx[(c * h + sy) * w + sx] += col(row, y * w + xx);
          }
        }
      }
    }
  }
}

}  // namespace

void Conv3x3::init(std::span<double> params, std::span<double>, Rng& rng) const {
  uniform_fill(params, 1.0 / std::sqrt(static_cast<double>(cin_) * 9.0), rng);
}

Matrix Conv3x3::forward(std::span<const double> params, std::span<double>, const Matrix& x, const Context&,
                        Cache& cache) const {
  require(x.cols() == static_cast<Eigen::Index>(cin_) * h_ * w_, ErrorKind::Shape, "conv layer input size mismatch");
  ConstMap W(params.data(), cout_, static_cast<Eigen::Index>(cin_) * 9);
  Eigen::Map<const Vector> b(params.data() + static_cast<std::ptrdiff_t>(cout_) * cin_ * 9, cout_);
  cache.input = x;
  Matrix y(x.rows(), out_size());
  Matrix col;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    im2col(x.row(r).data(), cin_, h_, w_, col);
    Matrix out = W * col;
    out.colwise() += b;
    y.row(r) = Eigen::Map<const Eigen::RowVectorXd>(out.data(), out.size());
  }
  return y;
}

Matrix Conv3x3::backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                         std::span<double> grad_params) const {
  const Eigen::Index kcols = static_cast<Eigen::Index>(cin_) * 9;
  const Eigen::Index hw = static_cast<Eigen::Index>(h_) * w_;
  ConstMap W(params.data(), cout_, kcols);
  MutMap dW(grad_params.data(), cout_, kcols);
  Eigen::Map<Vector> db(grad_params.data() + static_cast<std::ptrdiff_t>(cout_) * kcols, cout_);
  Matrix dx = Matrix::Zero(cache.input.rows(), cache.input.cols());
  Matrix col;
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    im2col(cache.input.row(r).data(), cin_, h_, w_, col);
    ConstMap d(dy.row(r).data(), cout_, hw);
    dW.noalias() += d * col.transpose();
    db += d.rowwise().sum();
    const Matrix dcol = W.transpose() * d;
    col2im_add(dcol, cin_, h_, w_, dx.row(r).data());
  }
  return dx;
}

// --------------------------------------------------------------- AvgPool

int AvgPool::out_size() const { return c_ * (h_ / fh()) * (w_ / fw()); }

Matrix AvgPool::forward(std::span<const double>, std::span<double>, const Matrix& x, const Context&,
                        Cache& cache) const {
  require(x.cols() == static_cast<Eigen::Index>(c_) * h_ * w_, ErrorKind::Shape, "pool layer input size mismatch");
  const int oh = h_ / fh(), ow = w_ / fw();
  const double scale = 1.0 / (fh() * fw());
  Matrix y = Matrix::Zero(x.rows(), out_size());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double* in = x.row(r).data();
    for (int c = 0; c < c_; ++c)
      for (int yy = 0; yy < oh * fh(); ++yy)
        for (int xx = 0; xx < ow * fw(); ++xx)
          y(r, (c * oh + yy / fh()) * ow + xx / fw()) += in[(c * h_ + yy) * w_ + xx] * scale;
  }
  cache.input.resize(0, 0);
  return y;
}

Matrix AvgPool::backward(std::span<const double>, const Cache&, const Matrix& dy, std::span<double>) const {
  const int oh = h_ / fh(), ow = w_ / fw();
  const double scale = 1.0 / (fh() * fw());
  Matrix dx = Matrix::Zero(dy.rows(), static_cast<Eigen::Index>(c_) * h_ * w_);
  for (Eigen::Index r = 0; r < dy.rows(); ++r)
    for (int c = 0; c < c_; ++c)
      for (int yy = 0; yy < oh * fh(); ++yy)
        for (int xx = 0; xx < ow * fw(); ++xx)
          dx(r, (c * h_ + yy) * w_ + xx) = dy(r, (c * oh + yy / fh()) * ow + xx / fw()) * scale;
  return dx;
}

}  // namespace sscl::nn
