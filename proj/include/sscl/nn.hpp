#pragma once

#include <memory>
#include <span>
#include <vector>

#include "sscl/core.hpp"

// Minimal layer library with explicit backward passes. Every layer reads its
// parameters from a slice of one flat parameter vector so the encoder pair can
// treat theta as a plain array (EMA update, SGD, checkpoints).
namespace sscl::nn {

enum class Mode { Train, Eval };

struct Context {
  Mode mode = Mode::Eval;
  int ghost_subbatches = 1;
};

// Per-layer state saved by forward for use in backward.
struct Cache {
  Matrix input;
  Matrix aux;                   // ghost norm: normalized activations
  std::vector<double> inv_std;  // ghost norm: one entry per (sub-batch, channel)
  int groups = 0;               // ghost norm: sub-batches used in train mode, 0 in eval mode
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::size_t param_count() const { return 0; }
  virtual std::size_t buffer_count() const { return 0; }
  virtual int out_size() const = 0;
  virtual void init(std::span<double> /*params*/, std::span<double> /*buffers*/, Rng& /*rng*/) const {}
  // `buffers` may be empty; in train mode non-empty buffers receive running statistics.
  virtual Matrix forward(std::span<const double> params, std::span<double> buffers, const Matrix& x,
                         const Context& ctx, Cache& cache) const = 0;
  // Accumulates into grad_params and returns dL/dx.
  virtual Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                          std::span<double> grad_params) const = 0;
};

class Linear final : public Layer {
 public:
  Linear(int in, int out) : in_(in), out_(out) {}
  std::size_t param_count() const override { return static_cast<std::size_t>(in_) * out_ + out_; }
  int out_size() const override { return out_; }
  void init(std::span<double> params, std::span<double> buffers, Rng& rng) const override;
  Matrix forward(std::span<const double> params, std::span<double> buffers, const Matrix& x, const Context& ctx,
                 Cache& cache) const override;
  Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                  std::span<double> grad_params) const override;

 private:
  int in_;
  int out_;
};

// Batch normalization whose training statistics are computed independently
// over each of ctx.ghost_subbatches contiguous sub-batches. Input rows are
// channel-major with `spatial` positions per channel.
class GhostBatchNorm final : public Layer {
 public:
  GhostBatchNorm(int channels, int spatial) : channels_(channels), spatial_(spatial) {}
  std::size_t param_count() const override { return 2 * static_cast<std::size_t>(channels_); }
  std::size_t buffer_count() const override { return 2 * static_cast<std::size_t>(channels_); }
  int out_size() const override { return channels_ * spatial_; }
  void init(std::span<double> params, std::span<double> buffers, Rng& rng) const override;
  Matrix forward(std::span<const double> params, std::span<double> buffers, const Matrix& x, const Context& ctx,
                 Cache& cache) const override;
  Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                  std::span<double> grad_params) const override;

  static constexpr double kEps = 1e-5;
  static constexpr double kRunningMomentum = 0.1;

 private:
  int channels_;
  int spatial_;
};

class Relu final : public Layer {
 public:
  explicit Relu(int size) : size_(size) {}
  int out_size() const override { return size_; }
  Matrix forward(std::span<const double> params, std::span<double> buffers, const Matrix& x, const Context& ctx,
                 Cache& cache) const override;
  Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                  std::span<double> grad_params) const override;

 private:
  int size_;
};

// 3x3 convolution, stride 1, zero padding 1.
class Conv3x3 final : public Layer {
 public:
  Conv3x3(int in_channels, int out_channels, int height, int width)
      : cin_(in_channels), cout_(out_channels), h_(height), w_(width) {}
  std::size_t param_count() const override { return static_cast<std::size_t>(cout_) * cin_ * 9 + cout_; }
  int out_size() const override { return cout_ * h_ * w_; }
  void init(std::span<double> params, std::span<double> buffers, Rng& rng) const override;
  Matrix forward(std::span<const double> params, std::span<double> buffers, const Matrix& x, const Context& ctx,
                 Cache& cache) const override;
  Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                  std::span<double> grad_params) const override;

 private:
  int cin_, cout_, h_, w_;
};

// Non-overlapping average pooling with window `factor`; factor 0 pools the
// whole spatial extent (global average pooling).
class AvgPool final : public Layer {
 public:
  AvgPool(int channels, int height, int width, int factor)
      : c_(channels), h_(height), w_(width), f_(factor) {}
  int out_size() const override;
  Matrix forward(std::span<const double> params, std::span<double> buffers, const Matrix& x, const Context& ctx,
                 Cache& cache) const override;
  Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& dy,
                  std::span<double> grad_params) const override;

 private:
  int fh() const { return f_ == 0 ? h_ : f_; }
  int fw() const { return f_ == 0 ? w_ : f_; }
  int c_, h_, w_, f_;
};

// Contiguous [offset, offset + size) row ranges of a ghost split.
struct SubBatch {
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};
std::vector<SubBatch> ghost_split(Eigen::Index batch_rows, int subbatches);

}  // namespace sscl::nn
