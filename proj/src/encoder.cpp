#include "sscl/encoder.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace sscl {

Architecture::Architecture(std::string id, ArchitectureOptions options, std::vector<std::unique_ptr<nn::Layer>> layers,
                           std::size_t head_start)
    : id_(std::move(id)), options_(options), layers_(std::move(layers)), head_start_(head_start) {
  require(head_start_ <= layers_.size(), ErrorKind::Config, "projection head starts past the last layer");
  param_offsets_.push_back(0);
  buffer_offsets_.push_back(0);
  for (const auto& layer : layers_) {
    param_offsets_.push_back(param_offsets_.back() + layer->param_count());
    buffer_offsets_.push_back(buffer_offsets_.back() + layer->buffer_count());
  }
}

int Architecture::feature_dim() const {
  return head_start_ == 0 ? input_size() : layers_[head_start_ - 1]->out_size();
}

void Architecture::init(std::span<double> params, std::span<double> buffers, Rng& rng) const {
  require(params.size() == parameter_count(), ErrorKind::Shape, "parameter vector has the wrong length");
  require(buffers.size() == buffer_count(), ErrorKind::Shape, "buffer vector has the wrong length");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->init(params.subspan(param_offsets_[i], layers_[i]->param_count()),
                     buffers.subspan(buffer_offsets_[i], layers_[i]->buffer_count()), rng);
  }
}

Matrix Architecture::run(std::span<const double> params, std::span<double> buffers, const Matrix& input,
                         const nn::Context& ctx, std::size_t stop, Trace* trace) const {
  require(params.size() == parameter_count(), ErrorKind::Shape, "parameter vector has the wrong length");
  require(buffers.empty() || buffers.size() == buffer_count(), ErrorKind::Shape, "buffer vector has the wrong length");
  require(input.cols() == input_size(), ErrorKind::Shape,
          "input width " + std::to_string(input.cols()) + " does not match architecture input " +
              std::to_string(input_size()));
  if (ctx.mode == nn::Mode::Train) nn::ghost_split(input.rows(), ctx.ghost_subbatches);
  if (trace) {
    trace->caches.assign(stop, nn::Cache{});
    trace->layers_run = stop;
  }
  Matrix x = input;
  nn::Cache scratch;
  for (std::size_t i = 0; i < stop; ++i) {
    auto p = params.subspan(param_offsets_[i], layers_[i]->param_count());
    auto b = buffers.empty() ? std::span<double>{} : buffers.subspan(buffer_offsets_[i], layers_[i]->buffer_count());
    nn::Cache& cache = trace ? trace->caches[i] : scratch;
    x = layers_[i]->forward(p, b, x, ctx, cache);
  }
  return x;
}

Matrix Architecture::forward(std::span<const double> params, std::span<double> buffers, const Matrix& input,
                             const nn::Context& ctx, Trace* trace) const {
  return run(params, buffers, input, ctx, layers_.size(), trace);
}

Matrix Architecture::forward_features(std::span<const double> params, std::span<double> buffers, const Matrix& input,
                                      const nn::Context& ctx, Trace* trace) const {
  return run(params, buffers, input, ctx, head_start_, trace);
}

void Architecture::backward(std::span<const double> params, const Trace& trace, const Matrix& grad_output,
                            std::span<double> grad_params) const {
  require(grad_params.size() == parameter_count(), ErrorKind::Shape, "gradient vector has the wrong length");
  Matrix g = grad_output;
  for (std::size_t i = trace.layers_run; i-- > 0;) {
    auto p = params.subspan(param_offsets_[i], layers_[i]->param_count());
    auto gp = grad_params.subspan(param_offsets_[i], layers_[i]->param_count());
    g = layers_[i]->backward(p, trace.caches[i], g, gp);
  }
}

// ---------------------------------------------------------------- registry

namespace {

void append_head(std::vector<std::unique_ptr<nn::Layer>>& layers, int width, int embedding_dim) {
  layers.push_back(std::make_unique<nn::Linear>(width, width));
  layers.push_back(std::make_unique<nn::Relu>(width));
  layers.push_back(std::make_unique<nn::Linear>(width, embedding_dim));
}

std::shared_ptr<const Architecture> make_tiny_mlp(const ArchitectureOptions& o) {
  const int d = o.input.size();
  const int h = o.hidden_width;
  std::vector<std::unique_ptr<nn::Layer>> layers;
  layers.push_back(std::make_unique<nn::Linear>(d, h));
  layers.push_back(std::make_unique<nn::GhostBatchNorm>(h, 1));
  layers.push_back(std::make_unique<nn::Relu>(h));
  layers.push_back(std::make_unique<nn::Linear>(h, h));
  layers.push_back(std::make_unique<nn::GhostBatchNorm>(h, 1));
  layers.push_back(std::make_unique<nn::Relu>(h));
  const std::size_t head = layers.size();
  append_head(layers, h, o.embedding_dim);
  return std::make_shared<Architecture>("tiny-mlp", o, std::move(layers), head);
}

// conv(c -> h/2) norm relu pool2, conv(h/2 -> h) norm relu, global pool.
std::shared_ptr<const Architecture> make_small_conv(const ArchitectureOptions& o) {
  const auto [c, H, W] = o.input;
  require(H >= 2 && W >= 2 && H % 2 == 0 && W % 2 == 0, ErrorKind::Config,
          "small-conv needs an image input with even spatial size");
  const int h = o.hidden_width;
  const int c1 = std::max(1, h / 2);
  std::vector<std::unique_ptr<nn::Layer>> layers;
  layers.push_back(std::make_unique<nn::Conv3x3>(c, c1, H, W));
  layers.push_back(std::make_unique<nn::GhostBatchNorm>(c1, H * W));
  layers.push_back(std::make_unique<nn::Relu>(c1 * H * W));
  layers.push_back(std::make_unique<nn::AvgPool>(c1, H, W, 2));
  const int H2 = H / 2, W2 = W / 2;
  layers.push_back(std::make_unique<nn::Conv3x3>(c1, h, H2, W2));
  layers.push_back(std::make_unique<nn::GhostBatchNorm>(h, H2 * W2));
  layers.push_back(std::make_unique<nn::Relu>(h * H2 * W2));
  layers.push_back(std::make_unique<nn::AvgPool>(h, H2, W2, 0));
  const std::size_t head = layers.size();
  append_head(layers, h, o.embedding_dim);
  return std::make_shared<Architecture>("small-conv", o, std::move(layers), head);
}

}  // namespace

ArchitectureRegistry::ArchitectureRegistry() {
  factories_["tiny-mlp"] = make_tiny_mlp;
  factories_["small-conv"] = make_small_conv;
}

ArchitectureRegistry& ArchitectureRegistry::instance() {
  static ArchitectureRegistry registry;
  return registry;
}

void ArchitectureRegistry::add(const std::string& id, ArchitectureFactory factory) {
  require(!id.empty() && factory != nullptr, ErrorKind::Config, "invalid architecture registration");
  factories_[id] = std::move(factory);
}

std::shared_ptr<const Architecture> ArchitectureRegistry::make(const std::string& id,
                                                               const ArchitectureOptions& options) const {
  auto it = factories_.find(id);
  require(it != factories_.end(), ErrorKind::Config, "unknown architecture '" + id + "'");
  require(options.hidden_width > 0 && options.embedding_dim > 0 && options.input.size() > 0, ErrorKind::Config,
          "architecture options must be positive");
  return it->second(options);
}

std::vector<std::string> ArchitectureRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, f] : factories_) out.push_back(id);
  return out;
}

// ------------------------------------------------------------ encoder pair

EncoderPair EncoderPair::create(std::shared_ptr<const Architecture> arch, std::uint64_t seed) {
  require(arch != nullptr, ErrorKind::Config, "missing architecture");
  EncoderPair pair;
  pair.query.assign(arch->parameter_count(), 0.0);
  pair.query_buffers.assign(arch->buffer_count(), 0.0);
  Rng rng = make_stream(seed, "init");
  arch->init(pair.query, pair.query_buffers, rng);
  pair.key = pair.query;
  pair.key_buffers = pair.query_buffers;
  pair.arch = std::move(arch);
  return pair;
}

std::vector<double> momentum_update(std::span<const double> key, std::span<const double> query, double m) {
  require(key.size() == query.size(), ErrorKind::Shape, "key and query parameter vectors differ in length");
  require(m >= 0.0 && m < 1.0, ErrorKind::Config, "momentum must lie in [0,1)");
  std::vector<double> out(key.size());
  for (std::size_t j = 0; j < key.size(); ++j) out[j] = m * key[j] + (1.0 - m) * query[j];
  return out;
}

QueryForward forward_query(EncoderPair& pair, const Matrix& batch, nn::Mode mode, int ghost_subbatches) {
  QueryForward out;
  const nn::Context ctx{mode, ghost_subbatches};
  out.pre_normalized = pair.arch->forward(pair.query, pair.query_buffers, batch, ctx, &out.trace);
  out.embeddings = l2_normalize_rows(out.pre_normalized);
  return out;
}

Matrix forward_key(EncoderPair& pair, const Matrix& batch, nn::Mode mode, int ghost_subbatches) {
  const nn::Context ctx{mode, ghost_subbatches};
  return l2_normalize_rows(pair.arch->forward(pair.key, pair.key_buffers, batch, ctx));
}

std::vector<double> query_backward(const EncoderPair& pair, const QueryForward& fwd, const Matrix& grad_embeddings) {
  std::vector<double> grad(pair.arch->parameter_count(), 0.0);
  const Matrix g_pre = l2_normalize_rows_backward(fwd.pre_normalized, grad_embeddings);
  pair.arch->backward(pair.query, fwd.trace, g_pre, grad);
  return grad;
}

namespace {
constexpr Eigen::Index kEvalChunk = 512;
}

Matrix embed(const EncoderPair& pair, const Matrix& inputs) {
  Matrix out(inputs.rows(), pair.arch->embedding_dim());
  std::vector<double> buffers = pair.query_buffers;
  const nn::Context ctx{nn::Mode::Eval, 1};
  for (Eigen::Index r = 0; r < inputs.rows(); r += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, inputs.rows() - r);
    out.middleRows(r, n) = l2_normalize_rows(pair.arch->forward(pair.query, buffers, inputs.middleRows(r, n), ctx));
  }
  return out;
}

Matrix backbone_features(const Architecture& arch, std::span<const double> params, std::span<const double> buffers,
                         const Matrix& inputs) {
  Matrix out(inputs.rows(), arch.feature_dim());
  std::vector<double> buf(buffers.begin(), buffers.end());
  const nn::Context ctx{nn::Mode::Eval, 1};
  for (Eigen::Index r = 0; r < inputs.rows(); r += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, inputs.rows() - r);
    out.middleRows(r, n) = arch.forward_features(params, buf, inputs.middleRows(r, n), ctx);
  }
  return out;
}

void SgdMomentum::step(std::span<double> params, std::span<const double> grad, double lr) {
  require(params.size() == grad.size(), ErrorKind::Shape, "gradient length differs from parameters");
  if (velocity.size() != params.size()) velocity.assign(params.size(), 0.0);
  for (std::size_t j = 0; j < params.size(); ++j) {
    velocity[j] = momentum * velocity[j] + grad[j] + weight_decay * params[j];
    params[j] -= lr * velocity[j];
  }
}

double cosine_lr(double base_lr, int epoch, int total_epochs) {
  if (total_epochs <= 0) return base_lr;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / total_epochs));
}

std::uint64_t checksum(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace sscl
