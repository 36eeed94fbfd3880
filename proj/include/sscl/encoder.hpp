#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sscl/core.hpp"
#include "sscl/nn.hpp"

namespace sscl {

struct ArchitectureOptions {
  InputShape input;
  int hidden_width = 64;
  int embedding_dim = 128;
};

// Backbone followed by a two-layer projection head. forward returns the
// pre-normalization head output; forward_features stops at the backbone.
class Architecture {
 public:
  Architecture(std::string id, ArchitectureOptions options, std::vector<std::unique_ptr<nn::Layer>> layers,
               std::size_t head_start);

  const std::string& id() const { return id_; }
  const ArchitectureOptions& options() const { return options_; }
  std::size_t parameter_count() const { return param_offsets_.back(); }
  std::size_t buffer_count() const { return buffer_offsets_.back(); }
  int feature_dim() const;
  int embedding_dim() const { return options_.embedding_dim; }
  int input_size() const { return options_.input.size(); }

  void init(std::span<double> params, std::span<double> buffers, Rng& rng) const;

  struct Trace {
    std::vector<nn::Cache> caches;
    std::size_t layers_run = 0;
  };

  Matrix forward(std::span<const double> params, std::span<double> buffers, const Matrix& input,
                 const nn::Context& ctx, Trace* trace = nullptr) const;
  Matrix forward_features(std::span<const double> params, std::span<double> buffers, const Matrix& input,
                          const nn::Context& ctx, Trace* trace = nullptr) const;
  // Accumulates dL/dparams for the layers recorded in `trace`.
  void backward(std::span<const double> params, const Trace& trace, const Matrix& grad_output,
                std::span<double> grad_params) const;

 private:
  Matrix run(std::span<const double> params, std::span<double> buffers, const Matrix& input,
             const nn::Context& ctx, std::size_t stop, Trace* trace) const;

  std::string id_;
  ArchitectureOptions options_;
  std::vector<std::unique_ptr<nn::Layer>> layers_;
  std::size_t head_start_;
  std::vector<std::size_t> param_offsets_;
  std::vector<std::size_t> buffer_offsets_;
};

using ArchitectureFactory = std::function<std::shared_ptr<const Architecture>(const ArchitectureOptions&)>;

// Registered encoder definitions keyed by architecture id. "tiny-mlp" and
// "small-conv" are registered on first use.
class ArchitectureRegistry {
 public:
  static ArchitectureRegistry& instance();
  void add(const std::string& id, ArchitectureFactory factory);
  std::shared_ptr<const Architecture> make(const std::string& id, const ArchitectureOptions& options) const;
  std::vector<std::string> ids() const;

 private:
  ArchitectureRegistry();
  std::map<std::string, ArchitectureFactory> factories_;
};

inline std::shared_ptr<const Architecture> make_architecture(const std::string& id,
                                                             const ArchitectureOptions& options) {
  return ArchitectureRegistry::instance().make(id, options);
}

// Query/key parameter vectors sharing one architecture. Buffers hold the
// running normalization statistics of each side.
struct EncoderPair {
  std::shared_ptr<const Architecture> arch;
  std::vector<double> query;
  std::vector<double> key;
  std::vector<double> query_buffers;
  std::vector<double> key_buffers;

  static EncoderPair create(std::shared_ptr<const Architecture> arch, std::uint64_t seed);
};

std::vector<double> momentum_update(std::span<const double> key, std::span<const double> query, double m);

struct QueryForward {
  Matrix embeddings;      // B x d', unit rows
  Matrix pre_normalized;  // head output before normalization
  Architecture::Trace trace;
};

// Train mode requires rows % ghost_subbatches == 0 and updates the running
// statistics of the side being evaluated.
QueryForward forward_query(EncoderPair& pair, const Matrix& batch, nn::Mode mode, int ghost_subbatches);
Matrix forward_key(EncoderPair& pair, const Matrix& batch, nn::Mode mode, int ghost_subbatches);

// dL/dtheta_q given dL/d(query embeddings).
std::vector<double> query_backward(const EncoderPair& pair, const QueryForward& fwd, const Matrix& grad_embeddings);

// Eval-mode embeddings / backbone features of the query network, processed in chunks.
Matrix embed(const EncoderPair& pair, const Matrix& inputs);
Matrix backbone_features(const Architecture& arch, std::span<const double> params, std::span<const double> buffers,
                         const Matrix& inputs);

// SGD with heavy-ball momentum: v <- mu*v + (g + wd*theta); theta <- theta - lr*v.
struct SgdMomentum {
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<double> velocity;

  void step(std::span<double> params, std::span<const double> grad, double lr);
};

// Half-period cosine decay evaluated at epoch granularity.
double cosine_lr(double base_lr, int epoch, int total_epochs);

// Order-sensitive FNV-1a over the raw bytes of a parameter vector.
std::uint64_t checksum(std::span<const double> values);

}  // namespace sscl
