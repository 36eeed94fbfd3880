#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sscl/core.hpp"
#include "sscl/data.hpp"
#include "sscl/encoder.hpp"

namespace sscl {

// Unit-norm embeddings with their labels and provenance.
struct EmbeddingBank {
  Matrix embeddings;  // N x d'
  std::vector<ClassLabel> labels;
  std::vector<std::string> source_ids;

  Eigen::Index size() const { return embeddings.rows(); }
  void validate() const;
};

// Eval-mode embeddings of a materialized pool.
EmbeddingBank make_bank(const EncoderPair& pair, const MaterializedPool& pool);

// Text form: header "sscl-embeddings<TAB>N<TAB>d'", then one line per row:
// source_id, label, d' values with 9 significant digits, tab separated.
void save_bank(const EmbeddingBank& bank, const std::filesystem::path& file);
EmbeddingBank load_bank(const std::filesystem::path& file);

inline constexpr double kKnnTemperature = 0.07;

struct KnnOptions {
  int k = 5;
  double temperature = kKnnTemperature;
  bool uniform = false;  // equal votes instead of exp(similarity / temperature)
};

// Top-k references by similarity (equal similarities resolved by row order),
// weighted vote, ties between classes resolved toward the smallest label.
ClassLabel knn_classify(const EmbeddingBank& bank, const Vector& query, const KnnOptions& options);
double knn_accuracy(const EmbeddingBank& bank, const EmbeddingBank& queries, const KnnOptions& options);

struct Cohesion {
  double intra = 0.0;
  double inter = 0.0;
};

// Mean pairwise similarity over all same-class pairs and all cross-class pairs.
Cohesion class_cohesion(const EmbeddingBank& bank);

struct ProbeConfig {
  int epochs = 100;
  double base_lr = 30.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 256;
  int ghost_subbatches = 8;  // fine-tuning only
  bool freeze_backbone = true;
  AugmentationPolicy augmentation = AugmentationPolicy::probe_finetune();
  std::uint64_t seed = 0;

  static ProbeConfig linear_probe() { return ProbeConfig{}; }
  static ProbeConfig fine_tune();
};

// Softmax classifier on backbone features.
struct LinearClassifier {
  Matrix weights;  // C x F
  Vector bias;     // C

  Matrix logits(const Matrix& features) const;
  std::vector<int> predict(const Matrix& features) const;
};

struct ProbeResult {
  LinearClassifier classifier;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
};

// Trains only the classifier; the backbone is read-only and its checksum is
// verified after training. Labels are the pool's exposed labels in [0, C).
ProbeResult train_linear_probe(const Architecture& arch, std::span<const double> params,
                               std::span<const double> buffers, const MaterializedPool& labeled, int num_classes,
                               const ProbeConfig& cfg);

struct FineTuneResult {
  std::vector<double> params;
  std::vector<double> buffers;
  LinearClassifier classifier;
};

// Trains backbone and classifier together; ghost normalization in train mode.
FineTuneResult fine_tune(const Architecture& arch, std::vector<double> params, std::vector<double> buffers,
                         const MaterializedPool& labeled, int num_classes, const ProbeConfig& cfg);

// Top-1 accuracy on an unaugmented pool in eval mode.
double classifier_accuracy(const Architecture& arch, std::span<const double> params, std::span<const double> buffers,
                           const LinearClassifier& classifier, const MaterializedPool& pool);

}  // namespace sscl
