#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sscl/core.hpp"
#include "sscl/data.hpp"
#include "sscl/encoder.hpp"
#include "sscl/queue.hpp"

namespace sscl {

// ---- configuration text ---------------------------------------------------

// Every TrainConfig field as (key, value text), in a fixed order.
std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& cfg);
// Sets one field from text; unknown keys and malformed values are config errors.
void apply_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string config_to_text(const TrainConfig& cfg);
TrainConfig config_from_text(const std::string& text);

// Named published-scale defaults (cifar10, cifar100, tiny-imagenet) plus the
// desk-scale synthetic setup (desk).
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

AugmentationPolicy pretrain_policy(const TrainConfig& cfg);

// ---- data stream ----------------------------------------------------------

// D = D_L followed by D_U with the labels training is allowed to see.
struct PretrainData {
  Matrix inputs;
  std::vector<ClassLabel> labels;
  std::vector<std::string> source_ids;
  InputShape shape;

  Eigen::Index size() const { return inputs.rows(); }
  std::uint64_t fingerprint() const;
};
PretrainData pretrain_pool(const TrainingData& data);

// One batch: rows of D in stream order plus the epoch each row's permutation
// belongs to (augmentation streams are keyed by it).
struct Batch {
  Matrix inputs;
  std::vector<ClassLabel> labels;
  std::vector<std::string> source_ids;
  std::vector<int> epochs;
};

// The stream is the concatenation of per-epoch permutations of D; batch t
// covers stream positions [t*B, (t+1)*B).
Batch batch_at(const PretrainData& data, std::uint64_t seed, int batch_size, std::int64_t iteration);
std::int64_t total_iterations(const TrainConfig& cfg, Eigen::Index dataset_size);
int epoch_of(std::int64_t iteration, int batch_size, Eigen::Index dataset_size);

// ---- state ------------------------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_moco = 0.0;
  std::optional<double> loss_id;  // empty when the ID term was never evaluated
  double w = 0.0;
  double lr = 0.0;
  std::optional<double> knn5_val;
  std::optional<double> knn200_val;
  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

// Sums over the steps of the epoch in progress.
struct MetricAccumulator {
  double total = 0.0;
  double moco = 0.0;
  double id = 0.0;
  std::int64_t steps = 0;
  std::int64_t id_steps = 0;
  friend bool operator==(const MetricAccumulator&, const MetricAccumulator&) = default;
};

// Every random draw is a pure function of (seed, stream name, indices), so the
// iteration counter stands in for generator state.
struct TrainState {
  TrainConfig config;
  InputShape input_shape;
  EncoderPair pair;
  MemoryQueue queue;
  SgdMomentum optimizer;
  std::int64_t iteration = 0;
  std::uint64_t data_fingerprint = 0;
  MetricAccumulator accumulator;
  std::vector<EpochMetrics> log;
};

TrainState init_train_state(const TrainConfig& cfg, InputShape input_shape);
int current_epoch(const TrainState& s, Eigen::Index dataset_size);

struct StepStats {
  double loss = 0.0;
  double moco = 0.0;
  std::optional<double> id;
  double w = 0.0;
  double lr = 0.0;
};

// Instrumentation points for tests and tools.
struct TrainHooks {
  std::function<void(const Matrix& keys, std::span<const ClassLabel> labels)> on_enqueue;
  std::function<void(const TrainState&, const StepStats&)> on_step;
};

// One optimization step at `epoch`:
//   (1) two augmented views per item, (2) query forward on anchors and key
//   forward on positives, (3) queue snapshot, (4) positive sets of labeled
//   anchors, (5) combined loss with w = schedule_w(epoch, t_end), (6) SGD step
//   on theta_q with the cosine learning rate, (7) momentum update of theta_k,
//   (8) enqueue of the keys with the batch's exposed labels.
StepStats pretrain_step(TrainState& state, const Batch& batch, int epoch, const TrainHooks* hooks = nullptr);

// Validation pools for periodic k-NN monitoring.
struct MonitorData {
  MaterializedPool labeled;
  MaterializedPool validation;
};

// Advances the state up to (not including) iteration `stop`, closing epoch
// rows as their last batch completes. `stop` is clamped to the run length.
void run_pretraining(TrainState& state, const PretrainData& data, const MonitorData* monitor, std::int64_t stop,
                     const TrainHooks* hooks = nullptr);

struct PretrainResult {
  TrainState state;
};

PretrainResult pretrain(const TrainConfig& cfg, const TrainingData& data, const TrainHooks* hooks = nullptr);

// ---- artifacts --------------------------------------------------------------

// Versioned little-endian binary container.
void save_checkpoint(const TrainState& state, const std::filesystem::path& file);
TrainState load_checkpoint(const std::filesystem::path& file);
std::vector<unsigned char> serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(std::span<const unsigned char> bytes);

// Columns: epoch, loss_total, loss_moco, loss_id, w, lr, knn5_val, knn200_val.
std::string metrics_csv(const std::vector<EpochMetrics>& log);
std::vector<EpochMetrics> parse_metrics_csv(const std::string& text);
void save_metrics(const std::vector<EpochMetrics>& log, const std::filesystem::path& file);
std::vector<EpochMetrics> load_metrics(const std::filesystem::path& file);

}  // namespace sscl
