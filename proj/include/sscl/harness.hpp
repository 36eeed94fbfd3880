#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sscl/core.hpp"
#include "sscl/data.hpp"
#include "sscl/eval.hpp"
#include "sscl/training.hpp"

namespace sscl {

// ---- configuration files ----------------------------------------------------

// Flat view of a config file: "[section]" headers prefix the keys below them,
// so "[train]\nalpha = 2" and "train.alpha = 2" are the same entry.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::filesystem::path& file);
// Each flag is "--key=value" or "key=value"; flags replace file values.
void apply_overrides(ConfigMap& config, std::span<const std::string> flags);

// Inputs of prepare-data.
struct DataSpec {
  std::filesystem::path manifest;            // image or synthetic manifest file
  std::optional<SyntheticSpec> synthetic;    // generate a manifest instead
  std::filesystem::path unlabeled_manifest;  // cross-dataset mode when set
  std::optional<int> resize;
  MismatchSplitOptions split;
  CrossDatasetCounts cross;
};

struct EvalPlan {
  std::vector<int> knn_k{5, 200};
  double knn_temperature = kKnnTemperature;
  bool linear = false;
  bool finetune = false;
  ProbeConfig probe = ProbeConfig::linear_probe();
  ProbeConfig tune = ProbeConfig::fine_tune();
};

struct ExperimentSpec {
  std::string name = "experiment";
  std::filesystem::path split;
  TrainConfig train;
  EvalPlan eval;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output;

  void validate() const;
};

// One alpha x t_end grid with an optional MoCo baseline row.
struct SweepGrid {
  std::vector<double> alphas{3.0, 2.0, 1.0, 0.5, 0.25};
  std::vector<std::optional<int>> t_ends{std::nullopt, 100, 200, 300};
  bool baseline = true;
};

struct HarnessConfig {
  ExperimentSpec experiment;
  DataSpec data;
  SweepGrid sweep;
};

// Sections: experiment (name, split, seeds, output), data (and data.synthetic),
// train (every TrainConfig key plus preset), eval, sweep. Unknown keys are
// config errors. Relative paths resolve against `base`.
HarnessConfig harness_config(const ConfigMap& config, const std::filesystem::path& base = {});
HarnessConfig load_harness_config(const std::filesystem::path& file, std::span<const std::string> flags = {});

// $SSCL_OUTPUT_ROOT, or "runs" when unset.
std::filesystem::path output_root();

// ---- data -------------------------------------------------------------------

// Writes the split descriptor (and a generated manifest next to it for
// synthetic data). Returns the descriptor path.
std::filesystem::path prepare_data(const DataSpec& data, const std::filesystem::path& descriptor);

struct LoadedSplit {
  DatasetSplit split;
  TrainingData data;
};
// Manifest paths stored relative in a descriptor resolve against its folder.
LoadedSplit load_split_data(const std::filesystem::path& descriptor);

const MaterializedPool& pool_by_name(const TrainingData& data, const std::string& name);

// ---- runs ---------------------------------------------------------------------

using Metrics = std::map<std::string, double>;

// Outcome of one (configuration, seed) run.
struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  Metrics metrics;
};

std::string run_label(const TrainConfig& cfg);
std::filesystem::path run_directory(const std::filesystem::path& root, const TrainConfig& cfg);

// Text form: "label<TAB>..." and "seed<TAB>..." followed by one
// "metric<TAB>value" line per metric in name order.
std::string record_text(const RunRecord& record);
RunRecord parse_record(const std::string& text);
void save_record(const RunRecord& record, const std::filesystem::path& file);
RunRecord load_record(const std::filesystem::path& file);
// Adds metrics to the record file in `dir`, creating it when missing.
void merge_record(const std::filesystem::path& dir, const std::string& label, std::uint64_t seed,
                  const Metrics& metrics);

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kRecordFile = "result.tsv";

// Pretrains (or resumes `state`) to the end and writes checkpoint, metric log
// and config echo into `dir`.
void finish_pretraining(TrainState& state, const TrainingData& data, const std::filesystem::path& dir);

// Evaluation of a trained pair on the test pool; references and classifier
// training use the labeled pool. Keys: knn<k>, linear, finetune.
double evaluate_knn(const EncoderPair& pair, const TrainingData& data, const std::string& pool, int k,
                    double temperature);
double evaluate_linear(const EncoderPair& pair, const TrainingData& data, int num_classes, const ProbeConfig& cfg,
                       const std::string& pool = "test");
double evaluate_finetune(const EncoderPair& pair, const TrainingData& data, int num_classes, const ProbeConfig& cfg,
                         const std::string& pool = "test");
Metrics evaluate_plan(const EncoderPair& pair, const TrainingData& data, int num_classes, const EvalPlan& plan,
                      std::uint64_t seed);

// Pretrain + evaluate one configuration for one seed; artifacts go under `root`.
RunRecord run_seed(const ExperimentSpec& spec, const LoadedSplit& split, const TrainConfig& cfg,
                   const std::filesystem::path& root);

// ---- sweep --------------------------------------------------------------------

struct SweepCell {
  double alpha = 0.0;
  std::optional<int> t_end;
  bool baseline = false;
  std::vector<RunRecord> runs;
};

// Cell configuration: the experiment's TrainConfig with alpha and t_end set
// (baseline: moco_only) and the given seed.
TrainConfig cell_config(const TrainConfig& base, double alpha, std::optional<int> t_end, bool baseline,
                        std::uint64_t seed);

using Progress = std::function<void(const std::string& line)>;
std::vector<SweepCell> run_sweep(const ExperimentSpec& spec, const LoadedSplit& split, const SweepGrid& grid,
                                 const Progress& progress = {});

// Rows alpha, columns t_end, cells "mean (sd)" of `metric`; a final MoCo row
// carries the baseline in the first column.
std::string sweep_matrix_csv(const std::vector<SweepCell>& cells, const SweepGrid& grid, const std::string& metric);

// ---- report -------------------------------------------------------------------

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};
Summary summarize(std::span<const double> values);
// Mean with two decimals; sd with two decimals, or three when below 0.01.
std::string format_mean_sd(double mean, double sd);

// Finds every record file below the given paths (files are taken as is).
std::vector<std::filesystem::path> find_records(std::span<const std::filesystem::path> paths);
// One row per label (first-seen order), one "mean (sd)" column per metric.
std::string report_csv(const std::vector<RunRecord>& records, double scale = 1.0);

// Static SVG line charts of a metric log: losses (total, moco, id) and k-NN
// validation accuracy. Returns false when the log has nothing to draw.
bool write_loss_plot(const std::vector<EpochMetrics>& log, const std::filesystem::path& file);
bool write_knn_plot(const std::vector<EpochMetrics>& log, const std::filesystem::path& file);

// ---- export -------------------------------------------------------------------

// Embeddings of one pool with audit labels (true class, OOD included).
EmbeddingBank export_bank(const EncoderPair& pair, const TrainingData& data, const std::string& pool);
void export_embeddings(const EncoderPair& pair, const TrainingData& data, const std::string& pool,
                       const std::filesystem::path& file);

}  // namespace sscl
