#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "sscl/harness.hpp"

using namespace sscl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("sscl_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DataSpec tiny_data_spec() {
  DataSpec d;
  SyntheticSpec s;
  s.classes = 4;
  s.shape = {8, 1, 1};
  s.train_per_class = 40;
  s.test_per_class = 10;
  s.seed = 5;
  d.synthetic = s;
  d.split.id_classes = {0, 1};
  d.split.ood_classes = {2, 3};
  d.split.mismatch_ratio = 0.5;
  d.split.labeled_per_class = 8;
  d.split.val_per_class = 4;
  d.split.unlabeled_slots = 2;
  d.split.seed = 5;
  return d;
}

ExperimentSpec tiny_experiment(const fs::path& out, const fs::path& split) {
  ExperimentSpec e;
  e.name = "tiny";
  e.split = split;
  e.output = out;
  e.seeds = {0, 1};
  e.eval.knn_k = {5};
  e.train.architecture = "tiny-mlp";
  e.train.hidden_width = 16;
  e.train.embedding_dim = 8;
  e.train.batch_size = 16;
  e.train.ghost_subbatches = 2;
  e.train.queue_size = 32;
  e.train.total_epochs = 2;
  e.train.t_end = 1;
  return e;
}

}  // namespace

TEST(ConfigFile, SectionsAndDottedKeysAgree) {
  const ConfigMap a = parse_config_text("[train]\nalpha = 2\n# note\n[eval]\nknn = 5, 200\n");
  const ConfigMap b = parse_config_text("train.alpha=2\neval.knn =5, 200\n");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.at("eval.knn"), "5, 200");
  EXPECT_THROW(parse_config_text("[train\nalpha = 1\n"), Error);
  EXPECT_THROW(parse_config_text("alpha\n"), Error);
}

TEST(ConfigFile, FlagsWinOverFile) {
  ConfigMap m = parse_config_text("[train]\nalpha = 2\nbatch_size = 64\n");
  const std::vector<std::string> flags{"--train.alpha=0.5", "train.seed=9"};
  apply_overrides(m, flags);
  const HarnessConfig h = harness_config(m);
  EXPECT_EQ(h.experiment.train.alpha, 0.5);
  EXPECT_EQ(h.experiment.train.batch_size, 64);
  EXPECT_EQ(h.experiment.train.seed, 9u);
  const std::vector<std::string> bad{"--alpha"};
  EXPECT_THROW(apply_overrides(m, bad), Error);
}

TEST(ConfigFile, PresetIsRefinedByExplicitKeys) {
  const HarnessConfig h = harness_config(parse_config_text("[train]\npreset = tiny-imagenet\nqueue_size = 1024\n"));
  EXPECT_EQ(h.experiment.train.momentum, 0.999);
  EXPECT_EQ(h.experiment.train.queue_size, 1024);
  EXPECT_EQ(h.experiment.train.t_end, 200);
}

TEST(ConfigFile, ParsesEverySection) {
  const HarnessConfig h = harness_config(parse_config_text(R"(
[experiment]
name = grid
split = data/split.json
seeds = 3, 4
[data]
synthetic = true
synthetic.shape = 3x8x8
synthetic.classes = 6
id_classes = 0,1,2
ood_classes = 3,4,5
unlabeled_slots = 2
[eval]
knn = 5
linear = true
probe_epochs = 7
[sweep]
alpha = 2, 1
t_end = none, 10
baseline = false
[train]
total_epochs = 20
t_end = 10
)"),
                                         "/base");
  EXPECT_EQ(h.experiment.name, "grid");
  EXPECT_EQ(h.experiment.split, fs::path("/base/data/split.json"));
  EXPECT_EQ(h.experiment.seeds, (std::vector<std::uint64_t>{3, 4}));
  ASSERT_TRUE(h.data.synthetic.has_value());
  EXPECT_EQ(h.data.synthetic->shape, (InputShape{3, 8, 8}));
  EXPECT_EQ(h.data.split.ood_classes, (std::vector<int>{3, 4, 5}));
  EXPECT_EQ(h.experiment.eval.knn_k, std::vector<int>{5});
  EXPECT_TRUE(h.experiment.eval.linear);
  EXPECT_EQ(h.experiment.eval.probe.epochs, 7);
  EXPECT_EQ(h.sweep.alphas, (std::vector<double>{2.0, 1.0}));
  EXPECT_EQ(h.sweep.t_ends, (std::vector<std::optional<int>>{std::nullopt, 10}));
  EXPECT_FALSE(h.sweep.baseline);
}

TEST(ConfigFile, RejectsUnknownAndInvalidEntries) {
  EXPECT_THROW(harness_config(parse_config_text("[train]\nlearning_rate = 1\n")), Error);
  EXPECT_THROW(harness_config(parse_config_text("[misc]\nx = 1\n")), Error);
  EXPECT_THROW(harness_config(parse_config_text("[experiment]\nseeds =\n")), Error);
  EXPECT_THROW(harness_config(parse_config_text("[eval]\nlinear = perhaps\n")), Error);
  EXPECT_THROW(harness_config(parse_config_text("[train]\ntemperature = 0\n")), Error);
}

TEST(ConfigFile, OutputRootFollowsEnvironment) {
  ::setenv("SSCL_OUTPUT_ROOT", "/tmp/elsewhere", 1);
  EXPECT_EQ(output_root(), fs::path("/tmp/elsewhere"));
  EXPECT_EQ(harness_config(parse_config_text("experiment.name = x\n")).experiment.output,
            fs::path("/tmp/elsewhere/x"));
  ::unsetenv("SSCL_OUTPUT_ROOT");
  EXPECT_EQ(output_root(), fs::path("runs"));
}

TEST(Report, FormatsMeanAndSampleDeviation) {
  const std::vector<double> v{0.80, 0.81, 0.79, 0.80, 0.80};
  const Summary s = summarize(v);
  EXPECT_NEAR(s.mean, 0.80, 1e-12);
  EXPECT_NEAR(s.sd, std::sqrt(0.0002 / 4.0), 1e-12);
  EXPECT_EQ(format_mean_sd(s.mean, s.sd), "0.80 (0.007)");
  EXPECT_EQ(format_mean_sd(75.02, 0.49), "75.02 (0.49)");
  EXPECT_EQ(summarize(std::vector<double>{0.5}).sd, 0.0);
  EXPECT_THROW(summarize(std::vector<double>{}), Error);
}

TEST(Report, FormattingMatchesTablePattern) {
  const std::regex pattern(R"(\d+\.\d{2} \(\d+\.\d{2,3}\))");
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> v(5);
    const double spread = std::pow(10.0, -4.0 * u(rng));
    for (auto& x : v) x = 100.0 * u(rng) * spread + 50.0;
    const Summary s = summarize(v);
    EXPECT_TRUE(std::regex_match(format_mean_sd(s.mean, s.sd), pattern)) << format_mean_sd(s.mean, s.sd);
  }
}

TEST(Report, GroupsRecordsByLabel) {
  std::vector<RunRecord> records{{"moco", 0, {{"knn5", 0.6}}},
                                 {"alpha=2 t_end=100", 0, {{"knn5", 0.7}, {"linear", 0.8}}},
                                 {"moco", 1, {{"knn5", 0.62}}},
                                 {"alpha=2 t_end=100", 1, {{"knn5", 0.72}, {"linear", 0.82}}}};
  const std::string csv = report_csv(records, 100.0);
  EXPECT_EQ(csv,
            "label,runs,knn5,linear\n"
            "moco,2,61.00 (1.41),\n"
            "alpha=2 t_end=100,2,71.00 (1.41),81.00 (1.41)\n");
}

TEST(Records, RoundTripAndMerge) {
  const fs::path dir = fresh_dir("records");
  const RunRecord r{"alpha=1 t_end=none", 7, {{"knn5", 0.625}, {"intra", 0.1234567890123}}};
  save_record(r, dir / "a.tsv");
  const RunRecord back = load_record(dir / "a.tsv");
  EXPECT_EQ(record_text(back), record_text(r));
  save_record(back, dir / "b.tsv");
  EXPECT_EQ(slurp(dir / "a.tsv"), slurp(dir / "b.tsv"));
  merge_record(dir, "moco", 3, {{"knn5", 0.5}});
  merge_record(dir, "moco", 3, {{"linear", 0.75}});
  const RunRecord merged = load_record(dir / kRecordFile);
  EXPECT_EQ(merged.metrics.size(), 2u);
  EXPECT_THROW(merge_record(dir, "moco", 4, {{"knn5", 0.5}}), Error);
  EXPECT_THROW(parse_record("knn5\t0.5\n"), Error);
}

TEST(Records, LabelsAndDirectories) {
  TrainConfig c;
  c.alpha = 2.0;
  c.t_end = 100;
  c.seed = 4;
  EXPECT_EQ(run_label(c), "alpha=2 t_end=100");
  EXPECT_EQ(run_directory("/r", c), fs::path("/r/alpha=2_t_end=100/seed=4"));
  c.t_end = std::nullopt;
  EXPECT_EQ(run_label(c), "alpha=2 t_end=none");
  c.moco_only = true;
  EXPECT_EQ(run_label(c), "moco");
}

TEST(PrepareData, WritesReloadableDescriptor) {
  const fs::path dir = fresh_dir("prepare");
  const fs::path desc = prepare_data(tiny_data_spec(), dir / "split.json");
  const LoadedSplit s = load_split_data(desc);
  EXPECT_EQ(s.data.labeled.inputs.rows(), 16);
  EXPECT_EQ(s.data.unlabeled.inputs.rows(), 56);
  EXPECT_EQ(s.data.validation.inputs.rows(), 8);
  EXPECT_EQ(s.data.test.inputs.rows(), 20);
  EXPECT_FALSE(s.split.manifest.is_absolute());
  // descriptor survives a move of the whole folder
  const fs::path moved = fresh_dir("prepare_moved");
  fs::remove_all(moved);
  fs::rename(dir, moved);
  EXPECT_EQ(load_split_data(moved / "split.json").data.test.inputs, s.data.test.inputs);
  save_split(load_split(moved / "split.json"), moved / "again.json");
  EXPECT_EQ(slurp(moved / "split.json"), slurp(moved / "again.json"));
}

TEST(Export, AuditLabelsAndUnitRows) {
  const fs::path dir = fresh_dir("export");
  const LoadedSplit s = load_split_data(prepare_data(tiny_data_spec(), dir / "split.json"));
  const TrainState st = init_train_state(tiny_experiment(dir, {}).train, s.data.labeled.shape);
  export_embeddings(st.pair, s.data, "unlabeled", dir / "u.tsv");
  const EmbeddingBank b = load_bank(dir / "u.tsv");
  ASSERT_EQ(b.size(), 56);
  std::set<int> classes;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    EXPECT_NEAR(b.embeddings.row(i).norm(), 1.0, 1e-6);
    classes.insert(b.labels[static_cast<std::size_t>(i)].value());
  }
  EXPECT_EQ(classes, (std::set<int>{1, 2}));  // one ID and one OOD class, true classes exposed
  save_bank(b, dir / "u2.tsv");
  EXPECT_EQ(slurp(dir / "u.tsv"), slurp(dir / "u2.tsv"));
  EXPECT_EQ(export_bank(st.pair, s.data, "labeled").size(), 16);
  try {
    export_bank(st.pair, s.data, "training");
    FAIL() << "expected a usage error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Usage);
  }
}

TEST(Export, EmptyPoolGivesHeaderOnly) {
  const fs::path dir = fresh_dir("export_empty");
  const LoadedSplit s = load_split_data(prepare_data(tiny_data_spec(), dir / "split.json"));
  TrainingData data = s.data;
  data.test.inputs.resize(0, data.test.inputs.cols());
  data.test.labels.clear();
  data.test.audit_classes.clear();
  data.test.source_ids.clear();
  const TrainState st = init_train_state(tiny_experiment(dir, {}).train, s.data.labeled.shape);
  export_embeddings(st.pair, data, "test", dir / "empty.tsv");
  EXPECT_EQ(slurp(dir / "empty.tsv"), "sscl-embeddings\t0\t8\n");
}

TEST(Export, FullScaleLabeledPoolHas2400Rows) {
  SyntheticSpec spec;
  spec.classes = 10;
  spec.shape = {4, 1, 1};
  spec.train_per_class = 5000;
  spec.test_per_class = 0;
  MismatchSplitOptions o;
  o.id_classes = {2, 3, 4, 5, 6, 7};
  o.ood_classes = {0, 1, 8, 9};
  o.mismatch_ratio = 0.5;
  const Manifest m = synthetic_manifest(spec);
  const DatasetSplit split = build_mismatch_split(m, o);
  TrainingData data;
  data.labeled = materialize(split.labeled, *make_loader(m));
  TrainConfig cfg;
  cfg.embedding_dim = 8;
  cfg.hidden_width = 8;
  const TrainState st = init_train_state(cfg, spec.shape);
  EXPECT_EQ(export_bank(st.pair, data, "labeled").size(), 2400);
}

TEST(Plots, WriteSvgCharts) {
  const fs::path dir = fresh_dir("plots");
  std::vector<EpochMetrics> log;
  for (int e = 0; e < 5; ++e)
    log.push_back({e, 5.0 - e, 4.5 - e, e < 2 ? std::optional<double>(0.5) : std::nullopt, 1.0, 0.1, 0.5 + 0.05 * e,
                   std::nullopt});
  EXPECT_TRUE(write_loss_plot(log, dir / "loss.svg"));
  EXPECT_TRUE(write_knn_plot(log, dir / "knn.svg"));
  const std::string svg = slurp(dir / "loss.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_FALSE(write_knn_plot({}, dir / "none.svg"));
}

TEST(Sweep, MatrixLayoutAndCellIndependence) {
  const fs::path dir = fresh_dir("sweep");
  const fs::path desc = prepare_data(tiny_data_spec(), dir / "split.json");
  const LoadedSplit s = load_split_data(desc);
  const ExperimentSpec spec = tiny_experiment(dir / "grid", desc);
  SweepGrid grid;
  grid.alphas = {2.0, 1.0};
  grid.t_ends = {std::nullopt, 1};
  const auto cells = run_sweep(spec, s, grid);
  ASSERT_EQ(cells.size(), 5u);
  const std::string csv = sweep_matrix_csv(cells, grid, "knn5");
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "alpha,t_end=none,t_end=1");
  EXPECT_EQ(lines[1].rfind("2,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("1,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("MoCo,", 0), 0u);
  EXPECT_EQ(lines[3].back(), ',');
  const std::regex cell(R"(\d+\.\d{2} \(\d+\.\d{2,3}\))");
  std::istringstream row(lines[1]);
  std::string field;
  std::getline(row, field, ',');
  while (std::getline(row, field, ',')) EXPECT_TRUE(std::regex_match(field, cell)) << field;

  // one cell on its own, in a different folder, reproduces the grid's record
  ExperimentSpec alone = spec;
  alone.output = dir / "alone";
  const TrainConfig cfg = cell_config(spec.train, 1.0, 1, false, 1);
  const RunRecord solo = run_seed(alone, s, cfg, alone.output);
  EXPECT_EQ(record_text(solo), slurp(run_directory(spec.output, cfg) / kRecordFile));
  EXPECT_EQ(slurp(run_directory(spec.output, cfg) / kCheckpointFile),
            slurp(run_directory(alone.output, cfg) / kCheckpointFile));
}

TEST(Runs, ArtifactsRoundTripByteForByte) {
  const fs::path dir = fresh_dir("artifacts");
  const fs::path desc = prepare_data(tiny_data_spec(), dir / "split.json");
  const LoadedSplit s = load_split_data(desc);
  ExperimentSpec spec = tiny_experiment(dir / "out", desc);
  spec.train.knn_every = 1;
  const TrainConfig cfg = cell_config(spec.train, 2.0, 1, false, 0);
  run_seed(spec, s, cfg, spec.output);
  const fs::path run = run_directory(spec.output, cfg);
  save_checkpoint(load_checkpoint(run / kCheckpointFile), dir / "again.bin");
  EXPECT_EQ(slurp(run / kCheckpointFile), slurp(dir / "again.bin"));
  save_metrics(load_metrics(run / kMetricsFile), dir / "again.csv");
  EXPECT_EQ(slurp(run / kMetricsFile), slurp(dir / "again.csv"));
  EXPECT_NE(slurp(run / kMetricsFile).find(",,"), std::string::npos);  // empty knn200 cells
}

TEST(Runs, ZeroEpochPretrainWritesInitialCheckpoint) {
  const fs::path dir = fresh_dir("zero");
  const LoadedSplit s = load_split_data(prepare_data(tiny_data_spec(), dir / "split.json"));
  TrainConfig cfg = tiny_experiment(dir, {}).train;
  cfg.total_epochs = 0;
  cfg.t_end = 0;
  TrainState st = init_train_state(cfg, s.data.labeled.shape);
  finish_pretraining(st, s.data, dir / "run");
  const TrainState back = load_checkpoint(dir / "run" / kCheckpointFile);
  EXPECT_EQ(back.pair.query, init_train_state(cfg, s.data.labeled.shape).pair.query);
  EXPECT_EQ(slurp(dir / "run" / kMetricsFile), "epoch,loss_total,loss_moco,loss_id,w,lr,knn5_val,knn200_val\n");
}
