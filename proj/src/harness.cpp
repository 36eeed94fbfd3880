#include "sscl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace sscl {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string read_text(const fs::path& file, const std::string& what) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorKind::Data, "cannot open " + what + " " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write " + file.string());
  out << text;
  require(out.good(), ErrorKind::Io, "failed writing " + file.string());
}

int int_value(const std::string& key, const std::string& v) {
  try {
    return static_cast<int>(parse_int(v));
  } catch (const Error&) {
    fail(ErrorKind::Config, key + ": expected an integer, got '" + v + "'");
  }
}

double double_value(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    fail(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
  }
}

bool bool_value(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::Config, key + ": expected true or false, got '" + v + "'");
}

std::uint64_t seed_value(const std::string& key, const std::string& v) {
  const int s = int_value(key, v);
  require(s >= 0, ErrorKind::Config, key + ": seeds must be nonnegative");
  return static_cast<std::uint64_t>(s);
}

std::vector<int> int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split_list(v)) out.push_back(int_value(key, item));
  return out;
}

std::optional<int> t_end_value(const std::string& key, const std::string& v) {
  if (v == "none") return std::nullopt;
  return int_value(key, v);
}

InputShape shape_value(const std::string& key, const std::string& v) {
  int c = 0, h = 0, w = 0;
  char x1 = 0, x2 = 0;
  std::istringstream in(v);
  if (in >> c) {
    if (in >> x1 >> h >> x2 >> w && x1 == 'x' && x2 == 'x') return {c, h, w};
    if (in.eof() && x1 == 0) return {c, 1, 1};
  }
  fail(ErrorKind::Config, key + ": expected CxHxW or a dimension, got '" + v + "'");
}

fs::path resolve(const fs::path& base, const std::string& v) {
  const fs::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::string number_text(double v) { return format_double(v); }

}  // namespace

// ---- configuration files ----------------------------------------------------

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      require(line.back() == ']' && line.size() > 2, ErrorKind::Config,
              "line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::Config,
            "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    out[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap load_config_file(const fs::path& file) { return parse_config_text(read_text(file, "config file")); }

void apply_overrides(ConfigMap& config, std::span<const std::string> flags) {
  for (std::string f : flags) {
    if (f.rfind("--", 0) == 0) f = f.substr(2);
    const auto eq = f.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::Config, "override '" + f + "' is not key=value");
    config[trim(f.substr(0, eq))] = trim(f.substr(eq + 1));
  }
}

void ExperimentSpec::validate() const {
  require(!name.empty() && name.find_first_of("/\\") == std::string::npos, ErrorKind::Config,
          "experiment name must be a nonempty plain word");
  require(!seeds.empty(), ErrorKind::Config, "seed list must not be empty");
  train.validate();
  for (int k : eval.knn_k) require(k > 0, ErrorKind::Config, "k-NN k must be positive");
}

HarnessConfig harness_config(const ConfigMap& config, const fs::path& base) {
  HarnessConfig h;
  auto& e = h.experiment;
  auto& d = h.data;
  // the preset goes first so explicit train keys refine it
  if (auto it = config.find("train.preset"); it != config.end()) e.train = preset(it->second);
  SyntheticSpec synth;
  bool synthetic = false;
  for (const auto& [key, v] : config) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (section == "experiment") {
      if (name == "name") e.name = v;
      else if (name == "split") e.split = resolve(base, v);
      else if (name == "output") e.output = resolve(base, v);
      else if (name == "seeds") {
        e.seeds.clear();
        for (const auto& s : split_list(v)) e.seeds.push_back(seed_value(key, s));
      } else fail(ErrorKind::Config, "unknown option '" + key + "'");
    } else if (section == "train") {
      if (name != "preset") apply_config_value(e.train, name, v);
    } else if (section == "eval") {
      if (name == "knn") e.eval.knn_k = int_list(key, v);
      else if (name == "knn_temperature") e.eval.knn_temperature = double_value(key, v);
      else if (name == "linear") e.eval.linear = bool_value(key, v);
      else if (name == "finetune") e.eval.finetune = bool_value(key, v);
      else if (name == "probe_epochs") e.eval.probe.epochs = int_value(key, v);
      else if (name == "probe_lr") e.eval.probe.base_lr = double_value(key, v);
      else if (name == "probe_batch") e.eval.probe.batch_size = int_value(key, v);
      else if (name == "finetune_epochs") e.eval.tune.epochs = int_value(key, v);
      else if (name == "finetune_lr") e.eval.tune.base_lr = double_value(key, v);
      else if (name == "finetune_batch") e.eval.tune.batch_size = int_value(key, v);
      else if (name == "finetune_ghost") e.eval.tune.ghost_subbatches = int_value(key, v);
      else if (name == "augment") {
        const bool on = bool_value(key, v);
        e.eval.probe.augmentation = on ? AugmentationPolicy::probe_finetune() : AugmentationPolicy::none();
        e.eval.tune.augmentation = e.eval.probe.augmentation;
      } else fail(ErrorKind::Config, "unknown option '" + key + "'");
    } else if (section == "data") {
      if (name == "manifest") d.manifest = resolve(base, v);
      else if (name == "unlabeled_manifest") d.unlabeled_manifest = resolve(base, v);
      else if (name == "resize") d.resize = int_value(key, v);
      else if (name == "id_classes") d.split.id_classes = int_list(key, v);
      else if (name == "ood_classes") d.split.ood_classes = int_list(key, v);
      else if (name == "mismatch_ratio") d.split.mismatch_ratio = double_value(key, v);
      else if (name == "labeled_per_class") d.split.labeled_per_class = d.cross.labeled_per_class = int_value(key, v);
      else if (name == "val_per_class") d.split.val_per_class = d.cross.val_per_class = int_value(key, v);
      else if (name == "unlabeled_slots") d.split.unlabeled_slots = int_value(key, v);
      else if (name == "seed") d.split.seed = seed_value(key, v);
      else if (name == "synthetic") synthetic = bool_value(key, v);
      else if (name == "synthetic.classes") synth.classes = int_value(key, v);
      else if (name == "synthetic.shape") synth.shape = shape_value(key, v);
      else if (name == "synthetic.train_per_class") synth.train_per_class = int_value(key, v);
      else if (name == "synthetic.test_per_class") synth.test_per_class = int_value(key, v);
      else if (name == "synthetic.separation") synth.separation = double_value(key, v);
      else if (name == "synthetic.noise") synth.noise = double_value(key, v);
      else if (name == "synthetic.seed") synth.seed = seed_value(key, v);
      else fail(ErrorKind::Config, "unknown option '" + key + "'");
    } else if (section == "sweep") {
      auto& g = h.sweep;
      if (name == "alpha") {
        g.alphas.clear();
        for (const auto& a : split_list(v)) g.alphas.push_back(double_value(key, a));
      } else if (name == "t_end") {
        g.t_ends.clear();
        for (const auto& t : split_list(v)) g.t_ends.push_back(t_end_value(key, t));
      } else if (name == "baseline") g.baseline = bool_value(key, v);
      else fail(ErrorKind::Config, "unknown option '" + key + "'");
    } else {
      fail(ErrorKind::Config, "unknown option '" + key + "'");
    }
  }
  if (synthetic) d.synthetic = synth;
  if (e.output.empty()) e.output = output_root() / e.name;
  require(!h.sweep.alphas.empty() && !h.sweep.t_ends.empty(), ErrorKind::Config, "sweep grid must not be empty");
  for (double a : h.sweep.alphas) require(a >= 0.0, ErrorKind::Config, "sweep alphas must be nonnegative");
  e.validate();
  return h;
}

HarnessConfig load_harness_config(const fs::path& file, std::span<const std::string> flags) {
  ConfigMap m = load_config_file(file);
  apply_overrides(m, flags);
  return harness_config(m, file.parent_path());
}

fs::path output_root() {
  const char* env = std::getenv("SSCL_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

// ---- data -------------------------------------------------------------------

fs::path prepare_data(const DataSpec& d, const fs::path& descriptor) {
  const fs::path dir = descriptor.has_parent_path() ? descriptor.parent_path() : fs::path(".");
  fs::create_directories(dir);
  Manifest manifest;
  fs::path manifest_path;
  if (d.synthetic) {
    require(d.manifest.empty(), ErrorKind::Config, "set either data.manifest or data.synthetic, not both");
    manifest = synthetic_manifest(*d.synthetic);
    manifest_path = dir / (descriptor.stem().string() + ".manifest.tsv");
    save_manifest(manifest, manifest_path);
  } else {
    require(!d.manifest.empty(), ErrorKind::Config, "data.manifest is required");
    manifest = load_manifest(d.manifest);
    manifest_path = d.manifest;
  }
  if (d.resize) {
    manifest = resize_inputs(manifest, *d.resize);
    manifest_path = dir / (descriptor.stem().string() + ".resized.tsv");
    save_manifest(manifest, manifest_path);
    manifest.root = manifest_path.parent_path();
  }
  DatasetSplit split;
  if (!d.unlabeled_manifest.empty()) {
    const Manifest u = load_manifest(d.unlabeled_manifest);
    split = build_cross_dataset_split(manifest, u, d.split.mismatch_ratio, d.cross, d.split.seed);
    split.unlabeled_manifest = fs::absolute(d.unlabeled_manifest);
  } else {
    split = build_mismatch_split(manifest, d.split);
  }
  const fs::path abs_manifest = fs::absolute(manifest_path);
  const fs::path rel = abs_manifest.lexically_relative(fs::absolute(dir));
  split.manifest = !rel.empty() && *rel.begin() != ".." ? rel : abs_manifest;
  save_split(split, descriptor);
  return descriptor;
}

LoadedSplit load_split_data(const fs::path& descriptor) {
  LoadedSplit s{load_split(descriptor), {}};
  const fs::path dir = descriptor.parent_path();
  DatasetSplit resolved = s.split;
  if (!resolved.manifest.is_absolute()) resolved.manifest = dir / resolved.manifest;
  if (!resolved.unlabeled_manifest.empty() && !resolved.unlabeled_manifest.is_absolute())
    resolved.unlabeled_manifest = dir / resolved.unlabeled_manifest;
  s.data = load_training_data(resolved);
  return s;
}

const MaterializedPool& pool_by_name(const TrainingData& data, const std::string& name) {
  if (name == "labeled") return data.labeled;
  if (name == "unlabeled") return data.unlabeled;
  if (name == "validation") return data.validation;
  if (name == "test") return data.test;
  fail(ErrorKind::Usage, "unknown pool '" + name + "' (expected labeled, unlabeled, validation or test)");
}

// ---- runs ---------------------------------------------------------------------

std::string run_label(const TrainConfig& cfg) {
  if (cfg.moco_only || cfg.alpha == 0.0) return "moco";
  return "alpha=" + number_text(cfg.alpha) + " t_end=" + (cfg.t_end ? std::to_string(*cfg.t_end) : "none");
}

fs::path run_directory(const fs::path& root, const TrainConfig& cfg) {
  std::string label = run_label(cfg);
  std::replace(label.begin(), label.end(), ' ', '_');
  return root / label / ("seed=" + std::to_string(cfg.seed));
}

std::string record_text(const RunRecord& r) {
  require(r.label.find_first_of("\t\n") == std::string::npos, ErrorKind::Data, "record label contains a tab");
  std::string out = "label\t" + r.label + "\nseed\t" + std::to_string(r.seed) + "\n";
  for (const auto& [k, v] : r.metrics) out += k + "\t" + format_double(v) + "\n";
  return out;
}

RunRecord parse_record(const std::string& text) {
  RunRecord r;
  std::istringstream in(text);
  std::string line;
  bool have_label = false, have_seed = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos, ErrorKind::Data, "record line without a tab: '" + line + "'");
    const std::string k = line.substr(0, tab), v = line.substr(tab + 1);
    if (k == "label") {
      r.label = v;
      have_label = true;
    } else if (k == "seed") {
      r.seed = static_cast<std::uint64_t>(parse_int(v));
      have_seed = true;
    } else {
      r.metrics[k] = parse_double(v);
    }
  }
  require(have_label && have_seed, ErrorKind::Data, "record lacks label or seed");
  return r;
}

void save_record(const RunRecord& record, const fs::path& file) { write_text(file, record_text(record)); }

RunRecord load_record(const fs::path& file) { return parse_record(read_text(file, "run record")); }

void merge_record(const fs::path& dir, const std::string& label, std::uint64_t seed, const Metrics& metrics) {
  const fs::path file = dir / kRecordFile;
  RunRecord r{label, seed, {}};
  if (fs::exists(file)) {
    r = load_record(file);
    require(r.seed == seed, ErrorKind::Consistency, "record " + file.string() + " belongs to another seed");
  }
  for (const auto& [k, v] : metrics) r.metrics[k] = v;
  save_record(r, file);
}

void finish_pretraining(TrainState& state, const TrainingData& data, const fs::path& dir) {
  const PretrainData pool = pretrain_pool(data);
  const MonitorData monitor{data.labeled, data.validation};
  run_pretraining(state, pool, &monitor, std::numeric_limits<std::int64_t>::max());
  fs::create_directories(dir);
  save_checkpoint(state, dir / kCheckpointFile);
  save_metrics(state.log, dir / kMetricsFile);
  write_text(dir / "config.txt", config_to_text(state.config));
}

double evaluate_knn(const EncoderPair& pair, const TrainingData& data, const std::string& pool, int k,
                    double temperature) {
  const EmbeddingBank bank = make_bank(pair, data.labeled);
  const EmbeddingBank queries = make_bank(pair, pool_by_name(data, pool));
  return knn_accuracy(bank, queries, {k, temperature, false});
}

double evaluate_linear(const EncoderPair& pair, const TrainingData& data, int num_classes, const ProbeConfig& cfg,
                       const std::string& pool) {
  const ProbeResult r = train_linear_probe(*pair.arch, pair.query, pair.query_buffers, data.labeled, num_classes, cfg);
  return classifier_accuracy(*pair.arch, pair.query, pair.query_buffers, r.classifier, pool_by_name(data, pool));
}

double evaluate_finetune(const EncoderPair& pair, const TrainingData& data, int num_classes, const ProbeConfig& cfg,
                         const std::string& pool) {
  const FineTuneResult r = fine_tune(*pair.arch, pair.query, pair.query_buffers, data.labeled, num_classes, cfg);
  return classifier_accuracy(*pair.arch, r.params, r.buffers, r.classifier, pool_by_name(data, pool));
}

Metrics evaluate_plan(const EncoderPair& pair, const TrainingData& data, int num_classes, const EvalPlan& plan,
                      std::uint64_t seed) {
  Metrics m;
  for (int k : plan.knn_k) m["knn" + std::to_string(k)] = evaluate_knn(pair, data, "test", k, plan.knn_temperature);
  if (plan.linear) {
    ProbeConfig cfg = plan.probe;
    cfg.seed = seed;
    m["linear"] = evaluate_linear(pair, data, num_classes, cfg);
  }
  if (plan.finetune) {
    ProbeConfig cfg = plan.tune;
    cfg.seed = seed;
    m["finetune"] = evaluate_finetune(pair, data, num_classes, cfg);
  }
  const Cohesion c = class_cohesion(make_bank(pair, data.labeled));
  m["intra"] = c.intra;
  m["inter"] = c.inter;
  return m;
}

RunRecord run_seed(const ExperimentSpec& spec, const LoadedSplit& split, const TrainConfig& cfg, const fs::path& root) {
  const fs::path dir = run_directory(root, cfg);
  const PretrainData pool = pretrain_pool(split.data);
  TrainState state = init_train_state(cfg, pool.shape);
  finish_pretraining(state, split.data, dir);
  RunRecord r{run_label(cfg), cfg.seed, evaluate_plan(state.pair, split.data, split.split.num_classes(), spec.eval, cfg.seed)};
  if (!state.log.empty()) {
    if (state.log.back().knn5_val) r.metrics["knn5_val"] = *state.log.back().knn5_val;
    if (state.log.back().knn200_val) r.metrics["knn200_val"] = *state.log.back().knn200_val;
  }
  save_record(r, dir / kRecordFile);
  return r;
}

// ---- sweep --------------------------------------------------------------------

TrainConfig cell_config(const TrainConfig& base, double alpha, std::optional<int> t_end, bool baseline,
                        std::uint64_t seed) {
  TrainConfig c = base;
  c.seed = seed;
  if (baseline) {
    c.moco_only = true;
    c.alpha = 0.0;
  } else {
    c.moco_only = false;
    c.alpha = alpha;
    c.t_end = t_end;
  }
  return c;
}

std::vector<SweepCell> run_sweep(const ExperimentSpec& spec, const LoadedSplit& split, const SweepGrid& grid,
                                 const Progress& progress) {
  std::vector<SweepCell> cells;
  for (double a : grid.alphas)
    for (const auto& t : grid.t_ends) cells.push_back({a, t, false, {}});
  if (grid.baseline) cells.push_back({0.0, std::nullopt, true, {}});
  for (auto& cell : cells) {
    for (std::uint64_t seed : spec.seeds) {
      const TrainConfig cfg = cell_config(spec.train, cell.alpha, cell.t_end, cell.baseline, seed);
      cell.runs.push_back(run_seed(spec, split, cfg, spec.output));
      if (progress) {
        std::string line = run_label(cfg) + " seed=" + std::to_string(seed);
        for (const auto& [k, v] : cell.runs.back().metrics) line += " " + k + "=" + format_double(v);
        progress(line);
      }
    }
  }
  return cells;
}

namespace {

std::string cell_text(const SweepCell& cell, const std::string& metric) {
  std::vector<double> v;
  for (const auto& r : cell.runs) {
    const auto it = r.metrics.find(metric);
    require(it != r.metrics.end(), ErrorKind::Data, "sweep run lacks metric '" + metric + "'");
    v.push_back(it->second);
  }
  const Summary s = summarize(v);
  return format_mean_sd(s.mean, s.sd);
}

}  // namespace

std::string sweep_matrix_csv(const std::vector<SweepCell>& cells, const SweepGrid& grid, const std::string& metric) {
  std::string out = "alpha";
  for (const auto& t : grid.t_ends) out += ",t_end=" + (t ? std::to_string(*t) : std::string("none"));
  out += "\n";
  for (double a : grid.alphas) {
    out += number_text(a);
    for (const auto& t : grid.t_ends) {
      const auto it = std::find_if(cells.begin(), cells.end(),
                                   [&](const SweepCell& c) { return !c.baseline && c.alpha == a && c.t_end == t; });
      require(it != cells.end(), ErrorKind::Data, "sweep cell missing");
      out += "," + cell_text(*it, metric);
    }
    out += "\n";
  }
  for (const auto& c : cells) {
    if (!c.baseline) continue;
    out += "MoCo," + cell_text(c, metric) + std::string(grid.t_ends.size() - 1, ',') + "\n";
  }
  return out;
}

// ---- report -------------------------------------------------------------------

Summary summarize(std::span<const double> values) {
  require(!values.empty(), ErrorKind::Domain, "cannot summarize an empty sample");
  Summary s;
  s.n = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::string format_mean_sd(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, sd < 0.01 ? "%.2f (%.3f)" : "%.2f (%.2f)", mean, sd);
  return buf;
}

std::vector<fs::path> find_records(std::span<const fs::path> paths) {
  std::vector<fs::path> out;
  for (const auto& p : paths) {
    if (fs::is_regular_file(p)) {
      out.push_back(p);
      continue;
    }
    require(fs::is_directory(p), ErrorKind::Data, "no such file or directory: " + p.string());
    std::vector<fs::path> found;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file() && e.path().filename() == kRecordFile) found.push_back(e.path());
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

std::string report_csv(const std::vector<RunRecord>& records, double scale) {
  std::vector<std::string> labels;
  std::set<std::string> metrics;
  for (const auto& r : records) {
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
    for (const auto& [k, v] : r.metrics) metrics.insert(k);
  }
  std::string out = "label,runs";
  for (const auto& m : metrics) out += "," + m;
  out += "\n";
  for (const auto& label : labels) {
    std::size_t runs = 0;
    for (const auto& r : records) runs += r.label == label;
    out += label + "," + std::to_string(runs);
    for (const auto& m : metrics) {
      std::vector<double> v;
      for (const auto& r : records)
        if (r.label == label)
          if (auto it = r.metrics.find(m); it != r.metrics.end()) v.push_back(it->second * scale);
      out += ",";
      if (!v.empty()) {
        const Summary s = summarize(v);
        out += format_mean_sd(s.mean, s.sd);
      }
    }
    out += "\n";
  }
  return out;
}

namespace {

struct Series {
  std::string name;
  std::string color;
  std::vector<std::pair<double, double>> points;
};

bool write_chart(const std::vector<Series>& series, const std::string& title, const std::string& y_label,
                 const fs::path& file) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x0 > x1) return false;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  std::ostringstream svg;
  char buf[128];
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" "
         "font-size=\"12\">\n";
  svg << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg << "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, H - B,
                W - R, H - B);
  svg << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, T, L,
                H - B);
  svg << buf;
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text>\n", L - 6, py(yv) + 4, yv);
    svg << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.0f</text>\n", px(xv), H - B + 18,
                  xv);
    svg << buf;
  }
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">epoch</text>\n";
  svg << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  int legend = 0;
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : s.points) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(x), py(y));
      svg << buf;
    }
    svg << "\"/>\n";
    const double ly = T + 8 + 16 * legend++;
    std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\" stroke-width=\"2\"/>\n",
                  W - R - 120, ly, W - R - 100, ly, s.color.c_str());
    svg << buf;
    svg << "<text x=\"" << W - R - 94 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  svg << "</svg>\n";
  write_text(file, svg.str());
  return true;
}

}  // namespace

bool write_loss_plot(const std::vector<EpochMetrics>& log, const fs::path& file) {
  std::vector<Series> s{{"total", "#1f77b4", {}}, {"moco", "#ff7f0e", {}}, {"id", "#2ca02c", {}}};
  for (const auto& r : log) {
    s[0].points.emplace_back(r.epoch, r.loss_total);
    s[1].points.emplace_back(r.epoch, r.loss_moco);
    if (r.loss_id) s[2].points.emplace_back(r.epoch, *r.loss_id);
  }
  return write_chart(s, "Pretraining loss", "loss", file);
}

bool write_knn_plot(const std::vector<EpochMetrics>& log, const fs::path& file) {
  std::vector<Series> s{{"5-NN", "#1f77b4", {}}, {"200-NN", "#d62728", {}}};
  for (const auto& r : log) {
    if (r.knn5_val) s[0].points.emplace_back(r.epoch, *r.knn5_val);
    if (r.knn200_val) s[1].points.emplace_back(r.epoch, *r.knn200_val);
  }
  return write_chart(s, "Validation k-NN accuracy", "accuracy", file);
}

// ---- export -------------------------------------------------------------------

EmbeddingBank export_bank(const EncoderPair& pair, const TrainingData& data, const std::string& pool) {
  const MaterializedPool& p = pool_by_name(data, pool);
  EmbeddingBank b;
  b.embeddings = p.inputs.rows() > 0 ? embed(pair, p.inputs) : Matrix(0, pair.arch->embedding_dim());
  for (int c : p.audit_classes) b.labels.emplace_back(c);
  b.source_ids = p.source_ids;
  return b;
}

void export_embeddings(const EncoderPair& pair, const TrainingData& data, const std::string& pool,
                       const fs::path& file) {
  const EmbeddingBank b = export_bank(pair, data, pool);
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  save_bank(b, file);
}

}  // namespace sscl
