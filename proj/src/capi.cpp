#include "sscl/sscl.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <new>
#include <string>
#include <vector>

#include "sscl/harness.hpp"

struct sscl_config {
  sscl::HarnessConfig cfg;
};

struct sscl_split {
  sscl::LoadedSplit loaded;
};

struct sscl_model {
  sscl::TrainState state;
};

namespace {

thread_local std::string last_error;

int fail_with(int status, const std::string& message) {
  last_error = message;
  return status;
}

template <class F>
int guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return SSCL_OK;
  } catch (const sscl::Error& e) {
    return fail_with(static_cast<int>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail_with(SSCL_ERR_INTERNAL, "out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return fail_with(SSCL_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail_with(SSCL_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail_with(SSCL_ERR_INTERNAL, "unknown failure");
  }
}

void need(const void* p, const char* what) {
  if (!p) throw sscl::Error(sscl::ErrorKind::Usage, std::string(what) + " is null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

#define SSCL_NEED(p)                                                          \
  do {                                                                        \
    if (!(p)) return fail_with(SSCL_ERR_ARGUMENT, std::string(#p) + " is null"); \
  } while (0)

extern "C" {

const char* sscl_version(void) { return "1.0.0"; }

const char* sscl_last_error(void) { return last_error.c_str(); }

const char* sscl_status_name(int status) {
  switch (status) {
    case SSCL_OK: return "ok";
    case SSCL_ERR_ARGUMENT: return "argument error";
    case SSCL_ERR_INTERNAL: return "internal error";
    default:
      if (status >= SSCL_ERR_CONFIG && status <= SSCL_ERR_USAGE)
        return sscl::to_string(static_cast<sscl::ErrorKind>(status));
      return "unknown status";
  }
}

void sscl_string_free(char* s) { std::free(s); }

int sscl_config_load(const char* path, const char* const* overrides, size_t n_overrides, sscl_config** out) {
  SSCL_NEED(out);
  if (n_overrides) SSCL_NEED(overrides);
  return guarded([&] {
    std::vector<std::string> flags;
    for (size_t i = 0; i < n_overrides; ++i) {
      need(overrides[i], "override");
      flags.emplace_back(overrides[i]);
    }
    if (path) {
      *out = new sscl_config{sscl::load_harness_config(path, flags)};
    } else {
      sscl::ConfigMap m;
      sscl::apply_overrides(m, flags);
      *out = new sscl_config{sscl::harness_config(m)};
    }
  });
}

void sscl_config_free(sscl_config* config) { delete config; }

int sscl_config_get(const sscl_config* config, const char* key, char** value) {
  SSCL_NEED(config);
  SSCL_NEED(key);
  SSCL_NEED(value);
  return guarded([&] {
    const auto& e = config->cfg.experiment;
    const std::string k = key;
    std::string v;
    if (k == "name") v = e.name;
    else if (k == "split") v = e.split.string();
    else if (k == "output") v = e.output.string();
    else if (k == "train") v = sscl::config_to_text(e.train);
    else if (k == "seeds") {
      for (std::size_t i = 0; i < e.seeds.size(); ++i) v += (i ? "," : "") + std::to_string(e.seeds[i]);
    } else {
      throw sscl::Error(sscl::ErrorKind::Usage, "unknown config key '" + k + "'");
    }
    *value = dup(v);
  });
}

int sscl_config_seed_count(const sscl_config* config, size_t* n) {
  SSCL_NEED(config);
  SSCL_NEED(n);
  *n = config->cfg.experiment.seeds.size();
  return SSCL_OK;
}

int sscl_config_seed_at(const sscl_config* config, size_t index, uint64_t* seed) {
  SSCL_NEED(config);
  SSCL_NEED(seed);
  const auto& s = config->cfg.experiment.seeds;
  if (index >= s.size()) return fail_with(SSCL_ERR_USAGE, "seed index out of range");
  *seed = s[index];
  return SSCL_OK;
}

int sscl_prepare_data(const sscl_config* config, const char* descriptor_path) {
  SSCL_NEED(config);
  SSCL_NEED(descriptor_path);
  return guarded([&] { sscl::prepare_data(config->cfg.data, descriptor_path); });
}

int sscl_split_open(const char* descriptor_path, sscl_split** out) {
  SSCL_NEED(descriptor_path);
  SSCL_NEED(out);
  return guarded([&] { *out = new sscl_split{sscl::load_split_data(descriptor_path)}; });
}

void sscl_split_free(sscl_split* split) { delete split; }

int sscl_split_pool_size(const sscl_split* split, const char* pool, size_t* n) {
  SSCL_NEED(split);
  SSCL_NEED(pool);
  SSCL_NEED(n);
  return guarded([&] {
    *n = static_cast<size_t>(sscl::pool_by_name(split->loaded.data, pool).inputs.rows());
  });
}

int sscl_split_class_count(const sscl_split* split, int* n) {
  SSCL_NEED(split);
  SSCL_NEED(n);
  *n = split->loaded.split.num_classes();
  return SSCL_OK;
}

int sscl_model_create(const sscl_config* config, const sscl_split* split, uint64_t seed, sscl_model** out) {
  SSCL_NEED(config);
  SSCL_NEED(split);
  SSCL_NEED(out);
  return guarded([&] {
    sscl::TrainConfig cfg = config->cfg.experiment.train;
    cfg.seed = seed;
    *out = new sscl_model{sscl::init_train_state(cfg, split->loaded.data.labeled.shape)};
  });
}

int sscl_model_load(const char* checkpoint_path, sscl_model** out) {
  SSCL_NEED(checkpoint_path);
  SSCL_NEED(out);
  return guarded([&] { *out = new sscl_model{sscl::load_checkpoint(checkpoint_path)}; });
}

int sscl_model_save(const sscl_model* model, const char* checkpoint_path) {
  SSCL_NEED(model);
  SSCL_NEED(checkpoint_path);
  return guarded([&] { sscl::save_checkpoint(model->state, checkpoint_path); });
}

void sscl_model_free(sscl_model* model) { delete model; }

int sscl_model_train(sscl_model* model, const sscl_split* split, const char* out_dir) {
  SSCL_NEED(model);
  SSCL_NEED(split);
  SSCL_NEED(out_dir);
  return guarded([&] { sscl::finish_pretraining(model->state, split->loaded.data, out_dir); });
}

int sscl_model_train_until(sscl_model* model, const sscl_split* split, int64_t stop) {
  SSCL_NEED(model);
  SSCL_NEED(split);
  return guarded([&] {
    const auto& data = split->loaded.data;
    const sscl::MonitorData monitor{data.labeled, data.validation};
    sscl::run_pretraining(model->state, sscl::pretrain_pool(data), &monitor, stop);
  });
}

int sscl_model_iteration(const sscl_model* model, int64_t* iteration) {
  SSCL_NEED(model);
  SSCL_NEED(iteration);
  *iteration = model->state.iteration;
  return SSCL_OK;
}

int sscl_model_seed(const sscl_model* model, uint64_t* seed) {
  SSCL_NEED(model);
  SSCL_NEED(seed);
  *seed = model->state.config.seed;
  return SSCL_OK;
}

int sscl_model_label(const sscl_model* model, char** label) {
  SSCL_NEED(model);
  SSCL_NEED(label);
  return guarded([&] { *label = dup(sscl::run_label(model->state.config)); });
}

int sscl_run_directory(const sscl_model* model, const char* root, char** dir) {
  SSCL_NEED(model);
  SSCL_NEED(root);
  SSCL_NEED(dir);
  return guarded([&] { *dir = dup(sscl::run_directory(root, model->state.config).string()); });
}

int sscl_eval_knn(const sscl_model* model, const sscl_split* split, const char* pool, int k, double temperature,
                  double* accuracy) {
  SSCL_NEED(model);
  SSCL_NEED(split);
  SSCL_NEED(pool);
  SSCL_NEED(accuracy);
  return guarded([&] { *accuracy = sscl::evaluate_knn(model->state.pair, split->loaded.data, pool, k, temperature); });
}

int sscl_eval_linear(const sscl_model* model, const sscl_split* split, const sscl_config* config, const char* pool,
                     double* accuracy) {
  SSCL_NEED(model);
  SSCL_NEED(split);
  SSCL_NEED(config);
  SSCL_NEED(pool);
  SSCL_NEED(accuracy);
  return guarded([&] {
    sscl::ProbeConfig cfg = config->cfg.experiment.eval.probe;
    cfg.seed = model->state.config.seed;
    *accuracy = sscl::evaluate_linear(model->state.pair, split->loaded.data, split->loaded.split.num_classes(), cfg,
                                      pool);
  });
}

int sscl_eval_finetune(const sscl_model* model, const sscl_split* split, const sscl_config* config, const char* pool,
                       double* accuracy) {
  SSCL_NEED(model);
  SSCL_NEED(split);
  SSCL_NEED(config);
  SSCL_NEED(pool);
  SSCL_NEED(accuracy);
  return guarded([&] {
    sscl::ProbeConfig cfg = config->cfg.experiment.eval.tune;
    cfg.seed = model->state.config.seed;
    *accuracy = sscl::evaluate_finetune(model->state.pair, split->loaded.data, split->loaded.split.num_classes(),
                                        cfg, pool);
  });
}

int sscl_export_embeddings(const sscl_model* model, const sscl_split* split, const char* pool, const char* path,
                           size_t* rows) {
  SSCL_NEED(model);
  SSCL_NEED(split);
  SSCL_NEED(pool);
  SSCL_NEED(path);
  return guarded([&] {
    const sscl::EmbeddingBank bank = sscl::export_bank(model->state.pair, split->loaded.data, pool);
    const std::filesystem::path file(path);
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    sscl::save_bank(bank, file);
    if (rows) *rows = static_cast<size_t>(bank.size());
  });
}

int sscl_record_metric(const char* dir, const char* label, uint64_t seed, const char* metric, double value) {
  SSCL_NEED(dir);
  SSCL_NEED(label);
  SSCL_NEED(metric);
  return guarded([&] { sscl::merge_record(dir, label, seed, {{metric, value}}); });
}

int sscl_sweep(const sscl_config* config, const sscl_split* split, sscl_progress_fn progress, void* user) {
  SSCL_NEED(config);
  SSCL_NEED(split);
  return guarded([&] {
    const auto& h = config->cfg;
    sscl::Progress report;
    if (progress) report = [&](const std::string& line) { progress(line.c_str(), user); };
    const auto cells = sscl::run_sweep(h.experiment, split->loaded, h.sweep, report);
    std::vector<std::string> metrics;
    for (int k : h.experiment.eval.knn_k) metrics.push_back("knn" + std::to_string(k));
    if (h.experiment.eval.linear) metrics.emplace_back("linear");
    if (h.experiment.eval.finetune) metrics.emplace_back("finetune");
    for (const auto& m : metrics) {
      const std::string csv = sscl::sweep_matrix_csv(cells, h.sweep, m);
      const auto file = h.experiment.output / ("sweep_" + m + ".csv");
      std::ofstream out(file, std::ios::binary);
      if (!out) throw sscl::Error(sscl::ErrorKind::Io, "cannot write " + file.string());
      out << csv;
    }
  });
}

int sscl_report(const char* const* paths, size_t n_paths, double scale, int plots, char** table_csv) {
  SSCL_NEED(table_csv);
  if (n_paths) SSCL_NEED(paths);
  return guarded([&] {
    std::vector<std::filesystem::path> roots;
    for (size_t i = 0; i < n_paths; ++i) {
      need(paths[i], "path");
      roots.emplace_back(paths[i]);
    }
    std::vector<sscl::RunRecord> records;
    for (const auto& file : sscl::find_records(roots)) {
      records.push_back(sscl::load_record(file));
      const auto log_file = file.parent_path() / sscl::kMetricsFile;
      if (plots && std::filesystem::exists(log_file)) {
        const auto log = sscl::load_metrics(log_file);
        sscl::write_loss_plot(log, file.parent_path() / "loss.svg");
        sscl::write_knn_plot(log, file.parent_path() / "knn.svg");
      }
    }
    if (records.empty()) throw sscl::Error(sscl::ErrorKind::Data, "no run records found");
    *table_csv = dup(sscl::report_csv(records, scale));
  });
}

}  // extern "C"
