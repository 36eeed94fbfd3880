// Command-line front end; talks to the library only through the C API.
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sscl/sscl.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
  int status;
};

void check(int status) {
  if (status != SSCL_OK) throw Failure{status};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  sscl_string_free(s);
  return out;
}

using ConfigPtr = std::unique_ptr<sscl_config, decltype(&sscl_config_free)>;
using SplitPtr = std::unique_ptr<sscl_split, decltype(&sscl_split_free)>;
using ModelPtr = std::unique_ptr<sscl_model, decltype(&sscl_model_free)>;

// Options shared by the subcommands that read an experiment.
struct Common {
  std::string config;
  std::string split;
  std::vector<std::string> extras;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "experiment config file")->check(CLI::ExistingFile);
  app->add_option("--split", c.split, "split descriptor (overrides experiment.split)");
  app->allow_extras();
}

ConfigPtr open_config(const Common& c, const std::vector<std::string>& extras) {
  // bare --key=value flags address training options
  std::vector<std::string> flags;
  for (const auto& e : extras) {
    std::string f = e.rfind("--", 0) == 0 ? e.substr(2) : e;
    if (f.find('=') == std::string::npos) throw CLI::ValidationError(e, "expected --key=value");
    if (f.substr(0, f.find('=')).find('.') == std::string::npos) f = "train." + f;
    flags.push_back(f);
  }
  std::vector<const char*> ptrs;
  for (const auto& f : flags) ptrs.push_back(f.c_str());
  sscl_config* cfg = nullptr;
  check(sscl_config_load(c.config.empty() ? nullptr : c.config.c_str(), ptrs.data(), ptrs.size(), &cfg));
  return ConfigPtr(cfg, sscl_config_free);
}

std::string config_value(const sscl_config* cfg, const char* key) {
  char* v = nullptr;
  check(sscl_config_get(cfg, key, &v));
  return take(v);
}

SplitPtr open_split(const Common& c, const sscl_config* cfg) {
  const std::string path = c.split.empty() ? config_value(cfg, "split") : c.split;
  if (path.empty()) throw CLI::ValidationError("--split", "no split descriptor given (use --split or experiment.split)");
  sscl_split* s = nullptr;
  check(sscl_split_open(path.c_str(), &s));
  return SplitPtr(s, sscl_split_free);
}

ModelPtr load_model(const std::string& checkpoint) {
  sscl_model* m = nullptr;
  check(sscl_model_load(checkpoint.c_str(), &m));
  return ModelPtr(m, sscl_model_free);
}

std::string record_dir(const std::string& checkpoint) {
  const fs::path p(checkpoint);
  return p.has_parent_path() ? p.parent_path().string() : ".";
}

void record(const std::string& checkpoint, const sscl_model* model, const std::string& metric, double value) {
  char* label = nullptr;
  check(sscl_model_label(model, &label));
  uint64_t seed = 0;
  check(sscl_model_seed(model, &seed));
  check(sscl_record_metric(record_dir(checkpoint).c_str(), take(label).c_str(), seed, metric.c_str(), value));
}

std::string metric_name(const std::string& base, const std::string& pool) {
  return pool == "test" ? base : base + "_" + pool;
}

void print_progress(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe semi-supervised contrastive learning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(sscl_version()));

  Common prep_c, pre_c, knn_c, lin_c, ft_c, exp_c, sweep_c;

  auto* prep = app.add_subcommand("prepare-data", "build a split descriptor from the [data] section");
  add_common(prep, prep_c);
  std::string prep_out;
  prep->add_option("-o,--out", prep_out, "descriptor path (default: experiment.split)");

  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining for every configured seed");
  add_common(pre, pre_c);
  std::optional<uint64_t> pre_seed;
  std::string pre_resume, pre_out;
  pre->add_option("--seed", pre_seed, "train this seed only");
  pre->add_option("--resume", pre_resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  pre->add_option("-o,--out", pre_out, "output root (default: experiment.output)");

  std::string knn_ckpt, knn_pool = "test";
  std::vector<int> knn_k{5, 200};
  double knn_temp = 0.07;
  auto* knn = app.add_subcommand("eval-knn", "weighted k-NN accuracy against the labeled pool");
  add_common(knn, knn_c);
  knn->add_option("--checkpoint", knn_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  knn->add_option("--pool", knn_pool, "query pool");
  knn->add_option("-k", knn_k, "neighbor counts")->delimiter(',');
  knn->add_option("--temperature", knn_temp, "vote temperature");

  std::string lin_ckpt, lin_pool = "test";
  auto* lin = app.add_subcommand("eval-linear", "linear probe on the frozen backbone");
  add_common(lin, lin_c);
  lin->add_option("--checkpoint", lin_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  lin->add_option("--pool", lin_pool, "evaluation pool");

  std::string ft_ckpt, ft_pool = "test";
  auto* ft = app.add_subcommand("finetune", "fine-tune backbone and classifier on the labeled pool");
  add_common(ft, ft_c);
  ft->add_option("--checkpoint", ft_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--pool", ft_pool, "evaluation pool");

  std::string exp_ckpt, exp_pool = "labeled", exp_out;
  auto* ex = app.add_subcommand("export-embeddings", "write the embeddings of one pool");
  add_common(ex, exp_c);
  ex->add_option("--checkpoint", exp_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--pool", exp_pool, "labeled, unlabeled, validation or test");
  ex->add_option("-o,--out", exp_out, "output file")->required();

  auto* sw = app.add_subcommand("sweep", "alpha x t_end grid from the [sweep] section");
  add_common(sw, sweep_c);

  std::vector<std::string> rep_paths;
  double rep_scale = 1.0;
  bool rep_plots = false;
  std::string rep_out;
  auto* rep = app.add_subcommand("report", "aggregate run records into mean (sd) tables");
  rep->add_option("paths", rep_paths, "run folders or record files")->required();
  rep->add_option("--scale", rep_scale, "multiply values (100 for percentages)");
  rep->add_flag("--plots", rep_plots, "write loss.svg and knn.svg next to each metric log");
  rep->add_option("-o,--out", rep_out, "write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*prep) {
      auto cfg = open_config(prep_c, prep->remaining());
      const std::string out = prep_out.empty() ? (prep_c.split.empty() ? config_value(cfg.get(), "split") : prep_c.split)
                                               : prep_out;
      if (out.empty()) throw CLI::ValidationError("--out", "no descriptor path (use --out or experiment.split)");
      check(sscl_prepare_data(cfg.get(), out.c_str()));
      std::printf("%s\n", out.c_str());
    } else if (*pre) {
      auto cfg = open_config(pre_c, pre->remaining());
      auto split = open_split(pre_c, cfg.get());
      const std::string root = pre_out.empty() ? config_value(cfg.get(), "output") : pre_out;
      std::vector<ModelPtr> models;
      if (!pre_resume.empty()) {
        models.push_back(load_model(pre_resume));
      } else if (pre_seed) {
        sscl_model* m = nullptr;
        check(sscl_model_create(cfg.get(), split.get(), *pre_seed, &m));
        models.emplace_back(m, sscl_model_free);
      } else {
        size_t n = 0;
        check(sscl_config_seed_count(cfg.get(), &n));
        for (size_t i = 0; i < n; ++i) {
          uint64_t seed = 0;
          check(sscl_config_seed_at(cfg.get(), i, &seed));
          sscl_model* m = nullptr;
          check(sscl_model_create(cfg.get(), split.get(), seed, &m));
          models.emplace_back(m, sscl_model_free);
        }
      }
      for (auto& m : models) {
        std::string dir;
        if (!pre_resume.empty() && pre_out.empty()) {
          dir = record_dir(pre_resume);
        } else {
          char* d = nullptr;
          check(sscl_run_directory(m.get(), root.c_str(), &d));
          dir = take(d);
        }
        check(sscl_model_train(m.get(), split.get(), dir.c_str()));
        std::printf("%s\n", (fs::path(dir) / "checkpoint.bin").c_str());
      }
    } else if (*knn) {
      auto cfg = open_config(knn_c, knn->remaining());
      auto split = open_split(knn_c, cfg.get());
      auto model = load_model(knn_ckpt);
      for (int k : knn_k) {
        double acc = 0.0;
        check(sscl_eval_knn(model.get(), split.get(), knn_pool.c_str(), k, knn_temp, &acc));
        const std::string name = metric_name("knn" + std::to_string(k), knn_pool);
        record(knn_ckpt, model.get(), name, acc);
        std::printf("%s %.4f\n", name.c_str(), acc);
      }
    } else if (*lin || *ft) {
      const bool probe = lin->parsed();
      Common& c = probe ? lin_c : ft_c;
      auto cfg = open_config(c, (probe ? lin : ft)->remaining());
      auto split = open_split(c, cfg.get());
      const std::string& ckpt = probe ? lin_ckpt : ft_ckpt;
      const std::string& pool = probe ? lin_pool : ft_pool;
      auto model = load_model(ckpt);
      double acc = 0.0;
      check(probe ? sscl_eval_linear(model.get(), split.get(), cfg.get(), pool.c_str(), &acc)
                  : sscl_eval_finetune(model.get(), split.get(), cfg.get(), pool.c_str(), &acc));
      const std::string name = metric_name(probe ? "linear" : "finetune", pool);
      record(ckpt, model.get(), name, acc);
      std::printf("%s %.4f\n", name.c_str(), acc);
    } else if (*ex) {
      auto cfg = open_config(exp_c, ex->remaining());
      auto split = open_split(exp_c, cfg.get());
      auto model = load_model(exp_ckpt);
      size_t rows = 0;
      check(sscl_export_embeddings(model.get(), split.get(), exp_pool.c_str(), exp_out.c_str(), &rows));
      std::printf("%zu rows written to %s\n", rows, exp_out.c_str());
    } else if (*sw) {
      auto cfg = open_config(sweep_c, sw->remaining());
      auto split = open_split(sweep_c, cfg.get());
      check(sscl_sweep(cfg.get(), split.get(), print_progress, nullptr));
      std::printf("matrices written to %s\n", config_value(cfg.get(), "output").c_str());
    } else if (*rep) {
      std::vector<const char*> ptrs;
      for (const auto& p : rep_paths) ptrs.push_back(p.c_str());
      char* table = nullptr;
      check(sscl_report(ptrs.data(), ptrs.size(), rep_scale, rep_plots ? 1 : 0, &table));
      const std::string text = take(table);
      if (rep_out.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        std::FILE* f = std::fopen(rep_out.c_str(), "wb");
        if (!f) {
          std::fprintf(stderr, "sscl: io error: cannot write %s\n", rep_out.c_str());
          return SSCL_ERR_IO;
        }
        std::fputs(text.c_str(), f);
        std::fclose(f);
      }
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "sscl: %s\n", sscl_last_error());
    return f.status;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return 0;
}
