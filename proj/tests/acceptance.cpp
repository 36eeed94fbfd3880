// Acceptance run: one PASS/FAIL line per criterion. Criteria can be selected
// by name on the command line; with no arguments all of them run.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sscl/data.hpp"
#include "sscl/encoder.hpp"
#include "sscl/eval.hpp"
#include "sscl/losses.hpp"
#include "sscl/queue.hpp"
#include "sscl/training.hpp"
#include "support/oracles.hpp"

using namespace sscl;
namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kAll = std::numeric_limits<std::int64_t>::max();

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- losses ---------------------------------------------------------------

struct LossCase {
  ContrastiveBatchInput input;
  PositiveSets positives;
};

LossCase random_loss_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> b_dist(1, 4), k_dist(1, 8), d_dist(2, 6), lab(-1, 2);
  std::uniform_real_distribution<double> tau(0.1, 1.0);
  const int B = b_dist(rng), K = k_dist(rng), d = d_dist(rng);
  LossCase c;
  c.input.anchors = oracle::random_unit_rows(rng, B, d);
  c.input.positives = oracle::random_unit_rows(rng, B, d);
  c.input.negatives = oracle::random_unit_rows(rng, K, d);
  c.input.temperature = tau(rng);
  for (int k = 0; k < K; ++k) c.input.negative_labels.emplace_back(lab(rng));
  for (int i = 0; i < B; ++i) c.input.anchor_labels.emplace_back(lab(rng));
  for (int i = 0; i < B; ++i) {
    std::vector<int> P;
    const auto label = c.input.anchor_labels[static_cast<std::size_t>(i)];
    for (int k = 0; k < K; ++k) {
      if (label.is_labeled() && c.input.negative_labels[static_cast<std::size_t>(k)] == label) P.push_back(k);
    }
    c.positives.push_back(P);
  }
  return c;
}

Verdict gradient_correctness() {
  std::mt19937_64 rng(610);
  double worst = 0.0;
  int instances = 0, with_id = 0;
  while (instances < 150) {
    auto c = random_loss_case(rng);
    c.input.unit_tolerance = 1e-5;
    auto with = [&](const Matrix& a) {
      auto probe = c.input;
      probe.anchors = a;
      return probe;
    };
    auto check = [&](const Matrix& analytic, const std::function<double(const Matrix&)>& f) {
      const Matrix numeric = oracle::central_difference(f, c.input.anchors, 1e-6);
      for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, oracle::relative_error(analytic.data()[i], numeric.data()[i]));
      }
    };
    check(moco_loss(c.input).grad_anchors, [&](const Matrix& a) { return moco_loss(with(a)).loss; });
    check(id_loss(c.input, c.positives).grad_anchors,
          [&](const Matrix& a) { return id_loss(with(a), c.positives).loss; });
    check(combined_loss(c.input, c.positives, 2.0, 0.5).grad_anchors,
          [&](const Matrix& a) { return combined_loss(with(a), c.positives, 2.0, 0.5).loss; });
    for (const auto& p : c.positives) with_id += !p.empty();
    ++instances;
  }
  return {worst <= 1e-4, fmt("max relative error %.2e over %d instances (%d anchors with positives), bound 1e-4",
                             worst, instances, with_id)};
}

Matrix rows3(std::initializer_list<std::array<double, 3>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), 3);
  Eigen::Index i = 0;
  for (const auto& row : r) {
    for (int j = 0; j < 3; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
    ++i;
  }
  return m;
}

Verdict loss_oracle() {
  std::mt19937_64 rng(611);
  double worst = 0.0;
  const int n = 200;
  for (int t = 0; t < n; ++t) {
    const auto c = random_loss_case(rng);
    worst = std::max(worst, std::abs(moco_loss(c.input).loss - oracle::naive_moco(c.input)));
    worst = std::max(worst, std::abs(id_loss(c.input, c.positives).loss - oracle::naive_id(c.input, c.positives)));
  }
  ContrastiveBatchInput ex1;
  ex1.anchors = rows3({{1, 0, 0}});
  ex1.positives = rows3({{1, 0, 0}});
  ex1.negatives = rows3({{0, 1, 0}, {0, 0, 1}});
  ex1.negative_labels = {kUnlabeled, kUnlabeled};
  ex1.anchor_labels = {kUnlabeled};
  ex1.temperature = 1.0;
  ContrastiveBatchInput ex2;
  ex2.anchors = rows3({{1, 0, 0}});
  ex2.positives = rows3({{0, 1, 0}});
  ex2.negatives = rows3({{1, 0, 0}});
  ex2.negative_labels = {ClassLabel(0)};
  ex2.anchor_labels = {ClassLabel(0)};
  ex2.temperature = 1.0;
  const double moco = moco_loss(ex1).loss;
  const double id = id_loss(ex2, {{0}}).loss;
  const double comb = moco + 2.0 * schedule_w(0, 10) * id;
  const bool worked = std::abs(moco - 0.55144) < 5e-6 && std::abs(id - 0.31326) < 5e-6 && std::abs(comb - 1.17796) < 1e-5;
  return {worst <= 1e-10 && worked,
          fmt("max |library - naive| %.2e over %d instances (bound 1e-10); worked values %.5f %.5f %.5f", worst, n,
              moco, id, comb)};
}

// ---- schedule and ablations -----------------------------------------------

TrainingData synthetic_data(int classes, int dim, int per_class, int labeled, int slots, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.shape = {dim, 1, 1};
  spec.train_per_class = per_class;
  spec.test_per_class = 10;
  spec.seed = seed;
  MismatchSplitOptions o;
  for (int c = 0; c < classes / 2; ++c) o.id_classes.push_back(c);
  for (int c = classes / 2; c < classes; ++c) o.ood_classes.push_back(c);
  o.mismatch_ratio = 0.5;
  o.labeled_per_class = labeled;
  o.val_per_class = 5;
  o.unlabeled_slots = slots;
  o.seed = seed;
  const Manifest m = synthetic_manifest(spec);
  return load_training_data(build_mismatch_split(m, o), m, m);
}

TrainConfig tiny_config(int epochs, std::optional<int> t_end) {
  TrainConfig c;
  c.architecture = "tiny-mlp";
  c.hidden_width = 16;
  c.embedding_dim = 8;
  c.batch_size = 16;
  c.ghost_subbatches = 2;
  c.queue_size = 64;
  c.total_epochs = epochs;
  c.t_end = t_end;
  c.alpha = 2.0;
  c.base_lr = 0.05;
  c.seed = 612;
  return c;
}

bool same_trajectory(const TrainState& a, const TrainState& b) {
  // the configs differ, so compare the learned state rather than checkpoint bytes
  return a.pair.query == b.pair.query && a.pair.key == b.pair.key && a.pair.query_buffers == b.pair.query_buffers &&
         a.pair.key_buffers == b.pair.key_buffers && a.optimizer.velocity == b.optimizer.velocity &&
         a.queue.snapshot().embeddings == b.queue.snapshot().embeddings &&
         a.queue.snapshot().labels == b.queue.snapshot().labels && a.iteration == b.iteration;
}

Verdict schedule_identities() {
  bool exact = true;
  for (int t_end = 1; t_end <= 400; ++t_end) {
    exact = exact && schedule_w(0, t_end) == 1.0 && schedule_w(t_end, t_end) == 0.0 &&
            schedule_w(t_end + 7, t_end) == 0.0;
    for (int t = 0; t < t_end; ++t) {
      exact = exact && schedule_w(t, t_end) == 1.0 - static_cast<double>(t) / static_cast<double>(t_end);
    }
  }

  const TrainingData data = synthetic_data(4, 8, 40, 8, 2, 612);
  TrainConfig zero = tiny_config(20, 10);
  zero.alpha = 0.0;
  TrainConfig moco = tiny_config(20, 10);
  moco.moco_only = true;
  const auto rz = pretrain(zero, data);
  const auto rm = pretrain(moco, data);
  bool alpha_zero = same_trajectory(rz.state, rm.state) && rz.state.log.size() == rm.state.log.size();
  for (std::size_t i = 0; alpha_zero && i < rz.state.log.size(); ++i) {
    alpha_zero = rz.state.log[i].loss_total == rm.state.log[i].loss_total;
  }

  // Proposed run stopped at the first iteration of epoch t_end, then continued
  // both as itself and as a MoCo baseline from the same state.
  const PretrainData d = pretrain_pool(data);
  const TrainConfig prop = tiny_config(20, 10);
  TrainState s = init_train_state(prop, d.shape);
  std::int64_t start = 0;
  while (epoch_of(start, prop.batch_size, d.size()) < 10) ++start;
  run_pretraining(s, d, nullptr, start);
  TrainState baseline = deserialize_checkpoint(serialize_checkpoint(s));
  baseline.config.moco_only = true;
  run_pretraining(s, d, nullptr, kAll);
  run_pretraining(baseline, d, nullptr, kAll);
  const bool continuation = same_trajectory(s, baseline) && s.iteration == total_iterations(prop, d.size());
  bool id_before = false;
  for (const auto& row : s.log) id_before = id_before || (row.epoch < 10 && row.loss_id.has_value());

  return {exact && alpha_zero && continuation && id_before,
          fmt("w exact for t_end 1..400: %s; alpha=0 vs MoCo over 20 epochs bitwise: %s; "
              "continuation from epoch 10 (iteration %lld) bitwise: %s",
              exact ? "yes" : "no", alpha_zero ? "yes" : "no", static_cast<long long>(start),
              continuation ? "yes" : "no")};
}

// ---- queue ----------------------------------------------------------------

Verdict queue_invariants() {
  std::mt19937_64 rng(613);
  long long checks = 0;
  int failures = 0;
  const int sequences = 10000;
  for (int seq = 0; seq < sequences; ++seq) {
    const int K = std::uniform_int_distribution<int>(1, 24)(rng);
    const int d = std::uniform_int_distribution<int>(1, 5)(rng);
    const int classes = std::uniform_int_distribution<int>(1, 5)(rng);
    auto q = init_queue(K, d, rng());
    std::deque<std::pair<Eigen::RowVectorXd, ClassLabel>> model;
    const auto first = q.snapshot();
    for (int k = 0; k < K; ++k) model.emplace_back(first.embeddings.row(k), first.labels[static_cast<std::size_t>(k)]);
    const int steps = std::uniform_int_distribution<int>(1, 12)(rng);
    for (int step = 0; step < steps; ++step) {
      const int b = std::uniform_int_distribution<int>(1, K)(rng);
      const Matrix keys = oracle::random_unit_rows(rng, b, d);
      std::vector<ClassLabel> labels;
      for (int i = 0; i < b; ++i) labels.emplace_back(std::uniform_int_distribution<int>(-1, classes - 1)(rng));
      q.enqueue_batch(keys, labels);
      for (int i = 0; i < b; ++i) {
        model.pop_front();
        model.emplace_back(keys.row(i), labels[static_cast<std::size_t>(i)]);
      }
      const auto snap = q.snapshot();
      bool ok = snap.embeddings.rows() == K && static_cast<int>(snap.labels.size()) == K && q.capacity() == K;
      for (int k = 0; ok && k < K; ++k) {
        ok = snap.embeddings.row(k) == model[static_cast<std::size_t>(k)].first &&
             snap.labels[static_cast<std::size_t>(k)] == model[static_cast<std::size_t>(k)].second &&
             q.label_at(k) == snap.labels[static_cast<std::size_t>(k)];
      }
      for (int c = -1; ok && c < classes; ++c) {
        const auto P = positives_of(q, ClassLabel(c));
        std::vector<int> expected;
        if (c >= 0) {
          for (int k = 0; k < K; ++k) {
            if (snap.labels[static_cast<std::size_t>(k)] == ClassLabel(c)) expected.push_back(k);
          }
        }
        ok = P == expected;
      }
      ++checks;
      failures += !ok;
    }
  }
  return {failures == 0, fmt("%d sequences, %lld post-enqueue checks, %d mismatches", sequences, checks, failures)};
}

// ---- k-NN -----------------------------------------------------------------

Verdict knn_oracle() {
  std::mt19937_64 rng(614);
  const int banks = 1000;
  int queries = 0, mismatches = 0, tie_queries = 0;
  for (int b = 0; b < banks; ++b) {
    const int n = std::uniform_int_distribution<int>(1, 1000)(rng);
    const int d = std::uniform_int_distribution<int>(2, 8)(rng);
    const int c = std::uniform_int_distribution<int>(1, 10)(rng);
    const bool coarse = b % 2 == 0;  // integer directions make equal similarities common
    Matrix rows(n, d);
    std::uniform_int_distribution<int> coord(-1, 1);
    for (int i = 0; i < n; ++i) {
      if (coarse) {
        if (i > 0 && coord(rng) > 0) {
          rows.row(i) = rows.row(std::uniform_int_distribution<int>(0, i - 1)(rng));
          continue;
        }
        do {
          for (int j = 0; j < d; ++j) rows(i, j) = coord(rng);
        } while (rows.row(i).norm() == 0.0);
        rows.row(i) /= rows.row(i).norm();
      } else {
        rows.row(i) = oracle::random_unit_rows(rng, 1, d).row(0);
      }
    }
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = std::uniform_int_distribution<int>(0, c - 1)(rng);
    EmbeddingBank bank;
    bank.embeddings = rows;
    for (int l : labels) bank.labels.emplace_back(l);
    for (int i = 0; i < n; ++i) bank.source_ids.push_back("r" + std::to_string(i));
    for (int qi = 0; qi < 3; ++qi) {
      const Eigen::RowVectorXd q = coarse ? Eigen::RowVectorXd(rows.row(std::uniform_int_distribution<int>(0, n - 1)(rng)))
                                          : Eigen::RowVectorXd(oracle::random_unit_rows(rng, 1, d).row(0));
      const int k = qi == 0 ? std::min(5, n) : qi == 1 ? std::min(200, n) : std::uniform_int_distribution<int>(1, n)(rng);
      if (coarse) ++tie_queries;
      for (bool uniform : {false, true}) {
        ++queries;
        const int got = knn_classify(bank, q.transpose(), {k, 0.07, uniform}).value();
        mismatches += got != oracle::brute_force_knn(rows, labels, q, k, 0.07, uniform);
      }
    }
  }
  return {mismatches == 0, fmt("%d banks, %d classifications (%d on tie-heavy banks), %d mismatches", banks, queries,
                               2 * tie_queries, mismatches)};
}

// ---- mismatch split table -----------------------------------------------

Verdict mismatch_split_fidelity() {
  Manifest m;
  m.class_names = {"airplane", "car", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < 5000; ++i) m.records.push_back({m.class_names[c] + "/train_" + std::to_string(i), c, "train"});
    for (int i = 0; i < 1000; ++i) m.records.push_back({m.class_names[c] + "/test_" + std::to_string(i), c, "test"});
  }
  const std::vector<std::pair<double, std::vector<std::string>>> rows{
      {0.0, {"deer", "dog", "frog", "horse"}},
      {0.25, {"dog", "frog", "horse", "airplane"}},
      {0.5, {"frog", "horse", "airplane", "car"}},
      {0.75, {"horse", "airplane", "car", "ship"}},
      {1.0, {"airplane", "car", "ship", "truck"}},
  };
  int matched = 0;
  std::string bad;
  for (const auto& [r, classes] : rows) {
    MismatchSplitOptions o;
    o.id_classes = {2, 3, 4, 5, 6, 7};
    o.ood_classes = {0, 1, 8, 9};
    o.mismatch_ratio = r;
    o.labeled_per_class = 400;
    o.val_per_class = 400;
    o.unlabeled_slots = 4;
    o.seed = 615;
    const auto s = build_mismatch_split(m, o);
    std::vector<std::string> got;
    for (int c : unlabeled_classes(s)) got.push_back(m.class_name(c));
    std::map<int, int> per_class;
    for (const auto& e : s.unlabeled) ++per_class[e.audit_class];
    bool counts = per_class.size() == 4;
    for (const auto& [c, n] : per_class) counts = counts && n == 4200;
    std::map<int, int> labeled;
    for (const auto& e : s.labeled) ++labeled[e.label.value()];
    for (const auto& [c, n] : labeled) counts = counts && n == 400;
    counts = counts && labeled.size() == 6 && s.labeled.size() == 2400 && s.validation.size() == 2400 &&
             s.test.size() == 6000 && s.unlabeled.size() == 16800;
    if (got == classes && counts) {
      ++matched;
    } else {
      bad += fmt(" r=%.2f", r);
    }
  }
  return {matched == 5, fmt("%d of 5 rows match (4 unlabeled classes x 4200, 6 x 400 labeled)%s", matched, bad.c_str())};
}

// ---- EMA ------------------------------------------------------------------

Verdict ema_contraction() {
  const auto arch = make_architecture("tiny-mlp", {{16, 1, 1}, 32, 8});
  const auto q = EncoderPair::create(arch, 616).query;
  const auto k0 = EncoderPair::create(arch, 617).query;
  auto gap = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
  };
  const double g0 = gap(k0, q);
  double worst = 0.0;
  for (double m : {0.0, 0.5, 0.95, 0.999}) {
    auto k = k0;
    for (int s = 1; s <= 200; ++s) {
      k = momentum_update(k, q, m);
      worst = std::max(worst, std::abs(gap(k, q) - std::pow(m, s) * g0));
    }
  }
  return {worst <= 1e-10, fmt("%zu parameters, initial gap %.3f, 200 updates per m, max deviation %.2e (bound 1e-10)",
                              q.size(), g0, worst)};
}

// ---- desk experiment ------------------------------------------------------

Verdict desk_experiment() {
  const int seeds = 5;
  double acc_prop = 0, acc_moco = 0, coh_prop = 0, coh_moco = 0;
  std::string per_seed;
  for (int s = 0; s < seeds; ++s) {
    SyntheticSpec spec;
    spec.classes = 8;
    spec.shape = {32, 1, 1};
    spec.train_per_class = 650;
    spec.test_per_class = 50;
    spec.separation = 4.0;
    spec.noise = 1.0;
    spec.seed = 100 + static_cast<std::uint64_t>(s);
    MismatchSplitOptions o;
    o.id_classes = {0, 1, 2, 3};
    o.ood_classes = {4, 5, 6, 7};
    o.mismatch_ratio = 0.5;
    o.labeled_per_class = 50;
    o.val_per_class = 100;
    o.unlabeled_slots = 4;
    o.seed = spec.seed;
    const Manifest m = synthetic_manifest(spec);
    const TrainingData data = load_training_data(build_mismatch_split(m, o), m, m);
    double acc[2], coh[2];
    for (int v = 0; v < 2; ++v) {
      TrainConfig c = preset("desk");
      c.seed = 1000 + static_cast<std::uint64_t>(s);
      c.alpha = v == 0 ? 0.0 : 2.0;
      c.t_end = 100;
      const auto r = pretrain(c, data);
      const auto bank = make_bank(r.state.pair, data.labeled);
      acc[v] = knn_accuracy(bank, make_bank(r.state.pair, data.validation), {5, kKnnTemperature, false});
      coh[v] = class_cohesion(bank).intra;
    }
    acc_moco += acc[0] / seeds;
    acc_prop += acc[1] / seeds;
    coh_moco += coh[0] / seeds;
    coh_prop += coh[1] / seeds;
    per_seed += fmt(" %.3f/%.3f", acc[1], acc[0]);
  }
  const double gain = 100.0 * (acc_prop - acc_moco);
  return {gain >= 2.0 && coh_prop > coh_moco,
          fmt("5-NN val acc alpha=2,t_end=100 %.4f vs alpha=0 %.4f (+%.2f points, need 2); cohesion %.4f vs %.4f; "
              "per seed%s",
              acc_prop, acc_moco, gain, coh_prop, coh_moco, per_seed.c_str())};
}

// ---- determinism ----------------------------------------------------------

Verdict determinism() {
  const PretrainData d = pretrain_pool(synthetic_data(4, 8, 40, 8, 2, 618));
  TrainConfig c = tiny_config(4, 2);
  c.queue_size = 32;
  TrainState a = init_train_state(c, d.shape);
  TrainState b = init_train_state(c, d.shape);
  run_pretraining(a, d, nullptr, kAll);
  run_pretraining(b, d, nullptr, kAll);
  const auto reference = serialize_checkpoint(a);
  const bool repeat = reference == serialize_checkpoint(b);
  const fs::path file = fs::temp_directory_path() / "sscl_acceptance_resume.ckpt";
  int resumed_ok = 0, cuts = 0;
  for (std::int64_t cut = 1; cut < a.iteration; ++cut, ++cuts) {
    TrainState part = init_train_state(c, d.shape);
    run_pretraining(part, d, nullptr, cut);
    save_checkpoint(part, file);
    TrainState resumed = load_checkpoint(file);
    run_pretraining(resumed, d, nullptr, kAll);
    resumed_ok += serialize_checkpoint(resumed) == reference;
  }
  fs::remove(file);
  return {repeat && resumed_ok == cuts,
          fmt("repeat run bitwise: %s; resumed from %d of %d mid-run checkpoints bitwise (%lld iterations)",
              repeat ? "yes" : "no", resumed_ok, cuts, static_cast<long long>(a.iteration))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient-correctness", gradient_correctness},
      {"loss-oracle-equivalence", loss_oracle},
      {"schedule-and-ablation-identities", schedule_identities},
      {"queue-invariants", queue_invariants},
      {"knn-oracle", knn_oracle},
      {"mismatch-split-fidelity", mismatch_split_fidelity},
      {"ema-contraction", ema_contraction},
      {"desk-directional-experiment", desk_experiment},
      {"determinism", determinism},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failed = 0, ran = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
    ++ran;
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
