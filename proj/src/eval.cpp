#include "sscl/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sscl {

namespace fs = std::filesystem;

void EmbeddingBank::validate() const {
  require(labels.size() == static_cast<std::size_t>(embeddings.rows()), ErrorKind::Shape,
          "embedding bank has " + std::to_string(labels.size()) + " labels for " + std::to_string(embeddings.rows()) +
              " rows");
  require(source_ids.empty() || source_ids.size() == labels.size(), ErrorKind::Shape,
          "embedding bank source ids do not match its rows");
  check_unit_rows(embeddings, ErrorKind::Normalization, "embedding bank");
}

EmbeddingBank make_bank(const EncoderPair& pair, const MaterializedPool& pool) {
  return {embed(pair, pool.inputs), pool.labels, pool.source_ids};
}

void save_bank(const EmbeddingBank& bank, const fs::path& file) {
  bank.validate();
  std::ofstream out(file);
  require(out.good(), ErrorKind::Io, "cannot write embedding bank " + file.string());
  out << "sscl-embeddings\t" << bank.size() << '\t' << bank.embeddings.cols() << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < bank.size(); ++i) {
    const std::string id = bank.source_ids.empty() ? std::to_string(i) : bank.source_ids[static_cast<std::size_t>(i)];
    require(id.find_first_of("\t\n") == std::string::npos, ErrorKind::Data, "source id contains a tab or newline");
    out << id << '\t' << bank.labels[static_cast<std::size_t>(i)].value();
    for (Eigen::Index j = 0; j < bank.embeddings.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", bank.embeddings(i, j));
      out << '\t' << buf;
    }
    out << '\n';
  }
  require(out.good(), ErrorKind::Io, "failed writing " + file.string());
}

EmbeddingBank load_bank(const fs::path& file) {
  std::ifstream in(file);
  require(in.good(), ErrorKind::Data, "cannot open embedding bank " + file.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Data, "empty embedding bank " + file.string());
  std::istringstream header(line);
  std::string magic;
  long long n = -1, d = -1;
  header >> magic >> n >> d;
  require(magic == "sscl-embeddings" && n >= 0 && d > 0, ErrorKind::Data, "bad embedding bank header in " + file.string());
  EmbeddingBank bank;
  bank.embeddings.resize(n, d);
  for (long long i = 0; i < n; ++i) {
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Data, "embedding bank ends early: " + file.string());
    std::vector<std::string> fields;
    std::string f;
    std::istringstream row(line);
    while (std::getline(row, f, '\t')) fields.push_back(f);
    require(fields.size() == static_cast<std::size_t>(d + 2), ErrorKind::Data,
            "embedding bank row " + std::to_string(i) + " has the wrong field count");
    bank.source_ids.push_back(fields[0]);
    bank.labels.emplace_back(static_cast<std::int32_t>(parse_int(fields[1])));
    for (long long j = 0; j < d; ++j) bank.embeddings(i, j) = parse_double(fields[static_cast<std::size_t>(j + 2)]);
  }
  bank.validate();
  return bank;
}

// ---- k-NN ---------------------------------------------------------------

namespace {

double row_dot(const Matrix& m, Eigen::Index r, const Vector& q) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) s += m(r, j) * q(j);
  return s;
}

void check_reference_bank(const EmbeddingBank& bank) {
  bank.validate();
  for (const auto& l : bank.labels)
    require(l.is_labeled(), ErrorKind::Domain, "k-NN reference bank contains unlabeled rows");
}

ClassLabel vote(const EmbeddingBank& bank, const Vector& query, const KnnOptions& o,
                std::vector<std::pair<double, Eigen::Index>>& sims) {
  sims.clear();
  for (Eigen::Index r = 0; r < bank.size(); ++r) sims.emplace_back(row_dot(bank.embeddings, r, query), r);
  const auto k = static_cast<std::ptrdiff_t>(o.k);
  std::partial_sort(sims.begin(), sims.begin() + k, sims.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::pair<std::int32_t, double>> totals;  // (label, weight), sorted by label
  for (std::ptrdiff_t i = 0; i < k; ++i) {
    const auto [s, r] = sims[static_cast<std::size_t>(i)];
    const std::int32_t label = bank.labels[static_cast<std::size_t>(r)].value();
    const double w = o.uniform ? 1.0 : std::exp(s / o.temperature);
    auto it = std::lower_bound(totals.begin(), totals.end(), label,
                               [](const auto& t, std::int32_t l) { return t.first < l; });
    if (it == totals.end() || it->first != label) it = totals.insert(it, {label, 0.0});
    it->second += w;
  }
  // Strictly greater wins, so equal totals keep the smaller label.
  std::int32_t best = totals.front().first;
  double best_w = totals.front().second;
  for (const auto& [label, w] : totals) {
    if (w > best_w) {
      best = label;
      best_w = w;
    }
  }
  return ClassLabel(best);
}

void check_knn_options(const EmbeddingBank& bank, const KnnOptions& o) {
  require(o.k > 0, ErrorKind::Config, "k must be positive");
  require(o.k <= bank.size(), ErrorKind::Config,
          "k = " + std::to_string(o.k) + " exceeds the bank size " + std::to_string(bank.size()));
  require(o.uniform || o.temperature > 0.0, ErrorKind::Config, "k-NN temperature must be positive");
}

}  // namespace

ClassLabel knn_classify(const EmbeddingBank& bank, const Vector& query, const KnnOptions& options) {
  check_reference_bank(bank);
  check_knn_options(bank, options);
  require(query.size() == bank.embeddings.cols(), ErrorKind::Shape, "query dimension differs from the bank");
  std::vector<std::pair<double, Eigen::Index>> sims;
  return vote(bank, query, options, sims);
}

double knn_accuracy(const EmbeddingBank& bank, const EmbeddingBank& queries, const KnnOptions& options) {
  require(queries.size() > 0, ErrorKind::Domain, "k-NN accuracy of an empty query set");
  check_reference_bank(bank);
  check_knn_options(bank, options);
  queries.validate();
  require(queries.embeddings.cols() == bank.embeddings.cols(), ErrorKind::Shape, "query dimension differs from the bank");
  std::vector<std::pair<double, Eigen::Index>> sims;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < queries.size(); ++i) {
    const Vector q = queries.embeddings.row(i).transpose();
    if (vote(bank, q, options, sims) == queries.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

Cohesion class_cohesion(const EmbeddingBank& bank) {
  bank.validate();
  std::vector<std::int32_t> labels;
  for (const auto& l : bank.labels) {
    require(l.is_labeled(), ErrorKind::Domain, "cohesion needs labeled embeddings");
    labels.push_back(l.value());
  }
  std::vector<std::int32_t> classes = labels;
  std::sort(classes.begin(), classes.end());
  require(classes.size() >= 2 && classes.front() != classes.back(), ErrorKind::Domain,
          "cohesion needs at least two classes");
  for (auto c : classes)
    require(std::count(labels.begin(), labels.end(), c) >= 2, ErrorKind::Domain,
            "class " + std::to_string(c) + " has fewer than two members");
  const Matrix gram = bank.embeddings * bank.embeddings.transpose();
  double intra = 0.0, inter = 0.0;
  long long n_intra = 0, n_inter = 0;
  for (Eigen::Index i = 0; i < bank.size(); ++i) {
    for (Eigen::Index j = i + 1; j < bank.size(); ++j) {
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        intra += gram(i, j);
        ++n_intra;
      } else {
        inter += gram(i, j);
        ++n_inter;
      }
    }
  }
  return {std::clamp(intra / static_cast<double>(n_intra), -1.0, 1.0),
          std::clamp(inter / static_cast<double>(n_inter), -1.0, 1.0)};
}

// ---- probe and fine-tuning ----------------------------------------------

ProbeConfig ProbeConfig::fine_tune() {
  ProbeConfig c;
  c.base_lr = 0.03;
  c.freeze_backbone = false;
  return c;
}

Matrix LinearClassifier::logits(const Matrix& features) const {
  require(features.cols() == weights.cols(), ErrorKind::Shape, "feature width differs from the classifier");
  Matrix z = features * weights.transpose();
  z.rowwise() += bias.transpose();
  return z;
}

std::vector<int> LinearClassifier::predict(const Matrix& features) const {
  const Matrix z = logits(features);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < z.cols(); ++c)
      if (z(i, c) > z(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace {

void check_labels(const MaterializedPool& pool, int num_classes) {
  require(pool.inputs.rows() > 0, ErrorKind::Data, "labeled pool is empty");
  require(num_classes >= 1, ErrorKind::Config, "at least one class is required");
  for (const auto& l : pool.labels)
    require(l.is_labeled() && l.value() < num_classes, ErrorKind::Data, "labeled pool has a label outside [0, C)");
}

LinearClassifier init_classifier(int classes, int features, std::uint64_t seed) {
  Rng rng = make_stream(seed, "probe-init");
  std::normal_distribution<double> n(0.0, 0.01);
  LinearClassifier c{Matrix(classes, features), Vector::Zero(classes)};
  for (Eigen::Index i = 0; i < c.weights.size(); ++i) c.weights.data()[i] = n(rng);
  return c;
}

// Mean softmax cross-entropy gradient with respect to the logits.
Matrix softmax_ce_grad(const Matrix& logits, const std::vector<ClassLabel>& labels, const std::vector<Eigen::Index>& rows) {
  Matrix g(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
    g.row(i) = e / e.sum();
    g(i, labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])].value()) -= 1.0;
  }
  return g / static_cast<double>(logits.rows());
}

Matrix augmented_batch(const MaterializedPool& pool, const std::vector<Eigen::Index>& rows, const ProbeConfig& cfg,
                       int epoch) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), pool.inputs.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Eigen::Index r = rows[i];
    Rng rng = augmentation_stream(cfg.seed, pool.source_ids.empty() ? std::to_string(r) : pool.source_ids[static_cast<std::size_t>(r)], epoch);
    x.row(static_cast<Eigen::Index>(i)) = augment(pool.inputs.row(r).transpose(), pool.shape, cfg.augmentation, rng).transpose();
  }
  return x;
}

std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, int epoch) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, "probe-shuffle", static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void classifier_step(LinearClassifier& c, SgdMomentum& opt, const Matrix& features, const Matrix& grad_logits, double lr) {
  const Matrix gw = grad_logits.transpose() * features;
  const Vector gb = grad_logits.colwise().sum().transpose();
  std::vector<double> params(static_cast<std::size_t>(c.weights.size() + c.bias.size()));
  std::vector<double> grad(params.size());
  std::copy(c.weights.data(), c.weights.data() + c.weights.size(), params.begin());
  std::copy(c.bias.data(), c.bias.data() + c.bias.size(), params.begin() + c.weights.size());
  std::copy(gw.data(), gw.data() + gw.size(), grad.begin());
  std::copy(gb.data(), gb.data() + gb.size(), grad.begin() + gw.size());
  opt.step(params, grad, lr);
  std::copy(params.begin(), params.begin() + c.weights.size(), c.weights.data());
  std::copy(params.begin() + c.weights.size(), params.end(), c.bias.data());
}

std::uint64_t backbone_checksum(std::span<const double> params, std::span<const double> buffers) {
  return checksum(params) ^ (checksum(buffers) * 0x9e3779b97f4a7c15ULL);
}

}  // namespace

ProbeResult train_linear_probe(const Architecture& arch, std::span<const double> params,
                               std::span<const double> buffers, const MaterializedPool& labeled, int num_classes,
                               const ProbeConfig& cfg) {
  require(cfg.freeze_backbone, ErrorKind::Misuse, "the linear probe needs freeze_backbone = true");
  require(cfg.epochs >= 0 && cfg.batch_size > 0 && cfg.base_lr > 0.0, ErrorKind::Config,
          "probe epochs, batch size and learning rate must be valid");
  check_labels(labeled, num_classes);
  ProbeResult result;
  result.backbone_checksum_before = backbone_checksum(params, buffers);
  result.classifier = init_classifier(num_classes, arch.feature_dim(), cfg.seed);
  SgdMomentum opt{cfg.momentum, cfg.weight_decay, {}};
  const Eigen::Index n = labeled.inputs.rows();
  const bool augmenting = cfg.augmentation.kind != AugmentationPolicy::Kind::None;
  const Matrix fixed = augmenting ? Matrix() : backbone_features(arch, params, buffers, labeled.inputs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs);
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + std::min<Eigen::Index>(n, start + cfg.batch_size));
      Matrix feats;
      if (augmenting) {
        feats = backbone_features(arch, params, buffers, augmented_batch(labeled, rows, cfg, epoch));
      } else {
        feats.resize(static_cast<Eigen::Index>(rows.size()), fixed.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) feats.row(static_cast<Eigen::Index>(i)) = fixed.row(rows[i]);
      }
      const Matrix g = softmax_ce_grad(result.classifier.logits(feats), labeled.labels, rows);
      classifier_step(result.classifier, opt, feats, g, lr);
    }
  }
  result.backbone_checksum_after = backbone_checksum(params, buffers);
  require(result.backbone_checksum_after == result.backbone_checksum_before, ErrorKind::Consistency,
          "backbone parameters changed during the linear probe");
  return result;
}

FineTuneResult fine_tune(const Architecture& arch, std::vector<double> params, std::vector<double> buffers,
                         const MaterializedPool& labeled, int num_classes, const ProbeConfig& cfg) {
  require(!cfg.freeze_backbone, ErrorKind::Misuse, "fine-tuning needs freeze_backbone = false");
  require(cfg.epochs >= 0 && cfg.batch_size > 0 && cfg.base_lr > 0.0 && cfg.ghost_subbatches > 0, ErrorKind::Config,
          "fine-tune epochs, batch size, sub-batches and learning rate must be valid");
  check_labels(labeled, num_classes);
  const Eigen::Index n = labeled.inputs.rows();
  // Full batches only, each a multiple of the ghost sub-batch count.
  Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, n);
  batch -= batch % cfg.ghost_subbatches;
  require(batch > 0, ErrorKind::Config, "labeled pool is smaller than the ghost sub-batch count");
  FineTuneResult r{std::move(params), std::move(buffers), init_classifier(num_classes, arch.feature_dim(), cfg.seed)};
  SgdMomentum backbone_opt{cfg.momentum, cfg.weight_decay, {}};
  SgdMomentum head_opt{cfg.momentum, cfg.weight_decay, {}};
  const nn::Context ctx{nn::Mode::Train, cfg.ghost_subbatches};
  std::vector<double> grad(r.params.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs);
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (Eigen::Index start = 0; start + batch <= n; start += batch) {
      const std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + start + batch);
      Architecture::Trace trace;
      const Matrix feats = arch.forward_features(r.params, r.buffers, augmented_batch(labeled, rows, cfg, epoch), ctx, &trace);
      const Matrix g = softmax_ce_grad(r.classifier.logits(feats), labeled.labels, rows);
      std::fill(grad.begin(), grad.end(), 0.0);
      arch.backward(r.params, trace, g * r.classifier.weights, grad);
      classifier_step(r.classifier, head_opt, feats, g, lr);
      backbone_opt.step(r.params, grad, lr);
    }
  }
  return r;
}

double classifier_accuracy(const Architecture& arch, std::span<const double> params, std::span<const double> buffers,
                           const LinearClassifier& classifier, const MaterializedPool& pool) {
  require(pool.inputs.rows() > 0, ErrorKind::Domain, "accuracy of an empty pool");
  const auto pred = classifier.predict(backbone_features(arch, params, buffers, pool.inputs));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pool.labels[i].is_labeled() && pred[i] == pool.labels[i].value()) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace sscl
