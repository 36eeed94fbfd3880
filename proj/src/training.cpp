#include "sscl/training.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>

#include "sscl/eval.hpp"
#include "sscl/losses.hpp"

namespace sscl {

namespace fs = std::filesystem;

// ---- configuration text ---------------------------------------------------

namespace {

std::string bool_text(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::Config, key + ": expected true or false, got '" + v + "'");
}

int to_int(const std::string& key, const std::string& v) {
  try {
    return static_cast<int>(parse_int(v));
  } catch (const Error&) {
    fail(ErrorKind::Config, key + ": expected an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    fail(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& c) {
  return {
      {"temperature", format_double(c.temperature)},
      {"momentum", format_double(c.momentum)},
      {"queue_size", std::to_string(c.queue_size)},
      {"batch_size", std::to_string(c.batch_size)},
      {"alpha", format_double(c.alpha)},
      {"t_end", c.t_end ? std::to_string(*c.t_end) : "none"},
      {"total_epochs", std::to_string(c.total_epochs)},
      {"base_lr", format_double(c.base_lr)},
      {"optimizer_momentum", format_double(c.optimizer_momentum)},
      {"weight_decay", format_double(c.weight_decay)},
      {"embedding_dim", std::to_string(c.embedding_dim)},
      {"ghost_subbatches", std::to_string(c.ghost_subbatches)},
      {"seed", std::to_string(c.seed)},
      {"architecture", c.architecture},
      {"hidden_width", std::to_string(c.hidden_width)},
      {"moco_only", bool_text(c.moco_only)},
      {"knn_every", std::to_string(c.knn_every)},
      {"knn_temperature", format_double(c.knn_temperature)},
      {"aug_crop_min", format_double(c.aug_crop_min)},
      {"aug_flip", format_double(c.aug_flip)},
      {"aug_jitter_prob", format_double(c.aug_jitter_prob)},
      {"aug_jitter", format_double(c.aug_jitter)},
      {"aug_hue", format_double(c.aug_hue)},
      {"aug_grayscale", format_double(c.aug_grayscale)},
  };
}

void apply_config_value(TrainConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "temperature") c.temperature = to_double(key, v);
  else if (key == "momentum") c.momentum = to_double(key, v);
  else if (key == "queue_size") c.queue_size = to_int(key, v);
  else if (key == "batch_size") c.batch_size = to_int(key, v);
  else if (key == "alpha") c.alpha = to_double(key, v);
  else if (key == "t_end") c.t_end = (v == "none" ? std::nullopt : std::optional<int>(to_int(key, v)));
  else if (key == "total_epochs") c.total_epochs = to_int(key, v);
  else if (key == "base_lr") c.base_lr = to_double(key, v);
  else if (key == "optimizer_momentum") c.optimizer_momentum = to_double(key, v);
  else if (key == "weight_decay") c.weight_decay = to_double(key, v);
  else if (key == "embedding_dim") c.embedding_dim = to_int(key, v);
  else if (key == "ghost_subbatches") c.ghost_subbatches = to_int(key, v);
  else if (key == "seed") {
    const long long s = [&] {
      try {
        return parse_int(v);
      } catch (const Error&) {
        fail(ErrorKind::Config, "seed: expected a nonnegative integer, got '" + v + "'");
      }
    }();
    require(s >= 0, ErrorKind::Config, "seed must be nonnegative");
    c.seed = static_cast<std::uint64_t>(s);
  } else if (key == "architecture") c.architecture = v;
  else if (key == "hidden_width") c.hidden_width = to_int(key, v);
  else if (key == "moco_only") c.moco_only = parse_bool(key, v);
  else if (key == "knn_every") c.knn_every = to_int(key, v);
  else if (key == "knn_temperature") c.knn_temperature = to_double(key, v);
  else if (key == "aug_crop_min") c.aug_crop_min = to_double(key, v);
  else if (key == "aug_flip") c.aug_flip = to_double(key, v);
  else if (key == "aug_jitter_prob") c.aug_jitter_prob = to_double(key, v);
  else if (key == "aug_jitter") c.aug_jitter = to_double(key, v);
  else if (key == "aug_hue") c.aug_hue = to_double(key, v);
  else if (key == "aug_grayscale") c.aug_grayscale = to_double(key, v);
  else fail(ErrorKind::Config, "unknown training option '" + key + "'");
}

std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_items(cfg)) out += k + " = " + v + "\n";
  return out;
}

TrainConfig config_from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Config, "expected key = value, got '" + line + "'");
    apply_config_value(c, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

TrainConfig preset(const std::string& name) {
  TrainConfig c;
  c.temperature = 0.2;
  c.alpha = 2.0;
  c.t_end = 200;
  c.batch_size = 256;
  c.total_epochs = 1000;
  c.embedding_dim = 128;
  c.base_lr = 0.03;
  c.architecture = "small-conv";
  c.knn_every = 10;
  if (name == "cifar10" || name == "cifar100") {
    c.momentum = 0.95;
    c.queue_size = 4096;
  } else if (name == "tiny-imagenet") {
    c.momentum = 0.999;
    c.queue_size = 8192;
  } else if (name == "desk") {
    c.architecture = "tiny-mlp";
    c.total_epochs = 200;
    c.t_end = 100;
    c.batch_size = 64;
    c.queue_size = 512;
    c.embedding_dim = 32;
    c.hidden_width = 64;
    c.momentum = 0.95;
    c.base_lr = 0.1;
    c.knn_every = 0;
  } else {
    fail(ErrorKind::Config, "unknown preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"cifar10", "cifar100", "tiny-imagenet", "desk"}; }

AugmentationPolicy pretrain_policy(const TrainConfig& cfg) {
  AugmentationPolicy p;
  p.kind = AugmentationPolicy::Kind::ContrastivePretrain;
  p.crop_scale_min = cfg.aug_crop_min;
  p.crop_scale_max = 1.0;
  p.flip_prob = cfg.aug_flip;
  p.jitter_prob = cfg.aug_jitter_prob;
  p.brightness = p.contrast = p.saturation = cfg.aug_jitter;
  p.hue = cfg.aug_hue;
  p.grayscale_prob = cfg.aug_grayscale;
  return p;
}

// ---- data stream ----------------------------------------------------------

std::uint64_t PretrainData::fingerprint() const {
  std::uint64_t h = checksum(std::span<const double>(inputs.data(), static_cast<std::size_t>(inputs.size())));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    h = (h ^ hash_name(source_ids.empty() ? std::string() : source_ids[i])) * 1099511628211ULL;
    h = (h ^ static_cast<std::uint64_t>(labels[i].value() + 1)) * 1099511628211ULL;
  }
  return h;
}

PretrainData pretrain_pool(const TrainingData& data) {
  PretrainData d;
  d.shape = data.labeled.shape;
  d.inputs.resize(data.labeled.inputs.rows() + data.unlabeled.inputs.rows(), d.shape.size());
  if (data.labeled.inputs.rows() > 0) d.inputs.topRows(data.labeled.inputs.rows()) = data.labeled.inputs;
  if (data.unlabeled.inputs.rows() > 0) d.inputs.bottomRows(data.unlabeled.inputs.rows()) = data.unlabeled.inputs;
  for (const auto* pool : {&data.labeled, &data.unlabeled}) {
    d.labels.insert(d.labels.end(), pool->labels.begin(), pool->labels.end());
    d.source_ids.insert(d.source_ids.end(), pool->source_ids.begin(), pool->source_ids.end());
  }
  return d;
}

namespace {

std::vector<Eigen::Index> permutation(Eigen::Index n, std::uint64_t seed, int epoch) {
  std::vector<Eigen::Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  Rng rng = make_stream(seed, "shuffle", static_cast<std::uint64_t>(epoch));
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Keeps the permutations of the last two epochs touched by the stream.
class PermutationCache {
 public:
  PermutationCache(Eigen::Index n, std::uint64_t seed) : n_(n), seed_(seed) {}
  const std::vector<Eigen::Index>& at(int epoch) {
    auto it = cache_.find(epoch);
    if (it != cache_.end()) return it->second;
    while (cache_.size() >= 2) cache_.erase(cache_.begin());
    return cache_.emplace(epoch, permutation(n_, seed_, epoch)).first->second;
  }

 private:
  Eigen::Index n_;
  std::uint64_t seed_;
  std::map<int, std::vector<Eigen::Index>> cache_;
};

Batch make_batch(const PretrainData& data, PermutationCache& perms, int batch_size, std::int64_t iteration) {
  const Eigen::Index n = data.size();
  require(n > 0, ErrorKind::Data, "pretraining pool is empty");
  Batch b;
  b.inputs.resize(batch_size, data.inputs.cols());
  for (int j = 0; j < batch_size; ++j) {
    const std::int64_t pos = iteration * batch_size + j;
    const int epoch = static_cast<int>(pos / n);
    const Eigen::Index row = perms.at(epoch)[static_cast<std::size_t>(pos % n)];
    b.inputs.row(j) = data.inputs.row(row);
    b.labels.push_back(data.labels[static_cast<std::size_t>(row)]);
    b.source_ids.push_back(data.source_ids.empty() ? std::to_string(row) : data.source_ids[static_cast<std::size_t>(row)]);
    b.epochs.push_back(epoch);
  }
  return b;
}

}  // namespace

Batch batch_at(const PretrainData& data, std::uint64_t seed, int batch_size, std::int64_t iteration) {
  PermutationCache perms(data.size(), seed);
  return make_batch(data, perms, batch_size, iteration);
}

std::int64_t total_iterations(const TrainConfig& cfg, Eigen::Index dataset_size) {
  return static_cast<std::int64_t>(cfg.total_epochs) * dataset_size / cfg.batch_size;
}

int epoch_of(std::int64_t iteration, int batch_size, Eigen::Index dataset_size) {
  return static_cast<int>(iteration * batch_size / dataset_size);
}

// ---- state ------------------------------------------------------------------

TrainState init_train_state(const TrainConfig& cfg, InputShape input_shape) {
  cfg.validate();
  auto arch = make_architecture(cfg.architecture, {input_shape, cfg.hidden_width, cfg.embedding_dim});
  return TrainState{cfg,
                    input_shape,
                    EncoderPair::create(std::move(arch), cfg.seed),
                    MemoryQueue::init(cfg.queue_size, cfg.embedding_dim, cfg.seed),
                    SgdMomentum{cfg.optimizer_momentum, cfg.weight_decay, {}},
                    0,
                    0,
                    {},
                    {}};
}

int current_epoch(const TrainState& s, Eigen::Index dataset_size) {
  return epoch_of(s.iteration, s.config.batch_size, dataset_size);
}

StepStats pretrain_step(TrainState& state, const Batch& batch, int epoch, const TrainHooks* hooks) {
  const TrainConfig& cfg = state.config;
  const Eigen::Index b = batch.inputs.rows();
  require(b > 0 && batch.labels.size() == static_cast<std::size_t>(b) && batch.epochs.size() == batch.labels.size() &&
              batch.source_ids.size() == batch.labels.size(),
          ErrorKind::Shape, "batch fields disagree in length");

  // (1) two views per item
  const AugmentationPolicy policy = pretrain_policy(cfg);
  Matrix anchors_in(b, batch.inputs.cols()), positives_in(b, batch.inputs.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto k = static_cast<std::size_t>(i);
    Rng rng = augmentation_stream(cfg.seed, batch.source_ids[k], batch.epochs[k]);
    auto [va, vp] = augment_pair(batch.inputs.row(i).transpose(), state.input_shape, policy, rng);
    anchors_in.row(i) = va.transpose();
    positives_in.row(i) = vp.transpose();
  }

  // (2) query and key forward passes
  QueryForward fwd = forward_query(state.pair, anchors_in, nn::Mode::Train, cfg.ghost_subbatches);
  const Matrix keys = forward_key(state.pair, positives_in, nn::Mode::Train, cfg.ghost_subbatches);

  // (3) queue snapshot, (4) positive sets
  const QueueSnapshot snap = state.queue.snapshot();
  PositiveSets positives(static_cast<std::size_t>(b));
  std::map<std::int32_t, std::vector<int>> by_label;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const ClassLabel l = batch.labels[i];
    if (!l.is_labeled()) continue;
    auto it = by_label.find(l.value());
    if (it == by_label.end()) it = by_label.emplace(l.value(), state.queue.positives_of(l)).first;
    positives[i] = it->second;
  }

  // (5) loss
  StepStats stats;
  stats.w = schedule_w(epoch, cfg.t_end);
  stats.lr = cosine_lr(cfg.base_lr, epoch, cfg.total_epochs);
  ContrastiveBatchInput inp{fwd.embeddings, keys, snap.embeddings, snap.labels, batch.labels, cfg.temperature};
  const CombinedLossResult loss = combined_loss(inp, positives, cfg.moco_only ? 0.0 : cfg.alpha, stats.w);
  stats.loss = loss.loss;
  stats.moco = loss.moco;
  stats.id = loss.id;
  require(std::isfinite(loss.loss), ErrorKind::Consistency, "non-finite loss");

  // (6) SGD on theta_q
  const std::vector<double> grad = query_backward(state.pair, fwd, loss.grad_anchors);
  state.optimizer.step(state.pair.query, grad, stats.lr);

  // (7) momentum update of theta_k
  state.pair.key = momentum_update(state.pair.key, state.pair.query, cfg.momentum);

  // (8) enqueue keys with exposed labels
  if (hooks && hooks->on_enqueue) hooks->on_enqueue(keys, batch.labels);
  state.queue.enqueue_batch(keys, batch.labels);

  ++state.iteration;
  state.accumulator.total += stats.loss;
  state.accumulator.moco += stats.moco;
  ++state.accumulator.steps;
  if (stats.id) {
    state.accumulator.id += *stats.id;
    ++state.accumulator.id_steps;
  }
  if (hooks && hooks->on_step) hooks->on_step(state, stats);
  return stats;
}

namespace {

void close_epoch(TrainState& s, int epoch, const MonitorData* monitor) {
  const auto& a = s.accumulator;
  EpochMetrics row;
  row.epoch = epoch;
  row.loss_total = a.steps ? a.total / static_cast<double>(a.steps) : 0.0;
  row.loss_moco = a.steps ? a.moco / static_cast<double>(a.steps) : 0.0;
  if (a.id_steps) row.loss_id = a.id / static_cast<double>(a.id_steps);
  row.w = schedule_w(epoch, s.config.t_end);
  row.lr = cosine_lr(s.config.base_lr, epoch, s.config.total_epochs);
  const bool due = s.config.knn_every > 0 &&
                   ((epoch + 1) % s.config.knn_every == 0 || epoch + 1 == s.config.total_epochs);
  if (monitor && due && monitor->labeled.inputs.rows() > 0 && monitor->validation.inputs.rows() > 0) {
    const EmbeddingBank bank = make_bank(s.pair, monitor->labeled);
    const EmbeddingBank queries = make_bank(s.pair, monitor->validation);
    if (bank.size() >= 5) row.knn5_val = knn_accuracy(bank, queries, {5, s.config.knn_temperature, false});
    if (bank.size() >= 200) row.knn200_val = knn_accuracy(bank, queries, {200, s.config.knn_temperature, false});
  }
  s.log.push_back(row);
  s.accumulator = {};
}

}  // namespace

void run_pretraining(TrainState& state, const PretrainData& data, const MonitorData* monitor, std::int64_t stop,
                     const TrainHooks* hooks) {
  const TrainConfig& cfg = state.config;
  const Eigen::Index n = data.size();
  require(data.shape == state.input_shape, ErrorKind::Shape, "pretraining data shape differs from the model input");
  const std::uint64_t fp = data.fingerprint();
  if (state.iteration == 0 && state.data_fingerprint == 0) state.data_fingerprint = fp;
  require(state.data_fingerprint == fp, ErrorKind::Consistency,
          "checkpoint was trained on a different pretraining pool");
  const std::int64_t total = cfg.total_epochs > 0 ? total_iterations(cfg, n) : 0;
  if (total > 0)
    require(n >= cfg.batch_size, ErrorKind::Config,
            "pretraining pool (" + std::to_string(n) + ") is smaller than the batch size");
  stop = std::min(stop, total);
  PermutationCache perms(n, cfg.seed);
  while (state.iteration < stop) {
    const int epoch = epoch_of(state.iteration, cfg.batch_size, n);
    const Batch batch = make_batch(data, perms, cfg.batch_size, state.iteration);
    pretrain_step(state, batch, epoch, hooks);
    if (epoch_of(state.iteration, cfg.batch_size, n) > epoch || state.iteration == total)
      close_epoch(state, epoch, monitor);
  }
}

PretrainResult pretrain(const TrainConfig& cfg, const TrainingData& data, const TrainHooks* hooks) {
  const PretrainData pool = pretrain_pool(data);
  PretrainResult r{init_train_state(cfg, pool.shape)};
  const MonitorData monitor{data.labeled, data.validation};
  run_pretraining(r.state, pool, &monitor, std::numeric_limits<std::int64_t>::max(), hooks);
  return r;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'S', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void doubles(std::span<const double> v) {
    pod<std::uint64_t>(v.size());
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(double));
  }
  void opt(const std::optional<double>& v) {
    pod<std::uint8_t>(v ? 1 : 0);
    pod<double>(v.value_or(0.0));
  }
  std::vector<unsigned char> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> b) : b_(b) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), b_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::optional<double> opt() {
    const auto flag = pod<std::uint8_t>();
    const double v = pod<double>();
    return flag ? std::optional<double>(v) : std::nullopt;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    require(n <= b_.size() - pos_, ErrorKind::Data, "checkpoint is truncated");
  }
  std::span<const unsigned char> b_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv(std::span<const unsigned char> bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const TrainState& s) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.pod(kCheckpointVersion);
  w.str(config_to_text(s.config));
  w.pod<std::int32_t>(s.input_shape.channels);
  w.pod<std::int32_t>(s.input_shape.height);
  w.pod<std::int32_t>(s.input_shape.width);
  w.pod<std::int64_t>(s.iteration);
  w.pod<std::uint64_t>(s.data_fingerprint);
  w.doubles(s.pair.query);
  w.doubles(s.pair.key);
  w.doubles(s.pair.query_buffers);
  w.doubles(s.pair.key_buffers);
  w.doubles(s.optimizer.velocity);
  const QueueSnapshot q = s.queue.snapshot();
  w.pod<std::int32_t>(static_cast<std::int32_t>(q.embeddings.rows()));
  w.pod<std::int32_t>(static_cast<std::int32_t>(q.embeddings.cols()));
  w.doubles(std::span<const double>(q.embeddings.data(), static_cast<std::size_t>(q.embeddings.size())));
  for (const auto& l : q.labels) w.pod<std::int32_t>(l.value());
  w.pod<std::uint64_t>(s.queue.write_cursor());
  w.pod(s.accumulator.total);
  w.pod(s.accumulator.moco);
  w.pod(s.accumulator.id);
  w.pod<std::int64_t>(s.accumulator.steps);
  w.pod<std::int64_t>(s.accumulator.id_steps);
  w.pod<std::uint64_t>(s.log.size());
  for (const auto& r : s.log) {
    w.pod<std::int32_t>(r.epoch);
    w.pod(r.loss_total);
    w.pod(r.loss_moco);
    w.opt(r.loss_id);
    w.pod(r.w);
    w.pod(r.lr);
    w.opt(r.knn5_val);
    w.opt(r.knn200_val);
  }
  w.pod<std::uint64_t>(fnv(w.bytes));
  return std::move(w.bytes);
}

TrainState deserialize_checkpoint(std::span<const unsigned char> bytes) {
  require(bytes.size() >= sizeof(kMagic) + sizeof(std::uint64_t) &&
              std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0,
          ErrorKind::Data, "not a checkpoint file");
  const auto body = bytes.first(bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof stored);
  require(stored == fnv(body), ErrorKind::Data, "checkpoint checksum mismatch");
  Reader r(body.subspan(sizeof(kMagic)));
  const auto version = r.pod<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::Data, "unsupported checkpoint version " + std::to_string(version));
  const TrainConfig cfg = config_from_text(r.str());
  InputShape shape;
  shape.channels = r.pod<std::int32_t>();
  shape.height = r.pod<std::int32_t>();
  shape.width = r.pod<std::int32_t>();
  TrainState s = init_train_state(cfg, shape);
  s.iteration = r.pod<std::int64_t>();
  s.data_fingerprint = r.pod<std::uint64_t>();
  s.pair.query = r.doubles();
  s.pair.key = r.doubles();
  s.pair.query_buffers = r.doubles();
  s.pair.key_buffers = r.doubles();
  s.optimizer.velocity = r.doubles();
  const auto& arch = *s.pair.arch;
  require(s.pair.query.size() == arch.parameter_count() && s.pair.key.size() == arch.parameter_count() &&
              s.pair.query_buffers.size() == arch.buffer_count() && s.pair.key_buffers.size() == arch.buffer_count() &&
              (s.optimizer.velocity.empty() || s.optimizer.velocity.size() == arch.parameter_count()),
          ErrorKind::Data, "checkpoint parameter vectors do not match the architecture");
  const int k = r.pod<std::int32_t>(), d = r.pod<std::int32_t>();
  require(k == cfg.queue_size && d == cfg.embedding_dim, ErrorKind::Data, "checkpoint queue shape mismatch");
  const auto flat = r.doubles();
  require(flat.size() == static_cast<std::size_t>(k) * d, ErrorKind::Data, "checkpoint queue size mismatch");
  Matrix emb(k, d);
  std::copy(flat.begin(), flat.end(), emb.data());
  std::vector<ClassLabel> labels;
  for (int i = 0; i < k; ++i) labels.emplace_back(r.pod<std::int32_t>());
  s.queue = MemoryQueue::restore(std::move(emb), std::move(labels), r.pod<std::uint64_t>());
  s.accumulator.total = r.pod<double>();
  s.accumulator.moco = r.pod<double>();
  s.accumulator.id = r.pod<double>();
  s.accumulator.steps = r.pod<std::int64_t>();
  s.accumulator.id_steps = r.pod<std::int64_t>();
  const auto rows = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < rows; ++i) {
    EpochMetrics m;
    m.epoch = r.pod<std::int32_t>();
    m.loss_total = r.pod<double>();
    m.loss_moco = r.pod<double>();
    m.loss_id = r.opt();
    m.w = r.pod<double>();
    m.lr = r.pod<double>();
    m.knn5_val = r.opt();
    m.knn200_val = r.opt();
    s.log.push_back(m);
  }
  require(r.pos() == body.size() - sizeof(kMagic), ErrorKind::Data, "trailing bytes in checkpoint");
  return s;
}

void save_checkpoint(const TrainState& state, const fs::path& file) {
  const auto bytes = serialize_checkpoint(state);
  std::ofstream out(file, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write checkpoint " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::Io, "failed writing " + file.string());
}

TrainState load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorKind::Data, "cannot open checkpoint " + file.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---- metric log -------------------------------------------------------------

namespace {

constexpr const char* kMetricsHeader = "epoch,loss_total,loss_moco,loss_id,w,lr,knn5_val,knn200_val";

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> opt_parse(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

}  // namespace

std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "," + format_double(r.loss_total) + "," + format_double(r.loss_moco) + "," +
           opt_text(r.loss_id) + "," + format_double(r.w) + "," + format_double(r.lr) + "," + opt_text(r.knn5_val) +
           "," + opt_text(r.knn200_val) + "\n";
  }
  return out;
}

std::vector<EpochMetrics> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(std::getline(in, line) && trim(line) == kMetricsHeader, ErrorKind::Data, "metric log header mismatch");
  std::vector<EpochMetrics> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream row(line);
    while (std::getline(row, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    require(f.size() == 8, ErrorKind::Data, "metric log row has " + std::to_string(f.size()) + " fields");
    EpochMetrics m;
    m.epoch = static_cast<int>(parse_int(f[0]));
    m.loss_total = parse_double(f[1]);
    m.loss_moco = parse_double(f[2]);
    m.loss_id = opt_parse(f[3]);
    m.w = parse_double(f[4]);
    m.lr = parse_double(f[5]);
    m.knn5_val = opt_parse(f[6]);
    m.knn200_val = opt_parse(f[7]);
    out.push_back(m);
  }
  return out;
}

void save_metrics(const std::vector<EpochMetrics>& log, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write metric log " + file.string());
  out << metrics_csv(log);
  require(out.good(), ErrorKind::Io, "failed writing " + file.string());
}

std::vector<EpochMetrics> load_metrics(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorKind::Data, "cannot open metric log " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

}  // namespace sscl
