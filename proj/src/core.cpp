#include "sscl/core.hpp"

#include <charconv>
#include <cmath>

namespace sscl {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Degenerate: return "degenerate-input error";
    case ErrorKind::Capacity: return "capacity error";
    case ErrorKind::Normalization: return "normalization error";
    case ErrorKind::Consistency: return "consistency error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Misuse: return "misuse error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Usage: return "usage error";
  }
  return "error";
}

void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, std::string(to_string(kind)) + ": " + what);
}

Embedding Embedding::adopt_unit(Vector v, double tol) {
  require(v.size() > 0, ErrorKind::Shape, "empty embedding");
  require(std::abs(v.norm() - 1.0) <= tol, ErrorKind::Normalization, "vector is not unit-norm");
  return Embedding(std::move(v));
}

Embedding l2_normalize(const Vector& v) {
  require(v.size() > 0, ErrorKind::Shape, "empty vector");
  const double n = v.norm();
  require(n > 0.0 && std::isfinite(n), ErrorKind::Degenerate, "cannot normalize a zero vector");
  return Embedding(v / n);
}

double similarity(const Embedding& a, const Embedding& b) {
  require(a.dim() == b.dim(), ErrorKind::Shape, "similarity of embeddings with different dimension");
  return a.values().dot(b.values());
}

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    require(n > 0.0 && std::isfinite(n), ErrorKind::Degenerate, "cannot normalize a zero row");
    out.row(i) = m.row(i) / n;
  }
  return out;
}

Matrix l2_normalize_rows_backward(const Matrix& pre, const Matrix& grad_normalized) {
  Matrix out(pre.rows(), pre.cols());
  for (Eigen::Index i = 0; i < pre.rows(); ++i) {
    const double n = pre.row(i).norm();
    const auto z = pre.row(i) / n;
    const double proj = z.dot(grad_normalized.row(i));
    out.row(i) = (grad_normalized.row(i) - proj * z) / n;
  }
  return out;
}

void check_unit_rows(const Matrix& m, ErrorKind kind, std::string_view what, double tol) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (std::abs(m.row(i).norm() - 1.0) > tol) {
      fail(kind, std::string(what) + ": row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

void TrainConfig::validate() const {
  require(temperature > 0.0, ErrorKind::Config, "temperature must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Config, "momentum must lie in [0,1)");
  require(queue_size > 0, ErrorKind::Config, "queue_size must be positive");
  require(batch_size > 0, ErrorKind::Config, "batch_size must be positive");
  require(queue_size % batch_size == 0, ErrorKind::Config, "queue_size must be a multiple of batch_size");
  require(alpha >= 0.0, ErrorKind::Config, "alpha must be nonnegative");
  require(total_epochs >= 0, ErrorKind::Config, "total_epochs must be nonnegative");
  if (t_end) {
    require(*t_end >= 0, ErrorKind::Config, "t_end must be nonnegative");
    require(*t_end <= total_epochs, ErrorKind::Config, "t_end must not exceed total_epochs");
  }
  require(base_lr > 0.0, ErrorKind::Config, "base_lr must be positive");
  require(optimizer_momentum >= 0.0 && optimizer_momentum < 1.0, ErrorKind::Config,
          "optimizer_momentum must lie in [0,1)");
  require(weight_decay >= 0.0, ErrorKind::Config, "weight_decay must be nonnegative");
  require(embedding_dim > 0, ErrorKind::Config, "embedding_dim must be positive");
  require(ghost_subbatches > 0, ErrorKind::Config, "ghost_subbatches must be positive");
  require(batch_size % ghost_subbatches == 0, ErrorKind::Config,
          "batch_size must be divisible by ghost_subbatches");
  require(hidden_width > 0, ErrorKind::Config, "hidden_width must be positive");
  require(knn_every >= 0, ErrorKind::Config, "knn_every must be nonnegative");
  require(knn_temperature > 0.0, ErrorKind::Config, "knn_temperature must be positive");
  require(aug_crop_min > 0.0 && aug_crop_min <= 1.0, ErrorKind::Config, "aug_crop_min must lie in (0,1]");
  for (double p : {aug_flip, aug_jitter_prob, aug_grayscale})
    require(p >= 0.0 && p <= 1.0, ErrorKind::Config, "augmentation probabilities must lie in [0,1]");
  require(aug_jitter >= 0.0 && aug_hue >= 0.0 && aug_hue <= 0.5, ErrorKind::Config,
          "jitter strengths must be nonnegative and aug_hue at most 0.5");
}

std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = splitmix64(root);
  h = splitmix64(h ^ hash_name(stream));
  h = splitmix64(h ^ a);
  return splitmix64(h ^ b);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    fail(ErrorKind::Config, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

long long parse_int(std::string_view s) {
  long long v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    fail(ErrorKind::Config, "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace sscl
