#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace sscl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Error classes surfaced by every module. The C API maps each kind to a
// status code one-to-one.
enum class ErrorKind {
  Config = 1,
  Shape,
  Degenerate,
  Capacity,
  Normalization,
  Consistency,
  Domain,
  Data,
  Misuse,
  Io,
  Usage,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

// Class index in [0, C) or the UNLABELED sentinel (-1 at every boundary).
class ClassLabel {
 public:
  static constexpr std::int32_t kUnlabeledValue = -1;

  constexpr ClassLabel() = default;
  constexpr explicit ClassLabel(std::int32_t v) : value_(v < 0 ? kUnlabeledValue : v) {}

  static constexpr ClassLabel unlabeled() { return ClassLabel{}; }

  constexpr bool is_labeled() const { return value_ != kUnlabeledValue; }
  constexpr std::int32_t value() const { return value_; }

  friend constexpr bool operator==(ClassLabel a, ClassLabel b) = default;

 private:
  std::int32_t value_ = kUnlabeledValue;
};

inline constexpr ClassLabel kUnlabeled = ClassLabel::unlabeled();

inline constexpr double kUnitTolerance = 1e-6;

// Unit-norm vector. Only constructible through l2_normalize or a checked
// adoption of an already-normalized vector.
class Embedding {
 public:
  static Embedding adopt_unit(Vector v, double tol = kUnitTolerance);

  const Vector& values() const { return values_; }
  Eigen::Index dim() const { return values_.size(); }

 private:
  explicit Embedding(Vector v) : values_(std::move(v)) {}
  friend Embedding l2_normalize(const Vector& v);

  Vector values_;
};

Embedding l2_normalize(const Vector& v);
double similarity(const Embedding& a, const Embedding& b);

// Row-wise normalization of a batch; throws Degenerate on any zero row.
Matrix l2_normalize_rows(const Matrix& m);
// Backward of row-wise normalization: given the pre-normalization rows and
// dL/d(normalized), returns dL/d(pre-normalization).
Matrix l2_normalize_rows_backward(const Matrix& pre, const Matrix& grad_normalized);
void check_unit_rows(const Matrix& m, ErrorKind kind, std::string_view what, double tol = kUnitTolerance);

// Channel-major layout of one input sample (channels x height x width).
// Plain feature vectors use height = width = 1.
struct InputShape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int size() const { return channels * height * width; }
  bool is_image() const { return height > 1 || width > 1; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

// All scalar hyperparameters of a pretraining run.
struct TrainConfig {
  double temperature = 0.2;
  double momentum = 0.95;
  int queue_size = 4096;
  int batch_size = 256;
  double alpha = 2.0;
  std::optional<int> t_end = 200;  // nullopt: w(t) = 1 for the whole run
  int total_epochs = 1000;
  double base_lr = 0.03;
  double optimizer_momentum = 0.9;
  double weight_decay = 0.0;
  int embedding_dim = 128;
  int ghost_subbatches = 8;
  std::uint64_t seed = 0;

  std::string architecture = "tiny-mlp";
  int hidden_width = 64;
  bool moco_only = false;  // baseline objective: skip the ID term entirely
  int knn_every = 0;       // 0 disables periodic k-NN monitoring
  double knn_temperature = 0.07;

  // Pretraining augmentation strengths (crop and flip act on images only).
  double aug_crop_min = 0.2;
  double aug_flip = 0.5;
  double aug_jitter_prob = 0.8;
  double aug_jitter = 0.4;  // brightness, contrast and saturation
  double aug_hue = 0.1;
  double aug_grayscale = 0.2;

  void validate() const;
};

// Deterministic named random streams derived from one root seed.
std::uint64_t hash_name(std::string_view name);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t a = 0,
                          std::uint64_t b = 0);
using Rng = std::mt19937_64;
inline Rng make_stream(std::uint64_t root, std::string_view stream, std::uint64_t a = 0,
                       std::uint64_t b = 0) {
  return Rng(derive_seed(root, stream, a, b));
}

// Shortest round-trip decimal text for a double.
std::string format_double(double v);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

}  // namespace sscl
