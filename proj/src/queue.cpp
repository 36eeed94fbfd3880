#include "sscl/queue.hpp"

#include <cmath>

namespace sscl {

MemoryQueue MemoryQueue::init(int capacity, int dim, std::uint64_t seed) {
  require(capacity > 0, ErrorKind::Config, "queue capacity must be positive");
  require(dim > 0, ErrorKind::Config, "queue embedding dimension must be positive");
  Rng rng = make_stream(seed, "queue-init");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix keys(capacity, dim);
  for (int k = 0; k < capacity; ++k) {
    // Gaussian direction is uniform on the sphere; resample the (measure-zero) null draw.
    double n = 0.0;
    do {
      for (int j = 0; j < dim; ++j) keys(k, j) = normal(rng);
      n = keys.row(k).norm();
    } while (n == 0.0);
    keys.row(k) /= n;
  }
  return MemoryQueue(std::move(keys), std::vector<ClassLabel>(static_cast<std::size_t>(capacity), kUnlabeled));
}

MemoryQueue MemoryQueue::restore(Matrix embeddings, std::vector<ClassLabel> labels, std::uint64_t write_cursor) {
  require(embeddings.rows() > 0 && embeddings.cols() > 0, ErrorKind::Config, "empty queue state");
  require(static_cast<std::size_t>(embeddings.rows()) == labels.size(), ErrorKind::Shape,
          "queue state: label count differs from embedding rows");
  check_unit_rows(embeddings, ErrorKind::Normalization, "queue state");
  MemoryQueue q(std::move(embeddings), std::move(labels));
  q.write_cursor_ = write_cursor;
  return q;
}

void MemoryQueue::enqueue_batch(const Matrix& keys, std::span<const ClassLabel> labels) {
  require(keys.rows() <= capacity(), ErrorKind::Capacity, "batch larger than queue capacity");
  require(static_cast<std::size_t>(keys.rows()) == labels.size(), ErrorKind::Shape,
          "key count differs from label count");
  require(keys.cols() == keys_.cols(), ErrorKind::Shape, "key dimension differs from queue dimension");
  check_unit_rows(keys, ErrorKind::Normalization, "enqueue_batch");
  const std::size_t n = labels_.size();
  for (Eigen::Index i = 0; i < keys.rows(); ++i) {
    const std::size_t slot = (head_ + static_cast<std::size_t>(i)) % n;
    keys_.row(static_cast<Eigen::Index>(slot)) = keys.row(i);
    labels_[slot] = labels[static_cast<std::size_t>(i)];
  }
  head_ = (head_ + static_cast<std::size_t>(keys.rows())) % n;
  ++write_cursor_;
}

std::vector<int> MemoryQueue::positives_of(ClassLabel label) const {
  std::vector<int> out;
  if (!label.is_labeled()) return out;
  for (int k = 0; k < capacity(); ++k) {
    if (label_at(k) == label) out.push_back(k);
  }
  return out;
}

QueueSnapshot MemoryQueue::snapshot() const {
  QueueSnapshot s;
  const int n = capacity();
  s.embeddings.resize(n, keys_.cols());
  s.labels.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const auto p = physical(k);
    s.embeddings.row(k) = keys_.row(static_cast<Eigen::Index>(p));
    s.labels[static_cast<std::size_t>(k)] = labels_[p];
  }
  return s;
}

}  // namespace sscl
