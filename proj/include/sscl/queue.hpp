#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sscl/core.hpp"

namespace sscl {

// Dense, immutable copy of the queue, oldest entry first.
struct QueueSnapshot {
  Matrix embeddings;                // K x d'
  std::vector<ClassLabel> labels;   // K
};

// Fixed-capacity FIFO of (key embedding, class label) pairs. Stored as a ring
// buffer; every public view is ordered oldest first.
class MemoryQueue {
 public:
  static MemoryQueue init(int capacity, int dim, std::uint64_t seed);
  // Rebuilds a queue from serialized state (rows oldest first).
  static MemoryQueue restore(Matrix embeddings, std::vector<ClassLabel> labels, std::uint64_t write_cursor);

  int capacity() const { return static_cast<int>(labels_.size()); }
  int dim() const { return static_cast<int>(keys_.cols()); }
  std::uint64_t write_cursor() const { return write_cursor_; }

  // Drops the keys.rows() oldest entries and appends the batch newest-last.
  void enqueue_batch(const Matrix& keys, std::span<const ClassLabel> labels);

  std::vector<int> positives_of(ClassLabel label) const;
  QueueSnapshot snapshot() const;

  // Entry k in oldest-first order.
  ClassLabel label_at(int k) const { return labels_[physical(k)]; }

 private:
  MemoryQueue(Matrix keys, std::vector<ClassLabel> labels)
      : keys_(std::move(keys)), labels_(std::move(labels)) {}
  std::size_t physical(int k) const { return (head_ + static_cast<std::size_t>(k)) % labels_.size(); }

  Matrix keys_;
  std::vector<ClassLabel> labels_;
  std::size_t head_ = 0;  // physical index of the oldest entry
  std::uint64_t write_cursor_ = 0;
};

// Free-function spellings of the queue operations.
inline MemoryQueue init_queue(int capacity, int dim, std::uint64_t seed) {
  return MemoryQueue::init(capacity, dim, seed);
}
inline std::vector<int> positives_of(const MemoryQueue& q, ClassLabel label) { return q.positives_of(label); }
inline QueueSnapshot snapshot(const MemoryQueue& q) { return q.snapshot(); }

}  // namespace sscl
