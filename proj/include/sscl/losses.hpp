#pragma once

#include <optional>
#include <vector>

#include "sscl/core.hpp"

namespace sscl {

// One batch worth of contrastive inputs. Positives and negatives are treated
// as constants: every gradient below is with respect to `anchors` only.
struct ContrastiveBatchInput {
  Matrix anchors;                         // B x d', query embeddings
  Matrix positives;                       // B x d', key embeddings of the second view
  Matrix negatives;                       // K x d', queue snapshot
  std::vector<ClassLabel> negative_labels;  // K
  std::vector<ClassLabel> anchor_labels;    // B
  double temperature = 0.2;
  double unit_tolerance = kUnitTolerance;  // finite-difference probes widen this
};

using PositiveSets = std::vector<std::vector<int>>;

struct LossResult {
  double loss = 0.0;
  Matrix grad_anchors;  // B x d'
};

struct CombinedLossResult {
  double loss = 0.0;
  double moco = 0.0;
  std::optional<double> id;  // empty when the ID branch was skipped
  Matrix grad_anchors;
};

// Instance-discrimination loss, batch mean of -log softmax_0 over
// [positive, negatives...] / tau.
LossResult moco_loss(const ContrastiveBatchInput& inp);

// In-distribution positive-aggregation loss. For a labeled anchor i with a
// nonempty P(i), the term is
//   -(1/|P|) * log( sum_{p in P} exp(a.n_p/tau) / (exp(a.z+/tau) + sum_k exp(a.n_k/tau)) )
// with the log applied to the sum. Unlabeled anchors and empty P(i) add 0; the
// reduction is the mean over all B anchors.
LossResult id_loss(const ContrastiveBatchInput& inp, const PositiveSets& positives);

// moco + alpha * w * id. When alpha * w == 0 the ID branch is not evaluated.
CombinedLossResult combined_loss(const ContrastiveBatchInput& inp, const PositiveSets& positives, double alpha,
                                 double w);

// Coefficient schedule: 1 - t/t_end before t_end, 0 afterwards (and 0 for
// t_end = 0). An empty t_end means no schedule: w = 1 for every epoch.
double schedule_w(int epoch, int t_end);
double schedule_w(int epoch, std::optional<int> t_end);

// Per-positive ratios inside the ID-loss log for anchor i, aligned with P.
std::vector<double> positive_ratios(const ContrastiveBatchInput& inp, int anchor, const std::vector<int>& positives);

}  // namespace sscl
