#include "sscl/losses.hpp"

#include <algorithm>
#include <cmath>

namespace sscl {
namespace {

constexpr double kLogFloor = 1e-300;

void validate(const ContrastiveBatchInput& inp) {
  require(inp.temperature > 0.0, ErrorKind::Config, "temperature must be positive");
  require(inp.anchors.rows() == inp.positives.rows(), ErrorKind::Shape, "anchors and positives differ in row count");
  require(inp.anchors.cols() == inp.positives.cols(), ErrorKind::Shape, "anchors and positives differ in dimension");
  require(inp.negatives.rows() == 0 || inp.negatives.cols() == inp.anchors.cols(), ErrorKind::Shape,
          "negatives differ in dimension");
  require(static_cast<std::size_t>(inp.negatives.rows()) == inp.negative_labels.size(), ErrorKind::Shape,
          "negative label count differs from negatives");
  require(inp.anchor_labels.empty() || inp.anchor_labels.size() == static_cast<std::size_t>(inp.anchors.rows()),
          ErrorKind::Shape, "anchor label count differs from anchors");
  check_unit_rows(inp.anchors, ErrorKind::Normalization, "anchors", inp.unit_tolerance);
  check_unit_rows(inp.positives, ErrorKind::Normalization, "positives", inp.unit_tolerance);
  check_unit_rows(inp.negatives, ErrorKind::Normalization, "negatives", inp.unit_tolerance);
}

// Shared per-anchor softmax over [positive, negatives]: logits are shifted by
// the per-anchor maximum before exponentiation.
struct AnchorSoftmax {
  double shift = 0.0;
  double log_den = 0.0;      // log of the full denominator, unshifted
  double p_positive = 0.0;   // softmax weight of the positive logit
  Vector p_negatives;        // softmax weights of the negatives
};

AnchorSoftmax anchor_softmax(double pos_logit, const Eigen::Ref<const Vector>& neg_logits) {
  AnchorSoftmax s;
  s.shift = neg_logits.size() > 0 ? std::max(pos_logit, neg_logits.maxCoeff()) : pos_logit;
  const double e0 = std::exp(pos_logit - s.shift);
  Vector en = (neg_logits.array() - s.shift).exp().matrix();
  const double den = std::max(e0 + en.sum(), kLogFloor);
  s.log_den = s.shift + std::log(den);
  s.p_positive = e0 / den;
  s.p_negatives = en / den;
  return s;
}

}  // namespace

LossResult moco_loss(const ContrastiveBatchInput& inp) {
  validate(inp);
  const Eigen::Index B = inp.anchors.rows();
  const double tau = inp.temperature;
  LossResult out;
  out.grad_anchors = Matrix::Zero(B, inp.anchors.cols());
  if (B == 0) return out;

  const Matrix neg_logits = (inp.anchors * inp.negatives.transpose()) / tau;
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const double pos_logit = inp.anchors.row(i).dot(inp.positives.row(i)) / tau;
    const Vector row = neg_logits.row(i).transpose();
    const AnchorSoftmax s = anchor_softmax(pos_logit, row);
    total += s.log_den - pos_logit;
    auto g = out.grad_anchors.row(i);
    g = (s.p_positive - 1.0) * inp.positives.row(i);
    if (inp.negatives.rows() > 0) g += s.p_negatives.transpose() * inp.negatives;
    g /= tau * static_cast<double>(B);
  }
  // The log of a softmax probability is never positive; clamp rounding noise.
  out.loss = std::max(0.0, total / static_cast<double>(B));
  return out;
}

LossResult id_loss(const ContrastiveBatchInput& inp, const PositiveSets& positives) {
  validate(inp);
  const Eigen::Index B = inp.anchors.rows();
  const Eigen::Index K = inp.negatives.rows();
  require(positives.size() == static_cast<std::size_t>(B), ErrorKind::Shape, "one positive set per anchor required");
  require(inp.anchor_labels.size() == static_cast<std::size_t>(B), ErrorKind::Shape, "anchor labels required");
  const double tau = inp.temperature;

  LossResult out;
  out.grad_anchors = Matrix::Zero(B, inp.anchors.cols());
  if (B == 0) return out;

  Matrix neg_logits;
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& P = positives[static_cast<std::size_t>(i)];
    const ClassLabel label = inp.anchor_labels[static_cast<std::size_t>(i)];
    for (int p : P) {
      if (p < 0 || p >= K) fail(ErrorKind::Consistency, "positive index out of queue range");
      if (!label.is_labeled() || inp.negative_labels[static_cast<std::size_t>(p)] != label) {
        fail(ErrorKind::Consistency, "positive set entry " + std::to_string(p) + " does not share anchor " +
                                         std::to_string(i) + "'s label");
      }
    }
    if (!label.is_labeled() || P.empty()) continue;
    if (neg_logits.size() == 0) neg_logits = (inp.anchors * inp.negatives.transpose()) / tau;

    const double pos_logit = inp.anchors.row(i).dot(inp.positives.row(i)) / tau;
    const Vector row = neg_logits.row(i).transpose();
    const AnchorSoftmax s = anchor_softmax(pos_logit, row);

    double p_shift = row(P.front());
    for (int p : P) p_shift = std::max(p_shift, row(p));
    Vector r(static_cast<Eigen::Index>(P.size()));
    for (std::size_t j = 0; j < P.size(); ++j) r(static_cast<Eigen::Index>(j)) = std::exp(row(P[j]) - p_shift);
    const double num = std::max(r.sum(), kLogFloor);
    r /= num;
    const double log_num = p_shift + std::log(num);
    const double inv_p = 1.0 / static_cast<double>(P.size());
    total += -inv_p * (log_num - s.log_den);

    // d/da of log_num - log_den, then scaled by -(1/|P|) / (tau * B).
    Eigen::RowVectorXd g = -s.p_positive * inp.positives.row(i) - s.p_negatives.transpose() * inp.negatives;
    for (std::size_t j = 0; j < P.size(); ++j) g += r(static_cast<Eigen::Index>(j)) * inp.negatives.row(P[j]);
    out.grad_anchors.row(i) = -inv_p * g / (tau * static_cast<double>(B));
  }
  out.loss = total / static_cast<double>(B);
  return out;
}

CombinedLossResult combined_loss(const ContrastiveBatchInput& inp, const PositiveSets& positives, double alpha,
                                 double w) {
  require(alpha >= 0.0, ErrorKind::Config, "alpha must be nonnegative");
  require(w >= 0.0 && w <= 1.0, ErrorKind::Domain, "schedule weight must lie in [0,1]");
  LossResult moco = moco_loss(inp);
  CombinedLossResult out;
  out.moco = moco.loss;
  out.loss = moco.loss;
  out.grad_anchors = std::move(moco.grad_anchors);
  const double coef = alpha * w;
  if (coef == 0.0) return out;
  LossResult id = id_loss(inp, positives);
  out.id = id.loss;
  out.loss += coef * id.loss;
  out.grad_anchors += coef * id.grad_anchors;
  return out;
}

double schedule_w(int epoch, int t_end) {
  require(epoch >= 0, ErrorKind::Domain, "epoch must be nonnegative");
  require(t_end >= 0, ErrorKind::Domain, "t_end must be nonnegative");
  if (epoch >= t_end) return 0.0;
  return 1.0 - static_cast<double>(epoch) / static_cast<double>(t_end);
}

double schedule_w(int epoch, std::optional<int> t_end) {
  require(epoch >= 0, ErrorKind::Domain, "epoch must be nonnegative");
  return t_end ? schedule_w(epoch, *t_end) : 1.0;
}

std::vector<double> positive_ratios(const ContrastiveBatchInput& inp, int anchor, const std::vector<int>& positives) {
  validate(inp);
  require(anchor >= 0 && anchor < inp.anchors.rows(), ErrorKind::Shape, "anchor index out of range");
  const double tau = inp.temperature;
  const Vector row = (inp.negatives * inp.anchors.row(anchor).transpose()) / tau;
  const double pos_logit = inp.anchors.row(anchor).dot(inp.positives.row(anchor)) / tau;
  const AnchorSoftmax s = anchor_softmax(pos_logit, row);
  std::vector<double> out;
  out.reserve(positives.size());
  for (int p : positives) {
    require(p >= 0 && p < inp.negatives.rows(), ErrorKind::Consistency, "positive index out of queue range");
    out.push_back(std::exp(row(p) - s.log_den));
  }
  return out;
}

}  // namespace sscl
