#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sscl/losses.hpp"
#include "support/oracles.hpp"

using namespace sscl;
using sscl::oracle::random_unit_rows;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

// B=1 inputs in 3-D: anchor = positive = e0, negatives orthogonal to e0.
ContrastiveBatchInput two_orthogonal_negatives() {
  ContrastiveBatchInput in;
  in.anchors = rows({{1, 0, 0}});
  in.positives = rows({{1, 0, 0}});
  in.negatives = rows({{0, 1, 0}, {0, 0, 1}});
  in.negative_labels = {kUnlabeled, kUnlabeled};
  in.anchor_labels = {kUnlabeled};
  in.temperature = 1.0;
  return in;
}

// B=1, tau=1: a.p = 1, a.z+ = 1, one orthogonal non-positive key.
ContrastiveBatchInput single_positive_case() {
  ContrastiveBatchInput in;
  in.anchors = rows({{1, 0, 0}});
  in.positives = rows({{1, 0, 0}});
  in.negatives = rows({{1, 0, 0}, {0, 1, 0}});
  in.negative_labels = {ClassLabel(3), kUnlabeled};
  in.anchor_labels = {ClassLabel(3)};
  in.temperature = 1.0;
  return in;
}

struct RandomCase {
  ContrastiveBatchInput input;
  PositiveSets positives;
};

RandomCase random_case(std::mt19937_64& rng, int classes = 3) {
  std::uniform_int_distribution<int> b_dist(1, 4), k_dist(1, 8), d_dist(2, 6), lab(-1, classes - 1);
  std::uniform_real_distribution<double> tau(0.1, 1.0);
  const int B = b_dist(rng), K = k_dist(rng), d = d_dist(rng);
  RandomCase c;
  c.input.anchors = random_unit_rows(rng, B, d);
  c.input.positives = random_unit_rows(rng, B, d);
  c.input.negatives = random_unit_rows(rng, K, d);
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

}  // namespace

TEST(MocoLoss, WorkedValueTwoNegatives) {
  EXPECT_NEAR(moco_loss(two_orthogonal_negatives()).loss, 0.551444713932051, 1e-12);
}

TEST(MocoLoss, NoNegativesIsExactlyZero) {
  auto in = two_orthogonal_negatives();
  in.negatives.resize(0, 3);
  in.negative_labels.clear();
  EXPECT_EQ(moco_loss(in).loss, 0.0);
}

TEST(MocoLoss, WorkedValueAntipodalNegative) {
  ContrastiveBatchInput in;
  in.anchors = rows({{1, 0}});
  in.positives = rows({{1, 0}});
  in.negatives = rows({{-1, 0}});
  in.negative_labels = {kUnlabeled};
  in.anchor_labels = {kUnlabeled};
  in.temperature = 0.2;
  EXPECT_NEAR(moco_loss(in).loss, 4.53988992168646e-05, 1e-15);
}

TEST(MocoLoss, ErrorsOnBadTemperatureAndShapes) {
  auto in = two_orthogonal_negatives();
  in.temperature = 0.0;
  try {
    moco_loss(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  in = two_orthogonal_negatives();
  in.negatives = rows({{0, 1}});
  in.negative_labels = {kUnlabeled};
  try {
    moco_loss(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(MocoLoss, StableForLargeLogits) {
  // |sim| / tau = 1e3 must not overflow.
  ContrastiveBatchInput in;
  in.anchors = rows({{1, 0}});
  in.positives = rows({{0, 1}});
  in.negatives = rows({{1, 0}, {-1, 0}});
  in.negative_labels = {ClassLabel(0), kUnlabeled};
  in.anchor_labels = {ClassLabel(0)};
  in.temperature = 1e-3;
  const auto moco = moco_loss(in);
  EXPECT_TRUE(std::isfinite(moco.loss));
  EXPECT_NEAR(moco.loss, 1000.0, 1e-9);
  EXPECT_TRUE(moco.grad_anchors.allFinite());
  const auto id = id_loss(in, {{0}});
  EXPECT_TRUE(std::isfinite(id.loss));
  EXPECT_TRUE(id.grad_anchors.allFinite());
}

TEST(IdLoss, UnlabeledAnchorContributesZero) {
  auto in = single_positive_case();
  in.anchor_labels = {kUnlabeled};
  const auto r = id_loss(in, {{}});
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad_anchors, Matrix::Zero(1, 3));
}

TEST(IdLoss, EmptyPositiveSetContributesZero) {
  const auto r = id_loss(single_positive_case(), {{}});
  EXPECT_EQ(r.loss, 0.0);
}

TEST(IdLoss, WorkedValueSinglePositive) {
  // P indexes queue keys, so p also sits in the denominator. -log(e/(e+1))
  // is realized with the queue holding only p (a.p = 1) and a.z+ = 0.
  ContrastiveBatchInput in;
  in.anchors = rows({{1, 0, 0}});
  in.positives = rows({{0, 1, 0}});
  in.negatives = rows({{1, 0, 0}});
  in.negative_labels = {ClassLabel(3)};
  in.anchor_labels = {ClassLabel(3)};
  in.temperature = 1.0;
  EXPECT_NEAR(id_loss(in, {{0}}).loss, 0.313261687518223, 1e-12);
}

TEST(IdLoss, LogAppliesToSumOfRatios) {
  // Two positives with ratios r0, r1: the term is -(1/2) log(r0 + r1).
  auto in = single_positive_case();
  in.negative_labels = {ClassLabel(3), ClassLabel(3)};
  const double e = std::exp(1.0);
  const double den = e + e + 1.0;
  EXPECT_NEAR(id_loss(in, {{0, 1}}).loss, -0.5 * std::log((e + 1.0) / den), 1e-12);
}

TEST(IdLoss, ConsistencyErrorOnLabelMismatch) {
  auto in = single_positive_case();
  try {
    id_loss(in, {{1}});  // entry 1 is UNLABELED
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Consistency);
  }
  in.anchor_labels = {kUnlabeled};
  EXPECT_THROW(id_loss(in, {{0}}), Error);
}

TEST(Schedule, LinearDecayThenZero) {
  EXPECT_EQ(schedule_w(0, 200), 1.0);
  EXPECT_EQ(schedule_w(100, 200), 0.5);
  EXPECT_EQ(schedule_w(200, 200), 0.0);
  EXPECT_EQ(schedule_w(999, 200), 0.0);
  EXPECT_EQ(schedule_w(0, 0), 0.0);
  EXPECT_EQ(schedule_w(5, std::optional<int>{}), 1.0);
  try {
    schedule_w(-1, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Domain);
  }
}

TEST(CombinedLoss, ZeroCoefficientEqualsMocoBitwise) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 50; ++t) {
    const auto c = random_case(rng);
    const auto moco = moco_loss(c.input);
    for (auto [alpha, w] : {std::pair{0.0, 1.0}, std::pair{2.0, 0.0}}) {
      const auto comb = combined_loss(c.input, c.positives, alpha, w);
      EXPECT_EQ(comb.loss, moco.loss);
      EXPECT_EQ(comb.grad_anchors, moco.grad_anchors);
      EXPECT_FALSE(comb.id.has_value());
    }
  }
}

TEST(CombinedLoss, WorkedValueFromComponents) {
  const double moco = moco_loss(two_orthogonal_negatives()).loss;
  ContrastiveBatchInput in;
  in.anchors = rows({{1, 0, 0}});
  in.positives = rows({{0, 1, 0}});
  in.negatives = rows({{1, 0, 0}});
  in.negative_labels = {ClassLabel(3)};
  in.anchor_labels = {ClassLabel(3)};
  in.temperature = 1.0;
  const double id = id_loss(in, {{0}}).loss;
  EXPECT_NEAR(moco + 2.0 * 1.0 * id, 1.17796808896850, 1e-12);
}

TEST(CombinedLoss, LinearCombination) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 20; ++t) {
    const auto c = random_case(rng);
    const auto comb = combined_loss(c.input, c.positives, 2.0, 0.75);
    const double expected = moco_loss(c.input).loss + 1.5 * id_loss(c.input, c.positives).loss;
    EXPECT_NEAR(comb.loss, expected, 1e-12);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(23);
  double worst = 0.0;
  for (int t = 0; t < 30; ++t) {
    auto c = random_case(rng);
    c.input.unit_tolerance = 1e-5;
    auto with = [&](const Matrix& a) {
      auto probe = c.input;
      probe.anchors = a;
      return probe;
    };
    const auto check = [&](const Matrix& analytic, const std::function<double(const Matrix&)>& f) {
      const Matrix numeric = sscl::oracle::central_difference(f, c.input.anchors, 1e-6);
      for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, sscl::oracle::relative_error(analytic.data()[i], numeric.data()[i]));
      }
    };
    check(moco_loss(c.input).grad_anchors, [&](const Matrix& a) { return moco_loss(with(a)).loss; });
    check(id_loss(c.input, c.positives).grad_anchors,
          [&](const Matrix& a) { return id_loss(with(a), c.positives).loss; });
    check(combined_loss(c.input, c.positives, 2.0, 0.5).grad_anchors,
          [&](const Matrix& a) { return combined_loss(with(a), c.positives, 2.0, 0.5).loss; });
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Losses, MatchNaiveTranscription) {
  std::mt19937_64 rng(24);
  for (int t = 0; t < 50; ++t) {
    const auto c = random_case(rng);
    EXPECT_NEAR(moco_loss(c.input).loss, sscl::oracle::naive_moco(c.input), 1e-10);
    EXPECT_NEAR(id_loss(c.input, c.positives).loss, sscl::oracle::naive_id(c.input, c.positives), 1e-10);
  }
}

TEST(Losses, MocoNonnegativeAndMonotoneInPositiveSimilarity) {
  std::mt19937_64 rng(25);
  for (int t = 0; t < 100; ++t) {
    auto c = random_case(rng);
    EXPECT_GE(moco_loss(c.input).loss, 0.0);
    // Raise a.z+ by moving z+ toward the anchor; negatives fixed.
    c.input.anchors = c.input.anchors.topRows(1).eval();
    c.input.positives = c.input.positives.topRows(1).eval();
    c.input.anchor_labels.resize(1);
    const Eigen::RowVectorXd a = c.input.anchors.row(0);
    Eigen::RowVectorXd p = c.input.positives.row(0);
    double prev_sim = a.dot(p);
    double prev = moco_loss(c.input).loss;
    for (int s = 1; s <= 4; ++s) {
      p = (p + 0.3 * a).normalized();
      if (a.dot(p) <= prev_sim) continue;
      c.input.positives.row(0) = p;
      const double cur = moco_loss(c.input).loss;
      EXPECT_LT(cur, prev);
      prev = cur;
      prev_sim = a.dot(p);
    }
  }
}

TEST(Losses, AllUnlabeledAnchorsGiveZeroIdLoss) {
  std::mt19937_64 rng(26);
  for (int t = 0; t < 50; ++t) {
    auto c = random_case(rng);
    for (auto& l : c.input.anchor_labels) l = kUnlabeled;
    PositiveSets empty(c.input.anchor_labels.size());
    EXPECT_EQ(id_loss(c.input, empty).loss, 0.0);
  }
}

TEST(Losses, NegativePermutationInvariance) {
  std::mt19937_64 rng(27);
  for (int t = 0; t < 100; ++t) {
    const auto c = random_case(rng);
    const auto K = c.input.negatives.rows();
    std::vector<int> perm(static_cast<std::size_t>(K));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto shuffled = c.input;
    std::vector<int> where(perm.size());
    for (Eigen::Index k = 0; k < K; ++k) {
      shuffled.negatives.row(k) = c.input.negatives.row(perm[static_cast<std::size_t>(k)]);
      shuffled.negative_labels[static_cast<std::size_t>(k)] = c.input.negative_labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
      where[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = static_cast<int>(k);
    }
    PositiveSets P2 = c.positives;
    for (auto& set : P2)
      for (int& p : set) p = where[static_cast<std::size_t>(p)];
    EXPECT_NEAR(moco_loss(c.input).loss, moco_loss(shuffled).loss, 1e-12);
    EXPECT_NEAR(id_loss(c.input, c.positives).loss, id_loss(shuffled, P2).loss, 1e-12);
  }
}

TEST(Losses, PositiveRatioArgmaxIsTemperatureInvariant) {
  std::mt19937_64 rng(28);
  for (int t = 0; t < 100; ++t) {
    auto c = random_case(rng, 1);
    for (std::size_t i = 0; i < c.positives.size(); ++i) {
      if (c.positives[i].size() < 2) continue;
      std::vector<std::size_t> winners;
      for (double tau : {0.05, 0.2, 1.0, 5.0}) {
        c.input.temperature = tau;
        const auto r = positive_ratios(c.input, static_cast<int>(i), c.positives[i]);
        winners.push_back(static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()));
      }
      EXPECT_TRUE(std::all_of(winners.begin(), winners.end(), [&](auto w) { return w == winners.front(); }));
    }
  }
}
