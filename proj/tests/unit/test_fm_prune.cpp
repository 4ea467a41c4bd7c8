#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "lightpeft/errors.hpp"
#include "lightpeft/fm_prune.hpp"
#include "lightpeft/ops.hpp"
#include "lightpeft/optimizer.hpp"

using namespace lightpeft;

namespace {

MaskSet masks_from(std::vector<std::vector<double>> heads, std::vector<std::vector<double>> ffn,
                   bool requires_grad = false) {
  MaskSet m;
  for (auto& h : heads) m.head.push_back(Tensor::from({h.size()}, h, requires_grad));
  for (auto& f : ffn) m.ffn.push_back(Tensor::from({f.size()}, f, requires_grad));
  return m;
}

}  // namespace

TEST(MaskSet, OnesMatchLayoutAndCount) {
  FoundationModel model = FoundationModel::init(lptest::tiny_config(2, 8, 2, 12), 1);
  MaskSet m = MaskSet::ones(model);
  ASSERT_EQ(m.head.size(), 2u);
  EXPECT_EQ(m.head[0].numel(), 2u);
  EXPECT_EQ(m.ffn[1].numel(), 12u);
  EXPECT_EQ(m.count(), 28u);
  for (const Tensor& t : m.parameters()) {
    EXPECT_TRUE(t.requires_grad());
    for (double v : t.data()) EXPECT_EQ(v, 1.0);
  }
}

TEST(MaskLoss, ZeroPenaltyReturnsTaskLoss) {
  MaskSet m = masks_from({{0.3, -2.0}}, {{1.5}});
  Tensor task = Tensor::scalar(0.731);
  EXPECT_EQ(mask_loss(task, m, {0.0, 0.0}).item(), 0.731);
}

TEST(MaskLoss, InitialPenaltyForToyShape) {
  ModelConfig cfg = lptest::tiny_config(2, 8, 4, 64);
  FoundationModel model = FoundationModel::init(cfg, 1);
  MaskSet m = MaskSet::ones(model);
  const double loss = mask_loss(Tensor::scalar(0.0), m, {1e-4, 1e-4}).item();
  EXPECT_NEAR(loss, 1e-4 * (8 + 128), 1e-15);
  EXPECT_NEAR(loss, 0.0136, 1e-15);
}

TEST(MaskLoss, PenaltySubgradient) {
  MaskSet m = masks_from({{0.5, -0.5, 0.0}}, {{-0.5, 0.5, 0.0}}, true);
  backward(mask_loss(Tensor::scalar(0.0), m, {1e-4, 3e-4}));
  EXPECT_EQ(std::vector<double>(m.head[0].grad().begin(), m.head[0].grad().end()),
            (std::vector<double>{1e-4, -1e-4, 0.0}));
  EXPECT_EQ(std::vector<double>(m.ffn[0].grad().begin(), m.ffn[0].grad().end()),
            (std::vector<double>{-3e-4, 3e-4, 0.0}));
}

TEST(MaskLoss, NegativeLambdaIsContractError) {
  MaskSet m = masks_from({{1.0}}, {{1.0}});
  EXPECT_THROW(mask_loss(Tensor::scalar(0.0), m, {-1.0, 0.0}), ContractError);
}

TEST(MaskLoss, PurePenaltyShrinksMagnitudesMonotonically) {
  Rng rng(2);
  // Dyadic values and step sizes keep every update exact, so a mask that
  // reaches zero stays there under the zero subgradient.
  std::vector<std::vector<double>> heads(3), ffn(3);
  for (auto* group : {&heads, &ffn}) {
    for (auto& layer : *group) {
      for (int i = 0; i < 6; ++i) layer.push_back((static_cast<int>(rng.below(17)) - 8) * 0.125);
    }
  }
  MaskSet m = masks_from(heads, ffn, true);
  Sgd sgd(m.parameters());
  std::vector<double> prev;
  for (const Tensor& t : m.parameters()) prev.insert(prev.end(), t.data().begin(), t.data().end());
  for (int step = 0; step < 20; ++step) {
    sgd.clear_grads();
    backward(mask_loss(Tensor::scalar(0.0), m, {0.5, 0.25}));
    sgd.step(0.25);
    std::size_t k = 0;
    for (const Tensor& t : m.parameters()) {
      for (double v : t.data()) {
        EXPECT_LE(std::abs(v), std::abs(prev[k])) << "step " << step;
        prev[k++] = v;
      }
    }
  }
  for (double v : prev) EXPECT_EQ(v, 0.0);
}

TEST(MaskLoss, ShrinkageFromInitWithSmallLambda) {
  MaskSet m = masks_from({{1.0, 1.0}}, {{1.0, 1.0, 1.0}}, true);
  Sgd sgd(m.parameters());
  double prev = 1.0;
  for (int step = 0; step < 50; ++step) {
    sgd.clear_grads();
    backward(mask_loss(Tensor::scalar(0.0), m, {1e-4, 1e-4}));
    sgd.step(10.0);
    const double now = std::abs(m.ffn[0].at(2));
    EXPECT_LT(now, prev);
    prev = now;
  }
  EXPECT_NEAR(prev, 1.0 - 50 * 1e-3, 1e-12);
}

TEST(DropCount, FloorsWithTolerance) {
  EXPECT_EQ(drop_count(0.0, 16), 0u);
  EXPECT_EQ(drop_count(5.0 / 16.0, 16), 5u);
  EXPECT_EQ(drop_count(1.0 / 3.0, 98304), 32768u);
  EXPECT_EQ(drop_count(0.75, 192), 144u);
  EXPECT_EQ(drop_count(0.5, 7), 3u);
  EXPECT_THROW(drop_count(1.0, 4), ContractError);
  EXPECT_THROW(drop_count(-0.1, 4), ContractError);
}

TEST(SelectHeads, ZeroRateKeepsAll) {
  MaskSet m = masks_from({{0.1, 0.2}, {-1.0, 0.0}}, {{1}, {1}});
  Selection s = select_heads(m, 0.0);
  EXPECT_EQ(s.keep, (std::vector<std::vector<std::size_t>>{{0, 1}, {0, 1}}));
}

TEST(SelectHeads, HandExample) {
  MaskSet m = masks_from({{0.9, 0.1, 0.5, 0.3}}, {{1}});
  EXPECT_EQ(select_heads(m, 0.5).keep[0], (std::vector<std::size_t>{0, 2}));
}

TEST(SelectHeads, UsesMagnitudeAndBreaksTiesByLowerIndex) {
  MaskSet m = masks_from({{-0.9, 0.2, 0.2, 0.1}}, {{1}});
  EXPECT_EQ(select_heads(m, 0.5).keep[0], (std::vector<std::size_t>{0, 2}));
}

TEST(SelectHeads, SixteenHeadsAtFiveSixteenths) {
  Rng rng(3);
  MaskSet m;
  for (int l = 0; l < 4; ++l) {
    m.head.push_back(lptest::random_tensor({16}, rng, false));
    m.ffn.push_back(Tensor::full({2}, 1.0));
  }
  Selection s = select_heads(m, 5.0 / 16.0);
  std::size_t total = 0;
  for (const auto& k : s.keep) {
    EXPECT_EQ(k.size(), 11u);
    total += k.size();
  }
  EXPECT_EQ(total, 4u * (16 - 5));
}

TEST(SelectHeads, RatesBelowOneNeverEmptyALayer) {
  MaskSet m = masks_from({{0.5}, {0.1, 0.2}}, {{1}, {1}});
  Selection s = select_heads(m, 0.99);
  EXPECT_EQ(s.keep[0], (std::vector<std::size_t>{0}));
  EXPECT_EQ(s.keep[1], (std::vector<std::size_t>{1}));
  EXPECT_THROW(select_heads(m, 1.0), ContractError);
}

TEST(SelectHeads, InvariantUnderPositiveRescaling) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    MaskSet m;
    for (int l = 0; l < 3; ++l) {
      m.head.push_back(lptest::random_tensor({8}, rng, false));
      m.ffn.push_back(Tensor::full({1}, 1.0));
    }
    MaskSet scaled = m.clone();
    for (Tensor& t : scaled.head) {
      const double c = rng.uniform(0.01, 100.0);
      for (double& v : t.mutable_data()) v *= c;
    }
    EXPECT_EQ(select_heads(m, 0.375).keep, select_heads(scaled, 0.375).keep);
  }
}

TEST(SelectFfn, ZeroRateKeepsAll) {
  MaskSet m = masks_from({{1}, {1}}, {{0.3, 0.1}, {0.0}});
  EXPECT_EQ(select_ffn_dims(m, 0.0).keep, (std::vector<std::vector<std::size_t>>{{0, 1}, {0}}));
}

TEST(SelectFfn, GlobalHandExample) {
  MaskSet m = masks_from({{1}, {1}}, {{0.9, 0.1}, {0.2, 0.8}});
  Selection s = select_ffn_dims(m, 0.5);
  EXPECT_EQ(s.keep, (std::vector<std::vector<std::size_t>>{{0}, {1}}));
  EXPECT_TRUE(s.warnings.empty());
}

TEST(SelectFfn, PerLayerCountsMayDiffer) {
  MaskSet m = masks_from({{1}, {1}}, {{0.9, 0.8, 0.7}, {0.1, 0.2, 0.95}});
  Selection s = select_ffn_dims(m, 0.5);
  EXPECT_EQ(s.keep, (std::vector<std::vector<std::size_t>>{{0, 1}, {2}}));
}

TEST(SelectFfn, TiesBrokenByLayerThenDim) {
  MaskSet m = masks_from({{1}, {1}}, {{0.5, 0.5}, {0.5, -0.5}});
  Selection half = select_ffn_dims(m, 0.5);
  EXPECT_EQ(half.keep, (std::vector<std::vector<std::size_t>>{{0}, {0, 1}}));
  EXPECT_EQ(half.warnings.size(), 1u);
  Selection s = select_ffn_dims(m, 0.25);
  EXPECT_EQ(s.keep, (std::vector<std::vector<std::size_t>>{{1}, {0, 1}}));
}

TEST(SelectFfn, ForcedKeepIsReported) {
  MaskSet m = masks_from({{1}, {1}}, {{0.01, 0.03, 0.02}, {0.9, 0.8, 0.7}});
  Selection s = select_ffn_dims(m, 0.5);
  // three smallest overall all sit in layer 0; its largest survives
  EXPECT_EQ(s.keep[0], (std::vector<std::size_t>{1}));
  EXPECT_EQ(s.keep[1], (std::vector<std::size_t>{0, 1, 2}));
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("layer 0"), std::string::npos);
}

TEST(SelectFfn, OneThirdOfLargeShape) {
  Rng rng(5);
  MaskSet m;
  for (int l = 0; l < 24; ++l) {
    m.head.push_back(Tensor::full({16}, 1.0));
    m.ffn.push_back(lptest::random_tensor({4096}, rng, false));
  }
  Selection s = select_ffn_dims(m, 1.0 / 3.0);
  std::size_t kept = 0;
  for (const auto& k : s.keep) kept += k.size();
  EXPECT_EQ(98304u - kept, 32768u);
  EXPECT_EQ(kept, 65536u);
  EXPECT_TRUE(s.warnings.empty());
}

TEST(SelectFfn, KeepCountProperty) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    MaskSet m;
    std::size_t total = 0;
    const std::size_t layers = 1 + rng.below(4);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t n = 1 + rng.below(20);
      total += n;
      m.head.push_back(Tensor::full({1}, 1.0));
      m.ffn.push_back(lptest::random_tensor({n}, rng, false));
    }
    const double rate = rng.uniform(0.0, 0.95);
    Selection s = select_ffn_dims(m, rate);
    std::size_t kept = 0;
    for (const auto& k : s.keep) {
      EXPECT_FALSE(k.empty());
      kept += k.size();
    }
    EXPECT_EQ(kept, total - drop_count(rate, total) + s.warnings.size());
  }
}
