#include <gtest/gtest.h>

#include "icps/objective.hpp"
#include "test_support.hpp"

using namespace icps;
using namespace icps::testing;

namespace {

Tensor<double> random_mask(Shape s, Rng& rng, double p = 0.3) {
  Tensor<double> m(s);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? 1.0 : 0.0;
  return m;
}

// Sliding window over in-bounds pixels, no integral image.
double weight_oracle(const Tensor<double>& gt, Index n, Index y, Index x, Index k, double gain) {
  const Index r = k / 2;
  double s = 0.0;
  int count = 0;
  for (Index yy = y - r; yy <= y + r; ++yy)
    for (Index xx = x - r; xx <= x + r; ++xx)
      if (yy >= 0 && yy < gt.h() && xx >= 0 && xx < gt.w()) {
        s += gt(n, 0, yy, xx);
        ++count;
      }
  return 1.0 + gain * std::abs(s / count - gt(n, 0, y, x));
}

// Straight scalar loops over one head.
double head_loss_oracle(const Tensor<double>& p, const Tensor<double>& gt, const LossConfig& cfg) {
  double total = 0.0;
  for (Index n = 0; n < gt.n(); ++n) {
    double wsum = 0, bce = 0, inter = 0, uni = 0;
    for (Index y = 0; y < gt.h(); ++y)
      for (Index x = 0; x < gt.w(); ++x) {
        const double w = weight_oracle(gt, n, y, x, cfg.weight_kernel, cfg.weight_gain);
        const double pi = p(n, 0, y, x), g = gt(n, 0, y, x);
        wsum += w;
        bce += w * -(g * std::log(pi) + (1 - g) * std::log(1 - pi));
        inter += w * pi * g;
        uni += w * (pi + g);
      }
    double l = 0.0;
    if (cfg.weighted_bce) l += bce / wsum;
    if (cfg.weighted_iou) l += 1.0 - (inter + 1.0) / (uni - inter + 1.0);
    total += l / static_cast<double>(gt.n());
  }
  return total;
}

PredictionSet<double> heads_from_logits(const std::vector<Tensor<double>>& logits) {
  PredictionSet<double> ps;
  for (std::size_t i = 0; i < logits.size(); ++i)
    ps.heads.push_back({"p" + std::to_string(5 - i), logits[i], sigmoid(logits[i])});
  return ps;
}

}  // namespace

TEST(PixelWeights, MatchSlidingWindowOracleIncludingBorders) {
  Rng rng(1);
  const Tensor<double> gt = random_mask({2, 1, 13, 17}, rng);
  for (Index k : {1, 3, 7, 31}) {
    LossConfig cfg;
    cfg.weight_kernel = k;
    const Tensor<double> w = pixel_weights(gt, cfg);
    for (Index n = 0; n < 2; ++n)
      for (Index y = 0; y < 13; ++y)
        for (Index x = 0; x < 17; ++x) ASSERT_NEAR(w(n, 0, y, x), weight_oracle(gt, n, y, x, k, 5.0), 1e-12) << k;
  }
}

TEST(PixelWeights, UniformMaskGivesUnitWeightsAndKernelOneToo) {
  LossConfig cfg;
  const Tensor<double> ones = Tensor<double>::constant({1, 1, 8, 8}, 1.0);
  EXPECT_EQ(pixel_weights(ones, cfg).vec().maxCoeff(), 1.0);
  Rng rng(2);
  cfg.weight_kernel = 1;
  EXPECT_EQ(pixel_weights(random_mask({1, 1, 8, 8}, rng), cfg).vec().maxCoeff(), 1.0);
}

TEST(PixelWeights, RejectNonBinaryMasksAndEvenKernels) {
  LossConfig cfg;
  Tensor<double> gt(1, 1, 4, 4);
  gt.data()[3] = 0.5;
  EXPECT_THROW(pixel_weights(gt, cfg), ContractViolation);
  cfg.weight_kernel = 4;
  EXPECT_THROW(pixel_weights(Tensor<double>(1, 1, 4, 4), cfg), ContractViolation);
}

TEST(Loss, MatchesScalarLoopOracle) {
  Rng rng(3);
  const Tensor<double> gt = random_mask({2, 1, 12, 12}, rng);
  std::vector<Tensor<double>> logits;
  for (int i = 0; i < 5; ++i) logits.push_back(random_tensor<double>(gt.shape(), rng, -3, 3));
  const PredictionSet<double> ps = heads_from_logits(logits);
  for (auto [bce, iou] : std::vector<std::pair<bool, bool>>{{true, true}, {true, false}, {false, true}}) {
    LossConfig cfg;
    cfg.weight_kernel = 5;
    cfg.weighted_bce = bce;
    cfg.weighted_iou = iou;
    cfg.supervision_weights["p3"] = 0.5;
    const LossResult<double> res = deep_supervised_loss(ps, gt, cfg);
    double expect = 0.0;
    for (const auto& h : ps.heads) {
      const double l = head_loss_oracle(h.prob, gt, cfg);
      EXPECT_NEAR(res.breakdown().at(h.name), l, 1e-12);
      expect += cfg.supervision_weight(h.name) * l;
    }
    EXPECT_NEAR(res.total, expect, 1e-12);
  }
}

TEST(Loss, PerfectPredictionHasZeroIouLossAndSmallBce) {
  Rng rng(4);
  const Tensor<double> gt = random_mask({1, 1, 10, 10}, rng);
  Tensor<double> logit(gt.shape());
  for (Index i = 0; i < gt.size(); ++i) logit.data()[i] = gt.data()[i] > 0 ? 40.0 : -40.0;
  const auto res = deep_supervised_loss(heads_from_logits({logit}), gt, LossConfig{});
  EXPECT_NEAR(res.heads[0].iou, 0.0, 1e-12);
  EXPECT_LT(res.heads[0].bce, 1e-6);
}

TEST(Loss, LogitAndProbabilityGradientsMatchFiniteDifferences) {
  Rng rng(5);
  const Tensor<double> gt = random_mask({2, 1, 9, 9}, rng);
  std::vector<Tensor<double>> logits{random_tensor<double>(gt.shape(), rng, -2, 2),
                                     random_tensor<double>(gt.shape(), rng, -2, 2)};
  LossConfig cfg;
  cfg.weight_kernel = 3;
  cfg.supervision_weights["p4"] = 0.7;
  const LossResult<double> res = deep_supervised_loss(heads_from_logits(logits), gt, cfg);
  std::vector<GradTarget> targets;
  for (std::size_t i = 0; i < logits.size(); ++i) targets.push_back({"logits" + std::to_string(i), &logits[i], &res.heads[i].d_logits});
  const auto by_logit = grad_check(targets, [&] { return deep_supervised_loss(heads_from_logits(logits), gt, cfg, false).total; }, 1e-6, 200);
  EXPECT_LT(by_logit.max_rel_error, 1e-6) << by_logit.worst;

  // probability-only head (no logits)
  PredictionSet<double> ps;
  ps.heads.push_back({"p2", Tensor<double>(), sigmoid(logits[0])});
  Tensor<double> prob = ps.heads[0].prob;
  const auto r2 = deep_supervised_loss(ps, gt, cfg);
  EXPECT_TRUE(r2.heads[0].d_logits.empty());
  const auto eval = [&] {
    PredictionSet<double> q;
    q.heads.push_back({"p2", Tensor<double>(), prob});
    return deep_supervised_loss(q, gt, cfg, false).total;
  };
  const auto by_prob = grad_check({{"prob", &prob, &r2.heads[0].d_prob}}, eval, 1e-7, 200);
  EXPECT_LT(by_prob.max_rel_error, 1e-5) << by_prob.worst;
}

TEST(Loss, ShapeMismatchNamesTheHead) {
  const Tensor<double> gt(1, 1, 8, 8);
  PredictionSet<double> ps = heads_from_logits({Tensor<double>(1, 1, 4, 4)});
  try {
    deep_supervised_loss(ps, gt, LossConfig{});
    FAIL();
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("p5"), std::string::npos);
  }
}
