#include <gtest/gtest.h>

#include <cmath>

#include "mcam/losses.hpp"
#include "mcam/ops.hpp"
#include "support/gradcheck.hpp"

using namespace mcam;

namespace {

Tensor<double> px(double v) { return Tensor<double>(Shape{1, 1, 1, 1}, v); }

double eval_boundary(double p, double b) {
  Tape<double> t;
  return t.value(loss_boundary(t, t.constant(px(p)), px(b), LossConfig{}))[0];
}

double eval_occ(double p, double o, double b, const LossConfig& cfg = {}) {
  Tape<double> t;
  return t.value(loss_occlusion(t, t.constant(px(p)), px(o), px(b), cfg))[0];
}

Tensor<double> binary(const Shape& s, Rng& rng, double rate) {
  Tensor<double> t(s);
  for (double& v : t.data()) v = rng.bernoulli(rate) ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST(Losses, SinglePixelPointValues) {
  EXPECT_NEAR(eval_boundary(std::exp(-1.0), 1.0), 10.0, 1e-9);
  EXPECT_NEAR(eval_boundary(0.5, 0.0), std::log(2.0), 1e-9);
  EXPECT_NEAR(eval_occ(0.5, 0.0, 0.0), std::log(2.0), 1e-9);
  EXPECT_NEAR(eval_occ(0.5, 0.0, 1.0), 10.0 * std::log(2.0), 1e-9);
}

TEST(Losses, PerfectPredictionIsZero) {
  Rng rng(1);
  const Shape s{2, 1, 8, 8};
  Tensor<double> y = binary(s, rng, 0.3), b = binary(s, rng, 0.3);
  Tape<double> t;
  Var p = t.constant(y);
  EXPECT_LE(t.value(loss_boundary(t, p, y, LossConfig{}))[0], 1e-11);
  EXPECT_LE(t.value(loss_occlusion(t, p, y, b, LossConfig{}))[0], 1e-11);
  Tensor<double> ones(s, 1.0);
  EXPECT_LE(t.value(loss_segmentation(t, t.constant(ones), ones, b, LossConfig{}))[0], 1e-11);
}

TEST(Losses, OcclusionAndSegmentationShareFormula) {
  Rng rng(2);
  const Shape s{2, 1, 6, 5};
  Tensor<double> pred = oracle::random_tensor(s, rng, 0.01, 0.99);
  Tensor<double> y = binary(s, rng, 0.4), b = binary(s, rng, 0.2);
  Tape<double> t;
  Var p = t.constant(pred);
  EXPECT_EQ(t.value(loss_occlusion(t, p, y, b, LossConfig{}))[0], t.value(loss_segmentation(t, p, y, b, LossConfig{}))[0]);
}

TEST(Losses, UnitAlphaFullGateReducesToPlainCrossEntropy) {
  Rng rng(3);
  LossConfig cfg;
  cfg.alpha = 1.0;
  for (int c = 0; c < 10; ++c) {
    const Shape s{1, 1, 7, 7};
    Tensor<double> pred = oracle::random_tensor(s, rng, 0.001, 0.999);
    Tensor<double> o = binary(s, rng, 0.5);
    Tensor<double> ones(s, 1.0);
    Tensor<double> flipped_pred(s), flipped_o(s);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      flipped_pred[i] = 1.0 - pred[i];
      flipped_o[i] = 1.0 - o[i];
    }
    Tape<double> t;
    const double occ = t.value(loss_occlusion(t, t.constant(pred), o, ones, cfg))[0];
    const double bnd = t.value(loss_boundary(t, t.constant(pred), o, cfg))[0];
    const double swapped = t.value(loss_boundary(t, t.constant(flipped_pred), flipped_o, cfg))[0];
    EXPECT_NEAR(occ, bnd, 1e-12);
    EXPECT_NEAR(occ, swapped, 1e-12);
  }
}

TEST(Losses, BatchPermutationInvariant) {
  Rng rng(4);
  const Shape s{3, 1, 4, 4};
  Tensor<double> pred = oracle::random_tensor(s, rng, 0.01, 0.99);
  Tensor<double> y = binary(s, rng, 0.3), b = binary(s, rng, 0.3);
  auto permute = [](const Tensor<double>& x) {
    Tensor<double> out(x.shape());
    const std::size_t plane = 16;
    const std::size_t order[3] = {2, 0, 1};
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < plane; ++k) out[n * plane + k] = x[order[n] * plane + k];
    return out;
  };
  Tape<double> t;
  const double a = t.value(loss_segmentation(t, t.constant(pred), y, b, LossConfig{}))[0];
  const double c = t.value(loss_segmentation(t, t.constant(permute(pred)), permute(y), permute(b), LossConfig{}))[0];
  EXPECT_NEAR(a, c, 1e-12);
  EXPECT_GE(a, 0.0);
}

TEST(Losses, Errors) {
  Tape<double> t;
  Var p = t.constant(Tensor<double>(Shape{1, 1, 2, 2}, 0.5));
  EXPECT_THROW(loss_boundary(t, p, Tensor<double>(Shape{1, 1, 2, 3}), LossConfig{}), std::invalid_argument);
  EXPECT_THROW(loss_occlusion(t, p, Tensor<double>(Shape{1, 1, 2, 2}), Tensor<double>(Shape{1, 1, 1, 2}), LossConfig{}),
               std::invalid_argument);
  Var bad = t.constant(Tensor<double>(Shape{1, 1, 2, 2}, 1.5));
  EXPECT_THROW(loss_boundary(t, bad, Tensor<double>(Shape{1, 1, 2, 2}), LossConfig{}), std::invalid_argument);
  LossConfig neg;
  neg.alpha = -1;
  EXPECT_THROW(loss_boundary(t, p, Tensor<double>(Shape{1, 1, 2, 2}), neg), std::invalid_argument);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  for (int c = 0; c < 20; ++c) {
    const Shape s{static_cast<std::size_t>(rng.uniform_int(1, 2)), 1, 5, 6};
    Tensor<double> y = binary(s, rng, 0.4), b = binary(s, rng, 0.3);
    std::vector<Tensor<double>> in{oracle::random_tensor(s, rng, 0.05, 0.95)};
    const int which = c % 3;
    auto rep = oracle::check_gradients(in, [&](Tape<double>& t, const std::vector<Var>& v) {
      if (which == 0) return loss_boundary(t, v[0], y, LossConfig{});
      if (which == 1) return loss_occlusion(t, v[0], y, b, LossConfig{});
      return loss_segmentation(t, v[0], y, b, LossConfig{});
    }, 50 + c);
    EXPECT_LT(rep.max_rel_err, 1e-4) << "case " << c;
  }
}

TEST(TotalLoss, SumsHeadsWithWeights) {
  Rng rng(6);
  const Shape s{1, 1, 6, 6};
  Tensor<double> b = binary(s, rng, 0.3), o = binary(s, rng, 0.2), y = binary(s, rng, 0.5);
  Tensor<double> p1 = oracle::random_tensor(s, rng, 0.1, 0.9), p2 = oracle::random_tensor(s, rng, 0.1, 0.9);
  Tensor<double> p3 = oracle::random_tensor(s, rng, 0.1, 0.9), p4 = oracle::random_tensor(s, rng, 0.1, 0.9);
  Tape<double> t;
  std::vector<HeadOutput> heads{{"boundary", HeadKind::boundary, t.constant(p1)},
                                {"occlusion", HeadKind::occlusion, t.constant(p2)},
                                {"segmentation_d4", HeadKind::segmentation, t.constant(p3)},
                                {"segmentation", HeadKind::segmentation, t.constant(p4)}};
  TargetMaps<double> gt{&b, &o, &y};
  LossTerms terms = total_loss(t, heads, gt, LossConfig{});
  double expect = 0;
  for (Var v : terms.per_head) expect += t.value(v)[0];
  EXPECT_NEAR(t.value(terms.total)[0], expect, 1e-12);
  const double direct = t.value(loss_boundary(t, heads[0].pred, b, LossConfig{}))[0] +
                        t.value(loss_occlusion(t, heads[1].pred, o, b, LossConfig{}))[0] +
                        t.value(loss_segmentation(t, heads[2].pred, y, b, LossConfig{}))[0] +
                        t.value(loss_segmentation(t, heads[3].pred, y, b, LossConfig{}))[0];
  EXPECT_NEAR(t.value(terms.total)[0], direct, 1e-12);

  LossConfig w;
  w.head_weights["occlusion"] = 0.5;
  LossTerms weighted = total_loss(t, heads, gt, w);
  EXPECT_NEAR(t.value(weighted.total)[0], direct - 0.5 * t.value(terms.per_head[1])[0], 1e-12);
}

TEST(TotalLoss, SingleHeadAndMissingGt) {
  Rng rng(7);
  const Shape s{1, 1, 4, 4};
  Tensor<double> b = binary(s, rng, 0.3), y = binary(s, rng, 0.5);
  Tape<double> t;
  std::vector<HeadOutput> heads{{"segmentation", HeadKind::segmentation, t.constant(Tensor<double>(s, 0.3))}};
  LossTerms terms = total_loss(t, heads, TargetMaps<double>{&b, nullptr, &y}, LossConfig{});
  EXPECT_EQ(t.value(terms.total)[0], t.value(loss_segmentation(t, heads[0].pred, y, b, LossConfig{}))[0]);
  std::vector<HeadOutput> occ{{"occlusion", HeadKind::occlusion, heads[0].pred}};
  EXPECT_THROW(total_loss(t, occ, TargetMaps<double>{&b, nullptr, &y}, LossConfig{}), std::invalid_argument);

  Tensor<double> perfect_b = b;
  std::vector<HeadOutput> two{{"boundary", HeadKind::boundary, t.constant(b)},
                              {"occlusion", HeadKind::occlusion, t.constant(y)}};
  LossTerms zero = total_loss(t, two, TargetMaps<double>{&perfect_b, &y, &y}, LossConfig{});
  EXPECT_LE(t.value(zero.total)[0], 1e-11);
}
