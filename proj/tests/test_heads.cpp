#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "iln/heads.hpp"
#include "test_util.hpp"

using namespace iln;
using iln::testing::constant_image;
using iln::testing::random_image;
using iln::testing::random_query;

namespace {

ModelConfig small_config(HeadKind head, std::size_t attn_blocks = 1) {
  ModelConfig c;
  c.head = head;
  c.encoder = {4, 1, 3};
  c.iln = {8, attn_blocks, 2, 16, 3};
  return c;
}

double predict_one(const ImplicitModel<double>& m, const RangeImage& img, const LaserQuery& q) {
  const LaserQuery qs[] = {q};
  return m.predict(img, qs)[0];
}

RangeImage shift_image_cols(const RangeImage& img, std::size_t k) {
  std::vector<float> d(img.depths().size());
  for (std::size_t r = 0; r < img.rows(); ++r) {
    for (std::size_t c = 0; c < img.cols(); ++c) d[r * img.cols() + (c + k) % img.cols()] = img.at(r, c);
  }
  return {img.spec(), img.rows(), img.cols(), std::move(d)};
}

}  // namespace

TEST(PositionalCode, SingleFrequencyValues) {
  const auto a = positional_code(0.0, 0.0, 1);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_DOUBLE_EQ(a[0], 0.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);
  EXPECT_DOUBLE_EQ(a[2], 0.0);
  EXPECT_DOUBLE_EQ(a[3], 1.0);
  const auto b = positional_code(0.5, -0.5, 2);
  ASSERT_EQ(b.size(), 8u);
  EXPECT_NEAR(b[0], 1.0, 1e-15);
  EXPECT_NEAR(b[1], 0.0, 1e-15);
  EXPECT_NEAR(b[2], -1.0, 1e-15);
  // second octave: sin(pi) and cos(pi)
  EXPECT_NEAR(b[4], 0.0, 1e-15);
  EXPECT_NEAR(b[5], -1.0, 1e-15);
  EXPECT_TRUE(positional_code(0.3, 0.1, 0).empty());
}

TEST(Bilinear, MidpointOfFourDepths) {
  SensorSpec spec;
  spec.v_min = -1.0;
  spec.v_max = 1.0;
  spec.h_min = -1.0;
  spec.h_max = 1.0;
  const RangeImage img(spec, 2, 2, {1.0f, 2.0f, 3.0f, 4.0f});
  EXPECT_DOUBLE_EQ(bilinear_predict(img, {0.0, 0.0}), 2.5);
  // at a pixel center the pixel's own depth comes back
  EXPECT_DOUBLE_EQ(bilinear_predict(img, {0.5, -0.5}), 1.0);
}

TEST(HeadConfig, Validation) {
  ModelConfig c = small_config(HeadKind::iln);
  c.iln.heads = 3;  // does not divide model_dim
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_head("liif"), HeadKind::liif);
  EXPECT_THROW((void)parse_head("mlp"), ConfigError);
}

TEST(IlnHead, ZeroAttentionBlocksIsIdentity) {
  const ImplicitModel<double> m(small_config(HeadKind::iln, 0), 1);
  Rng rng(1);
  const auto x = ad::constant(iln::testing::random_tensor(rng, {12, 8}));
  EXPECT_EQ(m.attend(x).value(), x.value());
}

TEST(IlnHead, IdenticalTokensGetUniformAttention) {
  const ImplicitModel<double> m(small_config(HeadKind::iln, 2), 2);
  Rng rng(2);
  const auto token = iln::testing::random_tensor(rng, {1, 8});
  ad::Tensor<double> group({4, 8});
  for (std::size_t t = 0; t < 4; ++t) std::copy_n(token.data(), 8, group.data() + 8 * t);
  HeadTrace<double> trace;
  const auto out = m.attend(ad::constant(group), &trace).value();
  for (std::size_t t = 1; t < 4; ++t) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out[8 * t + j], out[j], 1e-12);
  }
  for (const auto& maps : trace.attention) {
    for (const double a : maps.values()) EXPECT_NEAR(a, 0.25, 1e-12);
  }
}

TEST(IlnHead, ConstantImagePredictsThatDepth) {
  const ImplicitModel<double> m(small_config(HeadKind::iln), 3);
  const RangeImage img = constant_image(4, 16, 17.5f);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(predict_one(m, img, random_query(rng)), 17.5, 1e-9);
}

TEST(IlnHead, ZeroWeightHeadAveragesNeighbors) {
  ImplicitModel<double> m(small_config(HeadKind::iln), 4);
  m.weight_head().weight.mutable_value().fill(0.0);
  Rng rng(4);
  const RangeImage img = random_image(rng, 4, 16);
  for (int i = 0; i < 20; ++i) {
    const LaserQuery q = random_query(rng);
    double mean = 0.0;
    for (const auto& n : neighbors_of(img, q)) mean += n.depth / 4.0;
    EXPECT_NEAR(predict_one(m, img, q), mean, 1e-9);
  }
}

TEST(IlnHead, TraceShapes) {
  const ImplicitModel<double> m(small_config(HeadKind::iln, 2), 5);
  Rng rng(5);
  const RangeImage img = random_image(rng, 4, 16);
  HeadTrace<double> trace;
  (void)iln_predict(m, img, m.encode(img), random_query(rng), &trace);
  EXPECT_EQ(trace.local.shape(), (ad::Shape{4, 8}));
  EXPECT_EQ(trace.attended.shape(), (ad::Shape{4, 8}));
  ASSERT_EQ(trace.attention.size(), 2u);
  EXPECT_EQ(trace.attention[0].shape(), (ad::Shape{2, 4, 4}));
  EXPECT_EQ(trace.weights.shape(), (ad::Shape{1, 4}));
}

TEST(IlnHead, WrongHeadIsContractError) {
  const ImplicitModel<double> liif(small_config(HeadKind::liif), 6);
  const ImplicitModel<double> iln_model(small_config(HeadKind::iln), 6);
  const RangeImage img = constant_image(4, 8, 10.0f);
  EXPECT_THROW((void)iln_predict(liif, img, liif.encode(img), {0.0, 0.0}), ContractError);
  EXPECT_THROW((void)liif_predict(iln_model, img, iln_model.encode(img), {0.0, 0.0}), ContractError);
}

TEST(LiifHead, UsesBilinearAreaWeights) {
  const ImplicitModel<double> m(small_config(HeadKind::liif), 7);
  Rng rng(7);
  const RangeImage img = random_image(rng, 4, 16);
  const RangeImage* imgs[] = {&img};
  const LaserQuery qs[] = {random_query(rng)};
  const std::size_t image_of[] = {0};
  HeadTrace<double> trace;
  (void)m.predict(m.encode(img), m.prepare(imgs, qs, image_of), &trace);
  const auto w = bilinear_weights(neighbors_of(img, qs[0]));
  for (std::size_t t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(trace.weights[t], w[t]);
}

TEST(LiifHead, ConstantValueScalesByMaxRange) {
  ImplicitModel<double> m(small_config(HeadKind::liif), 8);
  m.value_output().weight.mutable_value().fill(0.0);
  m.value_output().bias.mutable_value().fill(0.25);
  Rng rng(8);
  const RangeImage img = random_image(rng, 4, 16);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(liif_predict(m, img, m.encode(img), random_query(rng)), 0.25 * 80.0, 1e-9);
}

// ---- properties

TEST(HeadProperty, AttentionRowsSumToOne) {
  const ImplicitModel<double> m(small_config(HeadKind::iln, 2), 9);
  Rng rng(9);
  const RangeImage img = random_image(rng, 4, 16);
  const auto featmap = m.encode(img);
  for (int i = 0; i < 100; ++i) {
    HeadTrace<double> trace;
    (void)iln_predict(m, img, featmap, random_query(rng), &trace);
    for (const auto& maps : trace.attention) {
      for (std::size_t row = 0; row < maps.size() / 4; ++row) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
          EXPECT_GE(maps[4 * row + j], 0.0);
          sum += maps[4 * row + j];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(HeadProperty, IlnIsConvexCombinationOfNeighbors) {
  const ImplicitModel<double> m(small_config(HeadKind::iln), 10);
  Rng rng(10);
  for (int i = 0; i < 500; ++i) {
    if (i % 50 == 0) rng = Rng::stream(10, static_cast<std::uint64_t>(i));
    const RangeImage img = random_image(rng, 4, 16);
    const LaserQuery q = random_query(rng);
    HeadTrace<double> trace;
    const double r = iln_predict(m, img, m.encode(img), q, &trace);
    double lo = 1e300, hi = -1e300, wsum = 0.0;
    for (const auto& n : neighbors_of(img, q)) {
      lo = std::min(lo, n.depth);
      hi = std::max(hi, n.depth);
    }
    for (const double w : trace.weights.values()) {
      EXPECT_GE(w, 0.0);
      wsum += w;
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    EXPECT_GE(r, lo - 1e-9);
    EXPECT_LE(r, hi + 1e-9);
  }
}

TEST(HeadProperty, BilinearIsConvexAndExactAtCenters) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const RangeImage img = random_image(rng, 1 + rng.below(6), 1 + rng.below(20));
    const LaserQuery q = random_query(rng);
    const auto n = neighbors_of(img, q);
    double lo = 1e300, hi = -1e300;
    for (const auto& x : n) {
      lo = std::min(lo, x.depth);
      hi = std::max(hi, x.depth);
    }
    const double r = bilinear_predict(img, q);
    EXPECT_GE(r, lo - 1e-9);
    EXPECT_LE(r, hi + 1e-9);
    const std::size_t row = rng.below(img.rows()), col = rng.below(img.cols());
    EXPECT_NEAR(bilinear_predict(img, pixel_center(img.spec(), img.rows(), img.cols(), row, col)), img.at(row, col),
                1e-9);
  }
}

TEST(HeadProperty, PredictionsFollowCircularShifts) {
  for (const HeadKind head : {HeadKind::iln, HeadKind::liif}) {
    const ImplicitModel<double> m(small_config(head), 12);
    Rng rng(12);
    const RangeImage img = random_image(rng, 4, 16);
    const double pitch = horizontal_pitch(img.spec(), img.cols());
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t k = rng.below(16);
      const RangeImage shifted = shift_image_cols(img, k);
      const LaserQuery q = random_query(rng);
      const LaserQuery qs{q.v, q.h + static_cast<double>(k) * pitch};
      EXPECT_NEAR(predict_one(m, img, q), predict_one(m, shifted, qs), 1e-9) << to_string(head);
    }
  }
}

TEST(HeadProperty, BatchedEqualsPerQuery) {
  for (const HeadKind head : {HeadKind::iln, HeadKind::liif}) {
    const ImplicitModel<double> m(small_config(head), 13);
    Rng rng(13);
    const RangeImage a = random_image(rng, 4, 16);
    const RangeImage b = random_image(rng, 4, 16);
    const RangeImage* imgs[] = {&a, &b};
    std::vector<LaserQuery> qs;
    std::vector<std::size_t> image_of;
    for (int i = 0; i < 40; ++i) {
      qs.push_back(random_query(rng));
      image_of.push_back(rng.below(2));
    }
    const auto batched = m.predict(m.encode(imgs), m.prepare(imgs, qs, image_of)).value();
    for (std::size_t i = 0; i < qs.size(); ++i) {
      EXPECT_NEAR(batched[i], predict_one(m, *imgs[image_of[i]], qs[i]), 1e-9);
    }
  }
}
