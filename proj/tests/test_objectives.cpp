#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace opendas;
using opendas::testing::random_image;
using opendas::testing::tiny_config;
using opendas::testing::tiny_vocab;

namespace {

std::vector<double> logits(std::initializer_list<double> v) { return v; }

// Points on a line so that |v - pos| and |v - neg| are exactly the given values.
struct Triple {
    RowVector<double> v, pos, neg;
};
Triple at_distances(double d_pos, double d_neg) {
    return {RowVector<double>{{0.0, 0.0}}, RowVector<double>{{d_pos, 0.0}}, RowVector<double>{{0.0, -d_neg}}};
}

} // namespace

TEST(CrossEntropy, UniformSoftmax) {
    auto l = logits({0, 0});
    EXPECT_NEAR(cross_entropy<double>(l, 0), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, SaturatedLogitsStayFinite) {
    auto l = logits({1000, 0});
    const double v = cross_entropy<double>(l, 0);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 0.0, 1e-12);
    auto f = std::vector<float>{1000.f, 0.f};
    EXPECT_NEAR(cross_entropy<float>(f, 1), 1000.0f, 1e-3f);
}

TEST(CrossEntropy, ThreeLogitGolden) {
    auto l = logits({1, 2, 3});
    const double by_hand = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    EXPECT_NEAR(by_hand, 0.40760596, 5e-9);
    EXPECT_NEAR(cross_entropy<double>(l, 2), 0.40760596, 5e-9);
}

TEST(CrossEntropy, RejectsNonFiniteAndBadTargets) {
    auto l = logits({1, std::numeric_limits<double>::quiet_NaN()});
    EXPECT_THROW(cross_entropy<double>(l, 0), ValidationError);
    auto inf = logits({1, std::numeric_limits<double>::infinity()});
    EXPECT_THROW(cross_entropy<double>(inf, 0), ValidationError);
    auto ok = logits({1, 2});
    EXPECT_THROW(cross_entropy<double>(ok, 2), ValidationError);
}

TEST(CrossEntropy, NonNegativeAndGradientSumsToZero) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0, 5);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> l(2 + t % 9);
        for (auto& x : l) x = g(rng);
        std::vector<double> grad;
        const std::size_t target = static_cast<std::size_t>(t) % l.size();
        EXPECT_GE(cross_entropy<double>(l, target, &grad), 0.0);
        double s = 0;
        for (double x : grad) s += x;
        EXPECT_NEAR(s, 0.0, 1e-12);
    }
}

TEST(CrossEntropy, BatchMean) {
    std::vector<std::vector<double>> batch{{0, 0}, {1, 2, 3}};
    EXPECT_NEAR(cross_entropy<double>(batch, {0, 2}), (std::log(2.0) + 0.40760596) / 2, 1e-8);
}

TEST(Triplet, AnalyticCases) {
    auto a = at_distances(1.0, 2.0);
    EXPECT_NEAR(triplet_loss<double>(a.v, a.pos, a.neg, 1.5), 0.5, 1e-9);

    auto b = at_distances(0.0, 2.0); // v = t+
    EXPECT_NEAR(triplet_loss<double>(b.v, b.pos, b.neg, 1.5), 0.0, 1e-9);

    auto c = at_distances(0.7, 0.7);
    EXPECT_NEAR(triplet_loss<double>(c.v, c.pos, c.neg, 1.5), 1.5, 1e-9);
}

TEST(Triplet, ZeroBeyondMarginAndNonNegative) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 3);
    for (int t = 0; t < 500; ++t) {
        const double dp = u(rng), dn = u(rng);
        auto x = at_distances(dp, dn);
        const double l = triplet_loss<double>(x.v, x.pos, x.neg, 1.5);
        EXPECT_GE(l, 0.0);
        if (dn >= dp + 1.5) EXPECT_EQ(l, 0.0);
        else EXPECT_NEAR(l, dp - dn + 1.5, 1e-12);
    }
}

TEST(Triplet, BatchMeanAndShapeErrors) {
    TripletBatch<double> b;
    for (auto [dp, dn] : {std::pair{1.0, 2.0}, std::pair{0.0, 2.0}}) {
        auto x = at_distances(dp, dn);
        b.anchors.push_back(x.v);
        b.positives.push_back(x.pos);
        b.negatives.push_back(x.neg);
    }
    EXPECT_NEAR(triplet_loss(b, 1.5), 0.25, 1e-12);
    b.negatives.pop_back();
    EXPECT_THROW(triplet_loss(b, 1.5), ShapeError);
    EXPECT_THROW(triplet_loss<double>(RowVector<double>{{0.0}}, RowVector<double>{{0.0, 1.0}}, RowVector<double>{{1.0}}, 1.5),
                 ShapeError);
}

TEST(Triplet, GradientIsZeroAtAndBelowTheKink) {
    TripletGrad<double> g;
    auto x = at_distances(0.5, 2.0); // value exactly 0
    EXPECT_EQ(triplet_loss<double>(x.v, x.pos, x.neg, 1.5, &g), 0.0);
    EXPECT_TRUE(g.anchor.isZero(0) && g.positive.isZero(0) && g.negative.isZero(0));
}

TEST(Lambda, EndpointsAndMidpoint) {
    LossConfig c;
    EXPECT_EQ(lambda_at(0, 100, c), 2.0);
    EXPECT_EQ(lambda_at(100, 100, c), 5.0);
    EXPECT_NEAR(lambda_at(50, 100, c), 3.5, 1e-12);
    for (long s = 1; s <= 100; ++s) EXPECT_GE(lambda_at(s, 100, c), lambda_at(s - 1, 100, c));
    EXPECT_THROW(lambda_at(101, 100, c), ValidationError);
}

TEST(Lambda, ZeroScheduleIsConstant) {
    LossConfig c{.margin = 1.5, .lambda_min = 0, .lambda_max = 0};
    for (long s = 0; s <= 10; ++s) EXPECT_EQ(lambda_at(s, 10, c), 0.0);
}

TEST(Stage2Loss, CombinesTerms) {
    LossConfig cfg;
    auto l = logits({1, 2, 3});
    auto x = at_distances(1.0, 2.0);
    const double ce = cross_entropy<double>(l, 2);
    EXPECT_EQ(stage2_loss<double>(x.v, l, 2, x.pos, x.neg, 0.0, cfg), ce);
    EXPECT_NEAR(stage2_loss<double>(x.v, l, 2, x.pos, x.neg, 5.0, cfg), ce + 5 * 0.5, 1e-12);

    // CE = 0.5, triplet = 0.5, lambda = 5 -> 3.0
    const double p = std::exp(-0.5);
    auto half = logits({std::log(p), std::log(1 - p)});
    EXPECT_NEAR(stage2_loss<double>(x.v, half, 0, x.pos, x.neg, 5.0, cfg), 3.0, 1e-12);
    EXPECT_THROW(stage2_loss<double>(x.v, half, 0, x.pos, x.neg, -1.0, cfg), ValidationError);
}

TEST(LossConfig, Validation) {
    EXPECT_THROW(validate(LossConfig{.margin = 0}), ValidationError);
    EXPECT_THROW(validate(LossConfig{.margin = 1.5, .lambda_min = 3, .lambda_max = 2}), ValidationError);
    EXPECT_NO_THROW(validate(LossConfig{}));
}

class GradientCheck : public ::testing::TestWithParam<double> {};

TEST_P(GradientCheck, PromptGradientsMatchFiniteDifferences) {
    auto m = init_model<double>(tiny_config(), tiny_vocab());
    NegativeBank bank{{{"wall", {"room divider", "partition"}}, {"ceiling", {"chandelier", "skylight"}}}};
    auto ls = build_label_space({"wall", "ceiling", "floor"}, bank);
    auto lt = LabelTokens::build(ls, m);
    std::mt19937_64 rng(11);
    std::vector<Image> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(random_image(16, 16, rng));
    std::vector<const Image*> batch;
    for (const auto& im : imgs) batch.push_back(&im);

    auto r = oracle::check_prompt_gradients(m, batch, {0, 1, 2}, lt, GetParam(), LossConfig{});
    ASSERT_NE(r.skipped, std::numeric_limits<std::size_t>::max()) << "base point sits on a hinge";
    EXPECT_GT(r.checked, 100u);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Lambdas, GradientCheck, ::testing::Values(0.0, 2.0, 5.0));
