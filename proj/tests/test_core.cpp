#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

using namespace mutseg;
using testing_support::random_image;

TEST(RectifiedShift, Examples) {
    EXPECT_EQ(rectified_shift({10, 5}, 0, 0, 32), (Pixel{10, 5}));
    EXPECT_EQ(rectified_shift({10, 5}, 3, 0, 32), (Pixel{7, 5}));
    EXPECT_FALSE(rectified_shift({2, 5}, 3, 0, 32).has_value());
    EXPECT_EQ(rectified_shift({10, 5}, 3, 1, 32), (Pixel{13, 5}));
    EXPECT_FALSE(rectified_shift({30, 5}, 3, 1, 32).has_value());
}

TEST(RectifiedShift, RoundTripsBetweenViews) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> x(0, 63), d(0, 20);
    for (int i = 0; i < 2000; ++i) {
        const Pixel p{x(rng), 3};
        const int disp = d(rng);
        for (int k = 0; k < 2; ++k) {
            const auto q = rectified_shift(p, disp, k, 64);
            if (!q)
                continue;
            const auto back = rectified_shift(*q, disp, other_view(k), 64);
            ASSERT_TRUE(back.has_value());
            EXPECT_EQ(*back, p);
        }
    }
}

TEST(GradientMap, ConstantImageHasNoGradient) {
    const GradientMap g(Image(8, 6, 3, 77));
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x) {
            EXPECT_EQ(g.horizontal(x, y), 0.f);
            EXPECT_EQ(g.vertical(x, y), 0.f);
        }
}

TEST(GradientMap, GrayStepAndChannelMax) {
    Image gray(2, 1, 1);
    gray.at(0, 0) = 40;
    gray.at(1, 0) = 70;
    EXPECT_EQ(compute_gradient_map(gray).edge({0, 0}, {1, 0}), 30.f);

    Image rgb(1, 2, 3);
    rgb.at(0, 0, 0) = 10;
    rgb.at(0, 1, 0) = 10;
    rgb.at(0, 1, 1) = 50;
    EXPECT_EQ(compute_gradient_map(rgb).edge({0, 0}, {0, 1}), 50.f);
}

TEST(GradientMap, EdgesAreSymmetricAndInRange) {
    std::mt19937_64 rng(2);
    const Image img = random_image(9, 7, 3, rng);
    const GradientMap g(img);
    for_each_edge(9, 7, [&](Pixel p, Pixel q) {
        EXPECT_EQ(g.edge(p, q), g.edge(q, p));
        EXPECT_GE(g.edge(p, q), 0.f);
        EXPECT_LE(g.edge(p, q), 255.f);
    });
    EXPECT_THROW(g.edge({0, 0}, {2, 0}), Error);
}

TEST(GradientScale, Examples) {
    EXPECT_NEAR(gradient_scale(30, 30), 0.5, 1e-12);
    EXPECT_NEAR(gradient_scale(0, 30), std::numbers::e - 0.5, 1e-12);
    EXPECT_EQ(gradient_scale(60, 30), 0.0);
    EXPECT_NEAR(gradient_scale(0, 30), 2.2183, 1e-4);
}

TEST(GradientScale, MonotoneAndBounded) {
    double last = gradient_scale(0, 30);
    for (double grad = 0; grad <= 255; grad += 0.25) {
        const double v = gradient_scale(grad, 30);
        EXPECT_LE(v, last);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, std::numbers::e - 0.5);
        last = v;
    }
    // zero exactly from g (1 + ln 2) on
    EXPECT_GT(gradient_scale(30 * (1 + std::log(2.0)) - 0.01, 30), 0.0);
    EXPECT_EQ(gradient_scale(30 * (1 + std::log(2.0)) + 0.01, 30), 0.0);
}

TEST(DisparityLabeling, CountsMatchInBoundsTargets) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        for (int view = 0; view < 2; ++view) {
            DisparityLabeling lab(12, 5, view);
            lab.assign(testing_support::random_labels(12, 5, 6, rng));
            long in_bounds = 0;
            for (int y = 0; y < 5; ++y)
                for (int x = 0; x < 12; ++x)
                    in_bounds += rectified_shift({x, y}, lab.label(x, y), view, 12).has_value();
            long total = 0;
            for (int n : lab.counts().values()) {
                EXPECT_GE(n, 0);
                total += n;
            }
            EXPECT_EQ(total, in_bounds);
        }
    }
}

TEST(DisparityLabeling, IncrementalCountsEqualRecount) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> x(0, 15), y(0, 3), d(0, 7);
    for (int view = 0; view < 2; ++view) {
        DisparityLabeling lab(16, 4, view, 2);
        for (int batch = 0; batch < 40; ++batch) {
            for (int i = 0; i < 25; ++i)
                lab.set(x(rng), y(rng), d(rng));
            EXPECT_EQ(lab.counts(), lab.fresh_counts());
            EXPECT_NO_THROW(lab.verify_counts());
        }
    }
}

TEST(DisparityLabeling, ValidatesRange) {
    DisparityLabeling lab(6, 2, 0);
    lab.set(1, 1, 5);
    EXPECT_THROW(lab.validate(LabelSpaces{4}), Error);
    EXPECT_NO_THROW(lab.validate(LabelSpaces{5}));
    EXPECT_THROW(DisparityLabeling(4, 4, 2), Error);
}

TEST(LabelSpaces, Invariants) {
    EXPECT_THROW(LabelSpaces{0}.validate(10), Error);
    EXPECT_THROW(LabelSpaces{10}.validate(10), Error);
    EXPECT_NO_THROW(LabelSpaces{9}.validate(10));
    EXPECT_EQ(LabelSpaces{9}.disparity_count(), 10);
}

TEST(FramePair, RejectsMismatchedViews) {
    FramePair pair;
    pair.views[0] = Image(8, 8, 3);
    pair.views[1] = Image(8, 7, 1);
    EXPECT_THROW(pair.validate(), Error);
    pair.views[1] = Image(8, 8, 1);
    EXPECT_NO_THROW(pair.validate());
    pair.rectified = false;
    EXPECT_THROW(pair.validate(), Error);
}

TEST(Image, RejectsBadChannelCounts) {
    EXPECT_THROW(Image(4, 4, 2), Error);
    EXPECT_THROW(Image(0, 4, 1), Error);
}
