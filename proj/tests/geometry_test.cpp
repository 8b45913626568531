#include <gtest/gtest.h>

#include "layerkit/geometry.hpp"
#include "oracles.hpp"

using namespace layerkit;

namespace {

FeatureGrid tau_from_mask(const Mask& m) { return m.as_grid(); }

Mask support_of(const FeatureGrid& tau, double threshold = 1e-12) {
    Mask m(tau.height, tau.width);
    for (std::size_t i = 0; i < tau.values.size(); ++i)
        m.values[i] = tau.values[i] > threshold ? 1.0 : 0.0;
    return m;
}

double mass_of(const FeatureGrid& tau) {
    double s = 0.0;
    for (double v : tau.values) s += v;
    return s;
}

}  // namespace

TEST(CentroidOp, UniformRectangleCenter) {
    Mask rect = rect_mask(10, 10, 2, 4, 5, 7);
    Centroid c = centroid(tau_from_mask(rect));
    EXPECT_DOUBLE_EQ(c.h, 3.5);
    EXPECT_DOUBLE_EQ(c.w, 5.5);
}

TEST(CentroidOp, SinglePixel) {
    Mask m(8, 8);
    m.at(3, 7) = 1.0;
    Centroid c = centroid(tau_from_mask(m));
    EXPECT_DOUBLE_EQ(c.h, 3.0);
    EXPECT_DOUBLE_EQ(c.w, 7.0);
}

TEST(CentroidOp, WeightedMean) {
    FeatureGrid tau(5, 5, 1);
    tau.at(0, 0, 0) = 1.0;
    tau.at(4, 4, 0) = 3.0;
    Centroid c = centroid(tau);
    EXPECT_DOUBLE_EQ(c.h, 3.0);
    EXPECT_DOUBLE_EQ(c.w, 3.0);
}

TEST(CentroidOp, ZeroMassThrows) {
    FeatureGrid tau(4, 4, 1);
    EXPECT_THROW(centroid(tau), ParameterError);
}

TEST(MoveMap, ZeroShiftIsBitExactIdentity) {
    FeatureGrid canvas = oracles::random_grid(8, 8, 4, 1);
    FeatureGrid tau = tau_from_mask(oracles::random_binary_mask(8, 8, 2));
    FeatureGrid out = move_map(canvas, tau, 0, 0);
    EXPECT_EQ(out.values, canvas.values);
}

TEST(MoveMap, SinglePixelTrace) {
    FeatureGrid canvas = oracles::random_grid(6, 6, 3, 3);
    Mask m(6, 6);
    m.at(2, 2) = 1.0;
    FeatureGrid out = move_map(canvas, tau_from_mask(m), 1, 0);
    for (int h = 0; h < 6; ++h)
        for (int w = 0; w < 6; ++w)
            for (int c = 0; c < 3; ++c) {
                if (h == 3 && w == 2)
                    EXPECT_EQ(out.at(h, w, c), canvas.at(2, 2, c));
                else
                    EXPECT_EQ(out.at(h, w, c), canvas.at(h, w, c));
            }
}

TEST(MoveMap, SupportShiftedFullyOffGridLeavesCanvas) {
    FeatureGrid canvas = oracles::random_grid(6, 6, 2, 4);
    Mask m(6, 6);
    m.at(5, 5) = 1.0;
    FeatureGrid out = move_map(canvas, tau_from_mask(m), -5, -5);
    // tau lands at (0,0); use a support whose shift leaves the grid instead.
    Mask edge(6, 6);
    edge.at(0, 0) = 1.0;
    FeatureGrid out2 = move_map(canvas, tau_from_mask(edge), -1, -1);
    EXPECT_EQ(out2.values, canvas.values);
    (void)out;
}

TEST(MoveMap, LocalityOutsideSourceAndDestination) {
    FeatureGrid canvas = oracles::random_grid(8, 8, 2, 5);
    Mask m = rect_mask(8, 8, 1, 1, 2, 2);
    FeatureGrid out = move_map(canvas, tau_from_mask(m), 3, 2);
    Mask dest = rect_mask(8, 8, 4, 3, 5, 4);
    for (int h = 0; h < 8; ++h)
        for (int w = 0; w < 8; ++w) {
            if (m.at(h, w) > 0.0 || dest.at(h, w) > 0.0) continue;
            for (int c = 0; c < 2; ++c) EXPECT_EQ(out.at(h, w, c), canvas.at(h, w, c));
        }
}

TEST(MoveMap, RejectsOutOfRangeDisplacement) {
    FeatureGrid canvas = oracles::random_grid(4, 4, 1, 6);
    FeatureGrid tau(4, 4, 1, 0.0);
    EXPECT_THROW(move_map(canvas, tau, 4, 0), ParameterError);
    EXPECT_THROW(move_map(canvas, tau, 0, -4), ParameterError);
}

TEST(ResizeMap, UnitScaleEqualsTauBlend) {
    FeatureGrid feats = oracles::random_grid(8, 8, 3, 7);
    FeatureGrid canvas = oracles::random_grid(8, 8, 3, 8);
    Mask obj = rect_mask(8, 8, 2, 2, 5, 5);
    FeatureGrid tau = tau_from_mask(obj);
    ResizeResult r = resize_map(feats, canvas, tau, 1.0);
    EXPECT_EQ(r.tau.values, tau.values);
    for (int h = 0; h < 8; ++h)
        for (int w = 0; w < 8; ++w)
            for (int c = 0; c < 3; ++c) {
                double t = tau.at(h, w, 0);
                double expect = feats.at(h, w, c) * t + canvas.at(h, w, c) * (1.0 - t);
                EXPECT_EQ(r.features.at(h, w, c), expect);
            }
}

TEST(ResizeMap, UpscaleDoublesSupportAtSameCentroid) {
    FeatureGrid feats = oracles::random_grid(16, 16, 2, 9);
    FeatureGrid canvas = oracles::random_grid(16, 16, 2, 10);
    Mask obj = rect_mask(16, 16, 6, 6, 9, 9);  // 4x4 centered at (7.5, 7.5)
    FeatureGrid tau = tau_from_mask(obj);
    Centroid before = centroid(tau);
    ResizeResult r = resize_map(feats, canvas, tau, 2.0);
    Centroid after = centroid(r.tau);
    EXPECT_LE(std::abs(after.h - before.h), 0.5);
    EXPECT_LE(std::abs(after.w - before.w), 0.5);
    double mass_ratio = mass_of(r.tau) / mass_of(tau);
    EXPECT_NEAR(mass_ratio, 4.0, 0.2);  // within 5% of s^2
    Mask support = support_of(r.tau);
    double extent_h = 0.0, extent_w = 0.0;
    int h_min = 16, h_max = -1, w_min = 16, w_max = -1;
    for (int h = 0; h < 16; ++h)
        for (int w = 0; w < 16; ++w)
            if (support.at(h, w) > 0.0) {
                h_min = std::min(h_min, h);
                h_max = std::max(h_max, h);
                w_min = std::min(w_min, w);
                w_max = std::max(w_max, w);
            }
    extent_h = h_max - h_min + 1;
    extent_w = w_max - w_min + 1;
    EXPECT_GE(extent_h, 8);
    EXPECT_LE(extent_h, 10);  // soft bilinear edge may add one cell per side
    EXPECT_GE(extent_w, 8);
    EXPECT_LE(extent_w, 10);
}

TEST(ResizeMap, DownscaleShrinksAndVacatedCellsRevertToCanvas) {
    FeatureGrid feats = oracles::random_grid(16, 16, 2, 11);
    FeatureGrid canvas = oracles::random_grid(16, 16, 2, 12);
    Mask obj = rect_mask(16, 16, 6, 6, 9, 9);
    FeatureGrid tau = tau_from_mask(obj);
    Centroid before = centroid(tau);
    ResizeResult r = resize_map(feats, canvas, tau, 0.5);
    Centroid after = centroid(r.tau);
    EXPECT_LE(std::abs(after.h - before.h), 0.5);
    EXPECT_LE(std::abs(after.w - before.w), 0.5);
    EXPECT_NEAR(mass_of(r.tau) / mass_of(tau), 0.25, 0.0125);
    // Original object cells whose resized tau is zero return to canvas values.
    for (int h = 6; h <= 9; ++h)
        for (int w = 6; w <= 9; ++w) {
            if (r.tau.at(h, w, 0) != 0.0) continue;
            for (int c = 0; c < 2; ++c) EXPECT_EQ(r.features.at(h, w, c), canvas.at(h, w, c));
        }
}

TEST(ResizeMap, LocalityOutsideWindow) {
    FeatureGrid feats = oracles::random_grid(16, 16, 2, 13);
    FeatureGrid canvas = oracles::random_grid(16, 16, 2, 14);
    Mask obj = rect_mask(16, 16, 6, 6, 9, 9);
    FeatureGrid tau = tau_from_mask(obj);
    ResizeResult r = resize_map(feats, canvas, tau, 0.5);
    // Window is 8x8 anchored at the centroid; everything outside is untouched.
    int changed_outside = 0;
    for (int h = 0; h < 16; ++h)
        for (int w = 0; w < 16; ++w) {
            bool in_window = h >= 4 && h < 12 && w >= 4 && w < 12;
            if (in_window) continue;
            for (int c = 0; c < 2; ++c)
                if (r.features.at(h, w, c) != canvas.at(h, w, c)) ++changed_outside;
        }
    EXPECT_EQ(changed_outside, 0);
}

TEST(ResizeMap, MassAndCentroidAcrossScalesAndSupports) {
    for (int size : {4, 5, 6}) {
        for (double s : {0.5, 2.0}) {
            Mask obj = rect_mask(24, 24, 10, 10, 10 + size - 1, 10 + size - 1);
            FeatureGrid tau = tau_from_mask(obj);
            FeatureGrid feats = oracles::random_grid(24, 24, 1, 15 + size);
            FeatureGrid canvas = oracles::random_grid(24, 24, 1, 16 + size);
            Centroid before = centroid(tau);
            ResizeResult r = resize_map(feats, canvas, tau, s);
            Centroid after = centroid(r.tau);
            EXPECT_LE(std::abs(after.h - before.h), 0.5) << "size " << size << " s " << s;
            EXPECT_LE(std::abs(after.w - before.w), 0.5) << "size " << size << " s " << s;
            double ratio = mass_of(r.tau) / mass_of(tau);
            EXPECT_NEAR(ratio, s * s, 0.05 * s * s) << "size " << size << " s " << s;
        }
    }
}

TEST(ResizeMap, DegenerateTauThrows) {
    FeatureGrid feats = oracles::random_grid(8, 8, 1, 20);
    FeatureGrid canvas = oracles::random_grid(8, 8, 1, 21);
    FeatureGrid tau(8, 8, 1);
    EXPECT_THROW(resize_map(feats, canvas, tau, 2.0), ParameterError);
    EXPECT_THROW(resize_map(feats, canvas, tau_from_mask(rect_mask(8, 8, 1, 1, 2, 2)), -1.0),
                 ParameterError);
}

TEST(ScaleResize, ScaleTrueMassOnInteriorSupports) {
    // The by-factor resampler keeps mass scaling at s^2 (the align-corners
    // grid resize would bias it at these sizes).
    Mask obj = rect_mask(16, 16, 6, 6, 9, 9);
    FeatureGrid tau = tau_from_mask(obj);
    FeatureGrid up = detail::scale_resize(tau, 2.0);
    EXPECT_EQ(up.height, 32);
    EXPECT_NEAR(mass_of(up), 4.0 * 16.0, 1e-9);
    FeatureGrid down = detail::scale_resize(tau, 0.5);
    EXPECT_EQ(down.height, 8);
    EXPECT_NEAR(mass_of(down), 0.25 * 16.0, 1e-9);
}
