#include <gtest/gtest.h>

#include "layerkit/fusion.hpp"
#include "oracles.hpp"

using namespace layerkit;

namespace {

std::vector<FeatureGrid> tau_planes(std::initializer_list<double> fills, int h, int w) {
    std::vector<FeatureGrid> tau;
    for (double f : fills) tau.push_back(FeatureGrid(h, w, 1, f));
    return tau;
}

std::span<const FeatureGrid> view(const std::vector<FeatureGrid>& v) {
    return std::span<const FeatureGrid>(v.data(), v.size());
}

}  // namespace

TEST(OverlapMask, DisjointSupportsGiveEmpty) {
    std::vector<FeatureGrid> tau = tau_planes({0.0, 0.0}, 6, 6);
    for (int w = 0; w < 6; ++w) {
        tau[0].at(0, w, 0) = 1.0;
        tau[1].at(5, w, 0) = 1.0;
    }
    EXPECT_TRUE(overlap_mask(view(tau)).empty_support());
}

TEST(OverlapMask, FullPlaneIntersectsRectangle) {
    std::vector<FeatureGrid> tau = tau_planes({1.0, 0.0}, 6, 6);
    for (int h = 2; h <= 3; ++h)
        for (int w = 1; w <= 4; ++w) tau[1].at(h, w, 0) = 0.7;
    Mask m = overlap_mask(view(tau));
    Mask expect = rect_mask(6, 6, 2, 1, 3, 4);
    EXPECT_EQ(m.values, expect.values);
}

TEST(OverlapMask, ThreeLayerPairwiseUnionMatchesLoopOracle) {
    std::vector<FeatureGrid> tau = tau_planes({0.0, 0.0, 0.0}, 8, 8);
    for (int i = 0; i < 8 * 8; ++i) {
        tau[0].values[static_cast<std::size_t>(i)] = (i % 3 == 0) ? 0.5 : 0.0;
        tau[1].values[static_cast<std::size_t>(i)] = (i % 4 == 0) ? 0.5 : 0.0;
        tau[2].values[static_cast<std::size_t>(i)] = (i % 5 == 0) ? 0.5 : 0.0;
    }
    Mask m = overlap_mask(view(tau));
    for (int i = 0; i < 64; ++i) {
        int positive = 0;
        for (int n = 0; n < 3; ++n)
            if (tau[static_cast<std::size_t>(n)].values[static_cast<std::size_t>(i)] > 0.0)
                ++positive;
        EXPECT_EQ(m.values[static_cast<std::size_t>(i)], positive >= 2 ? 1.0 : 0.0);
    }
}

TEST(Fuse, FullTauSelectsObjectLayerExactly) {
    FeatureGrid f1 = oracles::random_grid(4, 4, 3, 1);
    FeatureGrid canvas = oracles::random_grid(4, 4, 3, 2);
    std::vector<FeatureGrid> tau = tau_planes({1.0}, 4, 4);
    std::vector<FeatureGrid> feats{f1};
    FeatureGrid out = fuse(view(tau), view(feats), canvas);
    EXPECT_EQ(out.values, f1.values);
}

TEST(Fuse, ZeroTauKeepsCanvasExactly) {
    FeatureGrid f1 = oracles::random_grid(4, 4, 3, 3);
    FeatureGrid canvas = oracles::random_grid(4, 4, 3, 4);
    std::vector<FeatureGrid> tau = tau_planes({0.0}, 4, 4);
    std::vector<FeatureGrid> feats{f1};
    FeatureGrid out = fuse(view(tau), view(feats), canvas);
    EXPECT_EQ(out.values, canvas.values);
}

TEST(Fuse, EvenSplitAveragesObjectLayers) {
    FeatureGrid f1 = oracles::random_grid(4, 4, 2, 5);
    FeatureGrid f2 = oracles::random_grid(4, 4, 2, 6);
    FeatureGrid canvas = oracles::random_grid(4, 4, 2, 7);
    std::vector<FeatureGrid> tau = tau_planes({0.5, 0.5}, 4, 4);
    std::vector<FeatureGrid> feats{f1, f2};
    FeatureGrid out = fuse(view(tau), view(feats), canvas);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        EXPECT_NEAR(out.values[i], (f1.values[i] + f2.values[i]) / 2.0, 1e-15);
}

TEST(Fuse, OneHotMasksComposeAPatchwork) {
    FeatureGrid f1 = oracles::random_grid(4, 4, 2, 8);
    FeatureGrid f2 = oracles::random_grid(4, 4, 2, 9);
    FeatureGrid canvas = oracles::random_grid(4, 4, 2, 10);
    std::vector<FeatureGrid> tau = tau_planes({0.0, 0.0}, 4, 4);
    for (int w = 0; w < 4; ++w) {
        tau[0].at(0, w, 0) = 1.0;
        tau[1].at(1, w, 0) = 1.0;
    }
    std::vector<FeatureGrid> feats{f1, f2};
    FeatureGrid out = fuse(view(tau), view(feats), canvas);
    for (int w = 0; w < 4; ++w)
        for (int c = 0; c < 2; ++c) {
            EXPECT_EQ(out.at(0, w, c), f1.at(0, w, c));
            EXPECT_EQ(out.at(1, w, c), f2.at(1, w, c));
            EXPECT_EQ(out.at(2, w, c), canvas.at(2, w, c));
            EXPECT_EQ(out.at(3, w, c), canvas.at(3, w, c));
        }
}

TEST(Fuse, RejectsShapeMismatch) {
    FeatureGrid f1 = oracles::random_grid(4, 4, 2, 11);
    FeatureGrid canvas = oracles::random_grid(4, 5, 2, 12);
    std::vector<FeatureGrid> tau = tau_planes({1.0}, 4, 4);
    std::vector<FeatureGrid> feats{f1};
    EXPECT_THROW(fuse(view(tau), view(feats), canvas), ParameterError);
}

TEST(TransparencyLoss, ConstructedOptimumIsZero) {
    FeatureGrid f1 = oracles::random_grid(4, 4, 3, 13);
    FeatureGrid f2 = oracles::random_grid(4, 4, 3, 14);
    FeatureGrid canvas = oracles::random_grid(4, 4, 3, 15);
    std::vector<FeatureGrid> tau = tau_planes({0.5, 0.5}, 4, 4);
    std::vector<FeatureGrid> feats{f1, f2};
    Mask m_tau(4, 4, 1.0);
    FeatureGrid recon = fuse(view(tau), view(feats), canvas);
    EXPECT_EQ(transparency_loss(view(tau), view(feats), canvas, recon, m_tau), 0.0);
}

TEST(TransparencyLoss, HingeTermArithmetic) {
    // tau1 = -0.1 on ten cells, everything else at the optimum off the
    // overlap region: loss = 10 * 0.01.
    FeatureGrid f1 = oracles::random_grid(5, 5, 2, 16);
    FeatureGrid canvas = oracles::random_grid(5, 5, 2, 17);
    std::vector<FeatureGrid> tau = tau_planes({0.0}, 5, 5);
    for (int i = 0; i < 10; ++i) tau[0].values[static_cast<std::size_t>(i)] = -0.1;
    std::vector<FeatureGrid> feats{f1};
    Mask m_tau(5, 5);  // empty overlap: only the hinge fires
    FeatureGrid recon = canvas;
    double loss = transparency_loss(view(tau), view(feats), canvas, recon, m_tau);
    EXPECT_NEAR(loss, 0.1, 1e-12);
}

TEST(TransparencyLoss, MatchesLoopOracle) {
    for (unsigned seed = 1; seed <= 10; ++seed) {
        FeatureGrid f1 = oracles::random_grid(8, 8, 4, seed);
        FeatureGrid f2 = oracles::random_grid(8, 8, 4, seed + 20);
        FeatureGrid canvas = oracles::random_grid(8, 8, 4, seed + 40);
        FeatureGrid recon = oracles::random_grid(8, 8, 4, seed + 60);
        std::vector<FeatureGrid> tau;
        tau.push_back(oracles::random_grid(8, 8, 1, seed + 80, -0.3, 1.2));
        tau.push_back(oracles::random_grid(8, 8, 1, seed + 90, -0.3, 1.2));
        std::vector<FeatureGrid> feats{f1, f2};
        Mask m_tau = overlap_mask(view(tau));
        double got = transparency_loss(view(tau), view(feats), canvas, recon, m_tau);
        double expect = oracles::transparency_loss(tau, feats, canvas, recon, m_tau);
        EXPECT_NEAR(got, expect, 1e-12 * std::max(1.0, std::abs(expect)));
    }
}

TEST(TransparencyGrad, ZeroAtConstructedOptimum) {
    FeatureGrid f1 = oracles::random_grid(4, 4, 3, 21);
    FeatureGrid f2 = oracles::random_grid(4, 4, 3, 22);
    FeatureGrid canvas = oracles::random_grid(4, 4, 3, 23);
    std::vector<FeatureGrid> tau = tau_planes({0.5, 0.5}, 4, 4);
    std::vector<FeatureGrid> feats{f1, f2};
    Mask m_tau(4, 4, 1.0);
    FeatureGrid recon = fuse(view(tau), view(feats), canvas);
    for (int n = 0; n < 2; ++n) {
        FeatureGrid g = transparency_grad(view(tau), n, view(feats), canvas, recon, m_tau);
        for (double v : g.values) EXPECT_EQ(v, 0.0);
    }
}

TEST(TransparencyGrad, HingeOnlyCell) {
    FeatureGrid f1 = oracles::random_grid(3, 3, 2, 24);
    FeatureGrid canvas = oracles::random_grid(3, 3, 2, 25);
    std::vector<FeatureGrid> tau = tau_planes({0.0}, 3, 3);
    tau[0].at(1, 1, 0) = -0.1;
    std::vector<FeatureGrid> feats{f1};
    Mask m_tau(3, 3);  // cell is outside the overlap region
    FeatureGrid recon = canvas;
    FeatureGrid g = transparency_grad(view(tau), 0, view(feats), canvas, recon, m_tau);
    EXPECT_NEAR(g.at(1, 1, 0), -0.2, 1e-15);
    EXPECT_EQ(g.at(0, 0, 0), 0.0);
}

TEST(TransparencyGrad, MatchesCentralFiniteDifferences) {
    for (unsigned seed = 1; seed <= 5; ++seed) {
        const int n_layers = 1 + static_cast<int>(seed % 3);
        FeatureGrid canvas = oracles::random_grid(8, 8, 8, seed + 200);
        FeatureGrid recon = oracles::random_grid(8, 8, 8, seed + 300);
        std::vector<FeatureGrid> feats;
        std::vector<FeatureGrid> tau;
        for (int i = 0; i < n_layers; ++i) {
            feats.push_back(oracles::random_grid(8, 8, 8, seed + 400 + i));
            tau.push_back(oracles::random_grid(8, 8, 1, seed + 500 + i, -0.3, 1.2));
        }
        Mask m_tau = overlap_mask(view(tau));  // frozen during differencing
        auto loss_fn = [&](const std::vector<FeatureGrid>& t) {
            return transparency_loss(view(t), view(feats), canvas, recon, m_tau);
        };
        for (int n = 0; n < n_layers; ++n) {
            FeatureGrid analytic =
                transparency_grad(view(tau), n, view(feats), canvas, recon, m_tau);
            FeatureGrid fd = oracles::central_diff(tau, n, 1e-6, loss_fn);
            for (std::size_t i = 0; i < analytic.values.size(); ++i) {
                double denom = std::max({std::abs(fd.values[i]), std::abs(analytic.values[i]),
                                         1e-6});
                EXPECT_LE(std::abs(analytic.values[i] - fd.values[i]) / denom, 1e-4);
            }
        }
    }
}

TEST(OptimizeTransparency, ZeroIterationsLeaveTauUntouched) {
    FeatureGrid f1 = oracles::random_grid(4, 4, 2, 31);
    FeatureGrid canvas = oracles::random_grid(4, 4, 2, 32);
    FeatureGrid recon = oracles::random_grid(4, 4, 2, 33);
    TransparencyField field;
    field.tau = tau_planes({0.7}, 4, 4);
    std::vector<FeatureGrid> feats{f1};
    std::vector<FeatureGrid> before = field.tau;
    OptimizeStats stats = optimize_transparency(field, view(feats), canvas, recon, 1e-2, 0);
    EXPECT_EQ(field.tau[0].values, before[0].values);
    EXPECT_EQ(stats.initial_loss, stats.final_loss);
}

TEST(OptimizeTransparency, MixtureRecoveryMatchesLsqOracle) {
    const int d = 8;
    FeatureGrid f1 = oracles::random_grid(8, 8, d, 34);
    FeatureGrid f2 = oracles::random_grid(8, 8, d, 35);
    FeatureGrid canvas = oracles::random_grid(8, 8, d, 36);
    FeatureGrid recon(8, 8, d);
    const double alpha = 0.6;
    for (std::size_t i = 0; i < recon.values.size(); ++i)
        recon.values[i] = alpha * f1.values[i] + (1.0 - alpha) * f2.values[i];
    TransparencyField field;
    field.tau = tau_planes({0.5, 0.5}, 8, 8);
    std::vector<FeatureGrid> feats{f1, f2};
    OptimizeStats stats = optimize_transparency(field, view(feats), canvas, recon, 8e-3, 500);
    EXPECT_LE(stats.final_loss, stats.initial_loss);
    for (int i = 0; i < 64; ++i) {
        EXPECT_NEAR(field.tau[0].values[static_cast<std::size_t>(i)], alpha, 1e-2);
        EXPECT_NEAR(field.tau[1].values[static_cast<std::size_t>(i)], 1.0 - alpha, 1e-2);
        std::vector<double> a(static_cast<std::size_t>(d)), b(a.size()), y(a.size());
        for (int c = 0; c < d; ++c) {
            std::size_t idx = static_cast<std::size_t>(i) * d + c;
            a[static_cast<std::size_t>(c)] = f1.values[idx] - canvas.values[idx];
            b[static_cast<std::size_t>(c)] = f2.values[idx] - canvas.values[idx];
            y[static_cast<std::size_t>(c)] = recon.values[idx] - canvas.values[idx];
        }
        oracles::PixelTau exact = oracles::lsq_two_layer(a, b, y);
        EXPECT_NEAR(field.tau[0].values[static_cast<std::size_t>(i)], exact.tau1, 1e-2);
        EXPECT_NEAR(field.tau[1].values[static_cast<std::size_t>(i)], exact.tau2, 1e-2);
    }
}

TEST(OptimizeTransparency, MonotoneDescentAtSmallStep) {
    FeatureGrid f1 = oracles::random_grid(6, 6, 4, 41);
    FeatureGrid f2 = oracles::random_grid(6, 6, 4, 42);
    FeatureGrid canvas = oracles::random_grid(6, 6, 4, 43);
    FeatureGrid recon = oracles::random_grid(6, 6, 4, 44);
    TransparencyField field;
    field.tau = tau_planes({0.5, 0.5}, 6, 6);
    std::vector<FeatureGrid> feats{f1, f2};
    double prev = transparency_loss(view(field.tau), view(feats), canvas, recon,
                                    overlap_mask(field));
    for (int it = 0; it < 30; ++it) {
        OptimizeStats st = optimize_transparency(field, view(feats), canvas, recon, 1e-3, 1);
        EXPECT_LE(st.final_loss, prev + 1e-12);
        prev = st.final_loss;
    }
}

TEST(OptimizeTransparency, DivergenceTriggersStepHalving) {
    FeatureGrid f1 = oracles::random_grid(6, 6, 4, 51);
    FeatureGrid f2 = oracles::random_grid(6, 6, 4, 52);
    FeatureGrid canvas = oracles::random_grid(6, 6, 4, 53);
    FeatureGrid recon = oracles::random_grid(6, 6, 4, 54);
    TransparencyField field;
    field.tau = tau_planes({0.5, 0.5}, 6, 6);
    std::vector<FeatureGrid> feats{f1, f2};
    OptimizeStats st = optimize_transparency(field, view(feats), canvas, recon, 10.0, 20);
    EXPECT_GT(st.halvings + (st.diverged ? 1 : 0), 0);
    EXPECT_LE(st.final_loss, st.initial_loss + 1e-12);
    for (const FeatureGrid& t : field.tau)
        for (double v : t.values) {
            EXPECT_GE(v, -0.5);
            EXPECT_LE(v, 1.5);
        }
}

TEST(InitTransparency, MaskPlusBandSeeding) {
    Mask obj = rect_mask(10, 10, 4, 4, 5, 5);
    std::vector<Mask> objects{obj};
    TransparencyField field = init_transparency(objects, {});
    for (int h = 0; h < 10; ++h)
        for (int w = 0; w < 10; ++w) {
            double expect;
            if (obj.at(h, w) > 0.0)
                expect = 1.0;
            else if (h >= 2 && h <= 7 && w >= 2 && w <= 7)
                expect = 0.05;  // two-pixel dilation band
            else
                expect = 0.0;
            EXPECT_EQ(field.tau[0].at(h, w, 0), expect);
        }
}

TEST(InitTransparency, DestinationSupportSeeded) {
    Mask obj = rect_mask(12, 12, 1, 1, 2, 2);
    Mask dest = rect_mask(12, 12, 8, 8, 9, 9);
    std::vector<Mask> objects{obj};
    std::vector<std::vector<Mask>> dests{{dest}};
    TransparencyField field = init_transparency(objects, dests);
    EXPECT_EQ(field.tau[0].at(8, 8, 0), 0.05);   // destination interior
    EXPECT_EQ(field.tau[0].at(10, 10, 0), 0.05); // band around destination
    EXPECT_EQ(field.tau[0].at(1, 1, 0), 1.0);
    EXPECT_EQ(field.tau[0].at(5, 5, 0), 0.0);
}

TEST(TauAsMask, ClampsToUnitRange) {
    FeatureGrid plane(2, 2, 1);
    plane.at(0, 0, 0) = -0.3;
    plane.at(0, 1, 0) = 0.4;
    plane.at(1, 0, 0) = 1.4;
    plane.at(1, 1, 0) = 1.0;
    Mask m = tau_as_mask(plane);
    EXPECT_EQ(m.at(0, 0), 0.0);
    EXPECT_EQ(m.at(0, 1), 0.4);
    EXPECT_EQ(m.at(1, 0), 1.0);
    EXPECT_EQ(m.at(1, 1), 1.0);
}
