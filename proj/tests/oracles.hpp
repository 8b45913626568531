// Independent scalar-loop oracles used to check the library implementations.
// Everything here is deliberately written from the definitions, without
// reusing library code paths beyond the value containers.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "layerkit/grid.hpp"

namespace oracles {

using layerkit::FeatureGrid;
using layerkit::Mask;

// Dense row-major matrix helpers over plain vectors.
inline std::vector<double> matmul(const std::vector<double>& a, int ra, int ca,
                                  const std::vector<double>& b, int cb) {
    std::vector<double> out(static_cast<std::size_t>(ra) * cb, 0.0);
    for (int i = 0; i < ra; ++i)
        for (int k = 0; k < ca; ++k)
            for (int j = 0; j < cb; ++j)
                out[static_cast<std::size_t>(i) * cb + j] +=
                    a[static_cast<std::size_t>(i) * ca + k] * b[static_cast<std::size_t>(k) * cb + j];
    return out;
}

// softmax(Q K^T / sqrt(d)) V computed with explicit loops.
struct AttentionOracle {
    std::vector<double> features;  // nq x d
    std::vector<double> map;       // nq x nk
};

inline AttentionOracle attention(const std::vector<double>& q, int nq,
                                 const std::vector<double>& k, const std::vector<double>& v,
                                 int nk, int d) {
    AttentionOracle out;
    out.features.assign(static_cast<std::size_t>(nq) * d, 0.0);
    out.map.assign(static_cast<std::size_t>(nq) * nk, 0.0);
    for (int i = 0; i < nq; ++i) {
        std::vector<double> logits(static_cast<std::size_t>(nk), 0.0);
        double hi = -1e300;
        for (int j = 0; j < nk; ++j) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c)
                dot += q[static_cast<std::size_t>(i) * d + c] * k[static_cast<std::size_t>(j) * d + c];
            logits[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(d));
            hi = std::max(hi, logits[static_cast<std::size_t>(j)]);
        }
        double denom = 0.0;
        for (int j = 0; j < nk; ++j) denom += std::exp(logits[static_cast<std::size_t>(j)] - hi);
        for (int j = 0; j < nk; ++j) {
            double a = std::exp(logits[static_cast<std::size_t>(j)] - hi) / denom;
            out.map[static_cast<std::size_t>(i) * nk + j] = a;
            for (int c = 0; c < d; ++c)
                out.features[static_cast<std::size_t>(i) * d + c] +=
                    a * v[static_cast<std::size_t>(j) * d + c];
        }
    }
    return out;
}

// Mask-weighted accumulation with explicit loops.
inline double reduce_sum(const FeatureGrid& g, const Mask& m) {
    double acc = 0.0;
    for (int h = 0; h < g.height; ++h)
        for (int w = 0; w < g.width; ++w)
            for (int c = 0; c < g.channels; ++c)
                if (m.at(h, w) > 0.0) acc += g.at(h, w, c) * m.at(h, w);
    return acc;
}

// Mean over per-step maps followed by max normalization.
inline Mask aggregate(const std::vector<Mask>& maps) {
    Mask out(maps.front().height, maps.front().width);
    for (int h = 0; h < out.height; ++h)
        for (int w = 0; w < out.width; ++w) {
            double s = 0.0;
            for (const Mask& m : maps) s += m.at(h, w);
            out.at(h, w) = s / static_cast<double>(maps.size());
        }
    double hi = 0.0;
    for (double v : out.values) hi = std::max(hi, v);
    if (hi > 0.0)
        for (double& v : out.values) v /= hi;
    return out;
}

inline double soft_iou(const Mask& a, const Mask& b) {
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        inter += std::min(a.values[i], b.values[i]);
        uni += std::max(a.values[i], b.values[i]);
    }
    return uni == 0.0 ? 0.0 : inter / uni;
}

// Union-minus set construction per cell.
inline Mask conflict(const std::vector<double>& iou_row, double eta,
                     const std::vector<Mask>& panoptic, const Mask& own) {
    Mask out(own.height, own.width);
    for (int h = 0; h < own.height; ++h)
        for (int w = 0; w < own.width; ++w) {
            bool member = false;
            for (std::size_t j = 0; j < panoptic.size(); ++j)
                if (iou_row[j] > eta && panoptic[j].at(h, w) > 0.0) member = true;
            if (member && own.at(h, w) <= 0.0) out.at(h, w) = 1.0;
        }
    return out;
}

// The fusion constraint loss written directly from its three terms.
inline double transparency_loss(const std::vector<FeatureGrid>& tau,
                                const std::vector<FeatureGrid>& feats, const FeatureGrid& canvas,
                                const FeatureGrid& recon, const Mask& m_tau) {
    double loss = 0.0;
    const int n = static_cast<int>(tau.size());
    for (int h = 0; h < canvas.height; ++h)
        for (int w = 0; w < canvas.width; ++w) {
            double total = 0.0;
            for (int i = 0; i < n; ++i) total += tau[static_cast<std::size_t>(i)].at(h, w, 0);
            double m = m_tau.at(h, w);
            for (int c = 0; c < canvas.channels; ++c) {
                double fused = (1.0 - total) * canvas.at(h, w, c);
                for (int i = 0; i < n; ++i)
                    fused += tau[static_cast<std::size_t>(i)].at(h, w, 0) *
                             feats[static_cast<std::size_t>(i)].at(h, w, c);
                double d = (fused - recon.at(h, w, c)) * m;
                loss += d * d;
            }
            for (int i = 0; i < n; ++i) {
                double hinge = std::max(0.0, -tau[static_cast<std::size_t>(i)].at(h, w, 0));
                loss += hinge * hinge;
            }
            double d = (1.0 - total) * m;
            loss += d * d;
        }
    return loss;
}

// Central finite differences of the loss with a frozen overlap mask.
template <class LossFn>
inline FeatureGrid central_diff(std::vector<FeatureGrid> tau, int n, double h, LossFn&& loss_fn) {
    FeatureGrid grad(tau[static_cast<std::size_t>(n)].height,
                     tau[static_cast<std::size_t>(n)].width, 1);
    for (std::size_t i = 0; i < grad.values.size(); ++i) {
        double saved = tau[static_cast<std::size_t>(n)].values[i];
        tau[static_cast<std::size_t>(n)].values[i] = saved + h;
        double up = loss_fn(tau);
        tau[static_cast<std::size_t>(n)].values[i] = saved - h;
        double down = loss_fn(tau);
        tau[static_cast<std::size_t>(n)].values[i] = saved;
        grad.values[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

// Per-pixel constrained least squares for the two-layer mixture family:
// minimize |tau1 a + tau2 b - y|^2 + (1 - tau1 - tau2)^2 per pixel.
struct PixelTau {
    double tau1 = 0.0;
    double tau2 = 0.0;
};

inline PixelTau lsq_two_layer(std::span<const double> a, std::span<const double> b,
                              std::span<const double> y) {
    double aa = 1.0, ab = 1.0, bb = 1.0, ay = 1.0, by = 1.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        aa += a[c] * a[c];
        ab += a[c] * b[c];
        bb += b[c] * b[c];
        ay += a[c] * y[c];
        by += b[c] * y[c];
    }
    double det = aa * bb - ab * ab;
    PixelTau t;
    t.tau1 = (ay * bb - by * ab) / det;
    t.tau2 = (by * aa - ay * ab) / det;
    return t;
}

// Binomial three-sigma acceptance band for an empirical mean of n draws.
inline bool within_3sigma(double observed_mean, double p, int n) {
    double sigma = std::sqrt(p * (1.0 - p) / n);
    return std::abs(observed_mean - p) <= 3.0 * sigma;
}

inline double rel_l2(const FeatureGrid& a, const FeatureGrid& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        double d = a.values[i] - b.values[i];
        num += d * d;
        den += b.values[i] * b.values[i];
    }
    return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

inline double max_abs_diff(const FeatureGrid& a, const FeatureGrid& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        d = std::max(d, std::abs(a.values[i] - b.values[i]));
    return d;
}

// Deterministic std-based generators for test inputs (independent of the
// library's own SeededRng).
inline FeatureGrid random_grid(int h, int w, int c, unsigned seed, double lo = -1.0,
                               double hi = 1.0) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    FeatureGrid g(h, w, c);
    for (double& v : g.values) v = dist(rng);
    return g;
}

inline Mask random_binary_mask(int h, int w, unsigned seed, double p = 0.5) {
    std::mt19937 rng(seed);
    std::bernoulli_distribution dist(p);
    Mask m(h, w);
    for (double& v : m.values) v = dist(rng) ? 1.0 : 0.0;
    return m;
}

inline Mask random_soft_mask(int h, int w, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Mask m(h, w);
    for (double& v : m.values) v = dist(rng);
    return m;
}

}  // namespace oracles
