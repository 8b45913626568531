#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "layerkit/errors.hpp"
#include "layerkit/grid.hpp"

namespace layerkit {

// Per-layer contribution weights for fusion. tau planes are single-channel
// grids; values may leave [0,1] during descent (clamped to [-0.5, 1.5]) and
// are clamped to [0,1] only for reporting.
struct TransparencyField {
    std::vector<FeatureGrid> tau;  // N planes, channels == 1
    Mask overlap;                  // M_tau, recomputed from current tau
    int iterations_run = 0;

    int layers() const { return static_cast<int>(tau.size()); }
};

// Cell is 1 iff at least two layers have tau > 0 there.
inline Mask overlap_mask(std::span<const FeatureGrid> tau) {
    require(!tau.empty(), "overlap_mask: no layers");
    Mask out(tau[0].height, tau[0].width);
    for (const FeatureGrid& t : tau)
        require(t.channels == 1 && t.height == out.height && t.width == out.width,
                "overlap_mask: tau plane shape mismatch");
    for (int i = 0; i < out.pixels(); ++i) {
        int positive = 0;
        for (const FeatureGrid& t : tau)
            if (t.values[static_cast<std::size_t>(i)] > 0.0) ++positive;
        out.values[static_cast<std::size_t>(i)] = positive >= 2 ? 1.0 : 0.0;
    }
    return out;
}

inline Mask overlap_mask(const TransparencyField& field) {
    return overlap_mask(std::span<const FeatureGrid>(field.tau.data(), field.tau.size()));
}

// sum_i tau_i * feat_i + (1 - sum_i tau_i) * canvas, per pixel, broadcast
// over channels.
inline FeatureGrid fuse(std::span<const FeatureGrid> tau, std::span<const FeatureGrid> feats,
                        const FeatureGrid& canvas) {
    require(tau.size() == feats.size(), "fuse: tau/feature count mismatch");
    FeatureGrid out(canvas.height, canvas.width, canvas.channels);
    for (std::size_t n = 0; n < feats.size(); ++n) {
        require(feats[n].same_shape(canvas), "fuse: feature shape mismatch");
        require(tau[n].channels == 1 && tau[n].height == canvas.height &&
                    tau[n].width == canvas.width,
                "fuse: tau plane shape mismatch");
    }
    for (int i = 0; i < canvas.pixels(); ++i) {
        double total = 0.0;
        for (std::size_t n = 0; n < tau.size(); ++n)
            total += tau[n].values[static_cast<std::size_t>(i)];
        for (int c = 0; c < canvas.channels; ++c) {
            double acc = (1.0 - total) *
                         canvas.values[static_cast<std::size_t>(i) * canvas.channels + c];
            for (std::size_t n = 0; n < tau.size(); ++n)
                acc += tau[n].values[static_cast<std::size_t>(i)] *
                       feats[n].values[static_cast<std::size_t>(i) * canvas.channels + c];
            out.values[static_cast<std::size_t>(i) * canvas.channels + c] = acc;
        }
    }
    return out;
}

inline FeatureGrid fuse(const TransparencyField& field, std::span<const FeatureGrid> feats,
                        const FeatureGrid& canvas) {
    return fuse(std::span<const FeatureGrid>(field.tau.data(), field.tau.size()), feats, canvas);
}

// Constraint loss: reconstruction on the overlap region, non-negativity hinge,
// and the unit-sum constraint on the overlap region. Summed over pixels and
// channels.
inline double transparency_loss(std::span<const FeatureGrid> tau,
                                std::span<const FeatureGrid> feats, const FeatureGrid& canvas,
                                const FeatureGrid& recon, const Mask& m_tau) {
    require(recon.same_shape(canvas), "transparency_loss: recon shape mismatch");
    require(m_tau.height == canvas.height && m_tau.width == canvas.width,
            "transparency_loss: overlap mask shape mismatch");
    FeatureGrid fused = fuse(tau, feats, canvas);
    double loss = 0.0;
    for (int i = 0; i < canvas.pixels(); ++i) {
        double m = m_tau.values[static_cast<std::size_t>(i)];
        if (m > 0.0) {
            for (int c = 0; c < canvas.channels; ++c) {
                double d = (fused.values[static_cast<std::size_t>(i) * canvas.channels + c] -
                            recon.values[static_cast<std::size_t>(i) * canvas.channels + c]) *
                           m;
                loss += d * d;
            }
        }
        double total = 0.0;
        for (const FeatureGrid& t : tau) {
            double tv = t.values[static_cast<std::size_t>(i)];
            total += tv;
            double hinge = std::max(0.0, -tv);
            loss += hinge * hinge;
        }
        if (m > 0.0) {
            double d = (1.0 - total) * m;
            loss += d * d;
        }
    }
    return loss;
}

// Analytic gradient of the loss with respect to tau_n, one value per pixel.
inline FeatureGrid transparency_grad(std::span<const FeatureGrid> tau, int n,
                                     std::span<const FeatureGrid> feats,
                                     const FeatureGrid& canvas, const FeatureGrid& recon,
                                     const Mask& m_tau) {
    require(n >= 0 && n < static_cast<int>(tau.size()), "transparency_grad: layer out of range");
    FeatureGrid fused = fuse(tau, feats, canvas);
    FeatureGrid grad(canvas.height, canvas.width, 1);
    const FeatureGrid& fn = feats[static_cast<std::size_t>(n)];
    for (int i = 0; i < canvas.pixels(); ++i) {
        double m = m_tau.values[static_cast<std::size_t>(i)];
        double g = 0.0;
        if (m > 0.0) {
            double dot = 0.0;
            for (int c = 0; c < canvas.channels; ++c) {
                std::size_t idx = static_cast<std::size_t>(i) * canvas.channels + c;
                dot += (fused.values[idx] - recon.values[idx]) *
                       (fn.values[idx] - canvas.values[idx]);
            }
            g += 2.0 * dot * m;
            double total = 0.0;
            for (const FeatureGrid& t : tau) total += t.values[static_cast<std::size_t>(i)];
            g -= 2.0 * (1.0 - total) * m;
        }
        double tv = tau[static_cast<std::size_t>(n)].values[static_cast<std::size_t>(i)];
        g -= 2.0 * std::max(0.0, -tv);
        grad.values[static_cast<std::size_t>(i)] = g;
    }
    return grad;
}

struct OptimizeStats {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double step_size_used = 0.0;
    int halvings = 0;
    bool diverged = false;  // still increasing after the retry budget
};

// Plain gradient descent on tau, recomputing the overlap mask every
// iteration. If the loss increased over the whole pass the update is rolled
// back and retried with a halved step size, at most three times.
inline OptimizeStats optimize_transparency(TransparencyField& field,
                                           std::span<const FeatureGrid> feats,
                                           const FeatureGrid& canvas, const FeatureGrid& recon,
                                           double step_size, int iterations) {
    require(step_size > 0.0, "optimize_transparency: step size must be positive");
    require(iterations >= 0, "optimize_transparency: negative iteration count");
    require(static_cast<std::size_t>(field.layers()) == feats.size(),
            "optimize_transparency: layer count mismatch");

    OptimizeStats stats;
    auto tau_view = [&field]() {
        return std::span<const FeatureGrid>(field.tau.data(), field.tau.size());
    };
    field.overlap = overlap_mask(field);
    stats.initial_loss = transparency_loss(tau_view(), feats, canvas, recon, field.overlap);
    stats.final_loss = stats.initial_loss;
    stats.step_size_used = step_size;
    if (iterations == 0 || field.layers() == 0) return stats;

    std::vector<FeatureGrid> snapshot = field.tau;
    double lr = step_size;
    for (int attempt = 0; attempt <= 3; ++attempt) {
        for (int it = 0; it < iterations; ++it) {
            field.overlap = overlap_mask(field);
            std::vector<FeatureGrid> grads;
            grads.reserve(field.tau.size());
            for (int n = 0; n < field.layers(); ++n)
                grads.push_back(transparency_grad(tau_view(), n, feats, canvas, recon,
                                                  field.overlap));
            for (int n = 0; n < field.layers(); ++n) {
                FeatureGrid& t = field.tau[static_cast<std::size_t>(n)];
                const FeatureGrid& g = grads[static_cast<std::size_t>(n)];
                for (std::size_t i = 0; i < t.values.size(); ++i)
                    t.values[i] = std::clamp(t.values[i] - lr * g.values[i], -0.5, 1.5);
            }
            ++field.iterations_run;
        }
        field.overlap = overlap_mask(field);
        double loss = transparency_loss(tau_view(), feats, canvas, recon, field.overlap);
        if (loss <= stats.initial_loss) {
            stats.final_loss = loss;
            stats.step_size_used = lr;
            return stats;
        }
        if (attempt == 3) {
            // Retry budget exhausted: keep the pre-descent state.
            field.tau = snapshot;
            field.overlap = overlap_mask(field);
            stats.final_loss = stats.initial_loss;
            stats.step_size_used = lr;
            stats.diverged = true;
            return stats;
        }
        field.tau = snapshot;
        lr *= 0.5;
        ++stats.halvings;
    }
    return stats;
}

// Initial transparency: 1 on the object mask, a small epsilon in a dilation
// band around it and around any geometric destination support, so overlaps
// can form where edits expand or relocate objects.
inline TransparencyField init_transparency(std::span<const Mask> object_masks,
                                           std::span<const std::vector<Mask>> dest_supports,
                                           int band_radius = 2, double epsilon = 0.05) {
    require(dest_supports.empty() || dest_supports.size() == object_masks.size(),
            "init_transparency: destination support count mismatch");
    TransparencyField field;
    field.tau.reserve(object_masks.size());
    for (std::size_t i = 0; i < object_masks.size(); ++i) {
        const Mask& own = object_masks[i];
        Mask band = dilate(own, band_radius);
        if (!dest_supports.empty())
            for (const Mask& dest : dest_supports[i])
                band = mask_union(band, dilate(dest, band_radius));
        FeatureGrid t(own.height, own.width, 1);
        for (int p = 0; p < own.pixels(); ++p) {
            if (own.values[static_cast<std::size_t>(p)] > 0.0)
                t.values[static_cast<std::size_t>(p)] = 1.0;
            else if (band.values[static_cast<std::size_t>(p)] > 0.0)
                t.values[static_cast<std::size_t>(p)] = epsilon;
        }
        field.tau.push_back(std::move(t));
    }
    if (!field.tau.empty()) field.overlap = overlap_mask(field);
    return field;
}

// Reporting view: tau clamped to [0,1] as a mask.
inline Mask tau_as_mask(const FeatureGrid& tau_plane) {
    return mask_from_plane(tau_plane, /*clamp_to_unit=*/true);
}

}  // namespace layerkit
