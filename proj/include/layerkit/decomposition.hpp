#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "layerkit/errors.hpp"
#include "layerkit/grid.hpp"
#include "layerkit/rng.hpp"
#include "layerkit/schedule.hpp"

namespace layerkit {

// Arithmetic mean over per-step attention maps, max-normalized to [0,1].
// An identically-zero stack stays zero.
inline Mask aggregate_attention(std::span<const Mask> maps) {
    require(!maps.empty(), "aggregate_attention: empty map list");
    Mask acc(maps[0].height, maps[0].width);
    for (const Mask& m : maps) {
        require(m.same_shape(acc), "aggregate_attention: map shape mismatch");
        for (std::size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += m.values[i];
    }
    double hi = 0.0;
    for (double& v : acc.values) {
        v /= static_cast<double>(maps.size());
        hi = std::max(hi, v);
    }
    if (hi > 0.0)
        for (double& v : acc.values) v /= hi;
    return acc;
}

struct AIoU {
    double value = 0.0;
    bool degenerate = false;  // both operands identically zero
};

// Soft IoU: sum(min) / sum(max). Degenerates to classic IoU on binary inputs.
inline AIoU a_iou(const Mask& agg, const Mask& pan) {
    require(agg.same_shape(pan), "a_iou: shape mismatch");
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < agg.values.size(); ++i) {
        inter += std::min(agg.values[i], pan.values[i]);
        uni += std::max(agg.values[i], pan.values[i]);
    }
    AIoU out;
    if (uni == 0.0) {
        out.degenerate = true;
        out.value = 0.0;
    } else {
        out.value = inter / uni;
    }
    return out;
}

// Union of panoptic regions whose IoU row entry exceeds eta, minus the
// object's own region.
inline Mask conflict_mask(std::span<const double> iou_row, double eta,
                          std::span<const Mask> panoptic, const Mask& own) {
    require(eta > 0.0 && eta < 1.0, "conflict_mask: eta outside (0,1)");
    require(iou_row.size() == panoptic.size(), "conflict_mask: row/mask count mismatch");
    Mask acc(own.height, own.width);
    for (std::size_t j = 0; j < panoptic.size(); ++j) {
        require(panoptic[j].same_shape(own), "conflict_mask: panoptic shape mismatch");
        if (iou_row[j] > eta) acc = mask_union(acc, panoptic[j]);
    }
    return mask_minus(acc, own);
}

inline void validate_panoptic_disjoint(std::span<const Mask> panoptic) {
    for (std::size_t a = 0; a < panoptic.size(); ++a) {
        require(panoptic[a].is_binary(), "panoptic mask must be binary");
        for (std::size_t b = a + 1; b < panoptic.size(); ++b) {
            require(panoptic[a].same_shape(panoptic[b]), "panoptic shape mismatch");
            for (std::size_t i = 0; i < panoptic[a].values.size(); ++i)
                require(!(panoptic[a].values[i] > 0.0 && panoptic[b].values[i] > 0.0),
                        "panoptic masks overlap");
        }
    }
}

// N x K attention-aware IoU matrix plus the per-object conflict masks.
struct ConflictReport {
    int objects = 0;
    int regions = 0;
    double eta = 0.0;
    std::vector<double> iou;              // row-major objects x regions
    std::vector<bool> degenerate;         // per (object, region) pair
    std::vector<Mask> conflict;           // per object
    double iou_at(int i, int j) const { return iou[static_cast<std::size_t>(i) * regions + j]; }
};

inline ConflictReport build_conflict_report(std::span<const Mask> aggregated,
                                            std::span<const Mask> panoptic,
                                            std::span<const Mask> object_masks, double eta) {
    require(aggregated.size() == object_masks.size(),
            "build_conflict_report: aggregated/object count mismatch");
    validate_panoptic_disjoint(panoptic);
    ConflictReport rep;
    rep.objects = static_cast<int>(aggregated.size());
    rep.regions = static_cast<int>(panoptic.size());
    rep.eta = eta;
    rep.iou.resize(static_cast<std::size_t>(rep.objects) * rep.regions, 0.0);
    rep.degenerate.resize(rep.iou.size(), false);
    for (int i = 0; i < rep.objects; ++i)
        for (int j = 0; j < rep.regions; ++j) {
            AIoU r = a_iou(aggregated[static_cast<std::size_t>(i)],
                           panoptic[static_cast<std::size_t>(j)]);
            rep.iou[static_cast<std::size_t>(i) * rep.regions + j] = r.value;
            rep.degenerate[static_cast<std::size_t>(i) * rep.regions + j] = r.degenerate;
        }
    rep.conflict.reserve(static_cast<std::size_t>(rep.objects));
    for (int i = 0; i < rep.objects; ++i) {
        std::span<const double> row(rep.iou.data() + static_cast<std::size_t>(i) * rep.regions,
                                    static_cast<std::size_t>(rep.regions));
        rep.conflict.push_back(conflict_mask(row, eta, panoptic,
                                             object_masks[static_cast<std::size_t>(i)]));
    }
    return rep;
}

// sigmoid(k * (SNR(t_thres) / SNR(t) - 1)) evaluated per denoising step.
// Steps count from the noisy end: step 1 is the first denoising step
// (sampler position S), step S the last (position 1).
inline double removal_rate(int denoise_step, const NoiseSchedule& sched, double k, int t_thres) {
    require(denoise_step >= 1 && denoise_step <= sched.steps,
            "removal_rate: denoise step out of range");
    require(t_thres >= 1 && t_thres <= sched.steps, "removal_rate: t_thres out of range");
    require(k > 0.0, "removal_rate: k must be positive");
    int pos = sched.steps - denoise_step + 1;
    int pos_thres = sched.steps - t_thres + 1;
    double ratio = snr(sched, pos_thres) / snr(sched, pos);
    return 1.0 / (1.0 + std::exp(-k * (ratio - 1.0)));
}

// Precomputed r(t) table for one feature role (query or key).
struct RemovalSchedule {
    double steepness = 5.0;
    int threshold_step = 0;
    std::vector<double> rate;  // index 0 unused; 1..S

    static RemovalSchedule build(const NoiseSchedule& sched, double k, int t_thres) {
        RemovalSchedule rs;
        rs.steepness = k;
        rs.threshold_step = t_thres;
        rs.rate.resize(static_cast<std::size_t>(sched.steps) + 1, 0.0);
        for (int n = 1; n <= sched.steps; ++n)
            rs.rate[static_cast<std::size_t>(n)] = removal_rate(n, sched, k, t_thres);
        return rs;
    }

    double at_step(int denoise_step) const {
        require(denoise_step >= 1 && denoise_step < static_cast<int>(rate.size()),
                "removal schedule step out of range");
        return rate[static_cast<std::size_t>(denoise_step)];
    }

    // Same table addressed by sampler position (S - n + 1).
    double at_position(int position) const {
        int steps = static_cast<int>(rate.size()) - 1;
        return at_step(steps - position + 1);
    }
};

// f elementwise scaled by (1 - m_con * Bernoulli(r)); cells outside the
// conflict region are untouched, masked cells drop their full feature vector.
inline FeatureGrid region_remove(const FeatureGrid& f, const Mask& m_con, double r,
                                 const SeededRng& rng) {
    require(m_con.height == f.height && m_con.width == f.width, "region_remove: shape mismatch");
    require(m_con.is_binary(), "region_remove: conflict mask must be binary");
    require(r >= 0.0 && r <= 1.0, "region_remove: rate outside [0,1]");
    FeatureGrid out = f;
    if (r == 0.0) return out;
    Mask draw = bernoulli_mask(f.height, f.width, r, rng);
    for (int i = 0; i < f.pixels(); ++i) {
        if (m_con.values[static_cast<std::size_t>(i)] > 0.0 &&
            draw.values[static_cast<std::size_t>(i)] > 0.0) {
            double* row = out.values.data() + static_cast<std::size_t>(i) * f.channels;
            std::fill(row, row + f.channels, 0.0);
        }
    }
    return out;
}

}  // namespace layerkit
