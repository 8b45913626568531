#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "layerkit/errors.hpp"
#include "layerkit/rng.hpp"

namespace layerkit {

// H x W grid of d-dimensional feature vectors, row-major (h, w, c).
// The universal carrier for latents, attention outputs and token contexts.
struct FeatureGrid {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> values;

    FeatureGrid() = default;
    FeatureGrid(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c) {
        require(h >= 1 && w >= 1 && c >= 1, "FeatureGrid dims must be >= 1");
        values.assign(static_cast<std::size_t>(h) * w * c, fill);
    }

    double& at(int h, int w, int c) {
        return values[(static_cast<std::size_t>(h) * width + w) * channels + c];
    }
    double at(int h, int w, int c) const {
        return values[(static_cast<std::size_t>(h) * width + w) * channels + c];
    }

    int pixels() const { return height * width; }

    bool same_shape(const FeatureGrid& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static FeatureGrid seeded_normal(int h, int w, int c, const SeededRng& rng) {
        FeatureGrid g(h, w, c);
        for (std::size_t i = 0; i < g.values.size(); ++i)
            g.values[i] = rng.normal_at(i);
        return g;
    }
};

// H x W grid with values in [0, 1]; binary masks contain only {0, 1}.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    Mask() = default;
    Mask(int h, int w, double fill = 0.0) : height(h), width(w) {
        require(h >= 1 && w >= 1, "Mask dims must be >= 1");
        require(fill >= 0.0 && fill <= 1.0, "Mask fill outside [0,1]");
        values.assign(static_cast<std::size_t>(h) * w, fill);
    }

    double& at(int h, int w) { return values[static_cast<std::size_t>(h) * width + w]; }
    double at(int h, int w) const { return values[static_cast<std::size_t>(h) * width + w]; }

    int pixels() const { return height * width; }

    bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }

    bool in_range() const {
        for (double v : values)
            if (!(v >= 0.0 && v <= 1.0)) return false;
        return true;
    }

    bool is_binary() const {
        for (double v : values)
            if (v != 0.0 && v != 1.0) return false;
        return true;
    }

    double sum() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }

    bool empty_support() const {
        for (double v : values)
            if (v > 0.0) return false;
        return true;
    }

    // Single-channel grid view, used where masks feed arithmetic on grids.
    FeatureGrid as_grid() const {
        FeatureGrid g(height, width, 1);
        g.values = values;
        return g;
    }
};

inline Mask mask_from_plane(const FeatureGrid& plane, bool clamp_to_unit = false) {
    require(plane.channels == 1, "mask_from_plane expects a single-channel grid");
    Mask m(plane.height, plane.width);
    for (std::size_t i = 0; i < plane.values.size(); ++i) {
        double v = plane.values[i];
        if (clamp_to_unit) v = std::clamp(v, 0.0, 1.0);
        m.values[i] = v;
    }
    require(m.in_range(), "mask_from_plane: values outside [0,1]");
    return m;
}

// Binary mask with each cell independently 1 with probability r.
// Cell (h, w) consumes draw index h*W+w, so the result is schedule independent.
inline Mask bernoulli_mask(int height, int width, double r, const SeededRng& rng) {
    require(r >= 0.0 && r <= 1.0, "bernoulli probability outside [0,1]");
    Mask m(height, width);
    for (std::size_t i = 0; i < m.values.size(); ++i)
        m.values[i] = rng.uniform_at(i) < r ? 1.0 : 0.0;
    return m;
}

// Align-corners bilinear resampling: output corner pixels coincide with input
// corners, constants are fixed points, same-size resize is an exact copy.
inline FeatureGrid bilinear_resize(const FeatureGrid& grid, int out_h, int out_w) {
    require(out_h >= 1 && out_w >= 1, "bilinear_resize output dims must be >= 1");
    FeatureGrid out(out_h, out_w, grid.channels);
    const double sh = out_h == 1 ? 0.0 : static_cast<double>(grid.height - 1) / (out_h - 1);
    const double sw = out_w == 1 ? 0.0 : static_cast<double>(grid.width - 1) / (out_w - 1);
    const double ch = out_h == 1 ? (grid.height - 1) / 2.0 : 0.0;
    const double cw = out_w == 1 ? (grid.width - 1) / 2.0 : 0.0;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = out_h == 1 ? ch : oy * sh;
        int y0 = static_cast<int>(std::floor(fy));
        y0 = std::clamp(y0, 0, grid.height - 1);
        int y1 = std::min(y0 + 1, grid.height - 1);
        double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = out_w == 1 ? cw : ox * sw;
            int x0 = static_cast<int>(std::floor(fx));
            x0 = std::clamp(x0, 0, grid.width - 1);
            int x1 = std::min(x0 + 1, grid.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < grid.channels; ++c) {
                double top = grid.at(y0, x0, c) * (1.0 - wx) + grid.at(y0, x1, c) * wx;
                double bot = grid.at(y1, x0, c) * (1.0 - wx) + grid.at(y1, x1, c) * wx;
                out.at(oy, ox, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

enum class Reduction { kSum, kMean };

struct ReduceResult {
    double value = 0.0;
    bool empty_support = false;
};

// Mask-weighted reduction over a feature grid; each (pixel, channel) entry is
// weighted by the pixel's mask value. Mean divides by channels * sum(mask).
inline ReduceResult masked_reduce(const FeatureGrid& grid, const Mask& mask, Reduction red) {
    require(grid.height == mask.height && grid.width == mask.width,
            "masked_reduce: shape mismatch");
    double acc = 0.0;
    double wsum = 0.0;
    for (int h = 0; h < grid.height; ++h)
        for (int w = 0; w < grid.width; ++w) {
            double m = mask.at(h, w);
            if (m <= 0.0) continue;
            wsum += m;
            for (int c = 0; c < grid.channels; ++c) acc += grid.at(h, w, c) * m;
        }
    ReduceResult r;
    r.empty_support = wsum == 0.0;
    if (red == Reduction::kSum)
        r.value = acc;
    else
        r.value = r.empty_support ? 0.0 : acc / (wsum * grid.channels);
    return r;
}

inline ReduceResult masked_reduce(const Mask& values, const Mask& mask, Reduction red) {
    return masked_reduce(values.as_grid(), mask, red);
}

// Binary dilation with a square structuring element of the given radius.
inline Mask dilate(const Mask& m, int radius) {
    require(radius >= 0, "dilate: negative radius");
    Mask out(m.height, m.width);
    for (int h = 0; h < m.height; ++h)
        for (int w = 0; w < m.width; ++w) {
            if (m.at(h, w) <= 0.0) continue;
            int h0 = std::max(0, h - radius), h1 = std::min(m.height - 1, h + radius);
            int w0 = std::max(0, w - radius), w1 = std::min(m.width - 1, w + radius);
            for (int y = h0; y <= h1; ++y)
                for (int x = w0; x <= w1; ++x) out.at(y, x) = 1.0;
        }
    return out;
}

inline Mask mask_union(const Mask& a, const Mask& b) {
    require(a.same_shape(b), "mask_union: shape mismatch");
    Mask out(a.height, a.width);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = std::max(a.values[i], b.values[i]);
    return out;
}

inline Mask mask_intersect(const Mask& a, const Mask& b) {
    require(a.same_shape(b), "mask_intersect: shape mismatch");
    Mask out(a.height, a.width);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = std::min(a.values[i], b.values[i]);
    return out;
}

// Binary set difference a \ b.
inline Mask mask_minus(const Mask& a, const Mask& b) {
    require(a.same_shape(b), "mask_minus: shape mismatch");
    Mask out(a.height, a.width);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = (a.values[i] > 0.0 && b.values[i] <= 0.0) ? 1.0 : 0.0;
    return out;
}

inline Mask rect_mask(int height, int width, int h0, int w0, int h1, int w1) {
    require(h0 >= 0 && w0 >= 0 && h1 < height && w1 < width && h0 <= h1 && w0 <= w1,
            "rect_mask: rectangle out of bounds");
    Mask m(height, width);
    for (int h = h0; h <= h1; ++h)
        for (int w = w0; w <= w1; ++w) m.at(h, w) = 1.0;
    return m;
}

}  // namespace layerkit
