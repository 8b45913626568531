#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "layerkit/errors.hpp"
#include "layerkit/grid.hpp"

namespace layerkit {

// Geometric structural edit declared per object in a scenario.
struct GeometricOp {
    enum class Kind { kMove, kResize };
    Kind kind = Kind::kMove;
    int object = 0;     // object index the op applies to
    int dh = 0, dw = 0; // move displacement in pixels
    double scale = 1.0; // resize factor, > 0
};

struct Centroid {
    double h = 0.0;
    double w = 0.0;
};

// tau-weighted mean coordinate. Fractional; callers round only when anchoring
// a window.
inline Centroid centroid(const FeatureGrid& tau) {
    require(tau.channels == 1, "centroid: expected a single-channel grid");
    double mass = 0.0, sh = 0.0, sw = 0.0;
    for (int h = 0; h < tau.height; ++h)
        for (int w = 0; w < tau.width; ++w) {
            double t = tau.at(h, w, 0);
            mass += t;
            sh += h * t;
            sw += w * t;
        }
    if (mass <= 0.0) throw ParameterError("centroid: degenerate object (zero tau mass)");
    return Centroid{sh / mass, sw / mass};
}

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// canvas * (1 - Move(tau)) + Move(canvas) * Move(tau), with reads shifted by
// (dh, dw) and out-of-grid reads zero-filled. Computed as
// canvas + Move(tau) * (Move(canvas) - canvas) so a zero shift is an exact
// identity.
inline FeatureGrid move_map(const FeatureGrid& canvas, const FeatureGrid& tau, int dh, int dw) {
    require(tau.channels == 1 && tau.height == canvas.height && tau.width == canvas.width,
            "move_map: tau shape mismatch");
    require(std::abs(dh) <= canvas.height - 1 && std::abs(dw) <= canvas.width - 1,
            "move_map: displacement out of range");
    FeatureGrid out = canvas;
    for (int h = 0; h < canvas.height; ++h)
        for (int w = 0; w < canvas.width; ++w) {
            int sh = h - dh, sw = w - dw;
            bool in = sh >= 0 && sh < canvas.height && sw >= 0 && sw < canvas.width;
            double t = in ? tau.at(sh, sw, 0) : 0.0;
            if (t == 0.0) continue;
            for (int c = 0; c < canvas.channels; ++c) {
                double moved = in ? canvas.at(sh, sw, c) : 0.0;
                out.at(h, w, c) = canvas.at(h, w, c) + t * (moved - canvas.at(h, w, c));
            }
        }
    return out;
}

namespace detail {

// Scale-true bilinear resampling by factor s: output dims round(in * s),
// half-pixel coordinate mapping, zero outside the source. Unlike the
// align-corners resize this keeps mass scaling at s^2.
inline FeatureGrid scale_resize(const FeatureGrid& grid, double s) {
    require(s > 0.0, "scale_resize: factor must be positive");
    int out_h = std::max<int>(1, static_cast<int>(std::llround(grid.height * s)));
    int out_w = std::max<int>(1, static_cast<int>(std::llround(grid.width * s)));
    FeatureGrid out(out_h, out_w, grid.channels);
    double rh = static_cast<double>(grid.height) / out_h;
    double rw = static_cast<double>(grid.width) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * rh - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * rw - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            for (int c = 0; c < grid.channels; ++c) {
                auto sample = [&](int y, int x) -> double {
                    if (y < 0 || y >= grid.height || x < 0 || x >= grid.width) return 0.0;
                    return grid.at(y, x, c);
                };
                double top = sample(y0, x0) * (1.0 - wx) + sample(y0, x0 + 1) * wx;
                double bot = sample(y0 + 1, x0) * (1.0 - wx) + sample(y0 + 1, x0 + 1) * wx;
                out.at(oy, ox, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

}  // namespace detail

struct ResizeResult {
    FeatureGrid features;  // canvas with the resized object written in
    FeatureGrid tau;       // resized tau placed in canvas coordinates
};

// Centroid-aligned resize mapping: the object features (gated by tau) and tau
// itself are resized by s, then written into a window of size
// (min(H, H*s), min(W, W*s)) centered on the object centroid, blending by the
// resized tau. Cells outside the window keep the canvas values. The window is
// clipped at grid borders.
inline ResizeResult resize_map(const FeatureGrid& layer_features, const FeatureGrid& canvas,
                               const FeatureGrid& tau, double s) {
    require(s > 0.0, "resize_map: scale must be positive");
    require(layer_features.same_shape(canvas), "resize_map: feature shape mismatch");
    require(tau.channels == 1 && tau.height == canvas.height && tau.width == canvas.width,
            "resize_map: tau shape mismatch");
    const int H = canvas.height, W = canvas.width, C = canvas.channels;

    Centroid c0 = centroid(tau);  // throws on degenerate objects

    FeatureGrid gated(H, W, C);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            double t = tau.at(h, w, 0);
            if (t == 0.0) continue;
            for (int c = 0; c < C; ++c) gated.at(h, w, c) = layer_features.at(h, w, c) * t;
        }

    FeatureGrid r_feat = detail::scale_resize(gated, s);
    FeatureGrid r_tau = detail::scale_resize(tau, s);
    Centroid c1 = centroid(r_tau);

    // Alignment: the resized tau centroid lands on the original centroid.
    int ah = round_half_up(c0.h), aw = round_half_up(c0.w);
    int arh = round_half_up(c1.h), arw = round_half_up(c1.w);

    int win_h = std::min(H, r_tau.height);
    int win_w = std::min(W, r_tau.width);
    int start_h = std::clamp(ah - win_h / 2, 0, H - win_h);
    int start_w = std::clamp(aw - win_w / 2, 0, W - win_w);

    ResizeResult out;
    out.features = canvas;
    out.tau = FeatureGrid(H, W, 1);
    for (int h = start_h; h < start_h + win_h; ++h)
        for (int w = start_w; w < start_w + win_w; ++w) {
            int sh = h - ah + arh, sw = w - aw + arw;
            bool in = sh >= 0 && sh < r_tau.height && sw >= 0 && sw < r_tau.width;
            double t = in ? r_tau.at(sh, sw, 0) : 0.0;
            out.tau.at(h, w, 0) = t;
            for (int c = 0; c < C; ++c) {
                double rf = in ? r_feat.at(sh, sw, c) : 0.0;
                out.features.at(h, w, c) = rf + canvas.at(h, w, c) * (1.0 - t);
            }
        }
    return out;
}

}  // namespace layerkit
