#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "layerkit/attention.hpp"
#include "layerkit/decomposition.hpp"
#include "layerkit/errors.hpp"
#include "layerkit/fusion.hpp"
#include "layerkit/geometry.hpp"
#include "layerkit/grid.hpp"
#include "layerkit/rng.hpp"
#include "layerkit/schedule.hpp"
#include "layerkit/thread_pool.hpp"

namespace layerkit {

struct ObjectSpec {
    std::vector<int> source_tokens;  // subset of the source prompt; may be empty ("add")
    std::vector<int> edit_tokens;    // subset of the edit prompt; may be empty ("remove")
    Mask mask;                       // binary object mask
    std::optional<std::pair<int, int>> move;  // (dh, dw)
    std::optional<double> resize;             // scale factor

    // Provenance for serialization; exactly one is set by the loader.
    std::string mask_path;
    std::optional<std::array<int, 4>> mask_rect;  // h0 w0 h1 w1 inclusive
};

struct Hyperparams {
    double eta = 0.3;
    double k = 5.0;
    int t_thres_query = 0;  // 0 = derive as round(0.4 * steps)
    int t_thres_key = 0;    // 0 = derive as round(0.8 * steps)
    double guidance = 7.5;
    double inversion_guidance = 1.0;
    double tau_step_size = 1e-2;
    int tau_iterations = 10;
    double containment_ratio = 0.5;
    double output_gain = 5e-5;
    double time_gain = 0.0001;
};

struct EditScenario {
    int height = 16;
    int width = 16;
    int channels = 32;
    int steps = 50;
    double beta_start = 0.00085;
    double beta_end = 0.012;
    std::vector<int> source_prompt;
    std::vector<int> edit_prompt;
    std::vector<ObjectSpec> objects;
    std::vector<Mask> panoptic;
    Hyperparams hyper;
    std::uint64_t seed = 0;

    int object_count() const { return static_cast<int>(objects.size()); }
    int layer_count() const { return object_count() + 2; }

    int resolved_t_thres_query() const {
        if (hyper.t_thres_query > 0) return hyper.t_thres_query;
        return std::max(1, static_cast<int>(std::lround(0.4 * steps)));
    }
    int resolved_t_thres_key() const {
        if (hyper.t_thres_key > 0) return hyper.t_thres_key;
        return std::max(1, static_cast<int>(std::lround(0.8 * steps)));
    }

    std::vector<std::string> validate() const;
    std::vector<std::string> range_warnings() const;
};

inline std::vector<std::string> EditScenario::validate() const {
    std::vector<std::string> errors;
    auto err = [&](const std::string& field, const std::string& msg) {
        errors.push_back(field + ": " + msg);
    };
    if (height < 1 || width < 1) err("grid", "height/width must be >= 1");
    if (channels < 1) err("grid.channels", "must be >= 1");
    if (steps < 1) err("schedule.steps", "must be >= 1");
    if (!(beta_start > 0.0 && beta_end > beta_start && beta_end < 1.0))
        err("schedule.beta", "need 0 < beta_start < beta_end < 1");
    if (source_prompt.empty()) err("prompts.source", "must contain at least one token");
    auto check_unique = [&](const std::vector<int>& ids, const std::string& field) {
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = i + 1; j < ids.size(); ++j)
                if (ids[i] == ids[j]) {
                    err(field, "duplicate token id " + std::to_string(ids[i]));
                    return;
                }
    };
    check_unique(source_prompt, "prompts.source");
    check_unique(edit_prompt, "prompts.edit");

    auto contains = [](const std::vector<int>& hay, int id) {
        return std::find(hay.begin(), hay.end(), id) != hay.end();
    };
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const ObjectSpec& o = objects[i];
        std::string base = "objects[" + std::to_string(i) + "]";
        for (int id : o.source_tokens)
            if (!contains(source_prompt, id))
                err(base + ".source_tokens", "token " + std::to_string(id) +
                                                 " not in source prompt");
        for (int id : o.edit_tokens)
            if (!contains(edit_prompt, id))
                err(base + ".edit_tokens", "token " + std::to_string(id) +
                                               " not in edit prompt");
        if (o.mask.height != height || o.mask.width != width)
            err(base + ".mask", "dimensions " + std::to_string(o.mask.height) + "x" +
                                    std::to_string(o.mask.width) + " do not match grid " +
                                    std::to_string(height) + "x" + std::to_string(width));
        else if (!o.mask.is_binary())
            err(base + ".mask", "object mask must be binary");
        else if (o.mask.empty_support())
            err(base + ".mask", "object mask has empty support");
        if (o.move) {
            if (std::abs(o.move->first) > height - 1 || std::abs(o.move->second) > width - 1)
                err(base + ".move", "displacement out of range");
        }
        if (o.resize && !(*o.resize > 0.0)) err(base + ".resize", "scale must be positive");
    }
    for (std::size_t j = 0; j < panoptic.size(); ++j) {
        std::string base = "panoptic[" + std::to_string(j) + "]";
        if (panoptic[j].height != height || panoptic[j].width != width) {
            err(base, "dimensions do not match grid");
            continue;
        }
        if (!panoptic[j].is_binary()) err(base, "panoptic mask must be binary");
    }
    bool pan_shapes_ok = true;
    for (const Mask& p : panoptic)
        if (p.height != height || p.width != width) pan_shapes_ok = false;
    if (pan_shapes_ok)
        for (std::size_t a = 0; a < panoptic.size(); ++a)
            for (std::size_t b = a + 1; b < panoptic.size(); ++b)
                for (int i = 0; i < height * width; ++i)
                    if (panoptic[a].values[static_cast<std::size_t>(i)] > 0.0 &&
                        panoptic[b].values[static_cast<std::size_t>(i)] > 0.0) {
                        err("panoptic", "masks " + std::to_string(a) + " and " +
                                            std::to_string(b) + " overlap");
                        i = height * width;  // report each pair once
                    }

    if (!(hyper.eta > 0.0 && hyper.eta < 1.0)) err("hyperparameters.eta", "must be in (0,1)");
    if (!(hyper.k > 0.0)) err("hyperparameters.k", "must be positive");
    if (hyper.t_thres_query != 0 &&
        (hyper.t_thres_query < 1 || hyper.t_thres_query > steps))
        err("hyperparameters.t_thres_query", "outside [1, steps]");
    if (hyper.t_thres_key != 0 && (hyper.t_thres_key < 1 || hyper.t_thres_key > steps))
        err("hyperparameters.t_thres_key", "outside [1, steps]");
    if (!(hyper.tau_step_size > 0.0)) err("hyperparameters.tau_step_size", "must be positive");
    if (hyper.tau_iterations < 0) err("hyperparameters.tau_iterations", "must be >= 0");
    if (!(hyper.containment_ratio > 0.0 && hyper.containment_ratio <= 1.0))
        err("hyperparameters.containment_ratio", "must be in (0,1]");
    return errors;
}

inline std::vector<std::string> EditScenario::range_warnings() const {
    std::vector<std::string> warnings;
    if (hyper.eta < 0.25 || hyper.eta > 0.35)
        warnings.push_back("hyperparameters.eta: " + std::to_string(hyper.eta) +
                           " outside validated range [0.25, 0.35]");
    if (hyper.k < 3.0 || hyper.k > 8.0)
        warnings.push_back("hyperparameters.k: " + std::to_string(hyper.k) +
                           " outside validated range [3, 8]");
    int tq = resolved_t_thres_query();
    int tk = resolved_t_thres_key();
    if (tq < 15 || tq > 25)
        warnings.push_back("hyperparameters.t_thres_query: " + std::to_string(tq) +
                           " outside validated range [15, 25]");
    if (tk < 35 || tk > 45)
        warnings.push_back("hyperparameters.t_thres_key: " + std::to_string(tk) +
                           " outside validated range [35, 45]");
    return warnings;
}

// Majority containment: |inner AND outer| / |inner| >= ratio.
inline bool containment(const Mask& inner, const Mask& outer, double ratio = 0.5,
                        bool* degenerate = nullptr) {
    require(inner.same_shape(outer), "containment: shape mismatch");
    require(inner.is_binary() && outer.is_binary(), "containment: masks must be binary");
    double inner_mass = 0.0, joint = 0.0;
    for (std::size_t i = 0; i < inner.values.size(); ++i) {
        if (inner.values[i] > 0.0) {
            inner_mass += 1.0;
            if (outer.values[i] > 0.0) joint += 1.0;
        }
    }
    if (degenerate) *degenerate = inner_mass == 0.0;
    if (inner_mass == 0.0) return false;
    return joint / inner_mass >= ratio;
}

// Per-layer prompts: layer 0 reconstructs with the source prompt, object layer
// i drops the edit tokens of every object whose mask lies inside layer i's
// conflict region, the canvas layer gets the empty prompt.
inline std::vector<TokenSet> build_layer_prompts(const EditScenario& scenario,
                                                 std::span<const Mask> conflict_masks) {
    require(conflict_masks.size() == scenario.objects.size(),
            "build_layer_prompts: conflict mask count mismatch");
    const int n = scenario.object_count();
    std::vector<TokenSet> prompts(static_cast<std::size_t>(n) + 2);
    prompts[0].ids = scenario.source_prompt;
    for (int i = 1; i <= n; ++i) {
        std::vector<int> removed;
        for (int j = 0; j < n; ++j) {
            if (containment(scenario.objects[static_cast<std::size_t>(j)].mask,
                            conflict_masks[static_cast<std::size_t>(i - 1)],
                            scenario.hyper.containment_ratio)) {
                const auto& tokens = scenario.objects[static_cast<std::size_t>(j)].edit_tokens;
                removed.insert(removed.end(), tokens.begin(), tokens.end());
            }
        }
        for (int id : scenario.edit_prompt)
            if (std::find(removed.begin(), removed.end(), id) == removed.end())
                prompts[static_cast<std::size_t>(i)].ids.push_back(id);
    }
    // prompts[n+1] stays empty: the canvas layer.
    return prompts;
}

struct LayerSpec {
    int id = 0;
    TokenSet prompt;
    Mask conflict;
    bool removal_enabled = false;
};

struct LayerStack {
    int objects = 0;  // N
    std::vector<LayerSpec> specs;      // N + 2
    std::vector<LatentState> latents;  // N + 2

    int common_step() const {
        int step = latents.empty() ? 0 : latents[0].step;
        for (const LatentState& s : latents)
            if (s.step != step) throw StateError("layer stack steps are out of sync");
        return step;
    }
};

struct StageTimings {
    double invert_ms = 0.0;
    double decompose_ms = 0.0;
    double edit_ms = 0.0;
};

struct PipelineOutput {
    FeatureGrid canvas;               // final canvas latent
    std::vector<FeatureGrid> layers;  // final latents for all N+2 layers
    ConflictReport report;
    std::vector<Mask> aggregated;     // per-object aggregated attention
    std::vector<bool> aggregation_degenerate;  // object had no source tokens
    TransparencyField tau;
    std::vector<std::vector<FeatureGrid>> tau_history;  // per step, if recorded
    std::vector<OptimizeStats> tau_stats;               // per step
    std::vector<TokenSet> layer_prompts;
    StageTimings timings;
};

struct EngineOptions {
    int threads = -1;              // pool worker count; -1 = hardware concurrency
    std::vector<int> eval_order;   // layer evaluation order; empty = 0..N+1
    std::optional<std::vector<FeatureGrid>> initial_tau;  // override the mask init
    bool record_tau_history = false;
};

// Destination support of a move: the object mask shifted by (dh, dw).
inline Mask move_support(const Mask& object_mask, int dh, int dw) {
    Mask out(object_mask.height, object_mask.width);
    for (int h = 0; h < out.height; ++h)
        for (int w = 0; w < out.width; ++w) {
            int sh = h - dh, sw = w - dw;
            if (sh >= 0 && sh < out.height && sw >= 0 && sw < out.width &&
                object_mask.at(sh, sw) > 0.0)
                out.at(h, w) = 1.0;
        }
    return out;
}

// Destination support of a resize: cells where the centroid-aligned resized
// mask lands with positive weight.
inline Mask resize_support(const Mask& object_mask, double s) {
    FeatureGrid zeros(object_mask.height, object_mask.width, 1);
    ResizeResult r = resize_map(zeros, zeros, object_mask.as_grid(), s);
    Mask out(object_mask.height, object_mask.width);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = r.tau.values[i] > 0.0 ? 1.0 : 0.0;
    return out;
}

// The N+2 multi-layer pipeline: inversion, conflict-aware decomposition,
// per-layer guided denoising with removal, geometric mapping, transparency
// fusion, and synchronized DDIM stepping.
class LayerEngine {
public:
    explicit LayerEngine(EditScenario scenario, EngineOptions options = {})
        : scenario_(validated(std::move(scenario))),
          options_(std::move(options)),
          sched_(NoiseSchedule::scaled_linear(scenario_.steps, scenario_.beta_start,
                                              scenario_.beta_end,
                                              std::max(1000, scenario_.steps))),
          denoiser_(SubstrateParams{scenario_.channels, scenario_.hyper.output_gain,
                                    scenario_.hyper.time_gain},
                    scenario_.seed, scenario_.steps),
          pool_(resolve_threads(options_.threads)) {
        removal_query_ = RemovalSchedule::build(sched_, scenario_.hyper.k,
                                                scenario_.resolved_t_thres_query());
        removal_key_ = RemovalSchedule::build(sched_, scenario_.hyper.k,
                                              scenario_.resolved_t_thres_key());
        if (options_.eval_order.empty()) {
            options_.eval_order.resize(static_cast<std::size_t>(scenario_.layer_count()));
            std::iota(options_.eval_order.begin(), options_.eval_order.end(), 0);
        }
        require(static_cast<int>(options_.eval_order.size()) == scenario_.layer_count(),
                "eval_order size must equal layer count");
        std::vector<bool> seen(options_.eval_order.size(), false);
        for (int idx : options_.eval_order) {
            require(idx >= 0 && idx < scenario_.layer_count() && !seen[static_cast<std::size_t>(idx)],
                    "eval_order must be a permutation of the layers");
            seen[static_cast<std::size_t>(idx)] = true;
        }
    }

    const NoiseSchedule& schedule() const { return sched_; }
    const ToyDenoiser& denoiser() const { return denoiser_; }
    const RemovalSchedule& removal_query() const { return removal_query_; }
    const RemovalSchedule& removal_key() const { return removal_key_; }
    const EditScenario& scenario() const { return scenario_; }

    FeatureGrid source_latent() const {
        return FeatureGrid::seeded_normal(
            scenario_.height, scenario_.width, scenario_.channels,
            SeededRng(scenario_.seed, make_stream(streams::kSourceLatent, 0, 0)));
    }

    PipelineOutput run() {
        using clock = std::chrono::steady_clock;
        PipelineOutput out;
        const int n = scenario_.object_count();
        const int layer_count = n + 2;

        // Inversion of the source latent under the source prompt.
        auto t0 = clock::now();
        FeatureGrid z0 = source_latent();
        TokenSet source_tokens{scenario_.source_prompt};
        TokenContext source_ctx = denoiser_.context_for(source_tokens);
        Mask no_conflict(scenario_.height, scenario_.width);
        double inv_scale = scenario_.hyper.inversion_guidance;
        struct InvEval {
            FeatureGrid noise_pred;
            std::vector<Mask> token_maps;
        };
        auto inversion_denoiser = [&](const FeatureGrid& z, int position) {
            ToyDenoiser::Features f =
                denoiser_.features(z, position, source_ctx, no_conflict, 0.0, 0.0, 0);
            InvEval eval;
            FeatureGrid cond = denoiser_.project(f.text_path, position);
            if (inv_scale == 1.0) {
                eval.noise_pred = std::move(cond);
            } else {
                FeatureGrid uncond = denoiser_.project(f.self_path, position);
                eval.noise_pred = cfg_combine(uncond, cond, inv_scale);
            }
            eval.token_maps = std::move(f.token_maps);
            return eval;
        };
        auto inversion = ddim_invert(z0, inversion_denoiser, sched_);
        auto t1 = clock::now();
        out.timings.invert_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

        // Aggregated attention per object, then the conflict report.
        out.aggregated.reserve(static_cast<std::size_t>(n));
        out.aggregation_degenerate.resize(static_cast<std::size_t>(n), false);
        for (int i = 0; i < n; ++i) {
            const ObjectSpec& obj = scenario_.objects[static_cast<std::size_t>(i)];
            std::vector<Mask> maps;
            for (const auto& step_maps : inversion.step_token_maps)
                for (int id : obj.source_tokens) {
                    auto it = std::find(source_ctx.ids.begin(), source_ctx.ids.end(), id);
                    maps.push_back(step_maps[static_cast<std::size_t>(
                        it - source_ctx.ids.begin())]);
                }
            if (maps.empty()) {
                // Object absent from the source prompt (the "add" kind):
                // no attention evidence, conflict-free by construction.
                out.aggregated.emplace_back(scenario_.height, scenario_.width);
                out.aggregation_degenerate[static_cast<std::size_t>(i)] = true;
            } else {
                out.aggregated.push_back(
                    aggregate_attention(std::span<const Mask>(maps.data(), maps.size())));
            }
        }
        std::vector<Mask> object_masks;
        object_masks.reserve(static_cast<std::size_t>(n));
        for (const ObjectSpec& obj : scenario_.objects) object_masks.push_back(obj.mask);
        out.report = build_conflict_report(
            std::span<const Mask>(out.aggregated.data(), out.aggregated.size()),
            std::span<const Mask>(scenario_.panoptic.data(), scenario_.panoptic.size()),
            std::span<const Mask>(object_masks.data(), object_masks.size()),
            scenario_.hyper.eta);

        out.layer_prompts = build_layer_prompts(
            scenario_, std::span<const Mask>(out.report.conflict.data(),
                                             out.report.conflict.size()));

        // Layer stack: every layer starts from the inverted latent.
        LayerStack stack;
        stack.objects = n;
        stack.specs.resize(static_cast<std::size_t>(layer_count));
        stack.latents.assign(static_cast<std::size_t>(layer_count), inversion.state);
        Mask all_objects(scenario_.height, scenario_.width);
        for (const Mask& m : object_masks) all_objects = mask_union(all_objects, m);
        for (int i = 0; i < layer_count; ++i) {
            LayerSpec& spec = stack.specs[static_cast<std::size_t>(i)];
            spec.id = i;
            spec.prompt = out.layer_prompts[static_cast<std::size_t>(i)];
            if (i == 0) {
                spec.conflict = no_conflict;
                spec.removal_enabled = false;
            } else if (i == layer_count - 1) {
                spec.conflict = all_objects;
                spec.removal_enabled = true;
            } else {
                spec.conflict = out.report.conflict[static_cast<std::size_t>(i - 1)];
                spec.removal_enabled = true;
            }
        }
        contexts_.clear();
        contexts_.reserve(static_cast<std::size_t>(layer_count));
        for (int i = 0; i < layer_count; ++i)
            contexts_.push_back(denoiser_.context_for(stack.specs[static_cast<std::size_t>(i)].prompt));

        // Transparency init from object masks plus geometric destinations.
        std::vector<std::vector<Mask>> dest_supports(static_cast<std::size_t>(n));
        geometry_ops_.clear();
        for (int i = 0; i < n; ++i) {
            const ObjectSpec& obj = scenario_.objects[static_cast<std::size_t>(i)];
            if (obj.move) {
                geometry_ops_.push_back(GeometricOp{GeometricOp::Kind::kMove, i,
                                                    obj.move->first, obj.move->second, 1.0});
                dest_supports[static_cast<std::size_t>(i)].push_back(
                    move_support(obj.mask, obj.move->first, obj.move->second));
            }
            if (obj.resize) {
                geometry_ops_.push_back(
                    GeometricOp{GeometricOp::Kind::kResize, i, 0, 0, *obj.resize});
                dest_supports[static_cast<std::size_t>(i)].push_back(
                    resize_support(obj.mask, *obj.resize));
            }
        }
        TransparencyField tau = init_transparency(
            std::span<const Mask>(object_masks.data(), object_masks.size()),
            std::span<const std::vector<Mask>>(dest_supports.data(), dest_supports.size()));
        if (options_.initial_tau) {
            require(static_cast<int>(options_.initial_tau->size()) == n,
                    "initial_tau override must have one plane per object");
            tau.tau = *options_.initial_tau;
            if (n > 0) tau.overlap = overlap_mask(tau);
        }
        auto t2 = clock::now();
        out.timings.decompose_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();

        // The synchronized denoising loop.
        out.tau_stats.reserve(static_cast<std::size_t>(scenario_.steps));
        for (int position = scenario_.steps; position >= 1; --position) {
            OptimizeStats stats = denoise_all_layers(stack, tau, position);
            out.tau_stats.push_back(stats);
            if (options_.record_tau_history) out.tau_history.push_back(tau.tau);
        }
        auto t3 = clock::now();
        out.timings.edit_ms = std::chrono::duration<double, std::milli>(t3 - t2).count();

        out.layers.reserve(static_cast<std::size_t>(layer_count));
        for (const LatentState& s : stack.latents) out.layers.push_back(s.latent);
        out.canvas = stack.latents[static_cast<std::size_t>(layer_count - 1)].latent;
        out.tau = std::move(tau);
        return out;
    }

    // One synchronized step: per-layer feature evaluation (parallel), geometry
    // onto the canvas, transparency descent, fusion, projection with guidance,
    // and a DDIM step for every layer.
    OptimizeStats denoise_all_layers(LayerStack& stack, TransparencyField& tau, int position) {
        const int layer_count = stack.objects + 2;
        require(static_cast<int>(stack.latents.size()) == layer_count &&
                    static_cast<int>(contexts_.size()) == layer_count,
                "denoise_all_layers: stack not initialized");
        if (stack.common_step() != position)
            throw StateError("denoise_all_layers: stack is not at the requested position");
        if (position < 1) throw StateError("denoise_all_layers: stack is already clean");

        const int n = stack.objects;
        const int denoise_step = sched_.steps - position + 1;
        const double rq = removal_query_.at_step(denoise_step);
        const double rk = removal_key_.at_step(denoise_step);

        std::vector<ToyDenoiser::Features> feats(static_cast<std::size_t>(layer_count));
        for (int idx : options_.eval_order) {
            pool_.run([this, &stack, &feats, idx, position, rq, rk] {
                const LayerSpec& spec = stack.specs[static_cast<std::size_t>(idx)];
                double lrq = spec.removal_enabled ? rq : 0.0;
                double lrk = spec.removal_enabled ? rk : 0.0;
                feats[static_cast<std::size_t>(idx)] = denoiser_.features(
                    stack.latents[static_cast<std::size_t>(idx)].latent, position,
                    contexts_[static_cast<std::size_t>(idx)], spec.conflict, lrq, lrk,
                    static_cast<std::uint64_t>(idx));
            });
        }
        pool_.wait_idle();

        // Geometric mapping onto the canvas features, both guidance branches.
        FeatureGrid canvas_text = feats[static_cast<std::size_t>(layer_count - 1)].text_path;
        FeatureGrid canvas_self = feats[static_cast<std::size_t>(layer_count - 1)].self_path;
        for (const GeometricOp& op : geometry_ops_) {
            const FeatureGrid& t = tau.tau[static_cast<std::size_t>(op.object)];
            if (op.kind == GeometricOp::Kind::kMove) {
                canvas_text = move_map(canvas_text, t, op.dh, op.dw);
                canvas_self = move_map(canvas_self, t, op.dh, op.dw);
            } else {
                canvas_text = resize_map(feats[static_cast<std::size_t>(op.object + 1)].text_path,
                                         canvas_text, t, op.scale)
                                  .features;
                canvas_self = resize_map(feats[static_cast<std::size_t>(op.object + 1)].self_path,
                                         canvas_self, t, op.scale)
                                  .features;
            }
        }

        std::vector<FeatureGrid> object_text, object_self;
        object_text.reserve(static_cast<std::size_t>(n));
        object_self.reserve(static_cast<std::size_t>(n));
        for (int i = 1; i <= n; ++i) {
            object_text.push_back(feats[static_cast<std::size_t>(i)].text_path);
            object_self.push_back(feats[static_cast<std::size_t>(i)].self_path);
        }

        OptimizeStats stats;
        if (n > 0)
            stats = optimize_transparency(
                tau, std::span<const FeatureGrid>(object_text.data(), object_text.size()),
                canvas_text, feats[0].text_path, scenario_.hyper.tau_step_size,
                scenario_.hyper.tau_iterations);

        FeatureGrid fused_text =
            fuse(tau, std::span<const FeatureGrid>(object_text.data(), object_text.size()),
                 canvas_text);
        FeatureGrid fused_self =
            fuse(tau, std::span<const FeatureGrid>(object_self.data(), object_self.size()),
                 canvas_self);

        for (int i = 0; i < layer_count; ++i) {
            const bool is_canvas = i == layer_count - 1;
            const FeatureGrid& text = is_canvas ? fused_text
                                                : feats[static_cast<std::size_t>(i)].text_path;
            const FeatureGrid& self = is_canvas ? fused_self
                                                : feats[static_cast<std::size_t>(i)].self_path;
            FeatureGrid eps_cond = denoiser_.project(text, position);
            FeatureGrid eps_uncond = denoiser_.project(self, position);
            FeatureGrid eps = cfg_combine(eps_uncond, eps_cond, scenario_.hyper.guidance);
            stack.latents[static_cast<std::size_t>(i)] =
                ddim_step(stack.latents[static_cast<std::size_t>(i)], eps, sched_);
        }
        return stats;
    }

private:
    static EditScenario validated(EditScenario s) {
        auto errors = s.validate();
        if (!errors.empty()) throw ValidationError(std::move(errors));
        return s;
    }

    static int resolve_threads(int requested) {
        if (requested >= 0) return requested;
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 2 : static_cast<int>(hw);
    }

    EditScenario scenario_;
    EngineOptions options_;
    NoiseSchedule sched_;
    ToyDenoiser denoiser_;
    ThreadPool pool_;
    RemovalSchedule removal_query_;
    RemovalSchedule removal_key_;
    std::vector<TokenContext> contexts_;
    std::vector<GeometricOp> geometry_ops_;
};

}  // namespace layerkit
