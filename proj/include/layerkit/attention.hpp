#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "layerkit/errors.hpp"
#include "layerkit/grid.hpp"
#include "layerkit/rng.hpp"

namespace layerkit {

// Ordered set of token ids; embeddings are derived deterministically per id.
struct TokenSet {
    std::vector<int> ids;

    bool contains(int id) const {
        return std::find(ids.begin(), ids.end(), id) != ids.end();
    }
    bool empty() const { return ids.empty(); }

    void validate_unique() const {
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = i + 1; j < ids.size(); ++j)
                require(ids[i] != ids[j], "duplicate token id in token set");
    }
};

// Token ids plus their embedding rows (n x dim), ready for cross-attention.
struct TokenContext {
    std::vector<int> ids;
    int dim = 0;
    std::vector<double> embeddings;  // row-major n x dim

    int count() const { return static_cast<int>(ids.size()); }
    bool empty() const { return ids.empty(); }
    const double* row(int i) const { return embeddings.data() + static_cast<std::size_t>(i) * dim; }
};

inline std::vector<double> token_embedding(std::uint64_t seed, int token_id, int dim) {
    SeededRng rng(seed, make_stream(streams::kTokenEmbedding, 0,
                                    static_cast<std::uint64_t>(static_cast<std::uint32_t>(token_id))));
    std::vector<double> emb(static_cast<std::size_t>(dim));
    for (int c = 0; c < dim; ++c) emb[static_cast<std::size_t>(c)] = rng.normal_at(static_cast<std::uint64_t>(c));
    return emb;
}

inline TokenContext build_token_context(std::uint64_t seed, const TokenSet& tokens, int dim) {
    tokens.validate_unique();
    TokenContext ctx;
    ctx.ids = tokens.ids;
    ctx.dim = dim;
    ctx.embeddings.reserve(tokens.ids.size() * static_cast<std::size_t>(dim));
    for (int id : tokens.ids) {
        auto emb = token_embedding(seed, id, dim);
        ctx.embeddings.insert(ctx.embeddings.end(), emb.begin(), emb.end());
    }
    return ctx;
}

// Fixed seeded projection matrices, shared by every layer of the stack.
struct AttentionWeights {
    int dim = 0;
    std::vector<double> wq, wk, wv, wo;  // each dim x dim, row-major

    static AttentionWeights seeded(int dim, std::uint64_t seed) {
        require(dim >= 1, "attention dim must be >= 1");
        AttentionWeights w;
        w.dim = dim;
        double sigma = 1.0 / std::sqrt(static_cast<double>(dim));
        auto fill = [&](std::vector<double>& m, std::uint64_t which) {
            SeededRng rng(seed, make_stream(streams::kWeights, which, 0));
            m.resize(static_cast<std::size_t>(dim) * dim);
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = sigma * rng.normal_at(i);
        };
        fill(w.wq, 0);
        fill(w.wk, 1);
        fill(w.wv, 2);
        fill(w.wo, 3);
        return w;
    }
};

namespace detail {

// rows (n x dim) times matrix (dim x dim) -> (n x dim)
inline std::vector<double> project_rows(const double* rows, int n, int dim,
                                        const std::vector<double>& mat) {
    std::vector<double> out(static_cast<std::size_t>(n) * dim, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* r = rows + static_cast<std::size_t>(i) * dim;
        double* o = out.data() + static_cast<std::size_t>(i) * dim;
        for (int k = 0; k < dim; ++k) {
            double rv = r[k];
            if (rv == 0.0) continue;
            const double* m = mat.data() + static_cast<std::size_t>(k) * dim;
            for (int c = 0; c < dim; ++c) o[c] += rv * m[c];
        }
    }
    return out;
}

// Row-wise softmax(Q K^T / sqrt(dim)) followed by A V. A is returned
// row-stochastic; an all-zero logit row softmaxes to the uniform row.
inline void attention_core(const std::vector<double>& q, int nq, const std::vector<double>& k,
                           const std::vector<double>& v, int nk, int dim,
                           std::vector<double>& out_features, std::vector<double>& out_map) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    out_features.assign(static_cast<std::size_t>(nq) * dim, 0.0);
    out_map.assign(static_cast<std::size_t>(nq) * nk, 0.0);
    std::vector<double> logits(static_cast<std::size_t>(nk));
    for (int i = 0; i < nq; ++i) {
        const double* qi = q.data() + static_cast<std::size_t>(i) * dim;
        double hi = -1e300;
        for (int j = 0; j < nk; ++j) {
            const double* kj = k.data() + static_cast<std::size_t>(j) * dim;
            double dot = 0.0;
            for (int c = 0; c < dim; ++c) dot += qi[c] * kj[c];
            logits[static_cast<std::size_t>(j)] = dot * scale;
            hi = std::max(hi, logits[static_cast<std::size_t>(j)]);
        }
        double denom = 0.0;
        for (int j = 0; j < nk; ++j) {
            double e = std::exp(logits[static_cast<std::size_t>(j)] - hi);
            logits[static_cast<std::size_t>(j)] = e;
            denom += e;
        }
        double* oi = out_features.data() + static_cast<std::size_t>(i) * dim;
        double* ai = out_map.data() + static_cast<std::size_t>(i) * nk;
        for (int j = 0; j < nk; ++j) {
            double a = logits[static_cast<std::size_t>(j)] / denom;
            ai[j] = a;
            const double* vj = v.data() + static_cast<std::size_t>(j) * dim;
            for (int c = 0; c < dim; ++c) oi[c] += a * vj[c];
        }
    }
}

}  // namespace detail

struct AttentionOutput {
    FeatureGrid features;     // updated spatial features, H x W x d
    std::vector<double> map;  // row-stochastic attention, (H*W) x context size
    int context_size = 0;
};

// Self-attention flavor: keys and values projected from grid features.
inline AttentionOutput attention_update(const FeatureGrid& queries, const FeatureGrid& context,
                                        const AttentionWeights& w) {
    require(queries.channels == w.dim && context.channels == w.dim,
            "attention_update: channel count does not match weights");
    int nq = queries.pixels();
    int nk = context.pixels();
    auto q = detail::project_rows(queries.values.data(), nq, w.dim, w.wq);
    auto k = detail::project_rows(context.values.data(), nk, w.dim, w.wk);
    auto v = detail::project_rows(context.values.data(), nk, w.dim, w.wv);
    AttentionOutput out;
    out.features = FeatureGrid(queries.height, queries.width, w.dim);
    out.context_size = nk;
    detail::attention_core(q, nq, k, v, nk, w.dim, out.features.values, out.map);
    return out;
}

// Cross-attention flavor: keys and values projected from token embeddings.
inline AttentionOutput attention_update(const FeatureGrid& queries, const TokenContext& context,
                                        const AttentionWeights& w) {
    require(queries.channels == w.dim && context.dim == w.dim,
            "attention_update: channel count does not match weights");
    require(!context.empty(), "attention_update: empty token context");
    int nq = queries.pixels();
    int nk = context.count();
    auto q = detail::project_rows(queries.values.data(), nq, w.dim, w.wq);
    auto k = detail::project_rows(context.embeddings.data(), nk, w.dim, w.wk);
    auto v = detail::project_rows(context.embeddings.data(), nk, w.dim, w.wv);
    AttentionOutput out;
    out.features = FeatureGrid(queries.height, queries.width, w.dim);
    out.context_size = nk;
    detail::attention_core(q, nq, k, v, nk, w.dim, out.features.values, out.map);
    return out;
}

// The attention column of one prompt token, reshaped to H x W.
inline Mask cross_attention_map(const FeatureGrid& latent, const TokenContext& prompt,
                                int token_id, const AttentionWeights& w) {
    auto it = std::find(prompt.ids.begin(), prompt.ids.end(), token_id);
    if (it == prompt.ids.end())
        throw LookupError("cross_attention_map: token " + std::to_string(token_id) +
                          " not in prompt");
    int col = static_cast<int>(it - prompt.ids.begin());
    AttentionOutput out = attention_update(latent, prompt, w);
    Mask m(latent.height, latent.width);
    for (int i = 0; i < latent.pixels(); ++i)
        m.values[static_cast<std::size_t>(i)] =
            out.map[static_cast<std::size_t>(i) * out.context_size + col];
    return m;
}

// Self-attention with the region feature weighting removal applied to query
// and key features (values are never masked). A masked pixel drops its whole
// feature vector; the query and key draws are independent.
inline AttentionOutput removed_self_attention(const FeatureGrid& latent, const Mask& m_con,
                                              double r_q, double r_k, const SeededRng& rng_q,
                                              const SeededRng& rng_k, const AttentionWeights& w) {
    require(latent.channels == w.dim, "removed_self_attention: channels mismatch");
    require(m_con.height == latent.height && m_con.width == latent.width,
            "removed_self_attention: mask shape mismatch");
    require(m_con.is_binary(), "removed_self_attention: conflict mask must be binary");
    require(r_q >= 0.0 && r_q <= 1.0 && r_k >= 0.0 && r_k <= 1.0,
            "removal rates outside [0,1]");
    int n = latent.pixels();
    auto q = detail::project_rows(latent.values.data(), n, w.dim, w.wq);
    auto k = detail::project_rows(latent.values.data(), n, w.dim, w.wk);
    auto v = detail::project_rows(latent.values.data(), n, w.dim, w.wv);
    auto apply_removal = [&](std::vector<double>& rows, double r, const SeededRng& rng) {
        if (r == 0.0 || !m_con.values.size()) return;
        Mask draw = bernoulli_mask(latent.height, latent.width, r, rng);
        for (int i = 0; i < n; ++i) {
            if (m_con.values[static_cast<std::size_t>(i)] > 0.0 &&
                draw.values[static_cast<std::size_t>(i)] > 0.0) {
                double* row = rows.data() + static_cast<std::size_t>(i) * w.dim;
                std::fill(row, row + w.dim, 0.0);
            }
        }
    };
    apply_removal(q, r_q, rng_q);
    apply_removal(k, r_k, rng_k);
    AttentionOutput out;
    out.features = FeatureGrid(latent.height, latent.width, w.dim);
    out.context_size = n;
    detail::attention_core(q, n, k, v, n, w.dim, out.features.values, out.map);
    return out;
}

// Sinusoidal embedding over normalized progress u = position / steps. Low
// frequencies only (1 to 2 cycles over [0, 1]) so consecutive positions stay
// close and first-order inversion round-trips stay accurate.
inline std::vector<double> time_embedding(int position, int steps, int dim) {
    std::vector<double> emb(static_cast<std::size_t>(dim), 0.0);
    double u = steps > 0 ? static_cast<double>(position) / steps : 0.0;
    int pairs = (dim + 1) / 2;
    for (int k = 0; k < pairs; ++k) {
        double freq = pairs > 1 ? std::pow(2.0, static_cast<double>(k) / (pairs - 1)) : 1.0;
        double phase = 2.0 * 3.141592653589793238462643 * freq * u;
        emb[static_cast<std::size_t>(2 * k)] = std::sin(phase);
        if (2 * k + 1 < dim) emb[static_cast<std::size_t>(2 * k + 1)] = std::cos(phase);
    }
    return emb;
}

struct SubstrateParams {
    int channels = 32;
    double output_gain = 5e-5;    // scales the attention path of the noise prediction
    double time_gain = 0.0001;    // scales the timestep embedding bias
};

// The toy denoiser: seeded fixed-weight projections, removed self-attention,
// cross-attention against synthetic token embeddings, output projection plus a
// sinusoidal timestep bias. Pure given its seed; safe for concurrent layers.
class ToyDenoiser {
public:
    ToyDenoiser(const SubstrateParams& params, std::uint64_t seed, int schedule_steps)
        : params_(params),
          seed_(seed),
          steps_(schedule_steps),
          weights_(AttentionWeights::seeded(params.channels, seed)) {}

    const AttentionWeights& weights() const { return weights_; }
    const SubstrateParams& params() const { return params_; }
    std::uint64_t seed() const { return seed_; }

    TokenContext context_for(const TokenSet& tokens) const {
        return build_token_context(seed_, tokens, params_.channels);
    }

    // Attention features before output projection. The text path equals the
    // self path when the prompt is empty; token_maps align with prompt ids.
    struct Features {
        FeatureGrid self_path;
        FeatureGrid text_path;
        std::vector<Mask> token_maps;
    };

    Features features(const FeatureGrid& latent, int position, const TokenContext& prompt,
                      const Mask& m_con, double r_q, double r_k, std::uint64_t layer_id) const {
        SeededRng rng_q(seed_, make_stream(streams::kRemovalQuery, layer_id,
                                           static_cast<std::uint64_t>(position)));
        SeededRng rng_k(seed_, make_stream(streams::kRemovalKey, layer_id,
                                           static_cast<std::uint64_t>(position)));
        Features f;
        AttentionOutput sa = removed_self_attention(latent, m_con, r_q, r_k, rng_q, rng_k, weights_);
        f.self_path = std::move(sa.features);
        if (prompt.empty()) {
            f.text_path = f.self_path;
            return f;
        }
        AttentionOutput ca = attention_update(f.self_path, prompt, weights_);
        f.text_path = std::move(ca.features);
        f.token_maps.reserve(prompt.ids.size());
        for (int col = 0; col < prompt.count(); ++col) {
            Mask m(latent.height, latent.width);
            for (int i = 0; i < latent.pixels(); ++i)
                m.values[static_cast<std::size_t>(i)] =
                    ca.map[static_cast<std::size_t>(i) * ca.context_size + col];
            f.token_maps.push_back(std::move(m));
        }
        return f;
    }

    // Output projection plus timestep bias, mapping attention features to a
    // noise prediction.
    FeatureGrid project(const FeatureGrid& feat, int position) const {
        auto rows = detail::project_rows(feat.values.data(), feat.pixels(), weights_.dim,
                                         weights_.wo);
        auto emb = time_embedding(position, steps_, weights_.dim);
        FeatureGrid out(feat.height, feat.width, weights_.dim);
        for (int i = 0; i < feat.pixels(); ++i)
            for (int c = 0; c < weights_.dim; ++c)
                out.values[static_cast<std::size_t>(i) * weights_.dim + c] =
                    params_.output_gain * rows[static_cast<std::size_t>(i) * weights_.dim + c] +
                    params_.time_gain * emb[static_cast<std::size_t>(c)];
        return out;
    }

    struct Prediction {
        FeatureGrid noise;
        std::vector<Mask> token_maps;
    };

    // Full pipeline for one layer: removed self-attention, cross-attention
    // with the prompt (skipped when empty), projection with timestep bias.
    Prediction predict(const FeatureGrid& latent, int position, const TokenContext& prompt,
                       const Mask& m_con, double r_q, double r_k, std::uint64_t layer_id) const {
        Features f = features(latent, position, prompt, m_con, r_q, r_k, layer_id);
        Prediction p;
        p.noise = project(f.text_path, position);
        p.token_maps = std::move(f.token_maps);
        return p;
    }

private:
    SubstrateParams params_;
    std::uint64_t seed_;
    int steps_;
    AttentionWeights weights_;
};

}  // namespace layerkit
