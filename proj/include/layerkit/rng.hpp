#pragma once

#include <cmath>
#include <cstdint>

namespace layerkit {

// Counter-based deterministic random stream.
//
// Draw i of stream (seed, stream_id) is a pure function of (seed, stream_id, i),
// so parallel consumers can index cells directly and the produced sequence does
// not depend on evaluation order or platform. The generator is the splitmix64
// finalizer over a per-stream base state advanced by the Weyl constant.
class SeededRng {
public:
    SeededRng(std::uint64_t seed, std::uint64_t stream_id)
        : base_(mix(seed ^ 0x9E6C63D0876A9A35ULL, stream_id)),
          seed_(seed),
          stream_(stream_id) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t bits_at(std::uint64_t index) const {
        return finalize(base_ + (index + 1) * kWeyl);
    }

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform_at(std::uint64_t index) const {
        return static_cast<double>(bits_at(index) >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; draw i consumes uniform indices 2i, 2i+1.
    double normal_at(std::uint64_t index) const {
        // u1 in (0, 1] so the log never sees zero.
        double u1 = static_cast<double>((bits_at(2 * index) >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform_at(2 * index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Sequential convenience cursor; indexed access above is the primary API.
    double next_uniform() { return uniform_at(cursor_++); }

private:
    static constexpr std::uint64_t kWeyl = 0x9E3779B97F4A7C15ULL;
    static constexpr double kPi = 3.141592653589793238462643383279502884;

    static std::uint64_t finalize(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        return finalize(finalize(a + kWeyl) ^ finalize(b + 2 * kWeyl));
    }

    std::uint64_t base_;
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t cursor_ = 0;
};

// Stream-id packing used across the pipeline: one independent stream per
// (role, layer, step). Field widths are generous for desk-scale runs.
inline std::uint64_t make_stream(std::uint64_t role, std::uint64_t layer, std::uint64_t step) {
    return (role << 48) | ((layer & 0xFFFFULL) << 32) | (step & 0xFFFFFFFFULL);
}

namespace streams {
constexpr std::uint64_t kSourceLatent = 1;
constexpr std::uint64_t kWeights = 2;
constexpr std::uint64_t kTokenEmbedding = 3;
constexpr std::uint64_t kRemovalQuery = 4;
constexpr std::uint64_t kRemovalKey = 5;
}  // namespace streams

}  // namespace layerkit
