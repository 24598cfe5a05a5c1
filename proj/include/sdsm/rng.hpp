#pragma once

#include <cstdint>
#include <random>

namespace sdsm {

using Rng = std::mt19937_64;

/// Independent purposes drawn from one master seed. Adding prediction
/// targets or changing the design never perturbs the Gibbs stream.
enum class Stream : std::uint32_t {
    Design = 1,
    Gibbs = 2,
    Predict = 3,
    Nugget = 4,
    Simulate = 5,
    Oracle = 6,
    Aux = 7,
};

/// Substream keyed by (master seed, purpose, chain, index).
[[nodiscard]] inline Rng make_stream(std::uint64_t seed, Stream purpose, std::uint64_t chain = 0,
                                     std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose),
                      static_cast<std::uint32_t>(chain), static_cast<std::uint32_t>(chain >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

[[nodiscard]] inline double std_normal(Rng& rng) {
    std::normal_distribution<double> z;
    return z(rng);
}

[[nodiscard]] inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// Inverse gamma with shape a and scale b: b / Gamma(a, 1).
[[nodiscard]] inline double inverse_gamma(Rng& rng, double shape, double scale) {
    std::gamma_distribution<double> g(shape, 1.0);
    double x = g(rng);
    while (!(x > 0.0)) x = g(rng);
    return scale / x;
}

}  // namespace sdsm
