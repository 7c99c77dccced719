#pragma once

#include <cstdint>
#include <string_view>

namespace rgf {

/// Deterministic pseudo-random generator (xoshiro256** seeded via splitmix64).
/// All sampling in the project goes through this class so that results depend
/// only on the seed, not on library internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform();

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n); n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n);

    /// Standard normal via Box-Muller (one cached value).
    double normal();

    /// Gamma(shape, scale) by Marsaglia-Tsang squeeze.
    double gamma(double shape, double scale);

    /// Poisson(lambda) by inversion-by-multiplication (fine for the small
    /// means used here).
    std::uint64_t poisson(double lambda);

    /// Negative binomial with the (mean, dispersion) parameterization:
    /// variance = mean + mean^2 / dispersion. Sampled as a gamma-Poisson
    /// mixture.
    std::uint64_t negative_binomial(double mean, double dispersion);

    /// Fisher-Yates shuffle of [first, first+n).
    template <typename T>
    void shuffle(T* first, std::size_t n) {
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            T tmp = first[i - 1];
            first[i - 1] = first[j];
            first[j] = tmp;
        }
    }

private:
    std::uint64_t s_[4];
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

/// FNV-1a hash of a byte string; used to fold identifiers into seeds.
std::uint64_t fnv1a64(std::string_view bytes);

/// Stage seed derivation: one global seed fans out to per-stage seeds by
/// stable hashing of the stage name. Stable across runs and platforms.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view stage);

}  // namespace rgf
