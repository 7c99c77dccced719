#include "rgf/rng.hpp"

#include <cmath>

#include "rgf/error.hpp"

namespace rgf {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    require(n > 0, "Rng::uniform_int: n must be positive");
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
}

double Rng::gamma(double shape, double scale) {
    require(shape > 0.0 && scale > 0.0, "Rng::gamma: shape and scale must be positive");
    if (shape < 1.0) {
        // Boost to shape+1, then apply the u^(1/shape) correction.
        const double u = std::max(uniform(), 1e-300);
        return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
            return d * v * scale;
        }
    }
}

std::uint64_t Rng::poisson(double lambda) {
    require(lambda >= 0.0, "Rng::poisson: lambda must be non-negative");
    if (lambda == 0.0) return 0;
    // Chunked inversion keeps the product away from underflow for larger
    // means; the per-chunk cost is O(chunk).
    std::uint64_t k = 0;
    while (lambda > 30.0) {
        const double chunk = 25.0;
        const double limit = std::exp(-chunk);
        double p = 1.0;
        std::uint64_t kc = 0;
        for (;;) {
            p *= uniform();
            if (p < limit) break;
            ++kc;
        }
        k += kc;
        lambda -= chunk;
    }
    const double limit = std::exp(-lambda);
    double p = 1.0;
    for (;;) {
        p *= uniform();
        if (p < limit) break;
        ++k;
    }
    return k;
}

std::uint64_t Rng::negative_binomial(double mean, double dispersion) {
    require(mean >= 0.0, "Rng::negative_binomial: mean must be non-negative");
    require(dispersion > 0.0, "Rng::negative_binomial: dispersion must be positive");
    if (mean == 0.0) return 0;
    const double lambda = gamma(dispersion, mean / dispersion);
    return poisson(lambda);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view stage) {
    std::uint64_t x = root_seed ^ fnv1a64(stage);
    return splitmix64(x);
}

}  // namespace rgf
