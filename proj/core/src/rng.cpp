#include "heatsim/rng.hpp"
#include <cmath>
#include <limits>

namespace heatsim {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t hash_tag(std::string_view tag) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;   // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return mix64(h);
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    // rejection to stay unbiased
    const std::uint64_t lim = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do { x = eng_(); } while (x >= lim);
    return x % n;
}

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
}

double Rng::exponential(double rate) {
    return -std::log(uniform()) / rate;
}

long Rng::poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    // inversion by sequential search; adequate for the rates used here
    double p = std::exp(-lambda), cdf = p;
    const double u = uniform();
    long k = 0;
    while (u > cdf && k < 100000) {
        ++k;
        p *= lambda / static_cast<double>(k);
        cdf += p;
    }
    return k;
}

double Rng::gamma(double shape) {
    if (shape < 1.0) {
        // boost by one, then scale back
        const double u = uniform();
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
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
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

Rng Rng::derive(std::string_view tag) const {
    Rng r(0);
    r.eng_.seed(mix64(base_ ^ hash_tag(tag)));
    r.base_ = mix64(base_ ^ hash_tag(tag));
    return r;
}

Rng Rng::derive(std::uint64_t stream) const {
    Rng r(0);
    r.eng_.seed(mix64(base_ ^ mix64(stream + 0x9eull)));
    r.base_ = mix64(base_ ^ mix64(stream + 0x9eull));
    return r;
}

} // namespace heatsim
