#pragma once
#include <cstdint>
#include <random>
#include <string_view>

namespace heatsim {

// splitmix64; used to derive substream seeds so parallel work stays reproducible
std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t hash_tag(std::string_view tag) noexcept;

// mt19937_64 engine with in-house distributions so draw sequences are pinned by
// this code, not by the standard library's unspecified algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed)
        : eng_(mix64(seed ^ 0x9e3779b97f4a7c15ull)), base_(mix64(seed ^ 0x9e3779b97f4a7c15ull)) {}
    Rng(std::uint64_t seed, std::string_view tag) : Rng(mix64(seed) ^ hash_tag(tag)) {}
    Rng(std::uint64_t seed, std::uint64_t stream) : Rng(mix64(seed) ^ mix64(stream + 0x51ull)) {}

    std::uint64_t bits() { return eng_(); }

    // uniform on (0,1): 53-bit mantissa, never returns 0 or 1
    double uniform() {
        return (static_cast<double>(eng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    std::uint64_t uniform_index(std::uint64_t n);   // unbiased in [0,n)

    double normal();                                 // Box-Muller, cached pair
    double exponential(double rate = 1.0);
    double pareto1() { return 1.0 / (1.0 - uniform()); }   // unit Pareto, P(X>x)=1/x
    long poisson(double lambda);                     // inversion; lambda < ~30 expected
    double gamma(double shape);                      // unit rate, Marsaglia-Tsang

    Rng derive(std::string_view tag) const;
    Rng derive(std::uint64_t stream) const;

private:
    std::mt19937_64 eng_;
    std::uint64_t base_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace heatsim
