#pragma once

#include <cstdint>
#include <limits>

namespace sphsde {

/// SplitMix64 output function (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Standard normal quantile, Wichura's AS241 (PPND16), relative error ~1e-16.
/// Requires 0 < p < 1.
double normal_quantile(double p);

/*!
 * Counter-based random stream.
 *
 * Every draw is a pure function of (seed, stream, counter):
 *
 *     key    = mix(seed ^ mix(stream + gamma))
 *     bits_n = mix(key + (n + 1) * gamma)
 *
 * with gamma = 0x9e3779b97f4a7c15 and mix the SplitMix64 finalizer. A path
 * uses stream = path index and counter = step index, so increments are
 * reproducible under any parallel schedule. Uniforms take the top 53 bits,
 * offset by half an ulp so they lie strictly inside (0, 1); normals are the
 * inverse CDF of that uniform.
 *
 * The sequential interface (operator(), uniform(), normal()) walks the counter
 * from a caller-chosen offset and satisfies UniformRandomBitGenerator.
 */
class CounterRng {
  public:
    using result_type = std::uint64_t;

    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

    CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0)
        : key_(splitmix64_mix(seed ^ splitmix64_mix(stream + kGamma))), counter_(counter) {}

    std::uint64_t bits_at(std::uint64_t n) const { return splitmix64_mix(key_ + (n + 1) * kGamma); }
    double uniform_at(std::uint64_t n) const { return to_unit(bits_at(n)); }
    double normal_at(std::uint64_t n) const { return normal_quantile(uniform_at(n)); }

    std::uint64_t operator()() { return bits_at(counter_++); }
    double uniform() { return to_unit((*this)()); }
    double normal() { return normal_quantile(uniform()); }

    std::uint64_t counter() const { return counter_; }
    void seek(std::uint64_t n) { counter_ = n; }

    static constexpr std::uint64_t min() { return 0; }
    static constexpr std::uint64_t max() { return std::numeric_limits<std::uint64_t>::max(); }

  private:
    static double to_unit(std::uint64_t b) { return (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53; }

    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace sphsde
