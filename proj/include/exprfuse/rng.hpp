#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace exprfuse {

// Seeded random source. The bit generator is std::mt19937_64, whose output
// sequence is fixed by the C++ standard. Every derived distribution below is
// implemented here rather than through <random> distributions, whose
// algorithms vary between standard libraries, so a seed reproduces the same
// stream on every platform.
class Rng {
   public:
    static constexpr const char* kAlgorithm = "mt19937_64";

    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via the Box-Muller transform (no cached second value).
    double normal();

    // Uniform integer in [0, bound) by rejection, bound > 0.
    std::uint64_t below(std::uint64_t bound);

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates shuffle of indices.
    void shuffle(std::span<std::size_t> items);

    // Independent child stream, keyed by `stream`. The parent is not advanced.
    Rng fork(std::uint64_t stream) const;

   private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

// SplitMix64 finalizer, used to derive well-mixed child seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace exprfuse
