#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace echoset {

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// 64-bit FNV-1a of a byte string.
std::uint64_t fnv1a64(std::string_view bytes);

/// Seed of an independent child stream, derived from a parent seed and a tag.
/// derive_seed(s, "grf") and derive_seed(s, 3) never depend on call order, so
/// per-sample generation is reproducible under any scheduling.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag);

/// Reproducible random stream. The engine (mt19937_64) is fully specified by
/// the C++ standard; the distributions below are implemented here instead of
/// using <random> distributions, whose algorithms are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller; one value per call.
    double normal();

    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);

    Rng child(std::string_view tag) { return Rng(derive_seed(engine_(), tag)); }

private:
    std::mt19937_64 engine_;
};

} // namespace echoset
