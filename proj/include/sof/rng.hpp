#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sof {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Deterministic random stream keyed by (seed, stream).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The conversions to uniform, bounded-integer and normal draws are
/// implemented here because the std:: distributions are implementation-defined,
/// and traces must be identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, bound); bound must be positive.
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal (Box-Muller, one draw per call).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 engine_;
};

/// Permutation of [0, n) produced by Fisher-Yates from Rng(seed, stream).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream);

} // namespace sof
