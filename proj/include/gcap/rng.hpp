#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace gcap::rng {

// Every randomized operation draws from its own stream, keyed by (base seed,
// purpose, counter). Samplers are written out here instead of using
// <random> distributions, whose output is implementation-defined; the
// engine itself (mt19937_64) is fully specified by the standard.

enum class Purpose : std::uint64_t {
    init = 1,
    shuffle,
    subsample,
    labels,
    confusion,
    blobs_centers,
    blobs_samples,
    ascent,
    perturbation,
    minibatch,
    power_iteration,
    split,
    experiment,
    mc_check,
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

std::uint64_t derive_seed(std::uint64_t base, Purpose purpose, std::uint64_t counter = 0) noexcept;

class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(seed) {}
    Stream(std::uint64_t base, Purpose purpose, std::uint64_t counter = 0)
        : engine_(derive_seed(base, purpose, counter)) {}

    std::uint64_t bits() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, n); n must be positive.
    std::size_t index(std::size_t n);

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Uniformly random permutation of 0..n-1 (Fisher-Yates).
std::vector<std::size_t> permutation(std::size_t n, Stream& stream);

}  // namespace gcap::rng
