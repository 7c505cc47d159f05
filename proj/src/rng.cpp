#include "gcap/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "gcap/errors.hpp"

namespace gcap::rng {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, Purpose purpose, std::uint64_t counter) noexcept {
    std::uint64_t s = splitmix64(base);
    s = splitmix64(s ^ static_cast<std::uint64_t>(purpose));
    return splitmix64(s ^ counter);
}

std::size_t Stream::index(std::size_t n) {
    if (n == 0) {
        throw ArgumentError("rng::Stream::index: empty range");
    }
    const std::uint64_t range = n;
    // Reject the tail so every residue is equally likely.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % range);
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return static_cast<std::size_t>(x % range);
}

double Stream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::vector<std::size_t> permutation(std::size_t n, Stream& stream) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = stream.index(i);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace gcap::rng
