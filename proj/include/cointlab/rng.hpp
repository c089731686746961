#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace cointlab {

// xoshiro256** seeded through splitmix64. Normals by Box-Muller, caching the
// second variate. Output is identical on every platform for a given seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next();
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform on {0, ..., n-1}, unbiased (rejection on the top range).
    std::size_t index(std::size_t n);
    double normal();

private:
    std::array<std::uint64_t, 4> s_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace cointlab
