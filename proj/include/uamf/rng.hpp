#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace uamf {

/// Seeded, splittable generator. Every stochastic step in the library draws
/// from one of these so runs are reproducible from a single seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    /// Child generator seeded from this one's stream. Advances the parent.
    Rng split();

    double normal();
    double uniform(double lo = 0.0, double hi = 1.0);
    std::uint64_t next_u64();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p);

    std::mt19937_64& engine() noexcept { return engine_; }

    std::string state() const;
    void set_state(const std::string& state);

private:
    std::mt19937_64 engine_;
};

} // namespace uamf
