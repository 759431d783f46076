#include "uamf/rng.hpp"

#include <sstream>

#include "uamf/error.hpp"

namespace uamf {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

Rng Rng::split() {
    // splitmix64 finalizer decorrelates the child seed from the parent stream
    std::uint64_t z = engine_() + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
}

double Rng::normal() {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(engine_);
}

double Rng::uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(engine_);
}

std::uint64_t Rng::next_u64() { return engine_(); }

std::uint64_t Rng::below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
    return dist(engine_);
}

bool Rng::bernoulli(double p) {
    std::bernoulli_distribution dist(p);
    return dist(engine_);
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::set_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) throw DataError("invalid rng state");
}

} // namespace uamf
