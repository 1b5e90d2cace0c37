#include "mflab/rng.hpp"

#include <cmath>

namespace mflab {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

// splitmix64 finalizer: bijective mixing of a 64-bit word.
std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::string stream)
    : seed_(seed), stream_(std::move(stream)), key_(mix64(seed ^ fnv1a64(stream_))) {}

std::uint64_t Rng::next_u64() {
    // Counter stepped by the golden-ratio increment, then mixed: splitmix64
    // with jumpable state, which is exactly what a resumable stream needs.
    const std::uint64_t c = key_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    return mix64(c);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // u1 shifted into (0, 1] so log(u1) is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw DomainError("Rng::index: n must be positive");
    return static_cast<std::size_t>(next_u64() % n);
}

Rng Rng::fork(const std::string& sub) const { return Rng(seed_, stream_ + "/" + sub); }

Tensor normal_tensor(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

Tensor uniform_tensor(Rng& rng, std::vector<std::size_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace mflab
