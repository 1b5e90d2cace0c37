#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "mflab/tensor.hpp"

namespace mflab {

/// FNV-1a 64-bit hash. Used to derive per-stream RNG keys and to fingerprint
/// serialized checkpoints for lineage tracking.
std::uint64_t fnv1a64(std::string_view s);

/// Counter-based generator: the i-th variate depends only on (seed, stream
/// name, i), so state is three numbers and serializes trivially. Every source
/// of randomness in the pipeline (noise draws, time sampling, pair choices)
/// goes through an instance of this.
class Rng {
  public:
    Rng(std::uint64_t seed, std::string stream);

    std::uint64_t next_u64();
    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);
    double normal();                       // Box-Muller; two counter ticks, no cached spare
    std::size_t index(std::size_t n);      // uniform in [0, n)

    /// Fresh generator keyed off this one's seed and a sub-stream name.
    Rng fork(const std::string& sub) const;

    std::uint64_t seed() const { return seed_; }
    const std::string& stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

  private:
    std::uint64_t seed_ = 0;
    std::string stream_;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

Tensor normal_tensor(Rng& rng, std::vector<std::size_t> shape);
Tensor uniform_tensor(Rng& rng, std::vector<std::size_t> shape, double lo, double hi);

}  // namespace mflab
