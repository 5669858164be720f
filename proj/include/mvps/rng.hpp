#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mvps {

// Deterministic RNG with named substreams. Each (root_seed, stream name)
// pair yields an independent generator, so adding a consumer never shifts
// the random sequence seen by existing ones. Gaussian samples use
// Box-Muller on top of the raw engine instead of std::normal_distribution,
// which is implementation-defined.
class Rng {
public:
    Rng() : engine_(0x9e3779b97f4a7c15ull) {}
    explicit Rng(uint64_t seed) : engine_(seed) {}

    static Rng substream(uint64_t root_seed, const std::string& name);

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform();
    // uniform in [lo, hi)
    double uniform(double lo, double hi);
    // integer in [0, n)
    uint64_t uniform_index(uint64_t n);
    // standard normal
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string serialize_state() const;
    void restore_state(const std::string& text);

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// 64-bit FNV-1a, used to derive substream seeds from names.
uint64_t fnv1a64(const std::string& s);

}  // namespace mvps
