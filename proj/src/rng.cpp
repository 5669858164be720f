#include "mvps/rng.hpp"

#include <cmath>
#include <sstream>

namespace mvps {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Rng Rng::substream(uint64_t root_seed, const std::string& name) {
    // splitmix64 of (root ^ name hash) decorrelates nearby seeds
    uint64_t z = root_seed ^ fnv1a64(name);
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z = z ^ (z >> 31);
    return Rng(z);
}

double Rng::uniform() {
    return (engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

uint64_t Rng::uniform_index(uint64_t n) {
    if (n == 0) return 0;
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

std::string Rng::serialize_state() const {
    std::ostringstream os;
    os << engine_;
    os << " " << (have_spare_ ? 1 : 0);
    if (have_spare_) {
        os.precision(17);
        os << " " << spare_;
    }
    return os.str();
}

void Rng::restore_state(const std::string& text) {
    std::istringstream is(text);
    is >> engine_;
    int flag = 0;
    is >> flag;
    have_spare_ = flag != 0;
    spare_ = 0.0;
    if (have_spare_) is >> spare_;
}

}  // namespace mvps
