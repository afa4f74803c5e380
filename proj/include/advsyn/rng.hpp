#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace advsyn {

// Stream tags used to derive independent generators from one run seed.
// Keeping consumers on separate streams means e.g. adding a dropout layer
// cannot perturb the data shuffle order.
enum class RngStream : uint64_t {
    weights = 1,
    noise = 2,
    dropout = 3,
    augment = 4,
    split = 5,
    shuffle = 6,
    probe = 7,
    phantom = 8,
};

// Deterministic 64-bit generator based on splitmix64
// (Steele, Lea & Vigna; the mix used by java.util.SplittableRandom).
// The full draw algebra is fixed here so identical seeds give identical
// sequences on any platform with IEEE-754 doubles:
//   next_u64()  : one splitmix64 step
//   uniform()   : (next_u64() >> 11) * 2^-53            in [0,1)
//   uniform_oc(): ((next_u64() >> 11) + 1) * 2^-53      in (0,1]
//   normal()    : Box-Muller, sqrt(-2 ln u1) * cos(2 pi u2),
//                 u1 = uniform_oc(), u2 = uniform(); no cached spare,
//                 each call consumes exactly two draws
//   below(n)    : Lemire multiply-shift, high 64 bits of next_u64() * n
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

    // Derives an independent stream; derivation depends only on the seed
    // this Rng was constructed with, never on how much it has been used.
    Rng stream(RngStream tag) const {
        return Rng(mix(seed_ ^ (0x9E3779B97F4A7C15ULL * (static_cast<uint64_t>(tag) + 1))));
    }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform_oc() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        const double u1 = uniform_oc();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Fisher-Yates, one below() draw per position from the back.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t seed() const { return seed_; }
    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

  private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t state_;
};

}  // namespace advsyn
