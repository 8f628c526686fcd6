#pragma once

#include <cstdint>
#include <random>

namespace uqnet {

// splitmix64, used to decorrelate derived seeds
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Seeded random stream. All stochastic operations take one of these
// explicitly; nothing reads global state.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    // Splitting rule: child i of a stream seeded with s is seeded with
    // mix64(s ^ mix64(i + 1)). Children are independent of the parent's
    // consumption state, so parallel workers derived from the same master
    // seed produce identical results regardless of scheduling.
    static RngStream child(uint64_t master_seed, uint64_t index) {
        return RngStream(mix64(master_seed ^ mix64(index + 1)));
    }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    bool bernoulli(double p) { return uniform_(engine_) < p; }
    // uniform in [0, n)
    uint64_t index(uint64_t n) {
        std::uniform_int_distribution<uint64_t> d(0, n - 1);
        return d(engine_);
    }
    // ±1 with equal probability
    double sign() { return bernoulli(0.5) ? 1.0 : -1.0; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace uqnet
