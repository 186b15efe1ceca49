#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace convqa {

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive an independent stream seed from (seed, stream). Pure function, so
/// dropout masks and shuffle orders stay reproducible without shared state.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + (stream << 1));
    uint64_t a = splitmix64(s);
    s ^= stream;
    return a ^ splitmix64(s);
}

/// xoshiro256** with explicit, serializable state. std:: engines are avoided
/// on purpose: their text state is bulky and normal_distribution is not
/// bit-stable across standard libraries, which would break checkpoint
/// round-trips and cross-build determinism.
class Rng {
public:
    using State = std::array<uint64_t, 4>;

    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller. The second variate is discarded so the
    /// generator state stays exactly four words.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Normal(0, stddev) resampled until within +/- 2 stddev.
    double truncated_normal(double stddev) {
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return z * stddev;
    }

    /// Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    const State& state() const { return state_; }
    void set_state(const State& s) { state_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    State state_{};
};

/// Deterministic permutation of 0..n-1 under the given seed.
inline std::vector<size_t> random_permutation(size_t n, uint64_t seed) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    return order;
}

}  // namespace convqa
