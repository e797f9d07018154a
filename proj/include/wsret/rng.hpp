#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace wsret {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
/// A pure function of (key, counter): the same pair always yields the same
/// four words, which lets a backward pass regenerate forward noise.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kW0;
        key[1] += kW1;
    }
    return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Order-sensitive seed derivation.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6A09E667F3BCC908ull;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

/// Uniform in the open interval (0, 1).
inline double u32_to_open_unit(std::uint32_t x) { return (static_cast<double>(x) + 0.5) * 0x1p-32; }

/// Four standard normals from one Philox block via Box-Muller.
inline std::array<double, 4> philox_normals(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    const auto w = philox4x32(ctr, key);
    std::array<double, 4> out{};
    for (int p = 0; p < 2; ++p) {
        const double r = std::sqrt(-2.0 * std::log(u32_to_open_unit(w[2 * p])));
        const double theta = 2.0 * std::numbers::pi * u32_to_open_unit(w[2 * p + 1]);
        out[2 * p] = r * std::cos(theta);
        out[2 * p + 1] = r * std::sin(theta);
    }
    return out;
}

inline std::array<std::uint32_t, 2> key_from_seed(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

/// Sequential generator built on Philox; used for data generation, weight
/// init and batch sampling where a plain stream is enough.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : key_(key_from_seed(seed)), stream_(stream) {}

    std::uint32_t next_u32() {
        if (idx_ == 4) refill();
        return block_[idx_++];
    }
    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }
    double uniform() { return u32_to_open_unit(next_u32()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    bool bernoulli(double p) { return uniform() < p; }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~0ull - (~0ull % n);
        std::uint64_t x;
        do x = next_u64(); while (x >= limit);
        return x % n;
    }
    int uniform_int(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1))); }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform()));
        const double theta = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    void refill() {
        block_ = philox4x32({static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                             static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                            key_);
        ++counter_;
        idx_ = 0;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int idx_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Pairwise (cascade) summation; result depends only on the input order.
template <typename Range>
double pairwise_sum(const Range& values, std::size_t lo, std::size_t hi) {
    if (hi - lo <= 8) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += values[i];
        return s;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(values, lo, mid) + pairwise_sum(values, mid, hi);
}

template <typename Range>
double pairwise_sum(const Range& values) {
    return pairwise_sum(values, 0, values.size());
}

}  // namespace wsret
