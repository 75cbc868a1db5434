#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace cpdre {

// Philox4x32-10 (Salmon et al. 2011). Counter based, so any draw can be
// addressed directly by (key, counter) without carrying generator state.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += 0x9E3779B9u;
                key[1] += 0xBB67AE85u;
            }
            const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }
};

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Stream roles keep independent consumers of one seed apart.
enum class Role : std::uint32_t {
    Events = 1,
    InitialState = 2,
    Field = 3,
    Filler = 4,
    Bootstrap = 5,
    Probe = 6,
    Stationary = 7,
};

inline double u01_from_bits(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Exp(1) from a uniform in [0,1); never returns inf.
inline double exp1_from_bits(std::uint64_t bits) noexcept {
    return -std::log1p(-u01_from_bits(bits));
}

// Counter-based generator keyed by (seed, role). Sequential use walks the
// counter; random access via at(a, b) reads the block at counter (a, b).
class CounterRng {
public:
    using result_type = std::uint64_t;

    CounterRng() : CounterRng(0, Role::Events) {}
    CounterRng(std::uint64_t seed, Role role, std::uint64_t substream = 0) noexcept {
        const std::uint64_t k = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(role)));
        key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
        sub_ = substream;
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (have_ == 0) {
            buf_ = at(counter_++, sub_);
            have_ = 2;
        }
        return buf_[2 - have_--];
    }

    double uniform() noexcept { return u01_from_bits((*this)()); }
    double exponential(double rate) noexcept { return exp1_from_bits((*this)()) / rate; }

    // Uniform integer in [0, n) by Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        for (;;) {
            const std::uint64_t x = (*this)();
            const __uint128_t m = static_cast<__uint128_t>(x) * n;
            const auto lo = static_cast<std::uint64_t>(m);
            if (lo >= n || lo >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    std::array<std::uint64_t, 2> at(std::uint64_t a, std::uint64_t b) const noexcept {
        const auto out = Philox4x32::block(
            {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
             static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)},
            key_);
        return {(std::uint64_t{out[1]} << 32) | out[0], (std::uint64_t{out[3]} << 32) | out[2]};
    }

    double uniform_at(std::uint64_t a, std::uint64_t b) const noexcept {
        return u01_from_bits(at(a, b)[0]);
    }

private:
    Philox4x32::Key key_{};
    std::uint64_t sub_ = 0;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> buf_{};
    int have_ = 0;
};

// Injective in trial_id for fixed master: splitmix64 is a bijection and the
// inner argument is affine in trial_id with odd multiplier.
inline std::uint64_t derive_trial_seed(std::uint64_t master, std::uint64_t trial_id) noexcept {
    return splitmix64(splitmix64(master) + (trial_id + 1) * 0x9E3779B97F4A7C15ull);
}

}  // namespace cpdre
