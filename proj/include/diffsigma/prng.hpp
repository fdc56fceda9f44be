#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace diffsigma {

// Base error type for the whole library.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// SplitMix64 output mix (Steele et al.). Bijective on 64-bit values.
constexpr std::uint64_t splitmix_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

constexpr std::uint64_t splitmix_next(std::uint64_t& state) {
    state += kGolden;
    return splitmix_mix(state);
}

}  // namespace detail

// Seed splitting: one SplitMix64 step from state (base XOR golden*k).
// Bijective in base for fixed k, and derive(b,i) != derive(b,j) for i != j,
// which keeps parallel synthesis tasks on non-colliding streams.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t k) {
    std::uint64_t state = base ^ (detail::kGolden * k);
    return detail::splitmix_next(state);
}

// Deterministic generator: SplitMix64 uniforms, Box-Muller normals.
// Identical (algorithm, seed) gives an identical stream on every platform
// that rounds IEEE doubles the same way. One Box-Muller evaluation consumes
// exactly two raw 64-bit draws and yields two normals; the second is cached.
class Prng {
  public:
    static constexpr const char* kAlgorithmId = "splitmix64-boxmuller-v1";

    explicit Prng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }
    const char* algorithm_id() const { return kAlgorithmId; }
    // Raw 64-bit draws consumed so far (monotone stream position).
    std::uint64_t draws() const { return draws_; }

    std::uint64_t next_u64() {
        ++draws_;
        return detail::splitmix_next(state_);
    }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0,1]; safe as a log() argument.
    double uniform_pos() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Unbiased integer in [0, bound) via 128-bit multiply (Lemire-style
    // truncation; bias < 2^-64 * bound, negligible and deterministic).
    std::uint64_t bounded(std::uint64_t bound) {
        if (bound == 0) throw Error("Prng::bounded: bound must be positive");
        using u128 = unsigned __int128;
        return static_cast<std::uint64_t>((u128(next_u64()) * u128(bound)) >> 64);
    }

    // Standard normal variate, Box-Muller over two uniforms.
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

  private:
    std::uint64_t seed_;
    std::uint64_t state_;
    std::uint64_t draws_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace diffsigma
