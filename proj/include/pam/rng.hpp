#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pam::rng {

// Named purposes keep streams for different consumers disjoint.
enum class Purpose : std::uint64_t {
    class_layout = 1,
    train_samples,
    test_samples,
    moons_rotation,
    feature_permutation,
    pretrain_data,
    pretrain_init,
    pretrain_shuffle,
    adapter_init,
    shuffle,
    perturb_branch,
    gauss_noise,
    run_stream,
};

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Hash of a seed and an ordered key path; the basis of every RNG stream.
constexpr std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ULL));
    return h;
}

inline std::mt19937_64 engine(std::uint64_t seed, Purpose purpose, std::initializer_list<std::uint64_t> keys = {}) {
    std::uint64_t h = derive(seed, {static_cast<std::uint64_t>(purpose)});
    for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ULL));
    return std::mt19937_64(h);
}

// Stateless stream: the value at `counter` depends only on (key, counter).
struct CounterRng {
    std::uint64_t key = 0;

    std::uint64_t bits(std::uint64_t counter) const { return mix64(key ^ mix64(counter)); }
    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }
};

}  // namespace pam::rng
