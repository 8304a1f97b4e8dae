#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace freeform::rng {

/// splitmix64 step; the workhorse for seed derivation and hashing.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent child seed from a parent seed and any number of
/// stream identifiers. Used so that every LLM round, fold, tree and repeat
/// owns its own deterministic stream regardless of execution order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = splitmix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    for (std::uint64_t p : parts) h = splitmix64(h ^ p);
    return h;
}

/// Small deterministic generator (xorshift-star flavour via splitmix64 state
/// walk). Self-contained so results do not depend on the standard library's
/// distribution implementations.
class Pcg {
public:
    explicit Pcg(std::uint64_t seed) : state_(splitmix64(seed ^ 0x853c49e6748fea9bULL)) {}

    std::uint64_t next_u64() {
        state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
        std::uint64_t x = state_;
        x ^= x >> 33;
        x *= 0xff51afd7ed558ccdULL;
        x ^= x >> 33;
        return x;
    }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling to kill modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    /// Uniform real in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform real in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard Gumbel(0, 1) variate.
    double gumbel() {
        double u = uniform01();
        if (u <= 0.0) u = 0x1.0p-53;
        return -std::log(-std::log(u));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices drawn uniformly from [0, n), in draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k && i < n; ++i) {
            std::size_t j = i + static_cast<std::size_t>(below(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    std::uint64_t state_;
};

}  // namespace freeform::rng
