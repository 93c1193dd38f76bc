#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gmg {

struct Shape3 {
    int h = 0, w = 0, d = 0;

    std::int64_t count() const { return std::int64_t(h) * w * d; }
    bool operator==(const Shape3&) const = default;
};

inline std::int64_t voxel_index(const Shape3& s, int i, int j, int k) {
    return (std::int64_t(i) * s.w + j) * s.d + k;
}

// Normalized voxel coordinate along one axis: index/(n-1), endpoints exactly
// 0 and 1. A degenerate axis (n == 1) sits at 0.
inline double axis_coord(int index, int n) {
    return n > 1 ? double(index) / double(n - 1) : 0.0;
}

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// Streams are derived with splitmix64 key mixing: each (seed, id...) tuple
// yields an independent generator state, so per-sample work is reproducible
// regardless of execution order. Uniforms use the top 53 bits; normals are
// Box-Muller with two uniforms per draw (no caching).
// ---------------------------------------------------------------------------
namespace detail {
inline std::uint64_t splitmix_scramble(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
}  // namespace detail

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(detail::splitmix_scramble(seed + kGolden)) {}

    static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
        std::uint64_t s = detail::splitmix_scramble(seed + kGolden);
        s = detail::splitmix_scramble(s + kGolden * (a + 1));
        s = detail::splitmix_scramble(s + kGolden * (b + 1));
        s = detail::splitmix_scramble(s + kGolden * (c + 1));
        return Rng(FromState{}, s);
    }

    std::uint64_t next_u64() {
        state_ += kGolden;
        return detail::splitmix_scramble(state_);
    }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + int(next_u64() % std::uint64_t(hi - lo + 1));
    }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

  private:
    struct FromState {};
    Rng(FromState, std::uint64_t s) : state_(s) {}

    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit; used for config/artifact manifests. Not cryptographic.
// ---------------------------------------------------------------------------
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xCBF29CE484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Thread pool-free parallel loop. Work items must be independent; results
// must not depend on the partition, so any thread count yields identical
// output. Thread count comes from GMG_THREADS, else hardware concurrency.
// ---------------------------------------------------------------------------
inline int default_thread_count() {
    if (const char* env = std::getenv("GMG_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? int(hc) : 1;
}

inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn,
                         int threads = 0) {
    if (threads <= 0) threads = default_thread_count();
    if (threads == 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = int(std::min<std::int64_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::int64_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace gmg
