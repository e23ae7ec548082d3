#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace heatkern {

// Spatial dimension is small throughout (d <= 4): fixed-capacity dynamic
// vectors keep everything on the stack.
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline constexpr double kPi = 3.14159265358979323846;

inline Vec zero_vec(int d) { return Vec::Zero(d); }

inline Vec make_vec(std::initializer_list<double> xs) {
    Vec v(static_cast<int>(xs.size()));
    int i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Deterministic RNG streams.
//
// Stream k of a master seed is an mt19937_64 seeded from splitmix64 applied to
// (seed, k). Monte-Carlo work is partitioned into fixed-size chunks, one
// stream per chunk, so results do not depend on the thread count.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng rng_stream(std::uint64_t master_seed, std::uint64_t stream_index) {
    std::uint64_t s = master_seed ^ (0x9e3779b97f4a7c15ULL * (stream_index + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return Rng(seq);
}

// Fixed-size work chunks for reproducible parallel Monte Carlo.
inline constexpr std::size_t kMcChunk = 4096;

// Runs fn(chunk_index, begin, end) over [0,n) split into kMcChunk-sized chunks,
// distributed over `threads` workers. Chunk results must be merged by the
// caller in chunk order.
inline void parallel_chunks(std::size_t n, int threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t n_chunks = (n + kMcChunk - 1) / kMcChunk;
    if (threads <= 1 || n_chunks <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c)
            fn(c, c * kMcChunk, std::min(n, (c + 1) * kMcChunk));
        return;
    }
    std::vector<std::thread> pool;
    std::mutex m;
    std::size_t next = 0;
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t c;
                {
                    std::lock_guard<std::mutex> lk(m);
                    if (next >= n_chunks) return;
                    c = next++;
                }
                fn(c, c * kMcChunk, std::min(n, (c + 1) * kMcChunk));
            }
        });
    }
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Quantized cache keys. Values are deterministic functions of their keys, so
// concurrent recomputation races are benign; last writer wins.
// ---------------------------------------------------------------------------

inline std::int64_t quantize(double x, double scale = 1e12) {
    double q = x * scale;
    if (std::abs(q) > 9.0e18) throw numerical_error("cache key out of quantization range");
    return static_cast<std::int64_t>(std::llround(q));
}

using CacheKey = std::array<std::int64_t, kMaxDim + 6>;

template <class V>
class KeyedCache {
public:
    // fetch-or-compute; recomputation on a racing miss is benign
    template <class F>
    const V& get(const CacheKey& k, F&& compute) const {
        {
            std::shared_lock lk(mutex_);
            auto it = map_.find(k);
            if (it != map_.end()) return it->second;
        }
        V v = compute();
        std::unique_lock lk(mutex_);
        auto [it, inserted] = map_.emplace(k, std::move(v));
        return it->second;
    }

    void clear() {
        std::unique_lock lk(mutex_);
        map_.clear();
    }

    std::size_t size() const {
        std::shared_lock lk(mutex_);
        return map_.size();
    }

private:
    mutable std::shared_mutex mutex_;
    mutable std::map<CacheKey, V> map_;
};

inline double sqr(double x) { return x * x; }

}  // namespace heatkern
