#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace prehoc {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds a root seed and a coordinate tuple into one stream key. Work keyed by
/// (run, step, layer, head, ...) is reproducible without replaying anything else.
inline std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t c : coords) h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
    return h;
}

/// Stream tags keep generator sub-streams disjoint.
enum class StreamTag : std::uint64_t {
    Embedding = 1,
    QueryProj = 2,
    KeyProj = 3,
    ValueProj = 4,
    KeyUpdate = 5,
    Values = 6,
    Sketch = 7,
    Trial = 8,
    Channel = 9,
};

class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> coords)
        : engine_(stream_key(seed, coords)) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    /// Uniform integer in [lo, hi].
    std::uint64_t integer(std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(engine_);
    }
    bool coin(double p = 0.5) { return uniform_(engine_) < p; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

constexpr std::uint64_t tag(StreamTag t) { return static_cast<std::uint64_t>(t); }

}  // namespace prehoc
