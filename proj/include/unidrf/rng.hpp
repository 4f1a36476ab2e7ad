// Seeded substreams and multiplier draws.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace unidrf {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Mixes a base seed with a path of stream keys into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t s = splitmix64(seed);
    for (std::uint64_t k : keys) s = splitmix64(s ^ splitmix64(k + 0x632be59bd9b4e019ULL));
    return s;
}

inline Engine make_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    return Engine(derive_seed(seed, keys));
}

/// Stream tags so unrelated consumers of one seed never collide.
namespace stream {
inline constexpr std::uint64_t multiplier = 1;
inline constexpr std::uint64_t data = 2;
inline constexpr std::uint64_t folds = 3;
inline constexpr std::uint64_t oracle = 4;
inline constexpr std::uint64_t bootstrap = 5;
}  // namespace stream

/// xi_i in {0, 2}, i.e. 2 x Bernoulli(1/2): mean one, variance one.
struct MultiplierDraw {
    Eigen::VectorXd xi;
};

/// Replicate `b` of the multiplier sequence keyed by `seed`. Uses the top
/// bit of the engine output so the draw does not depend on the standard
/// library's distribution implementation.
inline MultiplierDraw draw_multiplier(std::size_t n, std::uint64_t seed, std::size_t b) {
    Engine eng = make_engine(seed, {stream::multiplier, b});
    MultiplierDraw d;
    d.xi.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < d.xi.size(); ++i) d.xi(i) = (eng() >> 63) ? 2.0 : 0.0;
    return d;
}

inline std::vector<MultiplierDraw> draw_multipliers(std::size_t n, std::size_t B, std::uint64_t seed) {
    std::vector<MultiplierDraw> out;
    out.reserve(B);
    for (std::size_t b = 0; b < B; ++b) out.push_back(draw_multiplier(n, seed, b));
    return out;
}

}  // namespace unidrf
