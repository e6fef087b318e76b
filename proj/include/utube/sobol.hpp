#pragma once

#include "common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string_view>
#include <vector>

namespace utube {

/// Unscrambled Sobol sequence (Antonov-Saleev Gray-code ordering) with Joe-Kuo
/// direction numbers for up to eight dimensions.
class SobolSequence {
public:
    static constexpr int kMaxDim = 8;
    static constexpr int kBits = 32;

    explicit SobolSequence(int dims) : dims_(dims) {
        if (dims < 1 || dims > kMaxDim) throw ArgumentError("SobolSequence: dimension must be in [1, 8]");
        // s, a, m_1..m_s for dimensions 2..8 (new-joe-kuo-6.21201).
        struct Poly {
            int s;
            unsigned a;
            std::array<unsigned, 5> m;
        };
        static constexpr std::array<Poly, kMaxDim - 1> table{{
            {1, 0, {1, 0, 0, 0, 0}},
            {2, 1, {1, 3, 0, 0, 0}},
            {3, 1, {1, 3, 1, 0, 0}},
            {3, 2, {1, 1, 1, 0, 0}},
            {4, 1, {1, 1, 3, 3, 0}},
            {4, 4, {1, 3, 5, 13, 0}},
            {5, 2, {1, 1, 5, 5, 17}},
        }};
        for (int i = 1; i <= kBits; ++i) v_[0][i - 1] = 1u << (kBits - i);
        for (int d = 1; d < dims; ++d) {
            const auto& p = table[static_cast<std::size_t>(d - 1)];
            auto& v = v_[static_cast<std::size_t>(d)];
            for (int i = 1; i <= p.s; ++i) v[i - 1] = p.m[static_cast<std::size_t>(i - 1)] << (kBits - i);
            for (int i = p.s + 1; i <= kBits; ++i) {
                unsigned x = v[i - p.s - 1] ^ (v[i - p.s - 1] >> p.s);
                for (int k = 1; k < p.s; ++k) x ^= ((p.a >> (p.s - 1 - k)) & 1u) * v[i - k - 1];
                v[i - 1] = x;
            }
        }
    }

    /// Advance past `n` points.
    void skip(std::uint64_t n) {
        for (std::uint64_t i = 0; i < n; ++i) advance();
    }

    /// Current point in [0,1)^dims, then advance.
    std::vector<double> next() {
        std::vector<double> out(static_cast<std::size_t>(dims_));
        for (int d = 0; d < dims_; ++d) out[static_cast<std::size_t>(d)] = state_[static_cast<std::size_t>(d)] * 0x1p-32;
        advance();
        return out;
    }

    [[nodiscard]] int dims() const { return dims_; }

private:
    void advance() {
        // Index of the lowest zero bit of the counter selects the direction number.
        std::uint64_t c = index_;
        int bit = 0;
        while (c & 1u) {
            c >>= 1;
            ++bit;
        }
        if (bit >= kBits) throw ArgumentError("SobolSequence: exhausted 2^32 points");
        for (int d = 0; d < dims_; ++d)
            state_[static_cast<std::size_t>(d)] ^= v_[static_cast<std::size_t>(d)][static_cast<std::size_t>(bit)];
        ++index_;
    }

    int dims_;
    std::uint64_t index_ = 0;
    std::array<std::uint32_t, kMaxDim> state_{};
    std::array<std::array<std::uint32_t, kBits>, kMaxDim> v_{};
};

enum class SeedGenerator : std::uint8_t { sobol = 0, uniform_grid = 1, pseudo_random = 2 };

inline SeedGenerator parse_seed_generator(std::string_view s) {
    if (s == "sobol") return SeedGenerator::sobol;
    if (s == "uniform_grid" || s == "grid") return SeedGenerator::uniform_grid;
    if (s == "pseudo_random" || s == "random") return SeedGenerator::pseudo_random;
    throw ArgumentError("unknown seed generator '" + std::string(s) + "'");
}

struct SeedSet {
    std::vector<Vec3> seeds;
    Box box;
    SeedGenerator generator = SeedGenerator::sobol;
};

namespace detail {
inline Vec3 map_unit(const Box& box, double u0, double u1, double u2) {
    const Vec3 e = box.extent();
    return {box.lo.x() + u0 * e.x(), box.lo.y() + u1 * e.y(), box.lo.z() + u2 * e.z()};
}
}  // namespace detail

/// `count` Sobol points mapped into `box`, starting after `skip` points (skip=1 drops the origin).
inline SeedSet sobol_seeds(const Box& box, std::size_t count, std::uint64_t skip = 1) {
    if (count < 1) throw ArgumentError("sobol_seeds: count must be >= 1");
    if (!box.ordered()) throw ArgumentError("sobol_seeds: box min must not exceed max");
    SobolSequence seq(3);
    seq.skip(skip);
    SeedSet out{{}, box, SeedGenerator::sobol};
    out.seeds.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto u = seq.next();
        out.seeds.push_back(detail::map_unit(box, u[0], u[1], u[2]));
    }
    return out;
}

/// Cell-centred lattice with ceil(count^(1/3)) points per axis, truncated to `count`.
inline SeedSet grid_seeds(const Box& box, std::size_t count) {
    if (count < 1) throw ArgumentError("grid_seeds: count must be >= 1");
    auto per_axis = static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(count)) - 1e-9));
    per_axis = std::max<std::size_t>(per_axis, 1);
    SeedSet out{{}, box, SeedGenerator::uniform_grid};
    out.seeds.reserve(count);
    const double n = static_cast<double>(per_axis);
    for (std::size_t k = 0; k < per_axis && out.seeds.size() < count; ++k)
        for (std::size_t j = 0; j < per_axis && out.seeds.size() < count; ++j)
            for (std::size_t i = 0; i < per_axis && out.seeds.size() < count; ++i)
                out.seeds.push_back(detail::map_unit(box, (static_cast<double>(i) + 0.5) / n,
                                                     (static_cast<double>(j) + 0.5) / n,
                                                     (static_cast<double>(k) + 0.5) / n));
    return out;
}

inline SeedSet random_seeds(const Box& box, std::size_t count, std::uint64_t rng_seed) {
    if (count < 1) throw ArgumentError("random_seeds: count must be >= 1");
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    SeedSet out{{}, box, SeedGenerator::pseudo_random};
    out.seeds.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double a = uni(rng), b = uni(rng), c = uni(rng);
        out.seeds.push_back(detail::map_unit(box, a, b, c));
    }
    return out;
}

inline SeedSet make_seeds(SeedGenerator gen, const Box& box, std::size_t count, std::uint64_t rng_seed = 0) {
    switch (gen) {
        case SeedGenerator::sobol: return sobol_seeds(box, count, 1);
        case SeedGenerator::uniform_grid: return grid_seeds(box, count);
        case SeedGenerator::pseudo_random: return random_seeds(box, count, rng_seed);
    }
    throw ArgumentError("make_seeds: bad generator");
}

}  // namespace utube
