#pragma once

#include "common.hpp"
#include "parallel.hpp"
#include "sobol.hpp"
#include "vecfield.hpp"

#include <cmath>
#include <limits>
#include <string_view>
#include <vector>

namespace utube {

enum class RescaleMode : std::uint8_t { bounding_box = 0, spatially_uniform = 1 };

inline RescaleMode parse_rescale(std::string_view s) {
    if (s == "bbox" || s == "bounding_box") return RescaleMode::bounding_box;
    if (s == "uniform" || s == "spatially_uniform") return RescaleMode::spatially_uniform;
    throw ArgumentError("unknown rescale mode '" + std::string(s) + "'");
}

inline std::string_view to_string(RescaleMode m) {
    return m == RescaleMode::bounding_box ? "bbox" : "uniform";
}

/// Affine map between domain coordinates and the network's [-1,1]^3 cube.
/// bounding_box stretches each axis independently; spatially_uniform uses the largest
/// half-extent on every axis so distances keep their proportions.
struct Normalization {
    Vec3 center = Vec3::Zero();
    Vec3 scale = Vec3::Ones();

    static Normalization from_box(const Box& box, RescaleMode mode) {
        if (!box.proper()) throw ArgumentError("Normalization: box must have min < max on every axis");
        Normalization n;
        n.center = box.center();
        n.scale = 0.5 * box.extent();
        if (mode == RescaleMode::spatially_uniform) n.scale.setConstant(n.scale.maxCoeff());
        return n;
    }

    [[nodiscard]] Vec3 to_unit(const Vec3& p) const { return (p - center).cwiseQuotient(scale); }
    [[nodiscard]] Vec3 from_unit(const Vec3& q) const { return center + q.cwiseProduct(scale); }
};

/// File cycle index j in [0, n_cycles) mapped linearly onto [-1, 1].
inline double normalize_cycle(double cycle, int n_cycles) {
    if (n_cycles <= 1) return 0.0;
    return 2.0 * cycle / static_cast<double>(n_cycles - 1) - 1.0;
}

/// One {start, file cycle, end} triple in normalized coordinates. Samples whose particle
/// left the domain carry NaN end coordinates and are skipped by training.
struct FlowSample {
    std::array<float, 3> start{};
    float cycle = 0.0f;
    std::array<float, 3> end{};

    [[nodiscard]] bool valid() const { return std::isfinite(end[0]) && std::isfinite(end[1]) && std::isfinite(end[2]); }
    friend bool operator==(const FlowSample&, const FlowSample&) = default;
};

/// Seed-major m x n layout: sample (i, j) lives at index i * n + j.
struct FlowMapDataset {
    std::vector<FlowSample> samples;
    std::uint32_t m_seeds = 0;
    std::uint32_t n_cycles = 0;
    double delta = 0.0;
    RescaleMode rescale = RescaleMode::bounding_box;
    Box original_box{};
    Box seeding_box{};

    [[nodiscard]] Normalization normalization() const { return Normalization::from_box(original_box, rescale); }
    [[nodiscard]] const FlowSample& at(std::size_t seed, std::size_t cycle) const { return samples[seed * n_cycles + cycle]; }
    [[nodiscard]] std::size_t valid_count() const {
        std::size_t c = 0;
        for (const auto& s : samples) c += s.valid() ? 1 : 0;
        return c;
    }
};

inline std::array<float, 3> to_f32(const Vec3& v) {
    return {static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z())};
}

inline Vec3 to_vec3(const std::array<float, 3>& a) { return {a[0], a[1], a[2]}; }

/// Traces every seed for n_cycles - 1 steps (cycle 0 is the seed itself) and stores the
/// m x n triples normalized into [-1,1]^3.
inline FlowMapDataset build_dataset(const VectorField& field, const SeedSet& seeds, int n_cycles, double delta,
                                    RescaleMode rescale, Integrator integ = Integrator::rk4,
                                    unsigned workers = default_workers()) {
    if (seeds.seeds.empty()) throw ArgumentError("build_dataset: empty seed set");
    if (n_cycles < 1) throw ArgumentError("build_dataset: n_cycles must be >= 1");
    if (!(delta > 0.0)) throw ArgumentError("build_dataset: delta must be positive");
    field.validate();

    FlowMapDataset ds;
    ds.m_seeds = static_cast<std::uint32_t>(seeds.seeds.size());
    ds.n_cycles = static_cast<std::uint32_t>(n_cycles);
    ds.delta = delta;
    ds.rescale = rescale;
    ds.original_box = field.domain;
    ds.seeding_box = seeds.box;
    ds.samples.resize(static_cast<std::size_t>(ds.m_seeds) * ds.n_cycles);
    const Normalization norm = ds.normalization();
    constexpr float nan = std::numeric_limits<float>::quiet_NaN();

    parallel_for(seeds.seeds.size(), workers, [&](std::size_t i) {
        const Pathline path = trace_pathline(field, seeds.seeds[i], field.t0, n_cycles - 1, delta, integ);
        const auto start = to_f32(norm.to_unit(seeds.seeds[i]));
        for (int j = 0; j < n_cycles; ++j) {
            auto& s = ds.samples[i * ds.n_cycles + static_cast<std::size_t>(j)];
            s.start = start;
            s.cycle = static_cast<float>(j);
            s.end = path.valid[static_cast<std::size_t>(j)] ? to_f32(norm.to_unit(path.positions[static_cast<std::size_t>(j)]))
                                                            : std::array<float, 3>{nan, nan, nan};
        }
    });
    return ds;
}

}  // namespace utube
