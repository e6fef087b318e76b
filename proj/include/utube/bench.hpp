#pragma once

#include "tube.hpp"
#include "uq.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <vector>

namespace utube {

/// Deterministic stand-in ensembles for timing: helical mean paths rising in +z with
/// anisotropic member scatter that grows along the path.
inline std::vector<TrajectoryEnsemble> synthetic_ensembles(std::size_t n_seeds, int n_steps, std::size_t n_samples,
                                                           std::uint64_t rng_seed = 7) {
    std::vector<TrajectoryEnsemble> out(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
        std::mt19937_64 rng(stream_seed(rng_seed, s, 0xbe));
        std::normal_distribution<double> g(0.0, 1.0);
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        auto& e = out[s];
        e.seed = Vec3(u(rng), u(rng), -1.0 + 0.1 * u(rng));
        e.delta = 0.035;
        e.n_steps = n_steps;
        e.method = UqMethod::external;
        const double phase = 6.283185307179586 * u(rng);
        auto mean_at = [&](int t) {
            const double z = e.seed.z() + e.delta * t;
            const double a = 0.1 * (z + 1.0);
            return Vec3(e.seed.x() + a * std::sin(4 * z + phase), e.seed.y() + a * std::cos(4 * z + phase), z);
        };
        e.mean_path.resize(static_cast<std::size_t>(n_steps) + 1);
        const Vec3 shift = mean_at(0) - e.seed;
        for (int t = 0; t <= n_steps; ++t) e.mean_path[static_cast<std::size_t>(t)] = mean_at(t) - shift;
        e.members.assign(n_samples, Path(static_cast<std::size_t>(n_steps) + 1));
        for (auto& m : e.members) {
            const Vec3 dir(g(rng), 0.4 * g(rng), 0.2 * g(rng));
            m[0] = e.seed;
            for (int t = 1; t <= n_steps; ++t) {
                const double spread = 0.002 * t;
                m[static_cast<std::size_t>(t)] = e.mean_path[static_cast<std::size_t>(t)] + spread * dir;
            }
        }
    }
    return out;
}

struct BenchResult {
    std::size_t seeds = 0;
    int steps = 0;
    std::size_t samples = 0;
    unsigned workers = 1;
    double ms = 0.0;  ///< best of the repeats
};

inline BenchResult bench_meshing(const std::vector<TrajectoryEnsemble>& es, const TubeParams& p, unsigned workers, int repeats,
                                 std::vector<TubeMesh>* keep = nullptr) {
    BenchResult r;
    r.seeds = es.size();
    r.steps = es.empty() ? 0 : es.front().n_steps;
    r.samples = es.empty() ? 0 : es.front().members.size();
    r.workers = workers;
    r.ms = 1e300;
    for (int i = 0; i < std::max(1, repeats); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        auto meshes = build_tubes_parallel(es, p, ColormapConfig{}, workers);
        const auto t1 = std::chrono::steady_clock::now();
        r.ms = std::min(r.ms, std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (keep && i == 0) *keep = std::move(meshes);
    }
    return r;
}

}  // namespace utube
