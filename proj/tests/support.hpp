#pragma once

#include <utube/utube.hpp>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace utube::test {

inline std::filesystem::path tmp_dir(const std::string& sub) {
    auto p = std::filesystem::path(UTUBE_TEST_TMP) / sub;
    std::filesystem::create_directories(p);
    return p;
}

/// Mean path along a gentle curve; members scattered around it with per-member direction
/// and step-proportional spread.
inline TrajectoryEnsemble make_ensemble(std::size_t members, int steps, std::uint64_t seed = 1, double spread = 0.01) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    TrajectoryEnsemble e;
    e.seed = Vec3(0.1, -0.2, -0.95);
    e.delta = 0.035;
    e.n_steps = steps;
    e.method = UqMethod::external;
    for (int t = 0; t <= steps; ++t) {
        const double z = e.seed.z() + 0.035 * t;
        e.mean_path.push_back(Vec3(e.seed.x() + 0.1 * std::sin(0.3 * t), e.seed.y() + 0.05 * t * 0.035, z));
    }
    for (std::size_t k = 0; k < members; ++k) {
        Path p;
        const Vec3 dir(g(rng), 0.5 * g(rng), 0.3 * g(rng));
        for (int t = 0; t <= steps; ++t) {
            const Vec3 jitter(g(rng), g(rng), g(rng));
            p.push_back(t == 0 ? e.seed : Vec3(e.mean_path[static_cast<std::size_t>(t)] + spread * t * (dir + 0.2 * jitter)));
        }
        e.members.push_back(std::move(p));
    }
    return e;
}

/// Small trained-enough synth model for pipeline tests (not an accuracy fixture).
inline FlowMapSurrogate tiny_surrogate(DropoutConfig dropout = {}, std::uint64_t seed = 3, std::size_t iters = 50,
                                       double lr = 1e-4) {
    const auto field = VectorField::synth_preset();
    const auto seeds = sobol_seeds(Box{Vec3(-0.5, -0.5, -1.0), Vec3(0.5, 0.5, -0.9)}, 64);
    const auto ds = build_dataset(field, seeds, 10, 0.035, RescaleMode::bounding_box);
    ModelConfig cfg;
    cfg.encoder_layers = 2;
    cfg.decoder_layers = 2;
    cfg.latent_dim = 16;
    cfg.dropout = dropout;
    auto model = init_model(cfg, seed);
    OptimizerConfig opt;
    opt.lr = lr;
    opt.lr_final = lr / 10.0;
    train(model, ds, iters, 128, opt, seed);
    return FlowMapSurrogate::from(std::move(model), ds);
}

}  // namespace utube::test
