#include "support.hpp"

#include <gtest/gtest.h>

using namespace utube;

namespace {

std::vector<Vec3> some_seeds(std::size_t n = 6) { return sobol_seeds(Box{Vec3(-0.5, -0.5, -1.0), Vec3(0.5, 0.5, -0.9)}, n).seeds; }

double max_spread(const std::vector<TrajectoryEnsemble>& es) {
    double s = 0.0;
    for (const auto& e : es)
        for (const auto& m : e.members)
            for (std::size_t t = 0; t < m.size(); ++t) s = std::max(s, (m[t] - e.members.front()[t]).norm());
    return s;
}

double mean_member_variance(const std::vector<TrajectoryEnsemble>& es) {
    double v = 0.0;
    std::size_t n = 0;
    for (const auto& e : es) {
        const auto avg = member_average(e.members);
        for (const auto& m : e.members)
            for (std::size_t t = 0; t < m.size(); ++t, ++n) v += (m[t] - avg[t]).squaredNorm();
    }
    return v / static_cast<double>(n);
}

}  // namespace

TEST(Ensemble, ValidateNamesOffendingMember) {
    auto e = test::make_ensemble(4, 5);
    EXPECT_NO_THROW(e.validate());
    e.members[2].pop_back();
    try {
        e.validate();
        FAIL();
    } catch (const FormatError& err) {
        EXPECT_NE(std::string(err.what()).find("member 2"), std::string::npos) << err.what();
    }
    auto f = test::make_ensemble(3, 4);
    f.members[1][0] += Vec3(1e-3, 0, 0);
    EXPECT_THROW(f.validate(), FormatError);
}

TEST(Ensemble, MemberAverageByHand) {
    std::vector<Path> members{{Vec3(0, 0, 0), Vec3(1, 2, 3)}, {Vec3(0, 0, 0), Vec3(3, 2, 1)}, {Vec3(0, 0, 0), Vec3(2, 5, -1)}};
    const auto avg = member_average(members);
    EXPECT_EQ(avg[0], Vec3(0, 0, 0));
    EXPECT_NEAR((avg[1] - Vec3(2, 3, 1)).norm(), 0.0, 1e-15);
}

TEST(DeepEnsemble, IdenticalModelsGiveZeroSpread) {
    const auto s = test::tiny_surrogate();
    const auto es = deep_ensemble_sample(std::vector<FlowMapSurrogate>{s, s, s}, some_seeds(), 9);
    ASSERT_EQ(es.size(), 6u);
    EXPECT_EQ(max_spread(es), 0.0);
}

TEST(DeepEnsemble, MembersAndMean) {
    std::vector<FlowMapSurrogate> models;
    for (std::uint64_t k = 0; k < 4; ++k) models.push_back(test::tiny_surrogate({}, 10 + k, 20));
    const auto seeds = some_seeds();
    const auto es = deep_ensemble_sample(models, seeds, 9, 2);
    for (std::size_t i = 0; i < es.size(); ++i) {
        const auto& e = es[i];
        EXPECT_EQ(e.members.size(), 4u);
        EXPECT_EQ(e.method, UqMethod::deep_ensemble);
        EXPECT_EQ(e.seed, seeds[i]);
        EXPECT_NO_THROW(e.validate());
        for (std::size_t t = 0; t < e.mean_path.size(); ++t) {
            Vec3 avg = Vec3::Zero();
            for (const auto& m : e.members) avg += m[t];
            avg /= 4.0;
            EXPECT_LT((avg - e.mean_path[t]).norm(), 1e-6);
        }
        // Member k is model k's own prediction.
        const auto own = predict_paths(models[2].model, models[2].normalization(), models[2].n_cycles, seeds, 9);
        EXPECT_EQ(own[i], e.members[2]);
    }
    EXPECT_GT(max_spread(es), 0.0);
}

TEST(DeepEnsemble, ShapeMismatchRejected) {
    auto a = test::tiny_surrogate({}, 1, 1);
    auto b = a;
    ModelConfig c = b.model.config;
    c.latent_dim = 10;
    b.model = init_model(c, 2);
    EXPECT_THROW(deep_ensemble_sample(std::vector<FlowMapSurrogate>{a, b}, some_seeds(), 4), ArgumentError);
    EXPECT_THROW(deep_ensemble_sample(std::vector<FlowMapSurrogate>{a}, some_seeds(), 4), ArgumentError);
}

TEST(McDropout, ZeroRateGivesIdenticalMembers) {
    const auto s = test::tiny_surrogate({DropoutMode::all_layers, 0.0});
    const auto es = mc_dropout_sample(s, some_seeds(), 9, 5, 1);
    EXPECT_EQ(max_spread(es), 0.0);
}

TEST(McDropout, DeterministicAcrossRunsAndWorkers) {
    const auto s = test::tiny_surrogate({DropoutMode::all_layers, 0.1});
    const auto a = mc_dropout_sample(s, some_seeds(), 9, 8, 42, MeanMode::base, 1);
    const auto b = mc_dropout_sample(s, some_seeds(), 9, 8, 42, MeanMode::base, 4);
    const auto c = mc_dropout_sample(s, some_seeds(), 9, 8, 43, MeanMode::base, 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].members, b[i].members);
        EXPECT_EQ(a[i].mean_path, b[i].mean_path);
        EXPECT_NE(a[i].members, c[i].members);
    }
    EXPECT_GT(max_spread(a), 0.0);
}

TEST(McDropout, MeanModes) {
    const auto s = test::tiny_surrogate({DropoutMode::all_layers, 0.1});
    const auto seeds = some_seeds();
    const auto base = mc_dropout_sample(s, seeds, 9, 6, 5, MeanMode::base);
    const auto avg = mc_dropout_sample(s, seeds, 9, 6, 5, MeanMode::member_average);
    const auto det = predict_paths(s.model, s.normalization(), s.n_cycles, seeds, 9);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        EXPECT_EQ(base[i].mean_path, det[i]);
        EXPECT_EQ(avg[i].mean_path, member_average(avg[i].members));
        EXPECT_EQ(avg[i].members, base[i].members);
    }
}

TEST(McDropout, SpreadGrowsWithRate) {
    auto s = test::tiny_surrogate({DropoutMode::all_layers, 0.1}, 3, 100);
    const auto seeds = some_seeds(10);
    s.model.config.dropout.rate = 0.001;
    const double low = mean_member_variance(mc_dropout_sample(s, seeds, 9, 20, 1));
    s.model.config.dropout.rate = 0.1;
    const double high = mean_member_variance(mc_dropout_sample(s, seeds, 9, 20, 1));
    EXPECT_LT(low, high);
}

TEST(Swag, StreamingMeanMatchesBatchMean) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    SwagPosterior post(7, 4);
    std::vector<std::vector<double>> snaps;
    for (int i = 0; i < 37; ++i) {
        std::vector<double> s(7);
        for (auto& v : s) v = 5.0 + g(rng);
        post.collect(s);
        snaps.push_back(s);
    }
    for (std::size_t k = 0; k < 7; ++k) {
        double mean = 0.0, sq = 0.0;
        for (const auto& s : snaps) {
            mean += s[k];
            sq += s[k] * s[k];
        }
        mean /= 37.0;
        sq /= 37.0;
        EXPECT_LE(std::abs(post.theta_swa[k] - mean), 1e-6 * std::abs(mean));
        EXPECT_LE(std::abs(post.second_moment[k] - sq), 1e-6 * sq);
        EXPECT_GE(post.diag_variance()[k], 0.0);
    }
    EXPECT_EQ(post.deviations.size(), 4u);
    EXPECT_EQ(post.snapshots_seen, 37u);
}

TEST(Swag, DeviationBufferKeepsMostRecent) {
    SwagPosterior post(1, 2);
    for (double x : {1.0, 2.0, 3.0, 4.0}) post.collect(std::vector<double>{x});
    ASSERT_EQ(post.deviations.size(), 2u);
    EXPECT_DOUBLE_EQ(post.deviations[0][0], 3.0 - 2.0);
    EXPECT_DOUBLE_EQ(post.deviations[1][0], 4.0 - 2.5);
}

TEST(Swag, SingleSnapshotMeanIsTheSnapshot) {
    const auto s = test::tiny_surrogate({}, 3, 20);
    const auto field = VectorField::synth_preset();
    const auto ds = build_dataset(field, sobol_seeds(Box{Vec3(-0.5, -0.5, -1), Vec3(0.5, 0.5, -0.9)}, 32), 10, 0.035,
                                  RescaleMode::bounding_box);
    SwagConfig cfg;
    cfg.n_swag_samples = 1;
    cfg.rank = 1;
    cfg.batch_size = 64;
    const auto post = swag_fit(s.model, ds, cfg, 1);
    EXPECT_EQ(post.snapshots_seen, 1u);
    // Reproduce the single SGD step independently.
    auto m = s.model;
    auto idx = valid_indices(ds);
    std::mt19937_64 rng(1);
    std::shuffle(idx.begin(), idx.end(), rng);
    const Batch b = gather_batch(ds, idx, 0, 64);
    FlowMapModel::Cache cache;
    const Eigen::MatrixXf pred = m.forward(b.start, b.cycle, nullptr, &cache);
    const auto grads = m.backward(loss_and_grad(pred, b.target, Loss::l1).second, cache);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        m.layers[l].weight -= 5e-4f * (grads[l].weight + 1e-8f * m.layers[l].weight);
        m.layers[l].bias -= 5e-4f * (grads[l].bias + 1e-8f * m.layers[l].bias);
    }
    const auto flat = m.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) EXPECT_EQ(post.theta_swa[i], static_cast<double>(flat[i]));
}

TEST(Swag, ZeroLearningRateCollapses) {
    const auto s = test::tiny_surrogate({}, 3, 20);
    const auto field = VectorField::synth_preset();
    const auto ds = build_dataset(field, sobol_seeds(Box{Vec3(-0.5, -0.5, -1), Vec3(0.5, 0.5, -0.9)}, 32), 10, 0.035,
                                  RescaleMode::bounding_box);
    SwagConfig cfg;
    cfg.swag_lr = 0.0;
    cfg.n_swag_samples = 20;
    cfg.rank = 5;
    cfg.batch_size = 64;
    const auto post = swag_fit(s.model, ds, cfg, 2);
    for (double v : post.diag_variance()) EXPECT_EQ(v, 0.0);
    for (const auto& draw : swag_draw(post, 10, 1.0, 3)) EXPECT_EQ(draw, post.theta_swa);
}

TEST(Swag, ScaleZeroDrawsEqualMean) {
    SwagPosterior post(3, 3);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int i = 0; i < 10; ++i) post.collect(std::vector<double>{g(rng), g(rng), g(rng)});
    for (const auto& d : swag_draw(post, 50, 0.0, 9)) EXPECT_EQ(d, post.theta_swa);
}

TEST(Swag, DrawsDeterministicAcrossWorkers) {
    SwagPosterior post(4, 3);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int i = 0; i < 10; ++i) post.collect(std::vector<double>{g(rng), g(rng), g(rng), g(rng)});
    EXPECT_EQ(swag_draw(post, 64, 1.0, 5, 1), swag_draw(post, 64, 1.0, 5, 4));
    EXPECT_NE(swag_draw(post, 4, 1.0, 5, 1), swag_draw(post, 4, 1.0, 6, 1));
}

TEST(Swag, TooFewSnapshotsRejected) {
    SwagPosterior post(2, 2);
    post.collect(std::vector<double>{1.0, 2.0});
    EXPECT_THROW(swag_draw(post, 3, 1.0, 1), ArgumentError);
}

TEST(Swag, ScaleZeroTrajectoriesHaveZeroRadius) {
    const auto s = test::tiny_surrogate({}, 3, 20);
    SwagPosterior post(s.model.param_count(), 3);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1e-3);
    for (int i = 0; i < 6; ++i) {
        auto p = s.model.flatten();
        std::vector<double> d(p.begin(), p.end());
        for (auto& v : d) v += g(rng);
        post.collect(d);
    }
    const auto es = swag_sample_trajectories(s, post, some_seeds(), 9, 5, 1, 0.0);
    for (const auto& e : es) {
        for (const auto& m : e.members) EXPECT_EQ(m, e.mean_path);
        const auto mesh = build_tube(e, TubeParams{});
        for (double r : mesh.stats.magnitude) EXPECT_EQ(r, 0.0);
    }
}

TEST(Swag, ConfigValidation) {
    SwagConfig c;
    EXPECT_NO_THROW(c.validate());
    c.rank = 2000;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SwagConfig{};
    c.swag_lr = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}
