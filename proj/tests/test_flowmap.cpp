#include "support.hpp"

#include <gtest/gtest.h>

using namespace utube;

namespace {

ModelConfig small_config(DropoutConfig d = {}) {
    ModelConfig c;
    c.encoder_layers = 2;
    c.decoder_layers = 3;
    c.latent_dim = 8;
    c.dropout = d;
    return c;
}

Eigen::MatrixXf random_inputs(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Eigen::MatrixXf m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

}  // namespace

TEST(ModelConfig, PaperArchitectureValidates) {
    ModelConfig c;
    c.encoder_layers = 4;
    c.decoder_layers = 6;
    c.latent_dim = 1024;
    const auto shapes = layer_shapes(c);
    ASSERT_EQ(shapes.size(), 14u);
    EXPECT_EQ(shapes[0].in, 3);
    EXPECT_EQ(shapes[3].out, 512);
    EXPECT_EQ(shapes[4].in, 1);
    EXPECT_EQ(shapes[7].out, 512);
    EXPECT_EQ(shapes[8].in, 1024);
    EXPECT_EQ(shapes.back().out, 3);
    EXPECT_FALSE(shapes.back().activated);
    for (std::size_t l = 0; l + 1 < shapes.size(); ++l) EXPECT_TRUE(shapes[l].activated);
    const FlowMapModel m(c);
    EXPECT_NO_THROW(m.check_shapes());
}

TEST(ModelConfig, InvalidConfigsRejected) {
    auto c = small_config();
    c.latent_dim = 7;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.dropout = {DropoutMode::all_layers, 1.0};
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.encoder_layers = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(init_model(c, 1), ConfigError);
}

TEST(ModelConfig, ParameterCountMatchesShapesOverRandomConfigs) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> layers(1, 5), half(1, 24), width(0, 20);
    for (int i = 0; i < 200; ++i) {
        ModelConfig c;
        c.encoder_layers = layers(rng);
        c.decoder_layers = layers(rng);
        c.latent_dim = 2 * half(rng);
        c.encoder_width = width(rng);
        c.decoder_width = width(rng);
        const FlowMapModel m = init_model(c, static_cast<std::uint64_t>(i));
        EXPECT_EQ(m.param_count(), parameter_count(c));
        EXPECT_EQ(m.flatten().size(), parameter_count(c));
        EXPECT_NO_THROW(m.check_shapes());
    }
}

TEST(Init, DeterministicAndSeedDependent) {
    const auto a = init_model(small_config(), 5), b = init_model(small_config(), 5), c = init_model(small_config(), 6);
    EXPECT_EQ(a.flatten(), b.flatten());
    double diff = 0.0;
    const auto fa = a.flatten(), fc = c.flatten();
    for (std::size_t i = 0; i < fa.size(); ++i) diff = std::max(diff, static_cast<double>(std::abs(fa[i] - fc[i])));
    EXPECT_GT(diff, 0.0);
}

TEST(Init, SineAwareBounds) {
    ModelConfig c = small_config();
    c.omega0 = 30.0;
    const auto m = init_model(c, 2);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const double fan_in = static_cast<double>(m.layers[l].weight.cols());
        const double bound = m.is_branch_first(l) ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / 30.0;
        EXPECT_LE(m.layers[l].weight.cwiseAbs().maxCoeff(), bound * (1 + 1e-6)) << "layer " << l;
    }
}

TEST(Forward, BatchedEqualsSingle) {
    const auto m = init_model(small_config(), 7);
    const Eigen::MatrixXf s = random_inputs(3, 33, 1), c = random_inputs(1, 33, 2);
    const Eigen::MatrixXf batch = m.forward(s, c);
    ASSERT_TRUE(batch.allFinite());
    for (Eigen::Index k = 0; k < 33; ++k) {
        const Eigen::Vector3f single = m.predict(Eigen::Vector3f(s.col(k)), c(0, k));
        EXPECT_LE((single - batch.col(k)).cwiseAbs().maxCoeff(), 1e-6f);
    }
    EXPECT_EQ(batch, m.forward(s, c));
}

TEST(Forward, ZeroRateDropoutIsIdentity) {
    const auto m = init_model(small_config({DropoutMode::all_layers, 0.0}), 8);
    std::mt19937_64 rng(1);
    const auto masks = m.sample_masks(rng, 10);
    const Eigen::MatrixXf s = random_inputs(3, 10, 3), c = random_inputs(1, 10, 4);
    EXPECT_EQ(m.forward(s, c, &masks), m.forward(s, c));
}

TEST(Forward, InvertedDropoutScaling) {
    const double rate = 0.25;
    const auto m = init_model(small_config({DropoutMode::all_layers, rate}), 9);
    std::mt19937_64 rng(2);
    const auto masks = m.sample_masks(rng, 4000);
    const auto on = m.dropout_layers();
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        if (!on[l]) {
            EXPECT_EQ(masks.per_layer[l].size(), 0);
            continue;
        }
        const auto& mk = masks.per_layer[l];
        std::size_t dropped = 0;
        for (Eigen::Index i = 0; i < mk.size(); ++i) {
            const float v = mk.data()[i];
            EXPECT_TRUE(v == 0.0f || v == static_cast<float>(1.0 / (1.0 - rate)));
            dropped += v == 0.0f ? 1 : 0;
        }
        EXPECT_NEAR(static_cast<double>(dropped) / static_cast<double>(mk.size()), rate, 0.02);
    }
}

TEST(Forward, LastLayerDropoutTargetsLastHiddenLayer) {
    auto m = init_model(small_config({DropoutMode::last_layer, 0.1}), 10);
    const auto on = m.dropout_layers();
    std::size_t count = 0;
    for (bool b : on) count += b ? 1 : 0;
    EXPECT_EQ(count, 1u);
    EXPECT_TRUE(on[m.layers.size() - 2]);
    ModelConfig c = small_config({DropoutMode::last_layer, 0.1});
    c.decoder_layers = 1;
    const auto m1 = init_model(c, 1);
    const auto on1 = m1.dropout_layers();
    EXPECT_TRUE(on1[1]);
    EXPECT_TRUE(on1[3]);
}

TEST(Loss, L1NonNegativeAndZeroOnlyAtTarget) {
    const Eigen::MatrixXd a = random_inputs(3, 20, 5).cast<double>();
    EXPECT_EQ(l1_loss(a, a), 0.0);
    Eigen::MatrixXd b = a;
    b(1, 7) += 1e-12;
    EXPECT_GT(l1_loss(a, b), 0.0);
    EXPECT_GE(l1_loss(a, random_inputs(3, 20, 6).cast<double>()), 0.0);
}

TEST(GradientCheck, FreshRandomModels) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = init_model(small_config(), seed).cast<double>();
        // Odd batch: the L1 output-bias gradient is a sum of signs and must not cancel to 0.
        const Eigen::MatrixXd s = random_inputs(3, 15, seed + 100).cast<double>();
        const Eigen::MatrixXd c = random_inputs(1, 15, seed + 200).cast<double>();
        const Eigen::MatrixXd t = 3.0 * random_inputs(3, 15, seed + 300).cast<double>();
        GradCheckOptions opt;
        opt.probes = 0;
        EXPECT_LT(gradient_check(m, s, c, t, opt), 1e-4) << "seed " << seed;
    }
}

TEST(GradientCheck, LinearQuadraticIsExact) {
    ModelConfig c = small_config();
    c.activation = Activation::linear;
    const auto m = init_model(c, 11).cast<double>();
    const Eigen::MatrixXd s = random_inputs(3, 8, 1).cast<double>();
    const Eigen::MatrixXd cy = random_inputs(1, 8, 2).cast<double>();
    const Eigen::MatrixXd t = random_inputs(3, 8, 3).cast<double>();
    GradCheckOptions opt;
    opt.loss = Loss::l2;
    opt.probes = 0;
    opt.epsilon = 1e-3;
    EXPECT_LT(gradient_check(m, s, cy, t, opt), 1e-8);
}

TEST(GradientCheck, FrozenDropoutMask) {
    const auto m = init_model(small_config({DropoutMode::all_layers, 0.2}), 12).cast<double>();
    std::mt19937_64 rng(3);
    const auto masks = m.sample_masks(rng, 15);
    const Eigen::MatrixXd s = random_inputs(3, 15, 7).cast<double>();
    const Eigen::MatrixXd c = random_inputs(1, 15, 8).cast<double>();
    const Eigen::MatrixXd t = 3.0 * random_inputs(3, 15, 9).cast<double>();
    GradCheckOptions opt;
    opt.probes = 0;
    opt.masks = &masks;
    EXPECT_LT(gradient_check(m, s, c, t, opt), 1e-4);
}

TEST(GradientCheck, EpsilonRange) {
    const auto m = init_model(small_config(), 1).cast<double>();
    const Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3, 1), c = Eigen::MatrixXd::Zero(1, 1);
    GradCheckOptions opt;
    opt.epsilon = 1e-2;
    EXPECT_THROW(gradient_check(m, s, c, s, opt), ArgumentError);
}

TEST(Train, ZeroIterationsLeaveModelUnchanged) {
    const auto field = VectorField::synth_preset();
    const auto ds = build_dataset(field, sobol_seeds(Box{Vec3(-0.5, -0.5, -1), Vec3(0.5, 0.5, -0.9)}, 16), 5, 0.035,
                                  RescaleMode::bounding_box);
    auto m = init_model(small_config(), 3);
    const auto before = m.flatten();
    const auto rep = train(m, ds, 0, 32, OptimizerConfig{}, 1);
    EXPECT_EQ(m.flatten(), before);
    EXPECT_EQ(rep.iterations, 0u);
    EXPECT_EQ(rep.initial_probe_L1, rep.final_train_L1);
}

TEST(Train, ProbeLossDecreasesAndIsDeterministic) {
    const auto field = VectorField::synth_preset();
    const auto ds = build_dataset(field, sobol_seeds(Box{Vec3(-0.5, -0.5, -1), Vec3(0.5, 0.5, -0.9)}, 128), 20, 0.035,
                                  RescaleMode::bounding_box);
    ModelConfig c = small_config();
    c.latent_dim = 32;
    auto a = init_model(c, 4);
    auto b = a;
    OptimizerConfig opt;
    opt.lr = 1e-3;
    opt.lr_final = 1e-4;
    const auto ra = train(a, ds, 200, 256, opt, 77, &ds);
    const auto rb = train(b, ds, 200, 256, opt, 77);
    EXPECT_LT(ra.final_train_L1, ra.initial_probe_L1);
    EXPECT_GE(ra.eval_abs_error, 0.0);
    EXPECT_LT(rb.eval_abs_error, 0.0);
    EXPECT_EQ(a.flatten(), b.flatten());
}

TEST(Train, DivergenceAborts) {
    const auto field = VectorField::synth_preset();
    const auto ds = build_dataset(field, sobol_seeds(Box{Vec3(-0.5, -0.5, -1), Vec3(0.5, 0.5, -0.9)}, 16), 5, 0.035,
                                  RescaleMode::bounding_box);
    auto m = init_model(small_config(), 3);
    m.layers[0].weight(0, 0) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(train(m, ds, 3, 16, OptimizerConfig{}, 1), TrainingError);
}

TEST(Train, EarlyCyclePredictsNearSeed) {
    const auto s = test::tiny_surrogate({}, 3, 400, 1e-3);
    const auto norm = s.normalization();
    const Vec3 seed(0.1, 0.2, -0.95);
    const Vec3 pred = norm.from_unit(s.model.predict(norm.to_unit(seed).cast<float>(), -1.0f).cast<double>());
    EXPECT_LT((pred - seed).norm(), 0.15);
}
