#include "support.hpp"

#include <gtest/gtest.h>

using namespace utube;

TEST(Dataset, CountIsSeedsTimesCycles) {
    const auto f = VectorField::synth_preset();
    const auto seeds = sobol_seeds(Box{Vec3(-0.5, -0.5, -1.0), Vec3(0.5, 0.5, -0.9)}, 3);
    const auto ds = build_dataset(f, seeds, 4, 0.035, RescaleMode::bounding_box);
    EXPECT_EQ(ds.samples.size(), 12u);
    EXPECT_EQ(ds.m_seeds, 3u);
    EXPECT_EQ(ds.n_cycles, 4u);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(ds.at(i, j).cycle, static_cast<float>(j));
            EXPECT_EQ(ds.at(i, j).start, ds.at(i, 0).start);
        }
        EXPECT_EQ(ds.at(i, 0).end, ds.at(i, 0).start);
    }
}

TEST(Dataset, EndPointsMatchTracedPathlines) {
    const auto f = VectorField::synth_preset();
    const auto seeds = sobol_seeds(Box{Vec3(-0.5, -0.5, -1.0), Vec3(0.5, 0.5, -0.9)}, 16);
    const auto ds = build_dataset(f, seeds, 50, 0.035, RescaleMode::bounding_box, Integrator::rk4, 3);
    const auto norm = ds.normalization();
    for (std::size_t i = 0; i < 16; ++i) {
        const auto p = trace_pathline(f, seeds.seeds[i], 0.0, 49, 0.035);
        for (std::size_t j = 0; j < 50; ++j) {
            const Vec3 back = norm.from_unit(to_vec3(ds.at(i, j).end));
            EXPECT_LT((back - p.positions[j]).norm(), 1e-6);
        }
    }
    EXPECT_EQ(ds.valid_count(), ds.samples.size());
}

TEST(Dataset, WorkerCountDoesNotChangeResult) {
    const auto f = VectorField::tornado_preset();
    const auto seeds = sobol_seeds(Box{Vec3(-2, -2, -10), Vec3(2, 2, -8)}, 40);
    const auto a = build_dataset(f, seeds, 20, 0.1, RescaleMode::bounding_box, Integrator::rk4, 1);
    const auto b = build_dataset(f, seeds, 20, 0.1, RescaleMode::bounding_box, Integrator::rk4, 4);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(std::memcmp(&a.samples[i], &b.samples[i], sizeof(FlowSample)), 0);
}

TEST(Dataset, InvalidSamplesMarkedAndSkipped) {
    const auto f = VectorField::synth_preset();
    SeedSet seeds{{Vec3(0, 0, 0.9), Vec3(0, 0, -0.95)}, Box{Vec3(0, 0, -1), Vec3(0, 0, 1)}, SeedGenerator::sobol};
    const auto ds = build_dataset(f, seeds, 10, 0.035, RescaleMode::bounding_box);
    EXPECT_FALSE(ds.at(0, 9).valid());
    EXPECT_TRUE(ds.at(1, 9).valid());
    EXPECT_LT(valid_indices(ds).size(), ds.samples.size());
    for (auto i : valid_indices(ds)) EXPECT_TRUE(ds.samples[i].valid());
}

TEST(Dataset, EmptySeedSetRejected) {
    EXPECT_THROW(build_dataset(VectorField::synth_preset(), SeedSet{}, 4, 0.1, RescaleMode::bounding_box), ArgumentError);
}

TEST(Normalization, UniformModeHasEqualScales) {
    const Box box{Vec3(-4, -1, 0), Vec3(4, 1, 2)};
    const auto n = Normalization::from_box(box, RescaleMode::spatially_uniform);
    EXPECT_EQ(n.scale.x(), n.scale.y());
    EXPECT_EQ(n.scale.y(), n.scale.z());
    EXPECT_EQ(n.scale.x(), 4.0);
    const auto b = Normalization::from_box(box, RescaleMode::bounding_box);
    EXPECT_EQ(b.to_unit(box.hi), Vec3(1, 1, 1));
    EXPECT_EQ(b.to_unit(box.lo), Vec3(-1, -1, -1));
}

TEST(Normalization, RoundTripWithinRelativeTolerance) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (auto mode : {RescaleMode::bounding_box, RescaleMode::spatially_uniform}) {
        const Box box{Vec3(-3, -40, 2), Vec3(7, 12, 2.5)};
        const auto n = Normalization::from_box(box, mode);
        for (int i = 0; i < 1000; ++i) {
            const Vec3 p(u(rng), u(rng), u(rng));
            EXPECT_LE((n.from_unit(n.to_unit(p)) - p).norm(), 1e-9 * std::max(1.0, p.norm()));
        }
    }
}

TEST(Normalization, CycleMapsToUnitInterval) {
    EXPECT_EQ(normalize_cycle(0, 50), -1.0);
    EXPECT_EQ(normalize_cycle(49, 50), 1.0);
    EXPECT_NEAR(normalize_cycle(24.5, 50), 0.0, 1e-15);
    EXPECT_EQ(parse_rescale("uniform"), RescaleMode::spatially_uniform);
    EXPECT_THROW(parse_rescale("cube"), ArgumentError);
}
