#include "support.hpp"

#include <gtest/gtest.h>

using namespace utube;

namespace {

double dist(const ColorSample& c, const Rgb& r) {
    return std::sqrt(std::pow(c.rgba[0] - r[0], 2) + std::pow(c.rgba[1] - r[1], 2) + std::pow(c.rgba[2] - r[2], 2));
}

ColormapConfig unit_ceiling() {
    ColormapConfig c;
    c.magnitude_ceiling = 1.0;
    return c;
}

}  // namespace

TEST(Colormap, ZeroMagnitudeIsSuppressColor) {
    const auto c = unit_ceiling();
    for (double s : {0.0, 0.3, 1.0}) EXPECT_LT(dist(color_for(0.0, s, c), c.suppress_color), 1e-15);
}

TEST(Colormap, FullMagnitudeIsPaletteColor) {
    const auto c = unit_ceiling();
    EXPECT_LT(dist(color_for(1.0, 0.0, c), palettes::viridis().front()), 1e-15);
    EXPECT_LT(dist(color_for(1.0, 1.0, c), palettes::viridis().back()), 1e-15);
    EXPECT_LT(dist(color_for(1.0, 0.5, c), palettes::viridis()[8]), 1e-15);
    EXPECT_EQ(color_for(0.4, 0.2, c).rgba[3], 1.0);
}

TEST(Colormap, DistanceFromSuppressGrowsWithMagnitude) {
    const auto c = unit_ceiling();
    for (double s : {0.0, 0.25, 0.9}) {
        double prev = -1.0;
        for (int i = 0; i <= 20; ++i) {
            const double d = dist(color_for(i / 20.0, s, c), c.suppress_color);
            EXPECT_GT(d, prev);
            prev = d;
        }
    }
}

TEST(Colormap, ClampsOutOfRangeInputs) {
    const auto c = unit_ceiling();
    EXPECT_EQ(color_for(5.0, 0.5, c), color_for(1.0, 0.5, c));
    EXPECT_EQ(color_for(-1.0, 0.5, c), color_for(0.0, 0.5, c));
    EXPECT_EQ(color_for(0.5, 2.0, c), color_for(0.5, 1.0, c));
    EXPECT_EQ(color_for(0.5, -1.0, c), color_for(0.5, 0.0, c));
}

TEST(Colormap, PercentileMatchesNumpy) {
    UncertaintyStats s;
    for (int i = 0; i < 100; ++i) s.magnitude.push_back(99 - i);
    s.symmetry.assign(100, 1.0);
    ColormapConfig c;
    // numpy.percentile(range(100), 98) == 97.02
    EXPECT_NEAR(resolve_ceiling(std::vector<UncertaintyStats>{s}, c), 97.02, 1e-12);
    c.magnitude_percentile = 50.0;
    EXPECT_NEAR(resolve_ceiling(std::vector<UncertaintyStats>{s}, c), 49.5, 1e-12);
    c.magnitude_percentile = 100.0;
    EXPECT_EQ(resolve_ceiling(std::vector<UncertaintyStats>{s}, c), 99.0);
}

TEST(Colormap, CeilingSpansEveryTubeOfTheQuery) {
    UncertaintyStats a, b;
    a.magnitude = {1.0, 2.0};
    b.magnitude = {3.0, 4.0};
    ColormapConfig c;
    c.magnitude_percentile = 100.0;
    EXPECT_EQ(resolve_ceiling(std::vector<UncertaintyStats>{a, b}, c), 4.0);
    UncertaintyStats one;
    one.magnitude = {0.25};
    EXPECT_EQ(resolve_ceiling(std::vector<UncertaintyStats>{one}, ColormapConfig{}), 0.25);
    UncertaintyStats zero;
    zero.magnitude = {0.0, 0.0};
    EXPECT_EQ(resolve_ceiling(std::vector<UncertaintyStats>{zero}, ColormapConfig{}), 1.0);
    EXPECT_THROW(resolve_ceiling(std::vector<UncertaintyStats>{}, ColormapConfig{}), ArgumentError);
}

TEST(Colormap, TubeColorsMatchPerRingColor) {
    const auto e = test::make_ensemble(6, 10);
    TubeParams p;
    p.m = 8;
    auto mesh = build_tube(e, p);
    ColormapConfig c;
    c.magnitude_ceiling = mesh.stats.magnitude[4];
    color_tube(mesh, mesh.stats, c);
    for (std::size_t r = 0; r < mesh.rings; ++r) {
        const auto want = color_for(mesh.stats.magnitude[r], mesh.stats.symmetry[r], c);
        for (std::size_t j = 0; j < 8; ++j)
            for (std::size_t k = 0; k < 4; ++k)
                EXPECT_EQ(mesh.colors[4 * mesh.ring_vertex(r, j) + k], static_cast<float>(want.rgba[k]));
    }
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(mesh.colors[k], static_cast<float>(c.suppress_color[k]));
    UncertaintyStats wrong;
    wrong.magnitude.assign(3, 0.0);
    wrong.symmetry.assign(3, 0.0);
    EXPECT_THROW(color_tube(mesh, wrong, c), ArgumentError);
}

TEST(Colormap, PaletteSwapChangesOnlyHue) {
    auto c = unit_ceiling();
    c.palette = palettes::plasma();
    EXPECT_LT(dist(color_for(1.0, 0.0, c), palettes::plasma().front()), 1e-15);
    EXPECT_LT(dist(color_for(0.0, 0.0, c), c.suppress_color), 1e-15);
    c.palette = {{0, 0, 0}, {1, 1, 1}};
    const auto mid = color_for(1.0, 0.25, c);
    EXPECT_NEAR(mid.rgba[0], 0.25, 1e-15);
    c.palette = {{0, 0, 0}};
    EXPECT_THROW(c.validate(), ArgumentError);
    EXPECT_NE(palettes::by_name("cividis"), nullptr);
    EXPECT_EQ(palettes::by_name("jet"), nullptr);
}

TEST(Colormap, HexColors) {
    const auto g = parse_hex_color("#d3d3d3");
    EXPECT_NEAR(g[0], 211.0 / 255.0, 1e-15);
    EXPECT_EQ(parse_hex_color("FF0080"), (Rgb{1.0, 0.0, 128.0 / 255.0}));
    EXPECT_EQ(to_hex_color(parse_hex_color("#12abEF")), "#12abef");
    EXPECT_THROW(parse_hex_color("#fff"), ArgumentError);
    EXPECT_THROW(parse_hex_color("#gg0000"), ArgumentError);
}

TEST(Colormap, PercentileRangeValidated) {
    ColormapConfig c;
    c.magnitude_percentile = 0.0;
    EXPECT_THROW(c.validate(), ArgumentError);
    c.magnitude_percentile = 101.0;
    EXPECT_THROW(c.validate(), ArgumentError);
}
