#pragma once

#include "common.hpp"
#include "mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace utube {

using Rgb = std::array<double, 3>;

struct ColorSample {
    std::array<double, 4> rgba{0.0, 0.0, 0.0, 1.0};
    friend bool operator==(const ColorSample&, const ColorSample&) = default;
};

namespace palettes {

// 17 evenly spaced samples of the matplotlib tables.
inline const std::vector<Rgb>& viridis() {
    static const std::vector<Rgb> p{
        {0.267004, 0.004874, 0.329415}, {0.282327, 0.094955, 0.417331}, {0.278826, 0.175490, 0.483397},
        {0.258965, 0.251537, 0.524736}, {0.229739, 0.322361, 0.545706}, {0.199430, 0.387607, 0.554642},
        {0.172719, 0.448791, 0.557885}, {0.149039, 0.508051, 0.557250}, {0.127568, 0.566949, 0.550556},
        {0.120638, 0.625828, 0.533488}, {0.157851, 0.683765, 0.501686}, {0.246070, 0.738910, 0.452024},
        {0.369214, 0.788888, 0.382914}, {0.515992, 0.831158, 0.294279}, {0.678489, 0.863742, 0.189503},
        {0.845561, 0.887322, 0.099702}, {0.993248, 0.906157, 0.143936}};
    return p;
}

inline const std::vector<Rgb>& plasma() {
    static const std::vector<Rgb> p{
        {0.050383, 0.029803, 0.527975}, {0.193374, 0.018354, 0.590330}, {0.299855, 0.009561, 0.631624},
        {0.399411, 0.000859, 0.656133}, {0.494877, 0.011990, 0.657865}, {0.584391, 0.068579, 0.632812},
        {0.665129, 0.138566, 0.585582}, {0.736019, 0.209439, 0.527908}, {0.798216, 0.280197, 0.469538},
        {0.853319, 0.351553, 0.413734}, {0.901807, 0.425087, 0.359688}, {0.942598, 0.502639, 0.305816},
        {0.973416, 0.585761, 0.251540}, {0.991365, 0.675355, 0.198453}, {0.993033, 0.771720, 0.154808},
        {0.974443, 0.874622, 0.144061}, {0.940015, 0.975158, 0.131326}};
    return p;
}

inline const std::vector<Rgb>& cividis() {
    static const std::vector<Rgb> p{
        {0.000000, 0.135112, 0.304751}, {0.000000, 0.178802, 0.414764}, {0.103401, 0.220406, 0.435790},
        {0.195057, 0.264372, 0.425924}, {0.263738, 0.307831, 0.422789}, {0.324250, 0.351289, 0.426250},
        {0.380830, 0.395164, 0.435653}, {0.435168, 0.439763, 0.451134}, {0.488697, 0.485318, 0.471008},
        {0.547840, 0.531895, 0.471704}, {0.609105, 0.579816, 0.463638}, {0.671991, 0.629316, 0.448018},
        {0.736488, 0.680629, 0.424028}, {0.802667, 0.733978, 0.390153}, {0.870717, 0.789572, 0.343333},
        {0.941147, 0.847530, 0.275815}, {0.995737, 0.909344, 0.217772}};
    return p;
}

inline const std::vector<Rgb>* by_name(const std::string& name) {
    if (name == "viridis") return &viridis();
    if (name == "plasma") return &plasma();
    if (name == "cividis") return &cividis();
    return nullptr;
}

}  // namespace palettes

/// #rrggbb (leading '#' optional) -> linear [0,1] components.
inline Rgb parse_hex_color(const std::string& hex) {
    std::string h = hex;
    if (!h.empty() && h.front() == '#') h.erase(0, 1);
    if (h.size() != 6 || h.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
        throw ArgumentError("color must be #rrggbb, got '" + hex + "'");
    Rgb out{};
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] = std::stoi(h.substr(static_cast<std::size_t>(2 * c), 2), nullptr, 16) / 255.0;
    return out;
}

inline std::string to_hex_color(const Rgb& c) {
    char buf[8];
    auto byte = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", byte(c[0]), byte(c[1]), byte(c[2]));
    return buf;
}

struct ColormapConfig {
    std::string palette_name = "viridis";
    std::vector<Rgb> palette = palettes::viridis();
    Rgb suppress_color = parse_hex_color("#d3d3d3");
    double magnitude_percentile = 98.0;
    double magnitude_ceiling = 0.0;  ///< <= 0 means "resolve from the data"

    void validate() const {
        if (palette.size() < 2) throw ArgumentError("palette needs at least 2 stops");
        if (!(magnitude_percentile > 0.0 && magnitude_percentile <= 100.0))
            throw ArgumentError("magnitude percentile must lie in (0, 100]");
    }

    [[nodiscard]] bool resolved() const { return magnitude_ceiling > 0.0; }
};

/// Palette lookup at s in [0,1] with evenly spaced stops.
inline Rgb sample_palette(const std::vector<Rgb>& palette, double s) {
    s = std::clamp(s, 0.0, 1.0);
    const double x = s * static_cast<double>(palette.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(x), palette.size() - 2);
    const double f = x - static_cast<double>(i);
    Rgb out{};
    for (std::size_t c = 0; c < 3; ++c) out[c] = (1.0 - f) * palette[i][c] + f * palette[i + 1][c];
    return out;
}

/// Linear-interpolated percentile (p in (0,100]) of the per-ring magnitudes of every tube
/// in the query. An all-zero query yields 1 so that everything maps to the suppress color.
inline double resolve_ceiling(const std::vector<const UncertaintyStats*>& all, const ColormapConfig& cfg) {
    cfg.validate();
    std::vector<double> mags;
    for (const auto* s : all) mags.insert(mags.end(), s->magnitude.begin(), s->magnitude.end());
    if (mags.empty()) throw ArgumentError("resolve_ceiling: no rings");
    std::sort(mags.begin(), mags.end());
    const double pos = cfg.magnitude_percentile / 100.0 * static_cast<double>(mags.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, mags.size() - 1);
    const double f = pos - static_cast<double>(lo);
    const double ceiling = mags[lo] + f * (mags[hi] - mags[lo]);
    return ceiling > 0.0 ? ceiling : 1.0;
}

inline double resolve_ceiling(const std::vector<UncertaintyStats>& all, const ColormapConfig& cfg) {
    std::vector<const UncertaintyStats*> ptrs;
    for (const auto& s : all) ptrs.push_back(&s);
    return resolve_ceiling(ptrs, cfg);
}

/// Symmetry picks the palette color; the magnitude level blends from the suppress color
/// (level 0) to that palette color (level 1) in linear RGB.
inline ColorSample color_for(double magnitude, double symmetry, const ColormapConfig& cfg) {
    const double ceiling = cfg.resolved() ? cfg.magnitude_ceiling : 1.0;
    const double level = std::clamp(magnitude / ceiling, 0.0, 1.0);
    const Rgb sym = sample_palette(cfg.palette, symmetry);
    ColorSample out;
    for (std::size_t c = 0; c < 3; ++c) out.rgba[c] = (1.0 - level) * cfg.suppress_color[c] + level * sym[c];
    out.rgba[3] = 1.0;
    return out;
}

/// Writes per-vertex colors: every ring vertex takes its ring's color, the apex and the end
/// cap center take the suppress color and the last ring's color respectively.
inline void color_tube(TubeMesh& mesh, const UncertaintyStats& stats, const ColormapConfig& cfg) {
    if (stats.rings() != mesh.rings || stats.symmetry.size() != mesh.rings)
        throw ArgumentError("color_tube: stats ring count does not match the mesh");
    const std::size_t nv = mesh.vertex_count();
    mesh.colors.assign(4 * nv, 0.0f);
    auto put = [&](std::size_t v, const ColorSample& c) {
        for (std::size_t k = 0; k < 4; ++k) mesh.colors[4 * v + k] = static_cast<float>(c.rgba[k]);
    };
    const ColorSample gray = color_for(0.0, 1.0, cfg);
    if (nv > 0) put(0, gray);
    for (std::size_t r = 0; r < mesh.rings; ++r) {
        const ColorSample c = color_for(stats.magnitude[r], stats.symmetry[r], cfg);
        for (std::size_t j = 0; j < mesh.ring_stride; ++j) put(mesh.ring_vertex(r, j), c);
    }
    if (mesh.end_cap && mesh.rings > 0)
        put(nv - 1, color_for(stats.magnitude[mesh.rings - 1], stats.symmetry[mesh.rings - 1], cfg));
}

}  // namespace utube
