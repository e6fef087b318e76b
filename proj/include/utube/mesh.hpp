#pragma once

#include "common.hpp"

#include <cstdint>
#include <vector>

namespace utube {

/// Per-ring summary that drives the colormap. magnitude is the first cross-section radius
/// under the active radius convention; symmetry is sigma2 / sigma1 (1 when sigma1 == 0).
struct UncertaintyStats {
    std::vector<double> magnitude;
    std::vector<double> symmetry;

    [[nodiscard]] std::size_t rings() const { return magnitude.size(); }
    friend bool operator==(const UncertaintyStats&, const UncertaintyStats&) = default;
};

/// Flat, GPU-ready buffers for one seed's tube. Vertex 0 is the seed apex, followed by
/// `rings` rings of `ring_stride` vertices each (and an optional end-cap center).
struct TubeMesh {
    std::vector<float> positions;  // 3 per vertex
    std::vector<float> normals;    // 3 per vertex
    std::vector<float> uvs;        // 2 per vertex
    std::vector<float> colors;     // 4 per vertex (RGBA)
    std::vector<std::uint32_t> indices;  // 3 per triangle
    std::uint32_t ring_stride = 0;
    std::uint32_t rings = 0;
    bool end_cap = false;
    Vec3 seed = Vec3::Zero();
    UncertaintyStats stats;

    [[nodiscard]] std::size_t vertex_count() const { return positions.size() / 3; }
    [[nodiscard]] std::size_t triangle_count() const { return indices.size() / 3; }
    [[nodiscard]] Vec3 vertex(std::size_t i) const { return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}; }
    [[nodiscard]] std::size_t ring_vertex(std::size_t ring, std::size_t j) const { return 1 + ring * ring_stride + j; }

    friend bool operator==(const TubeMesh&, const TubeMesh&) = default;
};

}  // namespace utube
