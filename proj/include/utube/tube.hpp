#pragma once

#include "color.hpp"
#include "common.hpp"
#include "mesh.hpp"
#include "parallel.hpp"
#include "uq.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string_view>
#include <vector>

namespace utube {

/// stddev: radii r_k = sqrt(sigma_k) (the factor 2 in the boundary function then spans two
/// standard deviations); eigenvalue: r_k = sigma_k literally.
enum class RadiusConvention : std::uint8_t { stddev = 0, eigenvalue = 1 };

inline RadiusConvention parse_radius_convention(std::string_view s) {
    if (s == "stddev") return RadiusConvention::stddev;
    if (s == "eigenvalue") return RadiusConvention::eigenvalue;
    throw ArgumentError("unknown radius convention '" + std::string(s) + "'");
}

inline std::string_view to_string(RadiusConvention c) { return c == RadiusConvention::stddev ? "stddev" : "eigenvalue"; }

struct TubeParams {
    double tau = 4.0;
    int m = 32;
    RadiusConvention radius_convention = RadiusConvention::stddev;
    /// Treat the mean pathline as one more sample next to the members.
    bool include_mean_path = true;
    bool end_cap = false;
    /// Length used for the rendered-radius floor (1e-6 of it). <= 0: twice the largest
    /// distance of any sample from the seed.
    double reference_length = 0.0;

    void validate() const {
        if (!(tau >= 2.0)) throw ArgumentError("tau must be >= 2");
        if (m < 3) throw ArgumentError("m must be >= 3");
    }
};

struct ProjectedRing {
    int t_index = 0;
    Vec3 center = Vec3::Zero();
    Vec3 d = Vec3::UnitZ();
    std::vector<Vec3> points;
    Vec3 u = Vec3::UnitX();
    Vec3 v = Vec3::UnitY();
};

struct PlaneCovariance {
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    Eigen::Matrix2d vectors = Eigen::Matrix2d::Identity();  ///< columns are eigenvectors in (u, v) coordinates
    Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();
    Vec3 mean = Vec3::Zero();  ///< mean of the projected points
    Vec3 axis1 = Vec3::UnitX();  ///< eigenvectors lifted to 3D
    Vec3 axis2 = Vec3::UnitY();
};

struct SuperellipseRing {
    Vec3 center = Vec3::Zero();
    double tau = 4.0;
    int m = 0;
    double r1 = 0.0, r2 = 0.0;  ///< radii under the radius convention (statistics)
    double sigma1 = 0.0, sigma2 = 0.0;
    Vec3 axis1 = Vec3::UnitX();
    Vec3 axis2 = Vec3::UnitY();
    Vec3 d = Vec3::UnitZ();
    std::vector<Vec3> boundary;
};

/// Right-handed in-plane basis for the plane with normal d: u = d x z (or d x x when d is
/// nearly parallel to z), v = d x u.
inline std::pair<Vec3, Vec3> plane_basis(const Vec3& d) {
    Vec3 u = d.cross(Vec3::UnitZ());
    if (u.norm() < 1e-6) u = d.cross(Vec3::UnitX());
    u.normalize();
    return {u, d.cross(u)};
}

namespace detail {

inline Vec3 sample_mean(const std::vector<Vec3>& pts) {
    // Coincident samples (zero spread) keep their exact position.
    if (std::all_of(pts.begin(), pts.end(), [&](const Vec3& p) { return p == pts.front(); })) return pts.front();
    Vec3 m = Vec3::Zero();
    for (const auto& p : pts) m += p;
    return m / static_cast<double>(pts.size());
}

}  // namespace detail

/// Projects points onto the plane through their mean with unit normal d.
inline ProjectedRing project_points(const std::vector<Vec3>& pts, const Vec3& d, int t_index = 0) {
    if (pts.size() < 2) throw ArgumentError("project_points: need at least 2 samples");
    ProjectedRing ring;
    ring.t_index = t_index;
    ring.d = d;
    const Vec3 mean = detail::sample_mean(pts);
    ring.center = mean;
    ring.points.reserve(pts.size());
    for (const auto& x : pts) ring.points.push_back(x - ((x - mean).dot(d)) * d);
    std::tie(ring.u, ring.v) = plane_basis(d);
    return ring;
}

namespace detail {

inline std::vector<Vec3> samples_at(const TrajectoryEnsemble& e, std::size_t t, bool include_mean) {
    std::vector<Vec3> pts;
    pts.reserve(e.members.size() + 1);
    for (const auto& m : e.members) pts.push_back(m[t]);
    if (include_mean) pts.push_back(e.mean_path[t]);
    return pts;
}

/// Unit direction between consecutive sample means; a stationary mean keeps `previous`.
inline Vec3 step_direction(const Vec3& from, const Vec3& to, const Vec3& previous) {
    const Vec3 diff = to - from;
    const double n = diff.norm();
    if (!(n > 1e-14 * (1.0 + to.norm()))) return previous;
    return diff / n;
}

}  // namespace detail

/// Projection of the samples at step t (t >= 1) onto the plane orthogonal to the direction
/// from the mean at t-1 to the mean at t.
inline ProjectedRing project_ring(const TrajectoryEnsemble& e, int t_index, bool include_mean_path = true) {
    if (t_index < 1 || t_index > e.n_steps) throw ArgumentError("project_ring: t_index must lie in [1, n_steps]");
    if (e.members.size() + (include_mean_path ? 1 : 0) < 2) throw ArgumentError("project_points: need at least 2 samples");
    Vec3 d = Vec3::UnitZ();
    Vec3 prev = detail::sample_mean(detail::samples_at(e, 0, include_mean_path));
    for (int t = 1; t <= t_index; ++t) {
        const Vec3 cur = detail::sample_mean(detail::samples_at(e, static_cast<std::size_t>(t), include_mean_path));
        d = detail::step_direction(prev, cur, d);
        prev = cur;
    }
    return project_points(detail::samples_at(e, static_cast<std::size_t>(t_index), include_mean_path), d, t_index);
}

/// 1/N covariance of the projected points in (u, v) coordinates and its closed-form
/// symmetric eigendecomposition, sigma1 >= sigma2 >= 0. The first eigenvector is oriented so
/// its u component is >= 0 (v component >= 0 on a tie); the second is its +90 degree turn.
inline PlaneCovariance plane_covariance(const ProjectedRing& ring) {
    const auto n = ring.points.size();
    if (n < 2) throw ArgumentError("plane_covariance: need at least 2 points");
    PlaneCovariance out;
    const Vec3 mean = detail::sample_mean(ring.points);
    out.mean = mean;
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& p : ring.points) {
        const Vec3 q = p - mean;
        const double a = q.dot(ring.u), b = q.dot(ring.v);
        sxx += a * a;
        sxy += a * b;
        syy += b * b;
    }
    const double inv = 1.0 / static_cast<double>(n);
    sxx *= inv;
    sxy *= inv;
    syy *= inv;
    out.covariance << sxx, sxy, sxy, syy;

    const double half_tr = 0.5 * (sxx + syy);
    const double half_diff = 0.5 * (sxx - syy);
    const double disc = std::hypot(half_diff, sxy);
    out.sigma1 = half_tr + disc;
    out.sigma2 = std::max(0.0, half_tr - disc);

    Eigen::Vector2d e1;
    if (sxy == 0.0) {
        e1 = sxx >= syy ? Eigen::Vector2d(1, 0) : Eigen::Vector2d(0, 1);
    } else {
        // Two algebraically equivalent null vectors of (C - sigma1 I); take the larger.
        const Eigen::Vector2d a(out.sigma1 - syy, sxy);
        const Eigen::Vector2d b(sxy, out.sigma1 - sxx);
        e1 = a.squaredNorm() >= b.squaredNorm() ? a : b;
        e1.normalize();
    }
    if (e1.x() < 0.0 || (e1.x() == 0.0 && e1.y() < 0.0)) e1 = -e1;
    const Eigen::Vector2d e2(-e1.y(), e1.x());
    out.vectors.col(0) = e1;
    out.vectors.col(1) = e2;
    out.axis1 = e1.x() * ring.u + e1.y() * ring.v;
    out.axis2 = e2.x() * ring.u + e2.y() * ring.v;
    return out;
}

inline std::pair<double, double> radii_for(double sigma1, double sigma2, RadiusConvention conv) {
    if (conv == RadiusConvention::stddev) return {std::sqrt(std::max(0.0, sigma1)), std::sqrt(std::max(0.0, sigma2))};
    return {sigma1, sigma2};
}

/// Boundary function e(theta): (2 r1 |cos|^(2/tau) sgn(cos), 2 r2 |sin|^(2/tau) sgn(sin)).
inline Eigen::Vector2d superellipse_offset(double theta, double r1, double r2, double tau) {
    const double c = std::cos(theta), s = std::sin(theta);
    const double ex = 2.0 / tau;
    auto sgn = [](double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); };
    return {2.0 * r1 * std::pow(std::abs(c), ex) * sgn(c), 2.0 * r2 * std::pow(std::abs(s), ex) * sgn(s)};
}

/// Samples q(theta_j) = e(theta_j) V^T + mean at theta_j = 2 pi j / m, lifted to 3D through
/// the covariance axes. `min_radius` floors the rendered radii only.
inline SuperellipseRing build_superellipse(const PlaneCovariance& cov, const Vec3& center, double tau, int m,
                                           RadiusConvention conv = RadiusConvention::stddev, double min_radius = 0.0) {
    if (!(tau >= 2.0)) throw ArgumentError("build_superellipse: tau must be >= 2");
    if (m < 3) throw ArgumentError("build_superellipse: m must be >= 3");
    SuperellipseRing ring;
    ring.center = center;
    ring.tau = tau;
    ring.m = m;
    ring.sigma1 = cov.sigma1;
    ring.sigma2 = cov.sigma2;
    std::tie(ring.r1, ring.r2) = radii_for(cov.sigma1, cov.sigma2, conv);
    ring.axis1 = cov.axis1;
    ring.axis2 = cov.axis2;
    ring.d = cov.axis1.cross(cov.axis2);
    const double g1 = std::max(ring.r1, min_radius);
    const double g2 = std::max(ring.r2, min_radius);
    ring.boundary.reserve(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(m);
        const Eigen::Vector2d e = superellipse_offset(theta, g1, g2, tau);
        ring.boundary.push_back(center + e.x() * cov.axis1 + e.y() * cov.axis2);
    }
    return ring;
}

struct Alignment {
    int shift = 0;
    bool reverse = false;
    double score = 0.0;
    std::vector<Vec3> reordered;
};

/// Element j of `next` under (shift s, reverse r): reverse maps i -> (m - i) mod m before
/// the circular shift l_j = (j + s) mod m.
inline std::size_t aligned_index(std::size_t j, int shift, bool reverse, std::size_t m) {
    const std::size_t l = (j + static_cast<std::size_t>(shift)) % m;
    return reverse ? (m - l) % m : l;
}

inline double alignment_score(const std::vector<Vec3>& prev, const std::vector<Vec3>& next, int shift, bool reverse) {
    const std::size_t m = prev.size();
    double score = 0.0;
    for (std::size_t j = 0; j < m; ++j) score += (next[aligned_index(j, shift, reverse, m)] - prev[j]).norm();
    return score;
}

/// Exhaustive argmin over (r, s) of the summed point distances; ties go to the smallest
/// shift, then to r = 0.
inline Alignment align_rings(const std::vector<Vec3>& prev, const std::vector<Vec3>& next) {
    if (prev.size() != next.size()) throw ArgumentError("align_rings: rings have different sample counts");
    if (prev.empty()) throw ArgumentError("align_rings: empty rings");
    const std::size_t m = prev.size();
    Alignment best;
    best.score = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < m; ++s) {
        for (int r = 0; r < 2; ++r) {
            const double score = alignment_score(prev, next, static_cast<int>(s), r == 1);
            if (score < best.score) {
                best.score = score;
                best.shift = static_cast<int>(s);
                best.reverse = r == 1;
            }
        }
    }
    best.reordered.resize(m);
    for (std::size_t j = 0; j < m; ++j) best.reordered[j] = next[aligned_index(j, best.shift, best.reverse, m)];
    return best;
}

inline Alignment align_rings(const SuperellipseRing& prev, const SuperellipseRing& next) {
    if (prev.m != next.m) throw ArgumentError("align_rings: rings have different sample counts");
    return align_rings(prev.boundary, next.boundary);
}

/// Per-ring statistics for an ensemble without building geometry.
struct TubeGeometry {
    std::vector<SuperellipseRing> rings;  ///< rings for t = 1..N, already aligned
    UncertaintyStats stats;
};

inline double reference_length(const TrajectoryEnsemble& e, const TubeParams& p) {
    if (p.reference_length > 0.0) return p.reference_length;
    double r = 0.0;
    for (const auto& m : e.members)
        for (const auto& x : m) r = std::max(r, (x - e.seed).norm());
    for (const auto& x : e.mean_path) r = std::max(r, (x - e.seed).norm());
    return r > 0.0 ? 2.0 * r : 1.0;
}

inline TubeGeometry tube_geometry(const TrajectoryEnsemble& e, const TubeParams& p) {
    p.validate();
    e.validate();
    if (e.n_steps < 1) throw ArgumentError("build_tube: ensemble needs at least one step");
    if (e.members.size() + (p.include_mean_path ? 1 : 0) < 2) throw ArgumentError("build_tube: need at least 2 samples");
    const double floor = 1e-6 * reference_length(e, p);
    TubeGeometry g;
    g.rings.reserve(static_cast<std::size_t>(e.n_steps));
    Vec3 d = Vec3::UnitZ();
    Vec3 prev_mean = detail::sample_mean(detail::samples_at(e, 0, p.include_mean_path));
    for (int t = 1; t <= e.n_steps; ++t) {
        const auto pts = detail::samples_at(e, static_cast<std::size_t>(t), p.include_mean_path);
        const Vec3 mean = detail::sample_mean(pts);
        d = detail::step_direction(prev_mean, mean, d);
        prev_mean = mean;
        const ProjectedRing proj = project_points(pts, d, t);
        PlaneCovariance cov = plane_covariance(proj);
        // Counter-clockwise about d, so the quad winding below faces outward.
        if (cov.axis1.cross(cov.axis2).dot(d) < 0.0) cov.axis2 = -cov.axis2;
        SuperellipseRing ring = build_superellipse(cov, cov.mean, p.tau, p.m, p.radius_convention, floor);
        ring.d = d;
        if (!g.rings.empty()) ring.boundary = align_rings(g.rings.back(), ring).reordered;
        g.stats.magnitude.push_back(ring.r1);
        g.stats.symmetry.push_back(cov.sigma1 > 0.0 ? std::clamp(cov.sigma2 / cov.sigma1, 0.0, 1.0) : 1.0);
        g.rings.push_back(std::move(ring));
    }
    return g;
}

/// Triangulated, uncolored tube: apex fan to ring 1, two triangles per quad between
/// consecutive rings, optional fan cap on the last ring, area-weighted vertex normals.
inline TubeMesh mesh_from_geometry(const TrajectoryEnsemble& e, const TubeGeometry& g, const TubeParams& p) {
    TubeMesh mesh;
    const auto m = static_cast<std::size_t>(p.m);
    const std::size_t R = g.rings.size();
    mesh.ring_stride = static_cast<std::uint32_t>(m);
    mesh.rings = static_cast<std::uint32_t>(R);
    mesh.end_cap = p.end_cap;
    mesh.seed = e.seed;
    mesh.stats = g.stats;

    std::vector<Vec3> verts;
    std::vector<std::array<double, 2>> uv;
    verts.reserve(1 + m * R + (p.end_cap ? 1 : 0));
    verts.push_back(e.seed);
    uv.push_back({0.0, 0.0});
    for (std::size_t r = 0; r < R; ++r) {
        const double u = R > 1 ? static_cast<double>(r) / static_cast<double>(R - 1) : 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            verts.push_back(g.rings[r].boundary[j]);
            uv.push_back({u, static_cast<double>(j) / static_cast<double>(m)});
        }
    }
    auto idx = [&](std::size_t r, std::size_t j) { return static_cast<std::uint32_t>(1 + r * m + (j % m)); };
    auto& I = mesh.indices;
    I.reserve(3 * (m + 2 * m * (R > 0 ? R - 1 : 0) + (p.end_cap ? m : 0)));
    if (R > 0) {
        for (std::size_t j = 0; j < m; ++j) I.insert(I.end(), {0u, idx(0, j + 1), idx(0, j)});
    }
    for (std::size_t r = 0; r + 1 < R; ++r) {
        for (std::size_t j = 0; j < m; ++j) {
            I.insert(I.end(), {idx(r, j), idx(r, j + 1), idx(r + 1, j + 1)});
            I.insert(I.end(), {idx(r, j), idx(r + 1, j + 1), idx(r + 1, j)});
        }
    }
    if (p.end_cap && R > 0) {
        const auto c = static_cast<std::uint32_t>(verts.size());
        verts.push_back(g.rings.back().center);
        uv.push_back({1.0, 0.0});
        for (std::size_t j = 0; j < m; ++j) I.insert(I.end(), {c, idx(R - 1, j), idx(R - 1, j + 1)});
    }

    std::vector<Vec3> normals(verts.size(), Vec3::Zero());
    for (std::size_t t = 0; t < I.size(); t += 3) {
        const Vec3& a = verts[I[t]];
        const Vec3 n = (verts[I[t + 1]] - a).cross(verts[I[t + 2]] - a);
        for (int k = 0; k < 3; ++k) normals[I[t + static_cast<std::size_t>(k)]] += n;
    }
    mesh.positions.reserve(3 * verts.size());
    mesh.normals.reserve(3 * verts.size());
    mesh.uvs.reserve(2 * verts.size());
    for (std::size_t i = 0; i < verts.size(); ++i) {
        const double len = normals[i].norm();
        const Vec3 n = len > 0.0 ? Vec3(normals[i] / len) : Vec3::Zero();
        for (int k = 0; k < 3; ++k) {
            mesh.positions.push_back(static_cast<float>(verts[i][k]));
            mesh.normals.push_back(static_cast<float>(n[k]));
        }
        mesh.uvs.push_back(static_cast<float>(uv[i][0]));
        mesh.uvs.push_back(static_cast<float>(uv[i][1]));
    }
    return mesh;
}

/// One tube, colored with `cmap` (its ceiling is resolved from this tube alone when unset).
inline TubeMesh build_tube(const TrajectoryEnsemble& e, const TubeParams& p, const ColormapConfig& cmap = {}) {
    const TubeGeometry g = tube_geometry(e, p);
    TubeMesh mesh = mesh_from_geometry(e, g, p);
    ColormapConfig c = cmap;
    if (!c.resolved()) c.magnitude_ceiling = resolve_ceiling(std::vector<const UncertaintyStats*>{&mesh.stats}, c);
    color_tube(mesh, mesh.stats, c);
    return mesh;
}

/// Geometry per seed in parallel (dynamic scheduling, output order = input order), then one
/// colormap ceiling over every ring of the query, then coloring. Identical for any worker count.
inline std::vector<TubeMesh> build_tubes_parallel(const std::vector<TrajectoryEnsemble>& ensembles, const TubeParams& p,
                                                  const ColormapConfig& cmap, unsigned workers, double* resolved_ceiling = nullptr) {
    if (workers < 1) throw ArgumentError("build_tubes_parallel: workers must be >= 1");
    p.validate();
    std::vector<TubeMesh> meshes(ensembles.size());
    parallel_for(ensembles.size(), workers, [&](std::size_t i) { meshes[i] = mesh_from_geometry(ensembles[i], tube_geometry(ensembles[i], p), p); });
    ColormapConfig c = cmap;
    if (!c.resolved() && !meshes.empty()) {
        std::vector<const UncertaintyStats*> all;
        for (const auto& m : meshes) all.push_back(&m.stats);
        c.magnitude_ceiling = resolve_ceiling(all, c);
    }
    if (resolved_ceiling) *resolved_ceiling = c.resolved() ? c.magnitude_ceiling : 1.0;
    parallel_for(meshes.size(), workers, [&](std::size_t i) { color_tube(meshes[i], meshes[i].stats, c); });
    return meshes;
}

}  // namespace utube
