#pragma once

#include "common.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace utube {

enum class FieldKind : std::uint8_t { synth = 0, tornado = 1 };

inline std::string_view to_string(FieldKind k) { return k == FieldKind::synth ? "synth" : "tornado"; }

inline FieldKind parse_field_kind(std::string_view s) {
    if (s == "synth") return FieldKind::synth;
    if (s == "tornado") return FieldKind::tornado;
    throw ArgumentError("unknown field kind '" + std::string(s) + "'");
}

/// Helical field whose lateral swirl amplitude grows linearly from zero at z = zmin.
///   v = (A(z) sin(k z + w t), A(z) cos(k z + w t), speed),  A(z) = slope * (z - zmin)
struct SynthParams {
    double slope = 1.0;
    double wavenumber = 40.0;
    double frequency = 1.0;
    double speed = 1.0;
    double zmin = -1.0;
};

/// Swirling column with a wandering, widening core. Lamb-Oseen swirl about a center that
/// drifts with height and time, a height-dependent radial in/outflow and an upward jet in
/// the core. Smooth everywhere, so RK4 attains its full order.
struct TornadoParams {
    double circulation = 3.0;
    double core_bottom = 0.8;
    double core_top = 2.0;
    double wander = 0.5;
    double wander_freq_x = 0.4;
    double wander_freq_y = 0.3;
    double wander_k_x = 0.3;
    double wander_k_y = 0.2;
    double inflow = 0.15;
    double updraft = 0.6;
    double background_rise = 0.05;
};

struct VectorField {
    FieldKind kind = FieldKind::synth;
    SynthParams synth{};
    TornadoParams tornado{};
    Box domain{};
    double t0 = 0.0;
    double t_end = 10.0;

    /// Domain [-1,1]^3; particles travel in +z and the swirl strengthens with z.
    static VectorField synth_preset() {
        VectorField f;
        f.kind = FieldKind::synth;
        f.domain = Box{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
        f.t0 = 0.0;
        f.t_end = 10.0;
        return f;
    }

    /// Domain [-5,5]x[-5,5]x[-10,10]; traced with delta 0.1 for 100 steps.
    static VectorField tornado_preset() {
        VectorField f;
        f.kind = FieldKind::tornado;
        f.domain = Box{Vec3(-5, -5, -10), Vec3(5, 5, 10)};
        f.t0 = 0.0;
        f.t_end = 20.0;
        return f;
    }

    static VectorField preset(FieldKind k) { return k == FieldKind::synth ? synth_preset() : tornado_preset(); }

    void validate() const {
        if (!domain.proper()) throw ConfigError("vector field domain must satisfy min < max on every axis");
        if (!(t0 < t_end)) throw ConfigError("vector field time range must satisfy t0 < T");
    }

    [[nodiscard]] bool defined_at(const Vec3& p, double t) const {
        return domain.contains(p) && t >= t0 && t <= t_end;
    }

    /// Velocity at (p, t). Throws DomainError outside domain x time_range.
    [[nodiscard]] Vec3 eval(const Vec3& p, double t) const {
        if (!defined_at(p, t)) throw DomainError("vector field evaluated outside its domain or time range");
        return eval_unchecked(p, t);
    }

    [[nodiscard]] Vec3 eval_unchecked(const Vec3& p, double t) const {
        return kind == FieldKind::synth ? eval_synth(p, t) : eval_tornado(p, t);
    }

private:
    [[nodiscard]] Vec3 eval_synth(const Vec3& p, double t) const {
        const auto& s = synth;
        const double amp = s.slope * (p.z() - s.zmin);
        const double phase = s.wavenumber * p.z() + s.frequency * t;
        return {amp * std::sin(phase), amp * std::cos(phase), s.speed};
    }

    [[nodiscard]] Vec3 eval_tornado(const Vec3& p, double t) const {
        const auto& c = tornado;
        const double zfrac = (p.z() - domain.lo.z()) / (domain.hi.z() - domain.lo.z());
        const double zmid = p.z() - domain.center().z();
        const double half_height = 0.5 * (domain.hi.z() - domain.lo.z());

        const double cx = c.wander * std::sin(c.wander_freq_x * t + c.wander_k_x * p.z());
        const double cy = c.wander * std::cos(c.wander_freq_y * t + c.wander_k_y * p.z());
        const double dx = p.x() - cx;
        const double dy = p.y() - cy;
        const double r2 = dx * dx + dy * dy;
        const double core = c.core_bottom + (c.core_top - c.core_bottom) * zfrac;
        const double core2 = core * core;

        // (1 - exp(-s)) / s written through expm1 so the axis limit is exact.
        const double s = r2 / core2;
        const double swirl = s > 0.0 ? c.circulation * (-std::expm1(-s)) / r2 : c.circulation / core2;
        const double bump = std::exp(-0.5 * s);
        const double radial = c.inflow * (zmid / half_height) * bump;

        return {-swirl * dy + radial * dx, swirl * dx + radial * dy, c.updraft * bump + c.background_rise};
    }
};

enum class Integrator : std::uint8_t { rk4 = 0, euler = 1 };

/// Positions at t0 + k*delta for k = 0..N. Once a particle leaves the domain (or the time
/// range) it is frozen at its last in-domain position and the remaining samples are flagged.
struct Pathline {
    std::vector<Vec3> positions;
    std::vector<bool> valid;

    [[nodiscard]] bool all_valid() const {
        for (bool v : valid)
            if (!v) return false;
        return true;
    }
};

namespace detail {

inline std::optional<Vec3> step(const VectorField& f, const Vec3& x, double t, double h, Integrator integ) {
    auto vel = [&](const Vec3& p, double tt) -> std::optional<Vec3> {
        if (!f.defined_at(p, tt)) return std::nullopt;
        return f.eval_unchecked(p, tt);
    };
    if (integ == Integrator::euler) {
        auto k1 = vel(x, t);
        if (!k1) return std::nullopt;
        return x + h * *k1;
    }
    auto k1 = vel(x, t);
    if (!k1) return std::nullopt;
    auto k2 = vel(x + 0.5 * h * *k1, t + 0.5 * h);
    if (!k2) return std::nullopt;
    auto k3 = vel(x + 0.5 * h * *k2, t + 0.5 * h);
    if (!k3) return std::nullopt;
    auto k4 = vel(x + h * *k3, t + h);
    if (!k4) return std::nullopt;
    return x + (h / 6.0) * (*k1 + 2.0 * (*k2 + *k3) + *k4);
}

}  // namespace detail

inline Pathline trace_pathline(const VectorField& field, const Vec3& seed, double t0, int steps, double delta,
                               Integrator integ = Integrator::rk4) {
    if (steps < 0) throw ArgumentError("trace_pathline: steps must be non-negative");
    if (!field.domain.contains(seed)) throw DomainError("trace_pathline: seed outside the field domain");
    Pathline out;
    out.positions.reserve(static_cast<std::size_t>(steps) + 1);
    out.valid.reserve(static_cast<std::size_t>(steps) + 1);
    out.positions.push_back(seed);
    out.valid.push_back(true);
    Vec3 x = seed;
    bool alive = true;
    for (int k = 0; k < steps; ++k) {
        if (alive) {
            const double t = t0 + k * delta;
            auto next = detail::step(field, x, t, delta, integ);
            if (next && field.domain.contains(*next)) {
                x = *next;
            } else {
                alive = false;
            }
        }
        out.positions.push_back(x);
        out.valid.push_back(alive);
    }
    return out;
}

}  // namespace utube
