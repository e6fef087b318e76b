#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>

namespace utube {

using Vec3 = Eigen::Vector3d;

/// Raised when a caller passes arguments that violate an operation's contract.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Query outside the domain of a field.
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Inconsistent model or tube configuration.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed, truncated or version-incompatible file.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failure during optimization (non-finite loss or parameters).
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void log_warning(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

/// Axis-aligned box, one [lo, hi] interval per axis.
struct Box {
    Vec3 lo{-1.0, -1.0, -1.0};
    Vec3 hi{1.0, 1.0, 1.0};

    Box() = default;
    Box(const Vec3& lo_, const Vec3& hi_) : lo(lo_), hi(hi_) {}

    [[nodiscard]] bool contains(const Vec3& p) const {
        for (int a = 0; a < 3; ++a) {
            if (!(p[a] >= lo[a] && p[a] <= hi[a])) return false;
        }
        return true;
    }
    [[nodiscard]] Vec3 extent() const { return hi - lo; }
    [[nodiscard]] Vec3 center() const { return 0.5 * (lo + hi); }
    [[nodiscard]] double diagonal() const { return extent().norm(); }

    /// Every axis has lo < hi.
    [[nodiscard]] bool proper() const { return (lo.array() < hi.array()).all(); }
    /// Every axis has lo <= hi (degenerate axes allowed).
    [[nodiscard]] bool ordered() const { return (lo.array() <= hi.array()).all(); }
};

inline bool operator==(const Box& a, const Box& b) { return a.lo == b.lo && a.hi == b.hi; }

/// splitmix64 finalizer; used to derive independent RNG streams from (seed, index) counters
/// so that parallel and serial evaluation consume identical random numbers.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
    return mix64(mix64(seed ^ mix64(salt)) + index);
}

}  // namespace utube
