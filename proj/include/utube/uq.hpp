#pragma once

#include "common.hpp"
#include "dataset.hpp"
#include "flowmap.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace utube {

/// A trained model together with the coordinate mapping and time axis of its training data.
struct FlowMapSurrogate {
    FlowMapModel model;
    Box original_box{};
    RescaleMode rescale = RescaleMode::bounding_box;
    std::uint32_t n_cycles = 2;
    double delta = 1.0;

    [[nodiscard]] Normalization normalization() const { return Normalization::from_box(original_box, rescale); }

    static FlowMapSurrogate from(FlowMapModel m, const FlowMapDataset& ds) {
        return {std::move(m), ds.original_box, ds.rescale, ds.n_cycles, ds.delta};
    }
};

enum class UqMethod : std::uint8_t { deep_ensemble = 0, mc_dropout = 1, swag = 2, external = 3 };

inline std::string_view to_string(UqMethod m) {
    switch (m) {
        case UqMethod::deep_ensemble: return "ensemble";
        case UqMethod::mc_dropout: return "dropout";
        case UqMethod::swag: return "swag";
        case UqMethod::external: return "external";
    }
    return "external";
}

inline UqMethod parse_uq_method(std::string_view s) {
    if (s == "ensemble" || s == "deep_ensemble") return UqMethod::deep_ensemble;
    if (s == "dropout" || s == "mc_dropout") return UqMethod::mc_dropout;
    if (s == "swag") return UqMethod::swag;
    if (s == "external") return UqMethod::external;
    throw ArgumentError("unknown UQ method '" + std::string(s) + "'");
}

/// How the mean pathline of a sampled ensemble is obtained.
enum class MeanMode : std::uint8_t { base = 0, member_average = 1 };

inline MeanMode parse_mean_mode(std::string_view s) {
    if (s == "base") return MeanMode::base;
    if (s == "average" || s == "member-average" || s == "member_average") return MeanMode::member_average;
    throw ArgumentError("unknown mean mode '" + std::string(s) + "'");
}

using Path = std::vector<Vec3>;

struct TrajectoryEnsemble {
    Vec3 seed = Vec3::Zero();
    double delta = 1.0;
    int n_steps = 0;
    Path mean_path;
    std::vector<Path> members;
    UqMethod method = UqMethod::external;

    /// Throws FormatError naming the offending member when the invariants do not hold.
    void validate() const {
        const auto len = static_cast<std::size_t>(n_steps) + 1;
        if (n_steps < 0) throw FormatError("ensemble: n_steps must be non-negative");
        if (mean_path.size() != len)
            throw FormatError("ensemble: mean path has " + std::to_string(mean_path.size()) + " positions, expected " + std::to_string(len));
        for (std::size_t k = 0; k < members.size(); ++k) {
            if (members[k].size() != len)
                throw FormatError("ensemble: member " + std::to_string(k) + " has " + std::to_string(members[k].size()) +
                                  " positions, expected " + std::to_string(len));
            if (members[k][0] != seed) throw FormatError("ensemble: member " + std::to_string(k) + " does not start at the seed");
        }
        if (mean_path[0] != seed) throw FormatError("ensemble: mean path does not start at the seed");
    }

    friend bool operator==(const TrajectoryEnsemble&, const TrajectoryEnsemble&) = default;
};

/// Column-wise arithmetic mean of the member paths.
inline Path member_average(const std::vector<Path>& members) {
    if (members.empty()) throw ArgumentError("member_average: no members");
    Path mean(members.front().size(), Vec3::Zero());
    for (const auto& m : members)
        for (std::size_t t = 0; t < mean.size(); ++t) mean[t] += m[t];
    const auto n = static_cast<double>(members.size());
    for (std::size_t t = 0; t < mean.size(); ++t) {
        // Positions shared by every member (the pinned seed) stay exact.
        const bool shared = std::all_of(members.begin(), members.end(), [&](const Path& m) { return m[t] == members.front()[t]; });
        mean[t] = shared ? members.front()[t] : Vec3(mean[t] / n);
    }
    return mean;
}

/// Pathlines for every seed at cycles 0..n_steps in domain units. Position 0 is pinned to
/// the seed (the seed carries no uncertainty).
inline std::vector<Path> predict_paths(const FlowMapModel& model, const Normalization& norm, std::uint32_t n_cycles,
                                       const std::vector<Vec3>& seeds, int n_steps,
                                       const FlowMapModel::Masks* masks = nullptr) {
    if (n_steps < 0) throw ArgumentError("predict_paths: n_steps must be non-negative");
    const auto cols_per_seed = static_cast<Eigen::Index>(n_steps) + 1;
    std::vector<Path> out(seeds.size(), Path(static_cast<std::size_t>(cols_per_seed)));
    constexpr std::size_t seeds_per_chunk = 256;
    for (std::size_t from = 0; from < seeds.size(); from += seeds_per_chunk) {
        const std::size_t count = std::min(seeds_per_chunk, seeds.size() - from);
        const auto cols = static_cast<Eigen::Index>(count) * cols_per_seed;
        Eigen::MatrixXf start(3, cols), cycle(1, cols);
        for (std::size_t s = 0; s < count; ++s) {
            const Vec3 u = norm.to_unit(seeds[from + s]);
            for (Eigen::Index j = 0; j < cols_per_seed; ++j) {
                const Eigen::Index c = static_cast<Eigen::Index>(s) * cols_per_seed + j;
                start.col(c) = u.cast<float>();
                cycle(0, c) = static_cast<float>(normalize_cycle(static_cast<double>(j), static_cast<int>(n_cycles)));
            }
        }
        const Eigen::MatrixXf pred = model.forward(start, cycle, masks);
        for (std::size_t s = 0; s < count; ++s) {
            Path& p = out[from + s];
            for (Eigen::Index j = 0; j < cols_per_seed; ++j) {
                const Eigen::Index c = static_cast<Eigen::Index>(s) * cols_per_seed + j;
                p[static_cast<std::size_t>(j)] = norm.from_unit(pred.col(c).cast<double>());
            }
            p[0] = seeds[from + s];
        }
    }
    return out;
}

namespace detail {

/// Assemble per-seed ensembles from per-member path sets ([member][seed] -> path).
inline std::vector<TrajectoryEnsemble> assemble(const std::vector<Vec3>& seeds, const std::vector<std::vector<Path>>& by_member,
                                                const std::vector<Path>* base, double delta, int n_steps, UqMethod method,
                                                MeanMode mean_mode) {
    std::vector<TrajectoryEnsemble> out(seeds.size());
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        auto& e = out[s];
        e.seed = seeds[s];
        e.delta = delta;
        e.n_steps = n_steps;
        e.method = method;
        e.members.reserve(by_member.size());
        for (const auto& m : by_member) e.members.push_back(m[s]);
        e.mean_path = (mean_mode == MeanMode::base && base) ? (*base)[s] : member_average(e.members);
    }
    return out;
}

}  // namespace detail

/// One member per independently trained model; the mean is always the member average.
inline std::vector<TrajectoryEnsemble> deep_ensemble_sample(const std::vector<const FlowMapSurrogate*>& models,
                                                            const std::vector<Vec3>& seeds, int n_steps,
                                                            unsigned workers = default_workers()) {
    if (models.size() < 2) throw ArgumentError("deep_ensemble_sample: need at least 2 models");
    for (const auto* m : models) {
        if (!m->model.config.same_shape(models.front()->model.config))
            throw ArgumentError("deep_ensemble_sample: models do not share one layer configuration");
    }
    std::vector<std::vector<Path>> by_member(models.size());
    parallel_for(models.size(), workers, [&](std::size_t k) {
        const auto& s = *models[k];
        by_member[k] = predict_paths(s.model, s.normalization(), s.n_cycles, seeds, n_steps);
    });
    return detail::assemble(seeds, by_member, nullptr, models.front()->delta, n_steps, UqMethod::deep_ensemble,
                            MeanMode::member_average);
}

inline std::vector<TrajectoryEnsemble> deep_ensemble_sample(const std::vector<FlowMapSurrogate>& models,
                                                            const std::vector<Vec3>& seeds, int n_steps,
                                                            unsigned workers = default_workers()) {
    std::vector<const FlowMapSurrogate*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    return deep_ensemble_sample(ptrs, seeds, n_steps, workers);
}

/// Each member is one dropout sub-network: a keep-mask drawn from stream (rng_seed, k) and
/// shared by every seed and cycle, so member pathlines are coherent curves.
inline std::vector<TrajectoryEnsemble> mc_dropout_sample(const FlowMapSurrogate& s, const std::vector<Vec3>& seeds, int n_steps,
                                                         std::size_t n_passes, std::uint64_t rng_seed,
                                                         MeanMode mean_mode = MeanMode::base,
                                                         unsigned workers = default_workers()) {
    if (n_passes < 2) throw ArgumentError("mc_dropout_sample: n_passes must be >= 2");
    const Normalization norm = s.normalization();
    std::vector<std::vector<Path>> by_member(n_passes);
    parallel_for(n_passes, workers, [&](std::size_t k) {
        std::mt19937_64 rng(stream_seed(rng_seed, k, 0xd0));
        const auto masks = s.model.sample_masks(rng, 1);
        by_member[k] = predict_paths(s.model, norm, s.n_cycles, seeds, n_steps, &masks);
    });
    std::vector<Path> base;
    if (mean_mode == MeanMode::base) base = predict_paths(s.model, norm, s.n_cycles, seeds, n_steps);
    return detail::assemble(seeds, by_member, &base, s.delta, n_steps, UqMethod::mc_dropout, mean_mode);
}

// ---------------------------------------------------------------------------------------
// SWAG

struct SwagConfig {
    double swag_lr = 5e-4;
    std::size_t n_swag_samples = 1000;
    std::size_t rank = 100;
    double sgd_weight_decay = 1e-8;
    double sgd_momentum = 0.9;
    std::size_t batch_size = 1024;

    void validate() const {
        if (!(swag_lr >= 0.0)) throw ConfigError("swag_lr must be non-negative");
        if (n_swag_samples < 1) throw ConfigError("n_swag_samples must be >= 1");
        if (rank > n_swag_samples) throw ConfigError("rank must not exceed n_swag_samples");
        if (!(sgd_weight_decay >= 0.0) || !(sgd_momentum >= 0.0)) throw ConfigError("SGD weight decay and momentum must be non-negative");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    }
};

/// Streaming first/second moments of weight snapshots plus a ring buffer of the most recent
/// `rank` deviations (snapshot minus the running mean after that snapshot).
struct SwagPosterior {
    std::vector<double> theta_swa;
    std::vector<double> second_moment;
    std::deque<std::vector<double>> deviations;
    std::size_t rank = 0;
    std::size_t snapshots_seen = 0;

    SwagPosterior() = default;
    SwagPosterior(std::size_t n_params, std::size_t rank_) : theta_swa(n_params, 0.0), second_moment(n_params, 0.0), rank(rank_) {}

    template <typename U>
    void collect(const std::vector<U>& snapshot) {
        if (snapshot.size() != theta_swa.size()) throw ArgumentError("SwagPosterior::collect: snapshot length mismatch");
        ++snapshots_seen;
        const double inv = 1.0 / static_cast<double>(snapshots_seen);
        for (std::size_t i = 0; i < theta_swa.size(); ++i) {
            const auto x = static_cast<double>(snapshot[i]);
            theta_swa[i] += (x - theta_swa[i]) * inv;
            second_moment[i] += (x * x - second_moment[i]) * inv;
        }
        if (rank == 0) return;
        std::vector<double> dev(theta_swa.size());
        for (std::size_t i = 0; i < dev.size(); ++i) dev[i] = static_cast<double>(snapshot[i]) - theta_swa[i];
        deviations.push_back(std::move(dev));
        if (deviations.size() > rank) deviations.pop_front();
    }

    /// Second moment minus squared mean, clamped at zero.
    [[nodiscard]] std::vector<double> diag_variance() const {
        std::vector<double> v(theta_swa.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, second_moment[i] - theta_swa[i] * theta_swa[i]);
        return v;
    }
};

/// Constant-rate SGD (momentum, weight decay) from a pre-trained model; one snapshot per step.
inline SwagPosterior swag_fit(const FlowMapModel& model, const FlowMapDataset& ds, const SwagConfig& cfg, std::uint64_t rng_seed) {
    cfg.validate();
    auto idx = valid_indices(ds);
    if (idx.empty()) throw ArgumentError("swag_fit: dataset has no valid samples");
    FlowMapModel m = model;
    const std::size_t batch = std::min(cfg.batch_size, idx.size());
    SwagPosterior post(m.param_count(), cfg.rank);
    std::mt19937_64 rng(rng_seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t cursor = 0;
    std::vector<Eigen::MatrixXf> vel_w;
    std::vector<Eigen::VectorXf> vel_b;
    for (const auto& L : m.layers) {
        vel_w.push_back(Eigen::MatrixXf::Zero(L.weight.rows(), L.weight.cols()));
        vel_b.push_back(Eigen::VectorXf::Zero(L.bias.size()));
    }
    const bool dropout = m.config.dropout.mode != DropoutMode::none && m.config.dropout.rate > 0.0;
    const auto lr = static_cast<float>(cfg.swag_lr);
    const auto mu = static_cast<float>(cfg.sgd_momentum);
    const auto wd = static_cast<float>(cfg.sgd_weight_decay);
    for (std::size_t step = 0; step < cfg.n_swag_samples; ++step) {
        if (cursor + batch > idx.size()) {
            std::shuffle(idx.begin(), idx.end(), rng);
            cursor = 0;
        }
        Batch b = gather_batch(ds, idx, cursor, batch);
        cursor += batch;
        FlowMapModel::Cache cache;
        FlowMapModel::Masks masks;
        if (dropout) masks = m.sample_masks(rng, b.start.cols());
        Eigen::MatrixXf pred = m.forward(b.start, b.cycle, dropout ? &masks : nullptr, &cache);
        auto [loss, g] = loss_and_grad(pred, b.target, Loss::l1);
        if (!std::isfinite(loss)) throw TrainingError("swag_fit: non-finite loss at step " + std::to_string(step));
        const auto grads = m.backward(g, cache);
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            auto& L = m.layers[l];
            vel_w[l] = mu * vel_w[l] + grads[l].weight + wd * L.weight;
            vel_b[l] = mu * vel_b[l] + grads[l].bias + wd * L.bias;
            L.weight -= lr * vel_w[l];
            L.bias -= lr * vel_b[l];
        }
        if (!m.finite()) throw TrainingError("swag_fit: parameters became non-finite at step " + std::to_string(step));
        post.collect(m.flatten());
    }
    return post;
}

/// theta = theta_swa + scale/sqrt(2) * sqrt(diag) .* z1 + scale/sqrt(2(K-1)) * D z2, with K
/// the number of stored deviation columns. Draw i uses its own stream (rng_seed, i).
inline std::vector<double> swag_draw_one(const SwagPosterior& post, double scale, std::uint64_t rng_seed, std::size_t index) {
    const std::size_t n = post.theta_swa.size();
    const std::size_t k = post.deviations.size();
    const bool low_rank = k >= 2;
    std::mt19937_64 rng(stream_seed(rng_seed, index, 0x5a));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto var = post.diag_variance();
    std::vector<double> out(post.theta_swa);
    const double a = scale / std::sqrt(2.0);
    for (std::size_t i = 0; i < n; ++i) out[i] += a * std::sqrt(var[i]) * normal(rng);
    if (low_rank) {
        const double b = scale / std::sqrt(2.0 * static_cast<double>(k - 1));
        for (std::size_t c = 0; c < k; ++c) {
            const double z = b * normal(rng);
            const auto& col = post.deviations[c];
            for (std::size_t i = 0; i < n; ++i) out[i] += z * col[i];
        }
    }
    return out;
}

inline std::vector<std::vector<double>> swag_draw(const SwagPosterior& post, std::size_t n_draws, double scale,
                                                  std::uint64_t rng_seed, unsigned workers = 1) {
    if (post.snapshots_seen < 2) throw ArgumentError("swag_draw: posterior needs at least 2 snapshots");
    if (post.deviations.size() < 2 && post.rank > 0)
        log_warning("swag_draw: fewer than 2 deviation columns, falling back to the diagonal covariance");
    std::vector<std::vector<double>> out(n_draws);
    parallel_for(n_draws, workers, [&](std::size_t i) { out[i] = swag_draw_one(post, scale, rng_seed, i); });
    return out;
}

/// Virtual ensemble: one member per weight draw. With MeanMode::base the mean path is the
/// prediction of the undisturbed SWA weights.
inline std::vector<TrajectoryEnsemble> swag_sample_trajectories(const FlowMapSurrogate& tmpl, const SwagPosterior& post,
                                                                const std::vector<Vec3>& seeds, int n_steps, std::size_t n_draws,
                                                                std::uint64_t rng_seed, double scale = 1.0,
                                                                MeanMode mean_mode = MeanMode::base,
                                                                unsigned workers = default_workers()) {
    if (n_draws < 2) throw ArgumentError("swag_sample_trajectories: need at least 2 draws");
    if (post.theta_swa.size() != tmpl.model.param_count()) throw ArgumentError("swag_sample_trajectories: posterior does not match model");
    if (post.snapshots_seen < 2) throw ArgumentError("swag_sample_trajectories: posterior needs at least 2 snapshots");
    if (post.deviations.size() < 2 && post.rank > 0)
        log_warning("swag_sample_trajectories: fewer than 2 deviation columns, using the diagonal covariance only");
    const Normalization norm = tmpl.normalization();
    std::vector<std::vector<Path>> by_member(n_draws);
    parallel_for(n_draws, workers, [&](std::size_t k) {
        FlowMapModel m = tmpl.model;
        m.assign(swag_draw_one(post, scale, rng_seed, k));
        by_member[k] = predict_paths(m, norm, tmpl.n_cycles, seeds, n_steps);
    });
    std::vector<Path> base;
    if (mean_mode == MeanMode::base) {
        FlowMapModel m = tmpl.model;
        m.assign(post.theta_swa);
        base = predict_paths(m, norm, tmpl.n_cycles, seeds, n_steps);
    }
    return detail::assemble(seeds, by_member, &base, tmpl.delta, n_steps, UqMethod::swag, mean_mode);
}

}  // namespace utube
