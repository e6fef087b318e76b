#pragma once

#include "common.hpp"
#include "dataset.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace utube {

enum class DropoutMode : std::uint8_t { none = 0, all_layers = 1, last_layer = 2 };

inline DropoutMode parse_dropout_mode(std::string_view s) {
    if (s == "none") return DropoutMode::none;
    if (s == "all" || s == "all_layers") return DropoutMode::all_layers;
    if (s == "last" || s == "last_layer") return DropoutMode::last_layer;
    throw ArgumentError("unknown dropout mode '" + std::string(s) + "'");
}

inline std::string_view to_string(DropoutMode m) {
    switch (m) {
        case DropoutMode::none: return "none";
        case DropoutMode::all_layers: return "all";
        case DropoutMode::last_layer: return "last";
    }
    return "none";
}

/// `linear` exists for gradient-check stubs only; production models use `sine`.
enum class Activation : std::uint8_t { sine = 0, linear = 1 };

struct DropoutConfig {
    DropoutMode mode = DropoutMode::none;
    double rate = 0.0;
    [[nodiscard]] bool active() const { return mode != DropoutMode::none && rate > 0.0; }
    friend bool operator==(const DropoutConfig&, const DropoutConfig&) = default;
};

struct ModelConfig {
    int encoder_layers = 4;
    int decoder_layers = 4;
    int latent_dim = 64;
    int encoder_width = 0;  ///< 0 -> latent_dim / 2
    int decoder_width = 0;  ///< 0 -> latent_dim
    Activation activation = Activation::sine;
    double omega0 = 30.0;
    DropoutConfig dropout{};

    [[nodiscard]] int enc_width() const { return encoder_width > 0 ? encoder_width : latent_dim / 2; }
    [[nodiscard]] int dec_width() const { return decoder_width > 0 ? decoder_width : latent_dim; }
    [[nodiscard]] int layer_count() const { return 2 * encoder_layers + decoder_layers; }

    void validate() const {
        if (encoder_layers < 1) throw ConfigError("encoder_layers must be >= 1");
        if (decoder_layers < 1) throw ConfigError("decoder_layers must be >= 1");
        if (latent_dim < 2 || latent_dim % 2 != 0) throw ConfigError("latent_dim must be even and >= 2");
        if (encoder_width < 0 || decoder_width < 0) throw ConfigError("layer widths must be non-negative");
        if (enc_width() < 1 || dec_width() < 1) throw ConfigError("layer widths must be >= 1");
        if (!(omega0 > 0.0)) throw ConfigError("sine frequency omega0 must be positive");
        if (!(dropout.rate >= 0.0 && dropout.rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    }

    /// Same layer shapes (dropout and frequency may differ).
    [[nodiscard]] bool same_shape(const ModelConfig& o) const {
        return encoder_layers == o.encoder_layers && decoder_layers == o.decoder_layers && latent_dim == o.latent_dim &&
               enc_width() == o.enc_width() && dec_width() == o.dec_width();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Layer shape table: the start branch (3 -> ... -> latent/2), the cycle branch
/// (1 -> ... -> latent/2), then the decoder (latent -> ... -> 3). Every layer except the
/// decoder's last is followed by the activation.
struct LayerShape {
    int in = 0;
    int out = 0;
    bool activated = true;
};

inline std::vector<LayerShape> layer_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<LayerShape> shapes;
    const int half = cfg.latent_dim / 2;
    for (int input : {3, 1}) {
        for (int l = 0; l < cfg.encoder_layers; ++l) {
            const int in = l == 0 ? input : cfg.enc_width();
            const int out = l == cfg.encoder_layers - 1 ? half : cfg.enc_width();
            shapes.push_back({in, out, true});
        }
    }
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        const int in = l == 0 ? cfg.latent_dim : cfg.dec_width();
        const bool last = l == cfg.decoder_layers - 1;
        shapes.push_back({in, last ? 3 : cfg.dec_width(), !last});
    }
    return shapes;
}

inline std::size_t parameter_count(const ModelConfig& cfg) {
    std::size_t n = 0;
    for (const auto& s : layer_shapes(cfg)) n += static_cast<std::size_t>(s.out) * static_cast<std::size_t>(s.in + 1);
    return n;
}

enum class Loss : std::uint8_t { l1 = 0, l2 = 1 };

/// Encoder-decoder MLP flow map. Columns of every batch matrix are samples.
template <typename T>
class Mlp {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    struct Layer {
        Mat weight;  // out x in
        Vec bias;
        bool activated = true;
    };

    /// One multiplicative mask per dropout-capable layer: either a column (shared by all
    /// samples of a batch) or a full out x batch matrix. Entries are 0 or 1/(1-rate).
    struct Masks {
        std::vector<Mat> per_layer;
    };

    struct Cache {
        std::vector<Mat> input;   // layer input
        std::vector<Mat> phase;   // omega0 * (W x + b) for activated layers, W x + b otherwise
        std::vector<Mat> masks;   // empty when the layer had no dropout
    };

    ModelConfig config{};
    std::vector<Layer> layers;

    Mlp() = default;

    explicit Mlp(const ModelConfig& cfg) : config(cfg) {
        for (const auto& s : layer_shapes(cfg)) layers.push_back({Mat::Zero(s.out, s.in), Vec::Zero(s.out), s.activated});
    }

    /// Sine-aware uniform initialization: the first layer of each branch draws weights from
    /// U(-1/fan_in, 1/fan_in), every later layer from U(-sqrt(6/fan_in)/w0, sqrt(6/fan_in)/w0).
    /// Biases use U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    static Mlp init(const ModelConfig& cfg, std::uint64_t rng_seed) {
        Mlp m(cfg);
        std::mt19937_64 rng(rng_seed);
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            auto& L = m.layers[l];
            const double fan_in = static_cast<double>(L.weight.cols());
            const bool first = m.is_branch_first(l);
            const double wb = first ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / cfg.omega0;
            const double bb = 1.0 / std::sqrt(fan_in);
            std::uniform_real_distribution<double> wd(-wb, wb), bd(-bb, bb);
            for (Eigen::Index j = 0; j < L.weight.cols(); ++j)
                for (Eigen::Index i = 0; i < L.weight.rows(); ++i) L.weight(i, j) = static_cast<T>(wd(rng));
            for (Eigen::Index i = 0; i < L.bias.size(); ++i) L.bias(i) = static_cast<T>(bd(rng));
        }
        return m;
    }

    [[nodiscard]] bool is_branch_first(std::size_t l) const {
        const auto e = static_cast<std::size_t>(config.encoder_layers);
        return l == 0 || l == e;
    }

    [[nodiscard]] std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& L : layers) n += static_cast<std::size_t>(L.weight.size() + L.bias.size());
        return n;
    }

    template <typename U>
    [[nodiscard]] Mlp<U> cast() const {
        Mlp<U> out;
        out.config = config;
        for (const auto& L : layers) out.layers.push_back({L.weight.template cast<U>(), L.bias.template cast<U>(), L.activated});
        return out;
    }

    /// Layers followed by dropout under the configured mode.
    [[nodiscard]] std::vector<bool> dropout_layers() const {
        std::vector<bool> on(layers.size(), false);
        if (config.dropout.mode == DropoutMode::none) return on;
        if (config.dropout.mode == DropoutMode::all_layers) {
            for (std::size_t l = 0; l < layers.size(); ++l) on[l] = layers[l].activated;
            return on;
        }
        const auto e = static_cast<std::size_t>(config.encoder_layers);
        if (config.decoder_layers >= 2) {
            on[layers.size() - 2] = true;
        } else {
            on[e - 1] = true;
            on[2 * e - 1] = true;
        }
        return on;
    }

    /// Bernoulli keep-masks scaled by 1/(1-rate). `columns` = 1 gives one mask shared by a
    /// whole batch (one sub-network); otherwise each sample gets its own mask.
    [[nodiscard]] Masks sample_masks(std::mt19937_64& rng, Eigen::Index columns) const {
        Masks m;
        m.per_layer.resize(layers.size());
        const double rate = config.dropout.rate;
        const auto on = dropout_layers();
        const T keep = static_cast<T>(1.0 / (1.0 - rate));
        // Each 64-bit draw yields two 32-bit uniforms compared against rate * 2^32.
        const auto threshold = static_cast<std::uint64_t>(rate * 4294967296.0);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (!on[l]) continue;
            Mat mask(layers[l].weight.rows(), columns);
            T* p = mask.data();
            const Eigen::Index n = mask.size();
            for (Eigen::Index i = 0; i < n; i += 2) {
                const std::uint64_t r = rng();
                p[i] = (r & 0xffffffffULL) < threshold ? T(0) : keep;
                if (i + 1 < n) p[i + 1] = (r >> 32) < threshold ? T(0) : keep;
            }
            m.per_layer[l] = std::move(mask);
        }
        return m;
    }

    /// start: 3 x B, cycle: 1 x B (normalized), returns 3 x B. `masks` may be null (no dropout).
    [[nodiscard]] Mat forward(const Mat& start, const Mat& cycle, const Masks* masks = nullptr, Cache* cache = nullptr) const {
        const auto e = static_cast<std::size_t>(config.encoder_layers);
        if (cache) {
            cache->input.assign(layers.size(), Mat());
            cache->phase.assign(layers.size(), Mat());
            cache->masks.assign(layers.size(), Mat());
        }
        Mat a = run_range(0, e, start, masks, cache);
        Mat b = run_range(e, 2 * e, cycle, masks, cache);
        Mat latent(a.rows() + b.rows(), a.cols());
        latent.topRows(a.rows()) = a;
        latent.bottomRows(b.rows()) = b;
        return run_range(2 * e, layers.size(), latent, masks, cache);
    }

    /// Gradient of the loss w.r.t. every parameter, given dL/d(output) and the cache of the
    /// forward pass that produced the output. Layout matches `layers`.
    [[nodiscard]] std::vector<Layer> backward(const Mat& grad_out, const Cache& cache) const {
        std::vector<Layer> grads(layers.size());
        const auto e = static_cast<std::size_t>(config.encoder_layers);
        Mat g_latent = back_range(2 * e, layers.size(), grad_out, cache, grads);
        const Eigen::Index half = config.latent_dim / 2;
        Mat g_a = g_latent.topRows(half);
        Mat g_b = g_latent.bottomRows(half);
        (void)back_range(0, e, g_a, cache, grads);
        (void)back_range(e, 2 * e, g_b, cache, grads);
        return grads;
    }

    /// Single-sample convenience wrapper in normalized coordinates.
    [[nodiscard]] Eigen::Matrix<T, 3, 1> predict(const Eigen::Matrix<T, 3, 1>& start, T cycle, const Masks* masks = nullptr) const {
        Mat s = start;
        Mat c(1, 1);
        c(0, 0) = cycle;
        Mat y = forward(s, c, masks);
        return y.col(0);
    }

    [[nodiscard]] std::vector<T> flatten() const {
        std::vector<T> out;
        out.reserve(param_count());
        for (const auto& L : layers) {
            out.insert(out.end(), L.weight.data(), L.weight.data() + L.weight.size());
            out.insert(out.end(), L.bias.data(), L.bias.data() + L.bias.size());
        }
        return out;
    }

    template <typename U>
    void assign(const std::vector<U>& flat) {
        if (flat.size() != param_count()) throw ArgumentError("Mlp::assign: parameter vector has the wrong length");
        std::size_t k = 0;
        for (auto& L : layers) {
            for (Eigen::Index i = 0; i < L.weight.size(); ++i) L.weight.data()[i] = static_cast<T>(flat[k++]);
            for (Eigen::Index i = 0; i < L.bias.size(); ++i) L.bias.data()[i] = static_cast<T>(flat[k++]);
        }
    }

    [[nodiscard]] bool finite() const {
        for (const auto& L : layers)
            if (!L.weight.allFinite() || !L.bias.allFinite()) return false;
        return true;
    }

    /// Validates that stored layer shapes chain from (3 + 1) inputs to 3 outputs.
    void check_shapes() const {
        const auto shapes = layer_shapes(config);
        if (shapes.size() != layers.size()) throw ConfigError("layer count does not match the configuration");
        for (std::size_t l = 0; l < shapes.size(); ++l) {
            if (layers[l].weight.rows() != shapes[l].out || layers[l].weight.cols() != shapes[l].in ||
                layers[l].bias.size() != shapes[l].out || layers[l].activated != shapes[l].activated)
                throw ConfigError("layer " + std::to_string(l) + " shape does not match the configuration");
        }
    }

private:
    Mat run_range(std::size_t from, std::size_t to, Mat x, const Masks* masks, Cache* cache) const {
        const T w0 = static_cast<T>(config.omega0);
        const bool sine = config.activation == Activation::sine;
        for (std::size_t l = from; l < to; ++l) {
            const auto& L = layers[l];
            Mat z = L.weight * x;
            z.colwise() += L.bias;
            if (cache) cache->input[l] = std::move(x);
            if (L.activated) {
                if (sine) z *= w0;
                Mat a = sine ? Mat(z.array().sin().matrix()) : z;
                if (masks && l < masks->per_layer.size() && masks->per_layer[l].size() > 0) {
                    const Mat& m = masks->per_layer[l];
                    if (m.cols() == 1)
                        a.array().colwise() *= m.col(0).array();
                    else
                        a.array() *= m.array();
                    if (cache) cache->masks[l] = m;
                }
                if (cache) cache->phase[l] = std::move(z);
                x = std::move(a);
            } else {
                if (cache) cache->phase[l] = z;
                x = std::move(z);
            }
        }
        return x;
    }

    Mat back_range(std::size_t from, std::size_t to, Mat g, const Cache& cache, std::vector<Layer>& grads) const {
        const T w0 = static_cast<T>(config.omega0);
        const bool sine = config.activation == Activation::sine;
        for (std::size_t l = to; l-- > from;) {
            const auto& L = layers[l];
            if (L.activated) {
                const Mat& m = cache.masks[l];
                if (m.size() > 0) {
                    if (m.cols() == 1)
                        g.array().colwise() *= m.col(0).array();
                    else
                        g.array() *= m.array();
                }
                if (sine) g.array() *= cache.phase[l].array().cos() * w0;
            }
            grads[l].weight = g * cache.input[l].transpose();
            grads[l].bias = g.rowwise().sum();
            grads[l].activated = L.activated;
            g = L.weight.transpose() * g;
        }
        return g;
    }
};

using FlowMapModel = Mlp<float>;

inline FlowMapModel init_model(const ModelConfig& cfg, std::uint64_t rng_seed) { return FlowMapModel::init(cfg, rng_seed); }

/// Loss value and its gradient w.r.t. the prediction, averaged over all 3 x B entries.
template <typename Mat>
std::pair<double, Mat> loss_and_grad(const Mat& pred, const Mat& target, Loss loss) {
    using T = typename Mat::Scalar;
    const double count = static_cast<double>(pred.size());
    Mat diff = pred - target;
    if (loss == Loss::l1) {
        const double value = static_cast<double>(diff.array().abs().template cast<double>().sum()) / count;
        Mat g = diff.unaryExpr([](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); }) / static_cast<T>(count);
        return {value, g};
    }
    const double value = 0.5 * static_cast<double>(diff.array().square().template cast<double>().sum()) / count;
    Mat g = diff / static_cast<T>(count);
    return {value, g};
}

inline double l1_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
    return (pred - target).array().abs().sum() / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------------------
// Training

struct OptimizerConfig {
    double lr = 1e-4;
    double lr_final = 1e-5;  ///< geometric decay from lr to lr_final over the run
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainReport {
    std::size_t iterations = 0;
    double initial_probe_L1 = 0.0;
    double final_train_L1 = 0.0;  ///< probe-batch L1 (normalized units) after training
    double eval_abs_error = -1.0; ///< mean |pred - truth| per coordinate in domain units; < 0 when no eval set
    double wall_time = 0.0;
};

/// Column-stacked batch built from dataset sample indices.
struct Batch {
    Eigen::MatrixXf start, cycle, target;
};

inline Batch gather_batch(const FlowMapDataset& ds, const std::vector<std::size_t>& idx, std::size_t from, std::size_t count) {
    Batch b;
    const auto n = static_cast<Eigen::Index>(count);
    b.start.resize(3, n);
    b.cycle.resize(1, n);
    b.target.resize(3, n);
    const int cycles = static_cast<int>(ds.n_cycles);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& s = ds.samples[idx[from + static_cast<std::size_t>(k)]];
        for (int a = 0; a < 3; ++a) {
            b.start(a, k) = s.start[static_cast<std::size_t>(a)];
            b.target(a, k) = s.end[static_cast<std::size_t>(a)];
        }
        b.cycle(0, k) = static_cast<float>(normalize_cycle(s.cycle, cycles));
    }
    return b;
}

inline std::vector<std::size_t> valid_indices(const FlowMapDataset& ds) {
    std::vector<std::size_t> idx;
    idx.reserve(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].valid()) idx.push_back(i);
    return idx;
}

/// Mean absolute coordinate difference between model predictions and the dataset's valid
/// samples, measured in the original domain units.
inline double evaluate_abs_error(const FlowMapModel& model, const FlowMapDataset& eval) {
    const auto idx = valid_indices(eval);
    if (idx.empty()) throw ArgumentError("evaluate_abs_error: no valid samples");
    const Vec3 scale = eval.normalization().scale;
    double total = 0.0;
    constexpr std::size_t chunk = 4096;
    for (std::size_t from = 0; from < idx.size(); from += chunk) {
        const std::size_t count = std::min(chunk, idx.size() - from);
        Batch b = gather_batch(eval, idx, from, count);
        Eigen::MatrixXf pred = model.forward(b.start, b.cycle);
        Eigen::MatrixXd diff = (pred - b.target).cast<double>();
        for (int a = 0; a < 3; ++a) total += diff.row(a).cwiseAbs().sum() * scale[a];
    }
    return total / (3.0 * static_cast<double>(idx.size()));
}

namespace detail {

struct AdamState {
    std::vector<Eigen::MatrixXf> mw, vw;
    std::vector<Eigen::VectorXf> mb, vb;
    explicit AdamState(const FlowMapModel& m) {
        for (const auto& L : m.layers) {
            mw.push_back(Eigen::MatrixXf::Zero(L.weight.rows(), L.weight.cols()));
            vw.push_back(Eigen::MatrixXf::Zero(L.weight.rows(), L.weight.cols()));
            mb.push_back(Eigen::VectorXf::Zero(L.bias.size()));
            vb.push_back(Eigen::VectorXf::Zero(L.bias.size()));
        }
    }
};

template <typename Derived, typename G>
void adam_update(Eigen::MatrixBase<Derived>& p, const G& g, Eigen::MatrixBase<Derived>& m, Eigen::MatrixBase<Derived>& v,
                 float b1, float b2, float step, float eps) {
    m.derived() = b1 * m.derived() + (1.0f - b1) * g;
    v.derived() = b2 * v.derived() + (1.0f - b2) * g.cwiseProduct(g);
    p.derived().array() -= step * m.derived().array() / (v.derived().array().sqrt() + eps);
}

}  // namespace detail

/// Minibatch L1 training with Adam. Each iteration draws the next slice of a permutation of
/// the valid samples; the permutation is reshuffled whenever it is exhausted.
inline TrainReport train(FlowMapModel& model, const FlowMapDataset& ds, std::size_t iters, std::size_t batch_size,
                         const OptimizerConfig& opt, std::uint64_t rng_seed, const FlowMapDataset* eval = nullptr) {
    const auto t_begin = std::chrono::steady_clock::now();
    auto idx = valid_indices(ds);
    if (idx.empty()) throw ArgumentError("train: dataset has no valid samples");
    if (batch_size == 0) throw ArgumentError("train: batch_size must be positive");
    model.check_shapes();
    batch_size = std::min(batch_size, idx.size());

    std::mt19937_64 rng(rng_seed);
    std::vector<std::size_t> probe_idx = idx;
    std::shuffle(probe_idx.begin(), probe_idx.end(), rng);
    const Batch probe = gather_batch(ds, probe_idx, 0, std::min<std::size_t>(1024, probe_idx.size()));
    auto probe_loss = [&] {
        Eigen::MatrixXf pred = model.forward(probe.start, probe.cycle);
        return (pred - probe.target).cast<double>().array().abs().sum() / static_cast<double>(pred.size());
    };

    TrainReport rep;
    rep.initial_probe_L1 = probe_loss();
    rep.iterations = iters;
    const bool dropout = model.config.dropout.mode != DropoutMode::none && model.config.dropout.rate > 0.0;
    detail::AdamState st(model);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t cursor = 0;
    const auto b1 = static_cast<float>(opt.beta1), b2 = static_cast<float>(opt.beta2);
    for (std::size_t it = 0; it < iters; ++it) {
        if (cursor + batch_size > idx.size()) {
            std::shuffle(idx.begin(), idx.end(), rng);
            cursor = 0;
        }
        Batch b = gather_batch(ds, idx, cursor, batch_size);
        cursor += batch_size;

        FlowMapModel::Cache cache;
        FlowMapModel::Masks masks;
        if (dropout) masks = model.sample_masks(rng, b.start.cols());
        Eigen::MatrixXf pred = model.forward(b.start, b.cycle, dropout ? &masks : nullptr, &cache);
        auto [loss, g] = loss_and_grad(pred, b.target, Loss::l1);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "train: non-finite loss at iteration " << it << " (lr " << opt.lr << ", batch " << batch_size << ")";
            throw TrainingError(msg.str());
        }
        const auto grads = model.backward(g, cache);

        const double frac = iters > 1 ? static_cast<double>(it) / static_cast<double>(iters - 1) : 0.0;
        const double lr = opt.lr * std::pow(opt.lr_final / opt.lr, frac);
        const double t = static_cast<double>(it + 1);
        const auto step = static_cast<float>(lr * std::sqrt(1.0 - std::pow(opt.beta2, t)) / (1.0 - std::pow(opt.beta1, t)));
        const auto eps = static_cast<float>(opt.eps);
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            detail::adam_update(model.layers[l].weight, grads[l].weight, st.mw[l], st.vw[l], b1, b2, step, eps);
            detail::adam_update(model.layers[l].bias, grads[l].bias, st.mb[l], st.vb[l], b1, b2, step, eps);
        }
    }
    if (!model.finite()) throw TrainingError("train: parameters became non-finite");
    rep.final_train_L1 = probe_loss();
    if (eval) rep.eval_abs_error = evaluate_abs_error(model, *eval);
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    return rep;
}

// ---------------------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
    double epsilon = 1e-7;
    Loss loss = Loss::l1;
    std::size_t probes = 64;  ///< random parameter subset size (0 = all parameters)
    std::uint64_t rng_seed = 0;
    const Mlp<double>::Masks* masks = nullptr;
};

/// Max over a random parameter subset of |analytic - central difference| /
/// (|analytic| + |central difference| + 1e-12). Backprop runs in double.
inline double gradient_check(const Mlp<double>& model, const Eigen::MatrixXd& start, const Eigen::MatrixXd& cycle,
                             const Eigen::MatrixXd& target, const GradCheckOptions& opt = {}) {
    if (!(opt.epsilon >= 1e-7 && opt.epsilon <= 1e-3)) throw ArgumentError("gradient_check: epsilon must lie in [1e-7, 1e-3]");
    Mlp<double>::Cache cache;
    Eigen::MatrixXd pred = model.forward(start, cycle, opt.masks, &cache);
    auto [loss, g] = loss_and_grad(pred, target, opt.loss);
    (void)loss;
    const auto grads = model.backward(g, cache);
    std::vector<double> analytic;
    for (const auto& G : grads) {
        analytic.insert(analytic.end(), G.weight.data(), G.weight.data() + G.weight.size());
        analytic.insert(analytic.end(), G.bias.data(), G.bias.data() + G.bias.size());
    }
    const std::vector<double> base = model.flatten();
    std::vector<std::size_t> which(base.size());
    std::iota(which.begin(), which.end(), 0);
    if (opt.probes > 0 && opt.probes < which.size()) {
        std::mt19937_64 rng(opt.rng_seed);
        std::shuffle(which.begin(), which.end(), rng);
        which.resize(opt.probes);
    }
    // Reference differences run in extended precision: in double, cancellation between the two
    // loss values leaves ~eps_mach * loss / epsilon of noise, which swamps small components.
    using Ld = long double;
    using MatLd = Eigen::Matrix<Ld, Eigen::Dynamic, Eigen::Dynamic>;
    Mlp<Ld> probe = model.template cast<Ld>();
    const MatLd s_ld = start.cast<Ld>(), c_ld = cycle.cast<Ld>(), t_ld = target.cast<Ld>();
    typename Mlp<Ld>::Masks masks_ld;
    if (opt.masks)
        for (const auto& m : opt.masks->per_layer) masks_ld.per_layer.push_back(m.cast<Ld>());
    auto loss_at = [&](const std::vector<Ld>& params) {
        probe.assign(params);
        const MatLd d = probe.forward(s_ld, c_ld, opt.masks ? &masks_ld : nullptr) - t_ld;
        const Ld n = static_cast<Ld>(d.size());
        return opt.loss == Loss::l1 ? d.array().abs().sum() / n : Ld(0.5) * d.array().square().sum() / n;
    };
    double worst = 0.0;
    std::vector<Ld> params(base.begin(), base.end());
    const Ld eps = opt.epsilon;
    for (std::size_t k : which) {
        params[k] = static_cast<Ld>(base[k]) + eps;
        const Ld up = loss_at(params);
        params[k] = static_cast<Ld>(base[k]) - eps;
        const Ld down = loss_at(params);
        params[k] = base[k];
        const auto cd = static_cast<double>((up - down) / (2 * eps));
        const double rel = std::abs(analytic[k] - cd) / (std::abs(analytic[k]) + std::abs(cd) + 1e-12);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace utube
