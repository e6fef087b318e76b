#pragma once

#include "color.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "sobol.hpp"
#include "tube.hpp"
#include "uq.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace utube {

inline constexpr const char* kVersionString = "0.1.0";

struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SeedSpec {
    std::vector<Vec3> explicit_seeds;
    Box box{};
    std::size_t count = 0;
    SeedGenerator generator = SeedGenerator::sobol;

    [[nodiscard]] bool is_explicit() const { return !explicit_seeds.empty(); }
};

/// One interactive request: where to seed, how to sample, how to mesh and color.
struct TubeQuery {
    SeedSpec seeds;
    UqMethod method = UqMethod::mc_dropout;
    std::string model;                ///< dropout / swag; empty = first suitable model
    std::vector<std::string> models;  ///< deep ensemble; empty = first n_samples models
    std::shared_ptr<const std::vector<TrajectoryEnsemble>> ensemble;  ///< external
    std::string ensemble_source;
    std::size_t n_samples = 50;
    int n_steps = 0;  ///< 0 = model's last cycle
    double tau = 4.0;
    int m = 32;
    RadiusConvention radius_convention = RadiusConvention::stddev;
    bool include_mean_path = true;
    bool end_cap = false;
    MeanMode mean_mode = MeanMode::base;
    double swag_scale = 1.0;
    ColormapConfig colormap;
    std::uint64_t rng_seed = 0;
    bool timestamp = false;

    void validate() const {
        if (n_samples < 2) throw ArgumentError("n_samples must be >= 2 (minimum member count is 2)");
        if (n_steps < 0 || (method == UqMethod::external && ensemble && !ensemble->empty() && ensemble->front().n_steps < 1))
            throw ArgumentError("n_steps must be >= 1");
        if (!(tau >= 2.0)) throw ArgumentError("tau must be >= 2");
        if (m < 3) throw ArgumentError("m must be >= 3");
        colormap.validate();
        if (method == UqMethod::external) {
            if (!ensemble) throw ArgumentError("method 'external' needs an ensemble");
            for (const auto& e : *ensemble)
                if (e.members.size() < 2) throw ArgumentError("ensemble members per seed must be >= 2 (minimum member count is 2)");
        } else {
            if (!seeds.is_explicit()) {
                if (seeds.count < 1) throw ArgumentError("seed count must be >= 1");
                if (!seeds.box.ordered()) throw ArgumentError("seed box min must not exceed max");
            }
            if (!(swag_scale >= 0.0)) throw ArgumentError("swag_scale must be >= 0");
        }
    }

    [[nodiscard]] TubeParams tube_params() const {
        TubeParams p;
        p.tau = tau;
        p.m = m;
        p.radius_convention = radius_convention;
        p.include_mean_path = include_mean_path;
        p.end_cap = end_cap;
        return p;
    }

    [[nodiscard]] std::vector<Vec3> seed_points() const {
        if (seeds.is_explicit()) return seeds.explicit_seeds;
        return make_seeds(seeds.generator, seeds.box, seeds.count, rng_seed).seeds;
    }
};

inline json box_json(const Box& b) { return {{"min", io::point_json(b.lo)}, {"max", io::point_json(b.hi)}}; }

inline Box box_from_json(const json& j) {
    if (j.is_array() && j.size() == 6) {
        Box b;
        for (int a = 0; a < 3; ++a) {
            b.lo[a] = j[static_cast<std::size_t>(2 * a)].get<double>();
            b.hi[a] = j[static_cast<std::size_t>(2 * a + 1)].get<double>();
        }
        return b;
    }
    if (!j.is_object() || !j.contains("min") || !j.contains("max"))
        throw ArgumentError("box must be {min:[x,y,z], max:[x,y,z]} or [xmin,xmax,ymin,ymax,zmin,zmax]");
    return {io::point_from_json(j["min"], "box.min"), io::point_from_json(j["max"], "box.max")};
}

inline std::vector<Rgb> palette_from_json(const json& j) {
    if (!j.is_array()) throw ArgumentError("palette must be an array of [r,g,b] stops");
    std::vector<Rgb> out;
    for (const auto& s : j) {
        if (!s.is_array() || s.size() != 3) throw ArgumentError("palette stops must be [r,g,b]");
        Rgb c{s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
        for (double v : c)
            if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("palette components must lie in [0,1]");
        out.push_back(c);
    }
    if (out.size() < 2) throw ArgumentError("palette needs at least 2 stops");
    return out;
}

/// NAME of a built-in palette or path to a JSON file holding an array of RGB stops.
inline void set_palette(ColormapConfig& c, const std::string& name_or_file) {
    if (const auto* p = palettes::by_name(name_or_file)) {
        c.palette = *p;
        c.palette_name = name_or_file;
        return;
    }
    if (!std::filesystem::exists(name_or_file)) throw ArgumentError("unknown palette '" + name_or_file + "'");
    c.palette = palette_from_json(json::parse(io::read_file(name_or_file)));
    c.palette_name = name_or_file;
}

inline json colormap_json(const ColormapConfig& c) {
    json j{{"palette", c.palette_name},
           {"suppress_color", to_hex_color(c.suppress_color)},
           {"percentile", c.magnitude_percentile},
           {"ceiling", c.magnitude_ceiling}};
    if (!palettes::by_name(c.palette_name)) {
        json stops = json::array();
        for (const auto& s : c.palette) stops.push_back({s[0], s[1], s[2]});
        j["stops"] = stops;
    }
    return j;
}

inline ColormapConfig colormap_from_json(const json& j) {
    ColormapConfig c;
    if (j.contains("stops")) {
        c.palette = palette_from_json(j["stops"]);
        c.palette_name = j.value("palette", std::string("custom"));
    } else if (j.contains("palette")) {
        const auto name = j["palette"].get<std::string>();
        const auto* p = palettes::by_name(name);
        if (!p) throw ArgumentError("unknown palette '" + name + "'");
        c.palette = *p;
        c.palette_name = name;
    }
    if (j.contains("suppress_color")) c.suppress_color = parse_hex_color(j["suppress_color"].get<std::string>());
    c.magnitude_percentile = j.value("percentile", c.magnitude_percentile);
    c.magnitude_ceiling = j.value("ceiling", c.magnitude_ceiling);
    return c;
}

/// Normalized form of the query; together with the model files it regenerates the meshes.
inline json query_to_json(const TubeQuery& q) {
    json j;
    if (q.method == UqMethod::external) {
        j["ensemble_source"] = q.ensemble_source;
    } else if (q.seeds.is_explicit()) {
        json s = json::array();
        for (const auto& p : q.seeds.explicit_seeds) s.push_back(io::point_json(p));
        j["seeds"] = s;
    } else {
        j["seeds"] = {{"box", box_json(q.seeds.box)},
                      {"count", q.seeds.count},
                      {"generator", q.seeds.generator == SeedGenerator::sobol          ? "sobol"
                                    : q.seeds.generator == SeedGenerator::uniform_grid ? "grid"
                                                                                       : "random"}};
    }
    j["method"] = std::string(to_string(q.method));
    if (q.method == UqMethod::deep_ensemble) j["models"] = q.models;
    if (q.method == UqMethod::mc_dropout || q.method == UqMethod::swag) j["model"] = q.model;
    j["n_samples"] = q.n_samples;
    if (q.n_steps > 0) j["n_steps"] = q.n_steps;
    j["tau"] = q.tau;
    j["m"] = q.m;
    j["radius_convention"] = std::string(to_string(q.radius_convention));
    j["include_mean_path"] = q.include_mean_path;
    j["end_cap"] = q.end_cap;
    j["mean_mode"] = q.mean_mode == MeanMode::base ? "base" : "member_average";
    if (q.method == UqMethod::swag) j["swag_scale"] = q.swag_scale;
    j["colormap"] = colormap_json(q.colormap);
    j["rng_seed"] = q.rng_seed;
    return j;
}

inline TubeQuery query_from_json(const json& j) {
    if (!j.is_object()) throw ArgumentError("query must be a JSON object");
    try {
        TubeQuery q;
        q.method = parse_uq_method(j.value("method", std::string("dropout")));
        if (j.contains("seeds")) {
            const auto& s = j["seeds"];
            if (s.is_array()) {
                for (std::size_t i = 0; i < s.size(); ++i)
                    q.seeds.explicit_seeds.push_back(io::point_from_json(s[i], "seeds[" + std::to_string(i) + "]"));
                if (q.seeds.explicit_seeds.empty()) throw ArgumentError("seed list is empty");
            } else {
                q.seeds.box = box_from_json(s.at("box"));
                q.seeds.count = s.at("count").get<std::size_t>();
                q.seeds.generator = parse_seed_generator(s.value("generator", std::string("sobol")));
            }
        } else if (q.method != UqMethod::external) {
            throw ArgumentError("query needs 'seeds'");
        }
        if (j.contains("ensemble")) {
            q.ensemble = std::make_shared<const std::vector<TrajectoryEnsemble>>(io::ensembles_from_json(j["ensemble"]));
            q.ensemble_source = j.value("ensemble_source", std::string("inline"));
        }
        q.model = j.value("model", std::string());
        if (j.contains("models")) q.models = j["models"].get<std::vector<std::string>>();
        if (j.contains("n_samples")) {
            const auto k = j["n_samples"].get<long long>();
            if (k < 2) throw ArgumentError("n_samples must be >= 2 (minimum member count is 2)");
            q.n_samples = static_cast<std::size_t>(k);
        }
        q.n_steps = j.value("n_steps", 0);
        if (j.contains("n_steps") && q.n_steps < 1) throw ArgumentError("n_steps must be >= 1");
        q.tau = j.value("tau", q.tau);
        q.m = j.value("m", q.m);
        q.radius_convention = parse_radius_convention(j.value("radius_convention", std::string("stddev")));
        q.include_mean_path = j.value("include_mean_path", q.include_mean_path);
        q.end_cap = j.value("end_cap", q.end_cap);
        q.mean_mode = parse_mean_mode(j.value("mean_mode", std::string("base")));
        q.swag_scale = j.value("swag_scale", q.swag_scale);
        if (j.contains("colormap")) q.colormap = colormap_from_json(j["colormap"]);
        q.rng_seed = j.value("rng_seed", std::uint64_t{0});
        q.timestamp = j.value("timestamp", false);
        q.validate();
        return q;
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("malformed query: ") + e.what());
    } catch (const FormatError& e) {
        throw ArgumentError(e.what());
    }
}

// ---------------------------------------------------------------------------------------

struct ModelEntry {
    std::string name;
    FlowMapSurrogate surrogate;
    std::optional<SwagPosterior> posterior;
};

/// Read-only after loading; every query runs on its own copies of mutable state.
class QueryEngine {
public:
    QueryEngine() = default;

    /// Loads NAME.utnn files from `dir`, pairing NAME.utsw posteriors when present.
    static QueryEngine load_dir(const std::filesystem::path& dir) {
        if (!std::filesystem::is_directory(dir)) throw IoError("models directory '" + dir.string() + "' does not exist");
        QueryEngine e;
        std::vector<std::filesystem::path> files;
        for (const auto& f : std::filesystem::directory_iterator(dir))
            if (f.path().extension() == ".utnn") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::optional<SwagPosterior> post;
            auto sw = f;
            sw.replace_extension(".utsw");
            if (std::filesystem::exists(sw)) post = io::load_posterior(sw);
            e.add_model(f.stem().string(), io::load_model(f), std::move(post));
        }
        return e;
    }

    void add_model(std::string name, FlowMapSurrogate s, std::optional<SwagPosterior> post = std::nullopt) {
        if (post && post->theta_swa.size() != s.model.param_count())
            throw FormatError("posterior for '" + name + "' does not match its model");
        entries_.push_back({std::move(name), std::move(s), std::move(post)});
        std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    }

    [[nodiscard]] const std::vector<ModelEntry>& entries() const { return entries_; }

    [[nodiscard]] json models_json() const {
        json out = json::array();
        for (const auto& e : entries_) {
            const auto& c = e.surrogate.model.config;
            out.push_back({{"name", e.name},
                           {"encoder_layers", c.encoder_layers},
                           {"decoder_layers", c.decoder_layers},
                           {"latent_dim", c.latent_dim},
                           {"parameters", e.surrogate.model.param_count()},
                           {"dropout", std::string(to_string(c.dropout.mode)) + ":" + std::to_string(c.dropout.rate)},
                           {"swag", e.posterior.has_value()},
                           {"n_cycles", e.surrogate.n_cycles},
                           {"delta", e.surrogate.delta},
                           {"domain", box_json(e.surrogate.original_box)}});
        }
        return out;
    }

    [[nodiscard]] const ModelEntry& find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e;
        throw NotFoundError("unknown model '" + name + "'");
    }

    /// Resolves defaults in place (model names, n_steps) and samples the ensembles.
    std::vector<TrajectoryEnsemble> ensembles(TubeQuery& q, unsigned workers) const {
        q.validate();
        if (q.method == UqMethod::external) return *q.ensemble;
        const auto seeds = q.seed_points();
        switch (q.method) {
            case UqMethod::deep_ensemble: {
                if (q.models.empty()) {
                    if (entries_.size() < q.n_samples)
                        throw ArgumentError("deep ensemble needs " + std::to_string(q.n_samples) + " models, " +
                                            std::to_string(entries_.size()) + " loaded");
                    for (std::size_t k = 0; k < q.n_samples; ++k) q.models.push_back(entries_[k].name);
                }
                if (q.models.size() != q.n_samples)
                    throw ArgumentError("deep ensemble lists " + std::to_string(q.models.size()) + " models but n_samples is " +
                                        std::to_string(q.n_samples));
                std::vector<const FlowMapSurrogate*> ms;
                for (const auto& n : q.models) ms.push_back(&find(n).surrogate);
                resolve_steps(q, *ms.front());
                return deep_ensemble_sample(ms, seeds, q.n_steps, workers);
            }
            case UqMethod::mc_dropout: {
                const auto& e = pick(q, [](const ModelEntry& m) { return m.surrogate.model.config.dropout.active(); });
                if (!e.surrogate.model.config.dropout.active())
                    throw ArgumentError("model '" + e.name + "' was trained without dropout");
                resolve_steps(q, e.surrogate);
                return mc_dropout_sample(e.surrogate, seeds, q.n_steps, q.n_samples, q.rng_seed, q.mean_mode, workers);
            }
            case UqMethod::swag: {
                const auto& e = pick(q, [](const ModelEntry& m) { return m.posterior.has_value(); });
                if (!e.posterior) throw NotFoundError("no SWAG posterior for model '" + e.name + "'");
                resolve_steps(q, e.surrogate);
                return swag_sample_trajectories(e.surrogate, *e.posterior, seeds, q.n_steps, q.n_samples, q.rng_seed,
                                                q.swag_scale, q.mean_mode, workers);
            }
            case UqMethod::external: break;
        }
        throw ArgumentError("unsupported method");
    }

    [[nodiscard]] io::MeshDocument query(TubeQuery q, unsigned workers) const { return mesh_document(q, ensembles(q, workers), workers); }

    static io::MeshDocument mesh_document(const TubeQuery& q, const std::vector<TrajectoryEnsemble>& es, unsigned workers) {
        io::MeshDocument doc;
        double ceiling = 1.0;
        doc.meshes = build_tubes_parallel(es, q.tube_params(), q.colormap, workers, &ceiling);
        json meta = query_to_json(q);
        if (q.method == UqMethod::external && !es.empty()) meta["n_steps"] = es.front().n_steps;
        meta["colormap"]["resolved_ceiling"] = ceiling;
        meta["colormap"]["ceiling_scope"] = q.colormap.resolved() ? "fixed" : "query";
        meta["n_seeds"] = es.size();
        meta["frame"] = "domain";
        if (q.timestamp) {
            const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
            char buf[32];
            std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
            meta["timestamp"] = buf;
        }
        doc.meta = std::move(meta);
        return doc;
    }

private:
    template <typename Pred>
    const ModelEntry& pick(TubeQuery& q, Pred ok) const {
        if (!q.model.empty()) return find(q.model);
        for (const auto& e : entries_)
            if (ok(e)) {
                q.model = e.name;
                return e;
            }
        throw NotFoundError("no loaded model supports method '" + std::string(to_string(q.method)) + "'");
    }

    static void resolve_steps(TubeQuery& q, const FlowMapSurrogate& s) {
        if (q.n_steps == 0) q.n_steps = static_cast<int>(s.n_cycles) - 1;
        if (q.n_steps < 1) throw ArgumentError("n_steps must be >= 1");
    }

    std::vector<ModelEntry> entries_;
};

// ---------------------------------------------------------------------------------------
// HTTP

struct HttpReply {
    int status = 200;
    std::string body;
};

inline HttpReply error_reply(int status, const std::string& error, const std::string& detail) {
    return {status, json{{"error", error}, {"detail", detail}}.dump()};
}

/// Transport-independent request handling shared by the server and the tests.
inline HttpReply handle_request(const QueryEngine& engine, const std::string& method, const std::string& path,
                                const std::string& body, unsigned workers) {
    try {
        if (method == "GET" && path == "/health") return {200, json{{"status", "ok"}, {"version", kVersionString}}.dump()};
        if (method == "GET" && path == "/models") return {200, json{{"models", engine.models_json()}}.dump()};
        if (method == "POST" && (path == "/query" || path == "/ensemble")) {
            json j;
            try {
                j = json::parse(body);
            } catch (const json::exception& e) {
                return error_reply(400, "invalid_json", e.what());
            }
            TubeQuery q = query_from_json(j);
            if (path == "/query") return {200, io::mesh_document_json(engine.query(q, workers))};
            const auto es = engine.ensembles(q, workers);
            return {200, io::ensembles_to_json(es).dump()};
        }
        return error_reply(404, "not_found", method + " " + path);
    } catch (const NotFoundError& e) {
        return error_reply(404, "unknown_model", e.what());
    } catch (const ArgumentError& e) {
        return error_reply(400, "validation", e.what());
    } catch (const DomainError& e) {
        return error_reply(400, "validation", e.what());
    } catch (const ConfigError& e) {
        return error_reply(400, "validation", e.what());
    } catch (const std::exception& e) {
        return error_reply(500, "internal", e.what());
    }
}

struct ServeConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  ///< 0 = any free port
    unsigned threads = 4;
    unsigned workers = default_workers();
};

class Service {
public:
    Service(std::shared_ptr<const QueryEngine> engine, ServeConfig cfg) : engine_(std::move(engine)), cfg_(cfg) {
        if (cfg_.threads < 1) throw ArgumentError("threads must be >= 1");
        const unsigned threads = cfg_.threads;
        server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
        auto forward = [this](const httplib::Request& req, httplib::Response& res) {
            const HttpReply r = handle_request(*engine_, req.method, req.path, req.body, cfg_.workers);
            res.status = r.status;
            res.set_content(r.body, "application/json");
            res.set_header("Access-Control-Allow-Origin", "*");
        };
        // SO_REUSEADDR only: httplib's default SO_REUSEPORT would let a second server share the port.
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        server_.Get("/health", forward);
        server_.Get("/models", forward);
        server_.Post("/query", forward);
        server_.Post("/ensemble", forward);
        server_.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (!res.body.empty()) return;
            res.set_content(error_reply(res.status, res.status == 404 ? "not_found" : "http_error", req.method + " " + req.path).body,
                            "application/json");
        });
    }

    /// Binds the socket; throws when the port is taken. Returns the bound port.
    int bind() {
        if (cfg_.port == 0) {
            port_ = server_.bind_to_any_port(cfg_.host);
        } else {
            port_ = server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
        }
        if (port_ <= 0) throw IoError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port) + " (port busy?)");
        return port_;
    }

    void listen() { server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() const { server_.wait_until_ready(); }
    [[nodiscard]] int port() const { return port_; }

private:
    std::shared_ptr<const QueryEngine> engine_;
    ServeConfig cfg_;
    httplib::Server server_;
    int port_ = -1;
};

}  // namespace utube
