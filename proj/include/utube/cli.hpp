#pragma once

#include "bench.hpp"
#include "dataset.hpp"
#include "flowmap.hpp"
#include "io.hpp"
#include "service.hpp"
#include "sobol.hpp"
#include "uq.hpp"
#include "vecfield.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

namespace utube {

namespace detail {

inline Box box_from_flag(const std::vector<double>& v, const char* flag) {
    if (v.size() != 6) throw ArgumentError(std::string(flag) + " takes 6 numbers: xmin xmax ymin ymax zmin zmax");
    return Box{Vec3(v[0], v[2], v[4]), Vec3(v[1], v[3], v[5])};
}

inline DropoutConfig parse_dropout_flag(const std::string& s) {
    DropoutConfig d;
    const auto colon = s.find(':');
    d.mode = parse_dropout_mode(s.substr(0, colon));
    if (colon != std::string::npos) d.rate = std::stod(s.substr(colon + 1));
    if (d.mode != DropoutMode::none && colon == std::string::npos) throw ArgumentError("--dropout needs MODE:RATE");
    if (d.mode == DropoutMode::none) d.rate = 0.0;
    return d;
}

inline Box default_seeding_box(FieldKind k) {
    if (k == FieldKind::synth) return Box{Vec3(-0.5, -0.5, -1.0), Vec3(0.5, 0.5, -0.9)};
    return Box{Vec3(-2.0, -2.0, -10.0), Vec3(2.0, 2.0, -8.0)};
}

inline std::vector<FlowMapSurrogate> load_models_dir(const std::filesystem::path& dir) {
    std::vector<FlowMapSurrogate> out;
    const QueryEngine eng = QueryEngine::load_dir(dir);
    for (const auto& e : eng.entries()) out.push_back(e.surrogate);
    return out;
}

}  // namespace detail

/// Entry point of the `utube` tool. Returns the process exit code; usage errors give 2.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Uncertainty tubes for neural flow-map ensembles", "utube"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersionString);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Trace pathlines through an analytic field and write a flow-map dataset");
    std::string g_field = "synth", g_rescale = "bbox", g_generator = "sobol", g_integ = "rk4", g_out;
    std::size_t g_seeds = 4096;
    int g_cycles = 50;
    double g_delta = 0.0;
    std::uint64_t g_rng = 0;
    std::vector<double> g_box;
    gen->add_option("--field", g_field, "Vector field preset")->check(CLI::IsMember({"synth", "tornado"}))->capture_default_str();
    gen->add_option("--seeds", g_seeds, "Number of seed points")->capture_default_str();
    gen->add_option("--cycles", g_cycles, "Saved cycles per pathline (steps + 1)")->capture_default_str();
    gen->add_option("--delta", g_delta, "Time step; 0 selects the preset (synth 0.035, tornado 0.1)")->capture_default_str();
    gen->add_option("--rescale", g_rescale, "Coordinate normalization")->check(CLI::IsMember({"bbox", "uniform"}))->capture_default_str();
    gen->add_option("--seeding-box", g_box, "xmin xmax ymin ymax zmin zmax (default per preset)")->expected(6);
    gen->add_option("--generator", g_generator, "Seed placement")->check(CLI::IsMember({"sobol", "grid", "random"}))->capture_default_str();
    gen->add_option("--integrator", g_integ, "Time integrator")->check(CLI::IsMember({"rk4", "euler"}))->capture_default_str();
    gen->add_option("--rng-seed", g_rng, "Seed for --generator random")->capture_default_str();
    gen->add_option("--out", g_out, "Output dataset file")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train a flow-map network on a dataset");
    std::string t_data, t_out, t_eval, t_dropout = "none", t_swag_out;
    int t_enc = 4, t_dec = 4, t_latent = 64;
    std::size_t t_iters = 3000, t_batch = 1024, t_swag_samples = 1000, t_swag_rank = 100;
    std::uint64_t t_seed = 0;
    double t_lr = 1e-4, t_lr_final = 1e-5, t_omega = 30.0, t_swag_lr = 5e-4;
    tr->add_option("--data", t_data, "Training dataset")->required()->check(CLI::ExistingFile);
    tr->add_option("--enc", t_enc, "Layers per encoder branch")->capture_default_str();
    tr->add_option("--dec", t_dec, "Decoder layers (including the output layer)")->capture_default_str();
    tr->add_option("--latent", t_latent, "Latent width (each encoder branch emits half)")->capture_default_str();
    tr->add_option("--iters", t_iters, "Optimizer iterations")->capture_default_str();
    tr->add_option("--batch", t_batch, "Batch size")->capture_default_str();
    tr->add_option("--lr", t_lr, "Initial learning rate")->capture_default_str();
    tr->add_option("--lr-final", t_lr_final, "Learning rate at the last iteration")->capture_default_str();
    tr->add_option("--omega0", t_omega, "Sine frequency factor")->capture_default_str();
    tr->add_option("--dropout", t_dropout, "none | all:RATE | last:RATE")->capture_default_str();
    tr->add_option("--seed", t_seed, "Initialization and batching seed")->capture_default_str();
    tr->add_option("--eval", t_eval, "Held-out dataset for the reported error")->check(CLI::ExistingFile);
    tr->add_option("--swag-out", t_swag_out, "Also fit a SWAG posterior and write it here");
    tr->add_option("--swag-lr", t_swag_lr, "Constant SGD rate during SWAG collection")->capture_default_str();
    tr->add_option("--swag-samples", t_swag_samples, "SWAG snapshots (one per SGD step)")->capture_default_str();
    tr->add_option("--swag-rank", t_swag_rank, "Deviation columns kept")->capture_default_str();
    tr->add_option("--out", t_out, "Output model file")->required();

    // uq
    auto* uq = app.add_subcommand("uq", "Sample trajectory ensembles from trained models");
    std::string u_method, u_models, u_model, u_posterior, u_out, u_generator = "sobol", u_mean = "base";
    std::vector<double> u_box;
    std::size_t u_count = 100, u_k = 50;
    int u_steps = 0;
    std::uint64_t u_seed = 0;
    double u_scale = 1.0;
    unsigned u_threads = default_workers();
    uq->add_option("--method", u_method, "UQ method")->required()->check(CLI::IsMember({"ensemble", "dropout", "swag"}));
    auto* u_models_opt = uq->add_option("--models", u_models, "Directory of .utnn models (deep ensemble)");
    auto* u_model_opt = uq->add_option("--model", u_model, "Single model file (dropout, swag)");
    u_models_opt->excludes(u_model_opt);
    uq->add_option("--posterior", u_posterior, "SWAG posterior (default: model path with .utsw)");
    uq->add_option("--seeds-box", u_box, "xmin xmax ymin ymax zmin zmax")->expected(6)->required();
    uq->add_option("--seeds", u_count, "Seed count")->capture_default_str();
    uq->add_option("--generator", u_generator, "Seed placement")->check(CLI::IsMember({"sobol", "grid", "random"}))->capture_default_str();
    uq->add_option("--n-samples", u_k, "Members per seed (K)")->capture_default_str();
    uq->add_option("--steps", u_steps, "Steps per pathline; 0 = all trained cycles")->capture_default_str();
    uq->add_option("--rng-seed", u_seed, "Sampling seed")->capture_default_str();
    uq->add_option("--mean-mode", u_mean, "Mean path")->check(CLI::IsMember({"base", "average"}))->capture_default_str();
    uq->add_option("--swag-scale", u_scale, "SWAG covariance scale")->capture_default_str();
    uq->add_option("--threads", u_threads, "Worker threads")->capture_default_str();
    uq->add_option("--out", u_out, "Ensemble file (.json, or .uten for binary)")->required();

    // tube
    auto* tb = app.add_subcommand("tube", "Mesh uncertainty tubes from an ensemble or a query");
    std::string b_ensemble, b_query, b_models, b_out, b_obj, b_palette = "viridis", b_suppress = "#d3d3d3", b_conv = "stddev";
    double b_tau = 4.0, b_percentile = 98.0, b_ceiling = 0.0;
    int b_m = 32;
    bool b_end_cap = false, b_no_mean = false, b_timestamp = false;
    unsigned b_threads = default_workers();
    auto* b_ens_opt = tb->add_option("--ensemble", b_ensemble, "Ensemble file (JSON or UTEN)")->check(CLI::ExistingFile);
    auto* b_query_opt = tb->add_option("--query", b_query, "TubeQuery JSON file")->check(CLI::ExistingFile);
    b_ens_opt->excludes(b_query_opt);
    tb->add_option("--models", b_models, "Model directory for --query");
    auto* b_tau_opt = tb->add_option("--tau", b_tau, "Superellipse exponent (>= 2)")->capture_default_str();
    auto* b_m_opt = tb->add_option("--m", b_m, "Boundary samples per ring")->capture_default_str();
    auto* b_conv_opt = tb->add_option("--radius-convention", b_conv, "Radius from eigenvalues")
                           ->check(CLI::IsMember({"stddev", "eigenvalue"}))
                           ->capture_default_str();
    auto* b_pal_opt = tb->add_option("--palette", b_palette, "Palette NAME (viridis, plasma, cividis) or JSON FILE")->capture_default_str();
    auto* b_pct_opt = tb->add_option("--percentile", b_percentile, "Magnitude percentile mapped to full color")->capture_default_str();
    auto* b_sup_opt = tb->add_option("--suppress-color", b_suppress, "Low-uncertainty color #rrggbb")->capture_default_str();
    auto* b_ceil_opt = tb->add_option("--ceiling", b_ceiling, "Fixed magnitude ceiling; 0 resolves per query")->capture_default_str();
    auto* b_cap_opt = tb->add_flag("--end-cap", b_end_cap, "Close the last ring with a fan");
    auto* b_nomean_opt = tb->add_flag("--no-mean-path", b_no_mean, "Exclude the mean path from the ring samples");
    tb->add_flag("--timestamp", b_timestamp, "Record the generation time in the metadata");
    tb->add_option("--threads", b_threads, "Worker threads")->capture_default_str();
    tb->add_option("--out", b_out, "Mesh document (JSON)");
    tb->add_option("--obj", b_obj, "Also write a vertex-colored OBJ");

    // serve
    auto* sv = app.add_subcommand("serve", "Run the HTTP query service");
    ServeConfig s_cfg;
    std::string s_models = "models";
    sv->add_option("--port", s_cfg.port, "TCP port")->envname("UT_PORT")->capture_default_str();
    sv->add_option("--host", s_cfg.host, "Bind address")->envname("UT_HOST")->capture_default_str();
    sv->add_option("--models", s_models, "Model directory")->envname("UT_MODELS")->capture_default_str();
    sv->add_option("--threads", s_cfg.threads, "Concurrent requests")->envname("UT_THREADS")->capture_default_str();
    sv->add_option("--workers", s_cfg.workers, "Per-query worker threads")->envname("UT_WORKERS")->capture_default_str();

    // bench
    auto* bn = app.add_subcommand("bench", "Time tube meshing on synthetic ensembles");
    std::size_t n_seeds = 300, n_samples = 50;
    int n_steps = 100, n_repeat = 3;
    std::vector<unsigned> n_workers{1};
    bn->add_option("--seeds", n_seeds, "Seeds")->capture_default_str();
    bn->add_option("--steps", n_steps, "Steps per pathline")->capture_default_str();
    bn->add_option("--samples", n_samples, "Members per seed")->capture_default_str();
    bn->add_option("--workers", n_workers, "Worker counts to time")->capture_default_str();
    bn->add_option("--repeat", n_repeat, "Repeats (best is reported)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (*gen) {
            VectorField field = VectorField::preset(parse_field_kind(g_field));
            const double delta = g_delta > 0.0 ? g_delta : (field.kind == FieldKind::synth ? 0.035 : 0.1);
            const Box box = g_box.empty() ? detail::default_seeding_box(field.kind) : detail::box_from_flag(g_box, "--seeding-box");
            const auto seeds = make_seeds(parse_seed_generator(g_generator), box, g_seeds, g_rng);
            const auto ds = build_dataset(field, seeds, g_cycles, delta, parse_rescale(g_rescale),
                                          g_integ == "rk4" ? Integrator::rk4 : Integrator::euler);
            io::save_dataset(ds, g_out);
            out << "wrote " << g_out << ": " << ds.m_seeds << " seeds x " << ds.n_cycles << " cycles, "
                << valid_indices(ds).size() << " valid samples\n";
        } else if (*tr) {
            const auto ds = io::load_dataset(t_data);
            ModelConfig cfg;
            cfg.encoder_layers = t_enc;
            cfg.decoder_layers = t_dec;
            cfg.latent_dim = t_latent;
            cfg.omega0 = t_omega;
            cfg.dropout = detail::parse_dropout_flag(t_dropout);
            cfg.validate();
            FlowMapModel model = init_model(cfg, t_seed);
            OptimizerConfig opt;
            opt.lr = t_lr;
            opt.lr_final = t_lr_final;
            std::optional<FlowMapDataset> eval;
            if (!t_eval.empty()) eval = io::load_dataset(t_eval);
            const auto rep = train(model, ds, t_iters, t_batch, opt, t_seed, eval ? &*eval : nullptr);
            io::save_model(FlowMapSurrogate::from(model, ds), t_out);
            out << "trained " << model.param_count() << " parameters, " << rep.iterations << " iterations in " << std::fixed
                << std::setprecision(2) << rep.wall_time << " s; train L1 " << std::setprecision(6) << rep.final_train_L1;
            if (rep.eval_abs_error >= 0.0) out << "; held-out abs error " << rep.eval_abs_error;
            out << "\n";
            if (!t_swag_out.empty()) {
                SwagConfig sc;
                sc.swag_lr = t_swag_lr;
                sc.n_swag_samples = t_swag_samples;
                sc.rank = t_swag_rank;
                sc.batch_size = t_batch;
                io::save_posterior(swag_fit(model, ds, sc, t_seed), t_swag_out);
                out << "wrote SWAG posterior " << t_swag_out << "\n";
            }
        } else if (*uq) {
            const auto method = parse_uq_method(u_method);
            const Box box = detail::box_from_flag(u_box, "--seeds-box");
            const auto seeds = make_seeds(parse_seed_generator(u_generator), box, u_count, u_seed).seeds;
            const MeanMode mm = parse_mean_mode(u_mean);
            std::vector<TrajectoryEnsemble> es;
            if (method == UqMethod::deep_ensemble) {
                if (u_models.empty()) throw ArgumentError("--method ensemble needs --models DIR");
                auto models = detail::load_models_dir(u_models);
                if (models.size() < u_k)
                    throw ArgumentError("--n-samples " + std::to_string(u_k) + " exceeds the " + std::to_string(models.size()) +
                                        " models in " + u_models);
                models.resize(u_k);
                const int steps = u_steps > 0 ? u_steps : static_cast<int>(models.front().n_cycles) - 1;
                es = deep_ensemble_sample(models, seeds, steps, u_threads);
            } else {
                if (u_model.empty()) throw ArgumentError("--method " + u_method + " needs --model FILE");
                const auto s = io::load_model(u_model);
                const int steps = u_steps > 0 ? u_steps : static_cast<int>(s.n_cycles) - 1;
                if (method == UqMethod::mc_dropout) {
                    es = mc_dropout_sample(s, seeds, steps, u_k, u_seed, mm, u_threads);
                } else {
                    std::filesystem::path pp = u_posterior;
                    if (pp.empty()) pp = std::filesystem::path(u_model).replace_extension(".utsw");
                    const auto post = io::load_posterior(pp);
                    es = swag_sample_trajectories(s, post, seeds, steps, u_k, u_seed, u_scale, mm, u_threads);
                }
            }
            io::save_ensembles(es, u_out);
            out << "wrote " << es.size() << " ensembles of " << u_k << " members to " << u_out << "\n";
        } else if (*tb) {
            TubeQuery q;
            QueryEngine engine;
            if (!b_query.empty()) {
                q = query_from_json(json::parse(io::read_file(b_query)));
                if (!b_models.empty()) engine = QueryEngine::load_dir(b_models);
            } else if (!b_ensemble.empty()) {
                q.method = UqMethod::external;
                q.ensemble = std::make_shared<const std::vector<TrajectoryEnsemble>>(io::load_external_ensemble(b_ensemble));
                q.ensemble_source = std::filesystem::path(b_ensemble).filename().string();
            } else {
                throw ArgumentError("tube needs --ensemble FILE or --query FILE");
            }
            // Flags given explicitly override the query file.
            const bool from_query = !b_query.empty();
            auto use = [&](const CLI::Option* o) { return !from_query || o->count() > 0; };
            if (use(b_tau_opt)) q.tau = b_tau;
            if (use(b_m_opt)) q.m = b_m;
            if (use(b_conv_opt)) q.radius_convention = parse_radius_convention(b_conv);
            if (use(b_pal_opt)) set_palette(q.colormap, b_palette);
            if (use(b_pct_opt)) q.colormap.magnitude_percentile = b_percentile;
            if (use(b_sup_opt)) q.colormap.suppress_color = parse_hex_color(b_suppress);
            if (use(b_ceil_opt)) q.colormap.magnitude_ceiling = b_ceiling;
            if (use(b_cap_opt)) q.end_cap = b_end_cap;
            if (use(b_nomean_opt)) q.include_mean_path = !b_no_mean;
            if (b_timestamp) q.timestamp = true;
            const auto doc = engine.query(q, std::max(1u, b_threads));
            if (b_out.empty() && b_obj.empty()) throw ArgumentError("tube needs --out FILE and/or --obj FILE");
            if (!b_out.empty()) io::export_mesh_json(doc, b_out);
            if (!b_obj.empty()) io::export_obj(doc, b_obj);
            out << "meshed " << doc.meshes.size() << " tubes\n";
        } else if (*sv) {
            auto engine = std::make_shared<const QueryEngine>(QueryEngine::load_dir(s_models));
            Service service(engine, s_cfg);
            const int port = service.bind();
            out << "serving " << engine->entries().size() << " models on http://" << s_cfg.host << ":" << port << "\n" << std::flush;
            service.listen();
        } else if (*bn) {
            const auto es = synthetic_ensembles(n_seeds, n_steps, n_samples);
            out << "seeds,steps,samples,workers,ms\n";
            for (unsigned w : n_workers) {
                const auto r = bench_meshing(es, TubeParams{}, std::max(1u, w), n_repeat);
                out << r.seeds << "," << r.steps << "," << r.samples << "," << r.workers << "," << std::fixed << std::setprecision(1)
                    << r.ms << "\n";
            }
        }
    } catch (const ArgumentError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace utube
