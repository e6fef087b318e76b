#pragma once

#include "common.hpp"
#include "dataset.hpp"
#include "flowmap.hpp"
#include "mesh.hpp"
#include "uq.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace utube {

using json = nlohmann::json;

namespace io {

inline constexpr std::uint32_t kVersion = 1;

// ---------------------------------------------------------------------------------------
// Little-endian byte streams

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void magic(std::string_view m) { bytes(m.data(), 4); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void box(const Box& b) {
        for (int a = 0; a < 3; ++a) {
            f64(b.lo[a]);
            f64(b.hi[a]);
        }
    }
    [[nodiscard]] const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) {
            std::ostringstream msg;
            msg << what_ << ": truncated file, expected at least " << pos_ + n << " bytes, got " << data_.size();
            throw FormatError(msg.str());
        }
    }
    /// Checks the total size against the length implied by the header.
    void expect_total(std::size_t total) const {
        if (data_.size() != total) {
            std::ostringstream msg;
            msg << what_ << ": " << (data_.size() < total ? "truncated file" : "trailing bytes") << ", expected " << total
                << " bytes, got " << data_.size();
            throw FormatError(msg.str());
        }
    }
    void magic(std::string_view m) {
        need(4);
        if (std::string_view(data_).substr(pos_, 4) != m)
            throw FormatError(what_ + ": bad magic, expected '" + std::string(m) + "'");
        pos_ += 4;
    }
    void version() {
        const std::uint32_t v = u32();
        if (v == 0 || v > kVersion)
            throw FormatError(what_ + ": unsupported format version " + std::to_string(v) + " (this build reads version " +
                              std::to_string(kVersion) + ")");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    Box box() {
        Box b;
        for (int a = 0; a < 3; ++a) {
            b.lo[a] = f64();
            b.hi[a] = f64();
        }
        return b;
    }
    [[nodiscard]] std::size_t pos() const { return pos_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

private:
    std::string data_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------------------
// Flow-map dataset: "UTFM"

inline constexpr std::size_t kDatasetHeader = 4 + 4 + 4 + 4 + 8 + 1 + 48 + 48;

inline std::string encode_dataset(const FlowMapDataset& ds) {
    ByteWriter w;
    w.magic("UTFM");
    w.u32(kVersion);
    w.u32(ds.m_seeds);
    w.u32(ds.n_cycles);
    w.f64(ds.delta);
    w.u8(static_cast<std::uint8_t>(ds.rescale));
    w.box(ds.original_box);
    w.box(ds.seeding_box);
    for (const auto& s : ds.samples) {
        for (float v : s.start) w.f32(v);
        w.f32(s.cycle);
        for (float v : s.end) w.f32(v);
    }
    return w.data();
}

inline FlowMapDataset decode_dataset(std::string bytes) {
    ByteReader r(std::move(bytes), "dataset");
    r.magic("UTFM");
    r.version();
    FlowMapDataset ds;
    ds.m_seeds = r.u32();
    ds.n_cycles = r.u32();
    ds.delta = r.f64();
    const std::uint8_t mode = r.u8();
    if (mode > 1) throw FormatError("dataset: unknown rescale mode " + std::to_string(mode));
    ds.rescale = static_cast<RescaleMode>(mode);
    ds.original_box = r.box();
    ds.seeding_box = r.box();
    const std::size_t count = static_cast<std::size_t>(ds.m_seeds) * ds.n_cycles;
    r.expect_total(kDatasetHeader + count * 28);
    ds.samples.resize(count);
    for (auto& s : ds.samples) {
        for (auto& v : s.start) v = r.f32();
        s.cycle = r.f32();
        for (auto& v : s.end) v = r.f32();
    }
    return ds;
}

inline void save_dataset(const FlowMapDataset& ds, const std::filesystem::path& p) { write_file(p, encode_dataset(ds)); }
inline FlowMapDataset load_dataset(const std::filesystem::path& p) { return decode_dataset(read_file(p)); }

// ---------------------------------------------------------------------------------------
// Model: "UTNN"

inline std::string encode_model(const FlowMapSurrogate& s) {
    const auto& c = s.model.config;
    ByteWriter w;
    w.magic("UTNN");
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(c.encoder_layers));
    w.u32(static_cast<std::uint32_t>(c.decoder_layers));
    w.u32(static_cast<std::uint32_t>(c.latent_dim));
    w.u32(static_cast<std::uint32_t>(c.encoder_width));
    w.u32(static_cast<std::uint32_t>(c.decoder_width));
    w.u8(static_cast<std::uint8_t>(c.activation));
    w.f64(c.omega0);
    w.u8(static_cast<std::uint8_t>(c.dropout.mode));
    w.f64(c.dropout.rate);
    w.box(s.original_box);
    w.u8(static_cast<std::uint8_t>(s.rescale));
    w.u32(s.n_cycles);
    w.f64(s.delta);
    w.u32(static_cast<std::uint32_t>(s.model.layers.size()));
    for (const auto& L : s.model.layers) {
        w.u32(static_cast<std::uint32_t>(L.weight.rows()));
        w.u32(static_cast<std::uint32_t>(L.weight.cols()));
        w.u8(L.activated ? 1 : 0);
        for (Eigen::Index i = 0; i < L.weight.size(); ++i) w.f32(L.weight.data()[i]);
        for (Eigen::Index i = 0; i < L.bias.size(); ++i) w.f32(L.bias.data()[i]);
    }
    return w.data();
}

inline FlowMapSurrogate decode_model(std::string bytes) {
    ByteReader r(std::move(bytes), "model");
    r.magic("UTNN");
    r.version();
    ModelConfig c;
    c.encoder_layers = static_cast<int>(r.u32());
    c.decoder_layers = static_cast<int>(r.u32());
    c.latent_dim = static_cast<int>(r.u32());
    c.encoder_width = static_cast<int>(r.u32());
    c.decoder_width = static_cast<int>(r.u32());
    const auto act = r.u8();
    if (act > 1) throw FormatError("model: unknown activation " + std::to_string(act));
    c.activation = static_cast<Activation>(act);
    c.omega0 = r.f64();
    const auto mode = r.u8();
    if (mode > 2) throw FormatError("model: unknown dropout mode " + std::to_string(mode));
    c.dropout.mode = static_cast<DropoutMode>(mode);
    c.dropout.rate = r.f64();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("model: invalid configuration: ") + e.what());
    }
    FlowMapSurrogate s;
    s.original_box = r.box();
    const auto rescale = r.u8();
    if (rescale > 1) throw FormatError("model: unknown rescale mode " + std::to_string(rescale));
    s.rescale = static_cast<RescaleMode>(rescale);
    s.n_cycles = r.u32();
    s.delta = r.f64();
    s.model = FlowMapModel(c);
    const std::uint32_t n_layers = r.u32();
    if (n_layers != s.model.layers.size())
        throw FormatError("model: file has " + std::to_string(n_layers) + " layers, configuration implies " +
                          std::to_string(s.model.layers.size()));
    for (auto& L : s.model.layers) {
        const auto rows = r.u32(), cols = r.u32();
        const bool activated = r.u8() != 0;
        if (rows != L.weight.rows() || cols != L.weight.cols() || activated != L.activated)
            throw FormatError("model: layer shape header does not match the configuration");
        r.need((static_cast<std::size_t>(rows) * cols + rows) * 4);
        for (Eigen::Index i = 0; i < L.weight.size(); ++i) L.weight.data()[i] = r.f32();
        for (Eigen::Index i = 0; i < L.bias.size(); ++i) L.bias.data()[i] = r.f32();
    }
    r.expect_total(r.pos());
    return s;
}

inline void save_model(const FlowMapSurrogate& s, const std::filesystem::path& p) { write_file(p, encode_model(s)); }
inline FlowMapSurrogate load_model(const std::filesystem::path& p) { return decode_model(read_file(p)); }

// ---------------------------------------------------------------------------------------
// SWAG posterior: "UTSW"

inline std::string encode_posterior(const SwagPosterior& post) {
    ByteWriter w;
    w.magic("UTSW");
    w.u32(kVersion);
    w.u64(post.theta_swa.size());
    w.u64(post.rank);
    w.u64(post.snapshots_seen);
    w.u64(post.deviations.size());
    for (double v : post.theta_swa) w.f64(v);
    for (double v : post.second_moment) w.f64(v);
    for (const auto& col : post.deviations)
        for (double v : col) w.f64(v);
    return w.data();
}

inline SwagPosterior decode_posterior(std::string bytes) {
    ByteReader r(std::move(bytes), "posterior");
    r.magic("UTSW");
    r.version();
    const auto n = r.u64();
    SwagPosterior post;
    post.rank = r.u64();
    post.snapshots_seen = r.u64();
    const auto cols = r.u64();
    r.expect_total(r.pos() + (2 + cols) * n * 8);
    post.theta_swa.resize(n);
    post.second_moment.resize(n);
    for (auto& v : post.theta_swa) v = r.f64();
    for (auto& v : post.second_moment) v = r.f64();
    for (std::uint64_t c = 0; c < cols; ++c) {
        std::vector<double> col(n);
        for (auto& v : col) v = r.f64();
        post.deviations.push_back(std::move(col));
    }
    return post;
}

inline void save_posterior(const SwagPosterior& p, const std::filesystem::path& path) { write_file(path, encode_posterior(p)); }
inline SwagPosterior load_posterior(const std::filesystem::path& path) { return decode_posterior(read_file(path)); }

// ---------------------------------------------------------------------------------------
// Trajectory ensembles: JSON and "UTEN"

inline json point_json(const Vec3& p) { return json::array({p.x(), p.y(), p.z()}); }

inline Vec3 point_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw FormatError(where + ": expected [x, y, z]");
    for (const auto& v : j)
        if (!v.is_number()) throw FormatError(where + ": coordinates must be numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json ensembles_to_json(const std::vector<TrajectoryEnsemble>& es) {
    json j;
    j["version"] = kVersion;
    j["delta"] = es.empty() ? 0.0 : es.front().delta;
    j["n_steps"] = es.empty() ? 0 : es.front().n_steps;
    j["method"] = std::string(to_string(es.empty() ? UqMethod::external : es.front().method));
    j["members_per_seed"] = es.empty() ? 0 : es.front().members.size();
    json seeds = json::array(), paths = json::array(), means = json::array();
    for (const auto& e : es) {
        seeds.push_back(point_json(e.seed));
        json members = json::array();
        for (const auto& m : e.members) {
            json path = json::array();
            for (const auto& p : m) path.push_back(point_json(p));
            members.push_back(std::move(path));
        }
        paths.push_back(std::move(members));
        json mean = json::array();
        for (const auto& p : e.mean_path) mean.push_back(point_json(p));
        means.push_back(std::move(mean));
    }
    j["seeds"] = std::move(seeds);
    j["paths"] = std::move(paths);
    j["means"] = std::move(means);
    return j;
}

/// Validates lengths (naming the offending seed/member) and computes missing means.
inline std::vector<TrajectoryEnsemble> ensembles_from_json(const json& j) {
    if (!j.is_object()) throw FormatError("ensemble: document must be a JSON object");
    for (const char* key : {"version", "delta", "n_steps", "seeds", "paths"})
        if (!j.contains(key)) throw FormatError(std::string("ensemble: missing field '") + key + "'");
    if (j["version"].get<std::uint32_t>() > kVersion) throw FormatError("ensemble: unsupported version");
    const double delta = j["delta"].get<double>();
    const int n_steps = j["n_steps"].get<int>();
    if (n_steps < 0) throw FormatError("ensemble: n_steps must be non-negative");
    const UqMethod method = j.contains("method") ? parse_uq_method(j["method"].get<std::string>()) : UqMethod::external;
    const auto& seeds = j["seeds"];
    const auto& paths = j["paths"];
    if (!seeds.is_array() || !paths.is_array() || seeds.size() != paths.size())
        throw FormatError("ensemble: 'seeds' and 'paths' must be arrays of equal length");
    const bool has_means = j.contains("means") && !j["means"].is_null();
    if (has_means && j["means"].size() != seeds.size()) throw FormatError("ensemble: 'means' length differs from 'seeds'");
    const std::size_t per_seed = j.contains("members_per_seed") ? j["members_per_seed"].get<std::size_t>() : 0;
    const auto len = static_cast<std::size_t>(n_steps) + 1;

    std::vector<TrajectoryEnsemble> out(seeds.size());
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        auto& e = out[s];
        const std::string where = "ensemble: seed " + std::to_string(s);
        e.seed = point_from_json(seeds[s], where);
        e.delta = delta;
        e.n_steps = n_steps;
        e.method = method;
        if (!paths[s].is_array()) throw FormatError(where + ": paths must be an array of members");
        if (per_seed != 0 && paths[s].size() != per_seed)
            throw FormatError(where + ": has " + std::to_string(paths[s].size()) + " members, expected " + std::to_string(per_seed));
        for (std::size_t k = 0; k < paths[s].size(); ++k) {
            const auto& pj = paths[s][k];
            const std::string mw = where + " member " + std::to_string(k);
            if (!pj.is_array() || pj.size() != len)
                throw FormatError(mw + ": has " + std::to_string(pj.is_array() ? pj.size() : 0) + " positions, expected " +
                                  std::to_string(len));
            Path p;
            p.reserve(len);
            for (const auto& q : pj) p.push_back(point_from_json(q, mw));
            e.members.push_back(std::move(p));
        }
        if (has_means) {
            const auto& mj = j["means"][s];
            if (!mj.is_array() || mj.size() != len) throw FormatError(where + ": mean path has the wrong length");
            for (const auto& q : mj) e.mean_path.push_back(point_from_json(q, where + " mean"));
        } else {
            if (e.members.empty()) throw FormatError(where + ": no members and no mean path");
            e.mean_path = member_average(e.members);
        }
        e.validate();
    }
    return out;
}

inline void save_ensembles_json(const std::vector<TrajectoryEnsemble>& es, const std::filesystem::path& p) {
    write_file(p, ensembles_to_json(es).dump());
}

inline std::string encode_ensembles(const std::vector<TrajectoryEnsemble>& es) {
    ByteWriter w;
    w.magic("UTEN");
    w.u32(kVersion);
    const auto members = es.empty() ? 0u : static_cast<std::uint32_t>(es.front().members.size());
    const auto steps = es.empty() ? 0u : static_cast<std::uint32_t>(es.front().n_steps);
    w.u32(static_cast<std::uint32_t>(es.size()));
    w.u32(steps);
    w.u32(members);
    w.u8(static_cast<std::uint8_t>(es.empty() ? UqMethod::external : es.front().method));
    w.u8(1);
    w.f64(es.empty() ? 0.0 : es.front().delta);
    auto put = [&](const Vec3& p) {
        for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(p[a]));
    };
    for (const auto& e : es) {
        if (e.members.size() != members || e.n_steps != static_cast<int>(steps))
            throw ArgumentError("encode_ensembles: all seeds must share member count and step count");
        put(e.seed);
        for (const auto& p : e.mean_path) put(p);
        for (const auto& m : e.members)
            for (const auto& p : m) put(p);
    }
    return w.data();
}

inline std::vector<TrajectoryEnsemble> decode_ensembles(std::string bytes) {
    ByteReader r(std::move(bytes), "ensemble");
    r.magic("UTEN");
    r.version();
    const auto n_seeds = r.u32(), steps = r.u32(), members = r.u32();
    const auto method = r.u8();
    if (method > 3) throw FormatError("ensemble: unknown method " + std::to_string(method));
    const bool has_mean = r.u8() != 0;
    const double delta = r.f64();
    const std::size_t len = static_cast<std::size_t>(steps) + 1;
    const std::size_t per_seed = 3 * (1 + (has_mean ? len : 0) + static_cast<std::size_t>(members) * len);
    r.expect_total(r.pos() + static_cast<std::size_t>(n_seeds) * per_seed * 4);
    auto get = [&] {
        const double x = r.f32(), y = r.f32(), z = r.f32();
        return Vec3(x, y, z);
    };
    std::vector<TrajectoryEnsemble> out(n_seeds);
    for (auto& e : out) {
        e.seed = get();
        e.delta = delta;
        e.n_steps = static_cast<int>(steps);
        e.method = static_cast<UqMethod>(method);
        if (has_mean)
            for (std::size_t t = 0; t < len; ++t) e.mean_path.push_back(get());
        e.members.assign(members, Path());
        for (auto& m : e.members)
            for (std::size_t t = 0; t < len; ++t) m.push_back(get());
        if (!has_mean) e.mean_path = member_average(e.members);
        e.validate();
    }
    return out;
}

/// Binary when the file starts with "UTEN", JSON otherwise.
inline std::vector<TrajectoryEnsemble> load_external_ensemble(const std::filesystem::path& p) {
    std::string bytes = read_file(p);
    if (bytes.size() >= 4 && bytes.compare(0, 4, "UTEN") == 0) return decode_ensembles(std::move(bytes));
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::exception& e) {
        throw FormatError(std::string("ensemble: invalid JSON: ") + e.what());
    }
    try {
        return ensembles_from_json(j);
    } catch (const json::exception& e) {
        throw FormatError(std::string("ensemble: ") + e.what());
    }
}

inline void save_ensembles(const std::vector<TrajectoryEnsemble>& es, const std::filesystem::path& p) {
    if (p.extension() == ".uten" || p.extension() == ".bin")
        write_file(p, encode_ensembles(es));
    else
        save_ensembles_json(es, p);
}

// ---------------------------------------------------------------------------------------
// Mesh documents

struct MeshDocument {
    std::vector<TubeMesh> meshes;
    json meta = json::object();
};

template <typename F>
void append_number(std::string& out, F v) {
    if (!std::isfinite(v)) throw IoError("mesh export: non-finite number");
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

template <typename T>
void append_array(std::string& out, const std::vector<T>& values) {
    out.push_back('[');
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out.push_back(',');
        append_number(out, values[i]);
    }
    out.push_back(']');
}

/// Canonical compact JSON; floats use the shortest representation that round-trips at
/// their stored precision (f32 buffers, f64 statistics).
inline std::string mesh_document_json(const MeshDocument& doc) {
    std::string out;
    out += "{\"version\":";
    append_number(out, kVersion);
    out += ",\"meta\":";
    out += doc.meta.dump();
    out += ",\"meshes\":[";
    for (std::size_t i = 0; i < doc.meshes.size(); ++i) {
        const auto& m = doc.meshes[i];
        if (i) out.push_back(',');
        out += "{\"seed\":";
        append_array(out, std::vector<double>{m.seed.x(), m.seed.y(), m.seed.z()});
        out += ",\"rings\":";
        append_number(out, m.rings);
        out += ",\"ring_stride\":";
        append_number(out, m.ring_stride);
        out += ",\"end_cap\":";
        out += m.end_cap ? "true" : "false";
        out += ",\"vertices\":";
        append_array(out, m.positions);
        out += ",\"normals\":";
        append_array(out, m.normals);
        out += ",\"uvs\":";
        append_array(out, m.uvs);
        out += ",\"colors\":";
        append_array(out, m.colors);
        out += ",\"indices\":";
        append_array(out, m.indices);
        out += ",\"stats\":{\"magnitude\":";
        append_array(out, m.stats.magnitude);
        out += ",\"symmetry\":";
        append_array(out, m.stats.symmetry);
        out += "}}";
    }
    out += "]}";
    return out;
}

template <typename T>
std::vector<T> array_from_json(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array()) throw FormatError(std::string("mesh: missing array '") + key + "'");
    std::vector<T> out;
    out.reserve(j[key].size());
    for (const auto& v : j[key]) out.push_back(v.get<T>());
    return out;
}

inline MeshDocument mesh_document_from_json(const json& j) {
    if (!j.is_object() || !j.contains("meshes")) throw FormatError("mesh: missing 'meshes'");
    if (j.value("version", 0u) > kVersion) throw FormatError("mesh: unsupported version");
    MeshDocument doc;
    doc.meta = j.value("meta", json::object());
    for (const auto& mj : j["meshes"]) {
        TubeMesh m;
        const auto seed = array_from_json<double>(mj, "seed");
        if (seed.size() != 3) throw FormatError("mesh: seed must have 3 coordinates");
        m.seed = Vec3(seed[0], seed[1], seed[2]);
        m.rings = mj.at("rings").get<std::uint32_t>();
        m.ring_stride = mj.at("ring_stride").get<std::uint32_t>();
        m.end_cap = mj.value("end_cap", false);
        m.positions = array_from_json<float>(mj, "vertices");
        m.normals = array_from_json<float>(mj, "normals");
        m.uvs = array_from_json<float>(mj, "uvs");
        m.colors = array_from_json<float>(mj, "colors");
        m.indices = array_from_json<std::uint32_t>(mj, "indices");
        if (mj.contains("stats")) {
            m.stats.magnitude = array_from_json<double>(mj["stats"], "magnitude");
            m.stats.symmetry = array_from_json<double>(mj["stats"], "symmetry");
        }
        const std::size_t nv = m.positions.size() / 3;
        if (m.positions.size() % 3 != 0 || m.normals.size() != 3 * nv || m.uvs.size() != 2 * nv || m.colors.size() != 4 * nv)
            throw FormatError("mesh: vertex attribute arrays have inconsistent lengths");
        for (auto i : m.indices)
            if (i >= nv) throw FormatError("mesh: index out of range");
        doc.meshes.push_back(std::move(m));
    }
    return doc;
}

inline void export_mesh_json(const MeshDocument& doc, const std::filesystem::path& p) { write_file(p, mesh_document_json(doc)); }

inline MeshDocument load_mesh_json(const std::filesystem::path& p) {
    try {
        return mesh_document_from_json(json::parse(read_file(p)));
    } catch (const json::exception& e) {
        throw FormatError(std::string("mesh: ") + e.what());
    }
}

/// Wavefront OBJ with per-vertex colors ("v x y z r g b"), one object per tube and 1-based
/// v/vt/vn face indices.
inline std::string mesh_document_obj(const MeshDocument& doc) {
    std::string out = "# uncertainty tube export\n";
    std::size_t base = 1;
    auto num = [&](float v) {
        out.push_back(' ');
        append_number(out, v);
    };
    for (std::size_t t = 0; t < doc.meshes.size(); ++t) {
        const auto& m = doc.meshes[t];
        out += "o tube_" + std::to_string(t) + "\n";
        const std::size_t nv = m.vertex_count();
        for (std::size_t i = 0; i < nv; ++i) {
            out += "v";
            for (int k = 0; k < 3; ++k) num(m.positions[3 * i + static_cast<std::size_t>(k)]);
            for (int k = 0; k < 3; ++k) num(m.colors.empty() ? 1.0f : m.colors[4 * i + static_cast<std::size_t>(k)]);
            out += "\n";
        }
        for (std::size_t i = 0; i < nv; ++i) {
            out += "vt";
            num(m.uvs[2 * i]);
            num(m.uvs[2 * i + 1]);
            out += "\n";
        }
        for (std::size_t i = 0; i < nv; ++i) {
            out += "vn";
            for (int k = 0; k < 3; ++k) num(m.normals[3 * i + static_cast<std::size_t>(k)]);
            out += "\n";
        }
        for (std::size_t f = 0; f < m.indices.size(); f += 3) {
            out += "f";
            for (int k = 0; k < 3; ++k) {
                const std::string id = std::to_string(m.indices[f + static_cast<std::size_t>(k)] + base);
                out += " " + id + "/" + id + "/" + id;
            }
            out += "\n";
        }
        base += nv;
    }
    return out;
}

inline void export_obj(const MeshDocument& doc, const std::filesystem::path& p) { write_file(p, mesh_document_obj(doc)); }

}  // namespace io
}  // namespace utube
