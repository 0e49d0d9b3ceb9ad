#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "affmap/core/error.hpp"
#include "affmap/core/tensor.hpp"
#include "affmap/linops/pseudoinverse.hpp"
#include "affmap/nn/net.hpp"

namespace affmap {

// Raw numeric blobs are little-endian regardless of host, so artifacts are
// portable and byte-for-byte reproducible.
namespace detail {

template <typename U>
inline void put_le(std::ofstream& f, U bits) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
inline U get_le(std::ifstream& f) {
    unsigned char b[sizeof(U)];
    f.read(reinterpret_cast<char*>(b), sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(b[i]) << (8 * i);
    return bits;
}

inline std::uint32_t f32_bits(float v) {
    std::uint32_t u;
    static_assert(sizeof(u) == sizeof(v));
    std::memcpy(&u, &v, sizeof(u));
    return u;
}

inline float f32_from_bits(std::uint32_t u) {
    float v;
    std::memcpy(&v, &u, sizeof(v));
    return v;
}

inline std::uint64_t f64_bits(double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, sizeof(u));
    return u;
}

inline double f64_from_bits(std::uint64_t u) {
    double v;
    std::memcpy(&v, &u, sizeof(v));
    return v;
}

}  // namespace detail

inline void write_blob_f32(const std::filesystem::path& path, const std::vector<double>& vals) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open ", path.string(), " for writing");
    for (double v : vals) detail::put_le(f, detail::f32_bits(static_cast<float>(v)));
    require(f.good(), "write failed for ", path.string());
}

inline std::vector<double> read_blob_f32(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require<ConfigError>(f.good(), "cannot open blob ", path.string());
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(f.tellg());
    require<ConfigError>(bytes % 4 == 0, "blob ", path.string(), " is not a float32 array");
    f.seekg(0);
    std::vector<double> out(bytes / 4);
    for (double& v : out) v = detail::f32_from_bits(detail::get_le<std::uint32_t>(f));
    return out;
}

inline void write_blob_f64(const std::filesystem::path& path, const std::vector<double>& vals) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open ", path.string(), " for writing");
    for (double v : vals) detail::put_le(f, detail::f64_bits(v));
    require(f.good(), "write failed for ", path.string());
}

inline std::vector<double> read_blob_f64(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require<ConfigError>(f.good(), "cannot open blob ", path.string());
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(f.tellg());
    require<ConfigError>(bytes % 8 == 0, "blob ", path.string(), " is not a float64 array");
    f.seekg(0);
    std::vector<double> out(bytes / 8);
    for (double& v : out) v = detail::f64_from_bits(detail::get_le<std::uint64_t>(f));
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);  // binary: no newline translation
    require(f.good(), "cannot open ", path.string(), " for writing");
    f << text;
    require(f.good(), "write failed for ", path.string());
}

inline nlohmann::json read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    require<ConfigError>(f.good(), "cannot open manifest ", path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail<ConfigError>("malformed JSON in ", path.string(), ": ", e.what());
    }
    return j;
}

// Fitted-operator container: <name>.json manifest + <name>.f32 kernel blob.
inline void save_pseudoinverse(const std::filesystem::path& dir, const std::string& name,
                               const PseudoInverseOperator& op) {
    std::filesystem::create_directories(dir);
    const std::string blob_name = name + ".f32";
    const bool matrix = op.mode == DownsampleOperator::Mode::matrix;
    std::vector<double> weights;
    nlohmann::json j;
    j["container"] = "operator";
    j["mode"] = matrix ? "matrix" : "conv";
    j["kernel_size"] = op.kernel_size;
    j["stride"] = op.stride;
    j["fit_loss"] = op.fit_loss;
    j["seed"] = op.fit_config.seed;
    j["blob"] = blob_name;
    if (matrix) {
        j["shape"] = {op.B.rows(), op.B.cols()};
        weights.assign(op.B.data(), op.B.data() + op.B.size());
    } else {
        j["shape"] = {op.stride * op.stride, op.kernel_size, op.kernel_size};
        weights = op.bank;
    }
    write_blob_f32(dir / blob_name, weights);
    write_text(dir / (name + ".json"), j.dump(2) + "\n");
}

inline PseudoInverseOperator load_pseudoinverse(const std::filesystem::path& manifest_path) {
    const auto j = read_manifest(manifest_path);
    require<ConfigError>(j.value("container", "") == "operator", manifest_path.string(),
                         " is not an operator manifest");
    const auto weights = read_blob_f32(manifest_path.parent_path() / j.at("blob").get<std::string>());
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "matrix") {
        const auto shape = j.at("shape");
        const Eigen::Index r = shape.at(0).get<Eigen::Index>(), c = shape.at(1).get<Eigen::Index>();
        require<ConfigError>(static_cast<std::size_t>(r * c) == weights.size(),
                             "operator blob size mismatch");
        Eigen::MatrixXd B(r, c);
        std::copy(weights.begin(), weights.end(), B.data());
        auto op = PseudoInverseOperator::matrix(B);
        op.fit_loss = j.value("fit_loss", 0.0);
        return op;
    }
    require<ConfigError>(mode == "conv", "unknown operator mode '", mode, "'");
    auto op = PseudoInverseOperator::conv_bank(j.at("kernel_size").get<int>(),
                                               j.at("stride").get<int>());
    require<ConfigError>(weights.size() == op.bank.size(), "operator blob size mismatch");
    op.bank = weights;
    op.fit_loss = j.value("fit_loss", 0.0);
    return op;
}

namespace detail {

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::pixel_shuffle: return "pixel_shuffle";
        case LayerKind::relu: return "relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::batch_norm: return "batch_norm";
        case LayerKind::skip_connection: return "skip_connection";
    }
    return "?";
}

inline LayerKind kind_from_name(const std::string& s) {
    for (LayerKind k : {LayerKind::dense, LayerKind::conv2d, LayerKind::pixel_shuffle,
                        LayerKind::relu, LayerKind::sigmoid, LayerKind::batch_norm,
                        LayerKind::skip_connection})
        if (s == kind_name(k)) return k;
    fail<ConfigError>("unknown layer kind '", s, "'");
}

}  // namespace detail

// Network checkpoint: <name>.json manifest + <name>.f64 blob holding every
// parameter tensor then the batch-norm running stats, in layer order.
inline void save_checkpoint(const std::filesystem::path& dir, const std::string& name,
                            const NetSpec& spec, const NetState& state, long iteration) {
    std::filesystem::create_directories(dir);
    std::vector<double> flat;
    for (std::size_t i = 0; i < state.params.size(); ++i) {
        flat.insert(flat.end(), state.params[i].W.v.begin(), state.params[i].W.v.end());
        flat.insert(flat.end(), state.params[i].b.v.begin(), state.params[i].b.v.end());
        flat.insert(flat.end(), state.bn_mean[i].v.begin(), state.bn_mean[i].v.end());
        flat.insert(flat.end(), state.bn_var[i].v.begin(), state.bn_var[i].v.end());
    }
    nlohmann::json j;
    j["container"] = "checkpoint";
    j["seed"] = spec.init_seed;
    j["iteration"] = iteration;
    j["blob"] = name + ".f64";
    j["layers"] = nlohmann::json::array();
    for (const auto& l : spec.layers) {
        j["layers"].push_back({{"kind", detail::kind_name(l.kind)},
                               {"in", l.in},
                               {"out", l.out},
                               {"k", l.k},
                               {"stride", l.stride},
                               {"r", l.r},
                               {"from", l.from}});
    }
    write_blob_f64(dir / (name + ".f64"), flat);
    write_text(dir / (name + ".json"), j.dump(2) + "\n");
}

struct Checkpoint {
    NetSpec spec;
    NetState state;
    long iteration = 0;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
    const auto j = read_manifest(manifest_path);
    require<ConfigError>(j.value("container", "") == "checkpoint", manifest_path.string(),
                         " is not a checkpoint manifest");
    Checkpoint c;
    c.spec.init_seed = j.at("seed").get<std::uint64_t>();
    c.iteration = j.at("iteration").get<long>();
    for (const auto& l : j.at("layers")) {
        LayerSpec ls;
        ls.kind = detail::kind_from_name(l.at("kind").get<std::string>());
        ls.in = l.at("in").get<int>();
        ls.out = l.at("out").get<int>();
        ls.k = l.at("k").get<int>();
        ls.stride = l.at("stride").get<int>();
        ls.r = l.at("r").get<int>();
        ls.from = l.at("from").get<int>();
        c.spec.layers.push_back(ls);
    }
    c.state = init_state(c.spec);
    const auto flat = read_blob_f64(manifest_path.parent_path() / j.at("blob").get<std::string>());
    std::size_t pos = 0;
    auto take = [&](Tensor& t) {
        require<ConfigError>(pos + t.v.size() <= flat.size(), "checkpoint blob too short");
        std::copy(flat.begin() + pos, flat.begin() + pos + t.v.size(), t.v.begin());
        pos += t.v.size();
    };
    for (std::size_t i = 0; i < c.state.params.size(); ++i) {
        take(c.state.params[i].W);
        take(c.state.params[i].b);
        take(c.state.bn_mean[i]);
        take(c.state.bn_var[i]);
    }
    require<ConfigError>(pos == flat.size(), "checkpoint blob has ", flat.size() - pos,
                         " unread values");
    return c;
}

}  // namespace affmap
