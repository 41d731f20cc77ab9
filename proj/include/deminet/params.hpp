#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deminet/ops.hpp"
#include "deminet/rng.hpp"
#include "deminet/tensor.hpp"

namespace deminet {

/// Visitor over named tensors of a parameter struct.
using TensorVisitor = std::function<void(const std::string& name, Tensor& tensor)>;

/// Glorot-uniform matrix, limit sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<real>(rng.uniform(-limit, limit));
    return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor normal_init(Shape shape, double stddev, Rng& rng) {
    std::vector<real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<real>(rng.normal(0.0, stddev));
    return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

/// Feed-forward stack of affine layers with LeakyReLU between them (none after the last).
struct Mlp {
    std::vector<Tensor> weights;  // [in x out]
    std::vector<Tensor> biases;   // [out]

    static Mlp create(const std::vector<std::size_t>& widths, Rng& rng) {
        Mlp m;
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            m.weights.push_back(glorot({widths[i], widths[i + 1]}, widths[i], widths[i + 1], rng));
            m.biases.push_back(zeros_param({widths[i + 1]}));
        }
        return m;
    }

    std::size_t in_width() const { return weights.front().dim(0); }
    std::size_t out_width() const { return weights.back().dim(1); }

    void visit(const std::string& prefix, const TensorVisitor& fn) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            fn(prefix + ".fc" + std::to_string(i) + ".W", weights[i]);
            fn(prefix + ".fc" + std::to_string(i) + ".b", biases[i]);
        }
    }
};

inline Tensor mlp_forward(Tape& t, const Mlp& mlp, const Tensor& x, real slope) {
    Tensor h = x;
    for (std::size_t i = 0; i < mlp.weights.size(); ++i) {
        h = dense_layer(t, h, mlp.weights[i], mlp.biases[i]);
        if (i + 1 < mlp.weights.size()) h = leaky_relu(t, h, slope);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "DEMINET1", then per tensor until end of file:
// u64 name length, name bytes, u64 rank, rank x u64 dims, numel x f64 values.
// All integers and reals little-endian.

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'D', 'E', 'M', 'I', 'N', 'E', 'T', '1'};

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

inline void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
    os.write(kCheckpointMagic, 8);
    for (const auto& t : tensors) {
        detail::put_u64(os, t.name.size());
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::put_u64(os, t.shape.size());
        for (auto d : t.shape) detail::put_u64(os, d);
        for (double v : t.values) detail::put_f64(os, v);
    }
    if (!os) throw IoError("checkpoint: write failed for " + path);
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw IoError("checkpoint: bad magic in " + path);
    }
    std::vector<NamedTensor> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        NamedTensor t;
        const auto len = detail::get_u64(is);
        if (len > (1u << 16)) throw IoError("checkpoint: implausible name length");
        t.name.resize(len);
        if (!is.read(t.name.data(), static_cast<std::streamsize>(len))) throw IoError("checkpoint: truncated name");
        const auto rank = detail::get_u64(is);
        if (rank == 0 || rank > 8) throw IoError("checkpoint: implausible rank for " + t.name);
        for (std::uint64_t r = 0; r < rank; ++r) t.shape.push_back(detail::get_u64(is));
        t.values.resize(shape_numel(t.shape));
        for (auto& v : t.values) v = detail::get_f64(is);
        out.push_back(std::move(t));
    }
    return out;
}

/// Snapshot of every tensor reachable through `visit`, in visiting order.
template <typename Params>
std::vector<NamedTensor> snapshot(Params& params) {
    std::vector<NamedTensor> out;
    params.visit([&](const std::string& name, Tensor& t) {
        out.push_back(NamedTensor{name, t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
    });
    return out;
}

/// Copies checkpoint values into `params`; names and shapes must match exactly.
template <typename Params>
void restore(Params& params, const std::vector<NamedTensor>& saved) {
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : saved) by_name[t.name] = &t;
    std::size_t matched = 0;
    params.visit([&](const std::string& name, Tensor& t) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("checkpoint: missing tensor " + name);
        if (it->second->shape != t.shape()) {
            throw ConfigError("checkpoint: shape mismatch for " + name + ": file " + shape_str(it->second->shape) +
                              ", model " + shape_str(t.shape()));
        }
        auto dst = t.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>(it->second->values[i]);
        ++matched;
    });
    if (matched != saved.size()) {
        throw ConfigError("checkpoint: file has " + std::to_string(saved.size()) + " tensors, model expects " +
                          std::to_string(matched));
    }
}

}  // namespace deminet
