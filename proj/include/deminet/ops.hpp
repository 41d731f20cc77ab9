#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "deminet/tensor.hpp"

// Differentiable building blocks. Every op takes the tape first and records a
// local-gradient closure only when some input requires a gradient.

namespace deminet {

namespace detail {

inline void require_matrix(const Tensor& x, std::string_view op) {
    if (x.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

inline void accumulate(const Tensor& x, std::span<const real> g) {
    auto dst = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

inline Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<real> out(m * n, real(0));
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const real aip = av[i * k + p];
            if (aip == real(0)) continue;
            const real* brow = &bv[p * n];
            real* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    const bool rg = detail::wants_grad(t, {&a, &b});
    Tensor y = detail::emit("matmul", {m, n}, std::move(out), rg);
    if (rg) {
        t.record("matmul", y, [a, b, y, m, k, n]() {
            auto gy = y.grad();
            auto av = a.values();
            auto bv = b.values();
            if (a.requires_grad()) {
                // ga = gy * b^T, as row updates against a transposed copy of b.
                std::vector<real> bt(n * k);
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bv[p * n + j];
                auto ga = a.grad_mut();
                for (std::size_t i = 0; i < m; ++i) {
                    real* garow = &ga[i * k];
                    for (std::size_t j = 0; j < n; ++j) {
                        const real g = gy[i * n + j];
                        if (g == real(0)) continue;
                        const real* btrow = &bt[j * k];
                        for (std::size_t p = 0; p < k; ++p) garow[p] += g * btrow[p];
                    }
                }
            }
            if (b.requires_grad()) {
                auto gb = b.grad_mut();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const real aip = av[i * k + p];
                        if (aip == real(0)) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * gy[i * n + j];
                    }
            }
        });
    }
    return y;
}

inline Tensor transpose(Tape& t, const Tensor& x) {
    detail::require_matrix(x, "transpose");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<real> out(r * c);
    auto xv = x.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = detail::emit("transpose", {c, r}, std::move(out), rg);
    if (rg) {
        t.record("transpose", y, [x, y, r, c]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[j * r + i];
        });
    }
    return y;
}

inline Tensor reshape(Tape& t, const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = Tensor::make_output(std::move(shape), {x.values().begin(), x.values().end()}, rg);
    if (rg) {
        t.record("reshape", y, [x, y]() { detail::accumulate(x, y.grad()); });
    }
    return y;
}

inline Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    const bool rg = detail::wants_grad(t, {&a, &b});
    Tensor y = detail::emit("add", a.shape(), std::move(out), rg);
    if (rg) {
        t.record("add", y, [a, b, y]() {
            if (a.requires_grad()) detail::accumulate(a, y.grad());
            if (b.requires_grad()) detail::accumulate(b, y.grad());
        });
    }
    return y;
}

inline Tensor add_n(Tape& t, const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("add_n: no inputs");
    Tensor acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(t, acc, xs[i]);
    return acc;
}

inline Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    const bool rg = detail::wants_grad(t, {&a, &b});
    Tensor y = detail::emit("mul", a.shape(), std::move(out), rg);
    if (rg) {
        t.record("mul", y, [a, b, y]() {
            auto gy = y.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_mut();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_mut();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
            }
        });
    }
    return y;
}

inline Tensor scale(Tape& t, const Tensor& x, real c) {
    std::vector<real> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = detail::emit("scale", x.shape(), std::move(out), rg);
    if (rg) {
        t.record("scale", y, [x, y, c]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += c * gy[i];
        });
    }
    return y;
}

// x: [m x n], bias: n values (any shape with n elements) broadcast over rows.
inline Tensor add_rowvec(Tape& t, const Tensor& x, const Tensor& bias) {
    const std::size_t n = x.cols(), m = x.size() / n;
    if (bias.size() != n) {
        throw DimensionError("add_rowvec: bias " + shape_str(bias.shape()) + " for input " + shape_str(x.shape()));
    }
    std::vector<real> out(x.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + bias[j];
    const bool rg = detail::wants_grad(t, {&x, &bias});
    Tensor y = detail::emit("add_rowvec", x.shape(), std::move(out), rg);
    if (rg) {
        t.record("add_rowvec", y, [x, bias, y, m, n]() {
            auto gy = y.grad();
            if (x.requires_grad()) detail::accumulate(x, gy);
            if (bias.requires_grad()) {
                auto gb = bias.grad_mut();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
            }
        });
    }
    return y;
}

/// Affine map x W + b for x: [m x in], W: [in x out], b: [out].
inline Tensor dense_layer(Tape& t, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    return add_rowvec(t, matmul(t, x, weight), bias);
}

inline Tensor leaky_relu(Tape& t, const Tensor& x, real slope) {
    if (!(slope > 0 && slope < 1)) throw ContractError("leaky_relu: slope must lie in (0,1)");
    std::vector<real> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= 0 ? x[i] : slope * x[i];
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = detail::emit("leaky_relu", x.shape(), std::move(out), rg);
    if (rg) {
        t.record("leaky_relu", y, [x, y, slope]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += (x[i] >= 0 ? real(1) : slope) * gy[i];
        });
    }
    return y;
}

/// Softmax over the last dimension; only the first `valid` entries of each
/// slice participate, the rest come out as exact zeros.
inline Tensor masked_softmax_lastdim(Tape& t, const Tensor& x, std::size_t valid) {
    const std::size_t n = x.cols(), m = x.size() / n;
    if (valid == 0 || valid > n) {
        throw DimensionError("softmax: valid length " + std::to_string(valid) + " outside [1, " +
                             std::to_string(n) + "]");
    }
    std::vector<real> out(x.size(), real(0));
    for (std::size_t i = 0; i < m; ++i) {
        const real* xr = &x.values()[i * n];
        real* yr = &out[i * n];
        real mx = xr[0];
        for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, xr[j]);
        real s = 0;
        for (std::size_t j = 0; j < valid; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        for (std::size_t j = 0; j < valid; ++j) yr[j] /= s;
    }
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = detail::emit("softmax", x.shape(), std::move(out), rg);
    if (rg) {
        t.record("softmax", y, [x, y, m, n, valid]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < m; ++i) {
                real dot = 0;
                for (std::size_t j = 0; j < valid; ++j) dot += gy[i * n + j] * y[i * n + j];
                for (std::size_t j = 0; j < valid; ++j) gx[i * n + j] += y[i * n + j] * (gy[i * n + j] - dot);
            }
        });
    }
    return y;
}

inline Tensor softmax_lastdim(Tape& t, const Tensor& x) { return masked_softmax_lastdim(t, x, x.cols()); }

/// Concatenation along the last dimension. All inputs share the leading extent.
inline Tensor concat_lastdim(Tape& t, const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_lastdim: no inputs");
    const std::size_t m = xs[0].size() / xs[0].cols();
    std::size_t total = 0;
    for (const auto& x : xs) {
        if (x.size() / x.cols() != m) {
            throw DimensionError("concat_lastdim: leading extent mismatch " + shape_str(xs[0].shape()) + " vs " +
                                 shape_str(x.shape()));
        }
        total += x.cols();
    }
    std::vector<real> out(m * total);
    std::size_t off = 0;
    for (const auto& x : xs) {
        const std::size_t c = x.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * total + off + j] = x[i * c + j];
        off += c;
    }
    bool rg = false;
    if (t.enabled())
        for (const auto& x : xs) rg = rg || x.requires_grad();
    Shape shape = xs[0].rank() == 1 ? Shape{total} : Shape{m, total};
    Tensor y = Tensor::make_output(std::move(shape), std::move(out), rg);
    if (rg) {
        t.record("concat_lastdim", y, [xs, y, m, total]() {
            auto gy = y.grad();
            std::size_t off = 0;
            for (auto& x : xs) {
                const std::size_t c = x.cols();
                if (x.requires_grad()) {
                    auto gx = x.grad_mut();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[i * total + off + j];
                }
                off += c;
            }
        });
    }
    return y;
}

inline Tensor slice_cols(Tape& t, const Tensor& x, std::size_t begin, std::size_t width) {
    detail::require_matrix(x, "slice_cols");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (width == 0 || begin + width > n) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(width) +
                             ") out of range for " + shape_str(x.shape()));
    }
    std::vector<real> out(m * width);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < width; ++j) out[i * width + j] = x[i * n + begin + j];
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = Tensor::make_output({m, width}, std::move(out), rg);
    if (rg) {
        t.record("slice_cols", y, [x, y, m, n, begin, width]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < width; ++j) gx[i * n + begin + j] += gy[i * width + j];
        });
    }
    return y;
}

inline Tensor slice_rows(Tape& t, const Tensor& x, std::size_t begin, std::size_t count) {
    detail::require_matrix(x, "slice_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (count == 0 || begin + count > m) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                             ") out of range for " + shape_str(x.shape()));
    }
    std::vector<real> out(x.values().begin() + begin * n, x.values().begin() + (begin + count) * n);
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = Tensor::make_output({count, n}, std::move(out), rg);
    if (rg) {
        t.record("slice_rows", y, [x, y, begin, n]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * n + i] += gy[i];
        });
    }
    return y;
}

/// Stacks matrices (or vectors, as single rows) on top of each other.
inline Tensor stack_rows(Tape& t, const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("stack_rows: no inputs");
    const std::size_t n = xs[0].cols();
    std::size_t m = 0;
    for (const auto& x : xs) {
        if (x.cols() != n) {
            throw DimensionError("stack_rows: width mismatch " + shape_str(xs[0].shape()) + " vs " +
                                 shape_str(x.shape()));
        }
        m += x.size() / n;
    }
    std::vector<real> out;
    out.reserve(m * n);
    for (const auto& x : xs) out.insert(out.end(), x.values().begin(), x.values().end());
    bool rg = false;
    if (t.enabled())
        for (const auto& x : xs) rg = rg || x.requires_grad();
    Tensor y = Tensor::make_output({m, n}, std::move(out), rg);
    if (rg) {
        t.record("stack_rows", y, [xs, y]() {
            auto gy = y.grad();
            std::size_t off = 0;
            for (auto& x : xs) {
                if (x.requires_grad()) detail::accumulate(x, gy.subspan(off, x.size()));
                off += x.size();
            }
        });
    }
    return y;
}

/// Broadcasts a single row to `count` rows.
inline Tensor repeat_rows(Tape& t, const Tensor& x, std::size_t count) {
    const std::size_t n = x.size();
    std::vector<real> out(count * n);
    for (std::size_t i = 0; i < count; ++i) std::copy(x.values().begin(), x.values().end(), out.begin() + i * n);
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = Tensor::make_output({count, n}, std::move(out), rg);
    if (rg) {
        t.record("repeat_rows", y, [x, y, count, n]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[j] += gy[i * n + j];
        });
    }
    return y;
}

/// Embedding lookup: rows of `table` picked by index, as an [indices x width] matrix.
inline Tensor gather_rows(Tape& t, const Tensor& table, std::span<const std::size_t> indices) {
    detail::require_matrix(table, "gather_rows");
    if (indices.empty()) throw DimensionError("gather_rows: no indices");
    const std::size_t rows = table.dim(0), n = table.dim(1);
    std::vector<real> out(indices.size() * n);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows) {
            throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range for table " +
                                 shape_str(table.shape()));
        }
        std::copy_n(table.values().begin() + indices[i] * n, n, out.begin() + i * n);
    }
    const bool rg = detail::wants_grad(t, {&table});
    Tensor y = Tensor::make_output({indices.size(), n}, std::move(out), rg);
    if (rg) {
        std::vector<std::size_t> idx(indices.begin(), indices.end());
        t.record("gather_rows", y, [table, y, idx = std::move(idx), n]() {
            auto gy = y.grad();
            auto gt = table.grad_mut();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < n; ++j) gt[idx[i] * n + j] += gy[i * n + j];
        });
    }
    return y;
}

inline Tensor sum(Tape& t, const Tensor& x) {
    real s = 0;
    for (real v : x.values()) s += v;
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = detail::emit("sum", {1}, {s}, rg);
    if (rg) {
        t.record("sum", y, [x, y]() {
            const real g = y.grad()[0];
            for (auto& v : x.grad_mut()) v += g;
        });
    }
    return y;
}

inline Tensor mean(Tape& t, const Tensor& x) { return scale(t, sum(t, x), real(1) / real(x.size())); }

/// Row sums: [m x n] -> [m x 1].
inline Tensor sum_lastdim(Tape& t, const Tensor& x) {
    const std::size_t n = x.cols(), m = x.size() / n;
    std::vector<real> out(m, real(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i] += x[i * n + j];
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = detail::emit("sum_lastdim", {m, 1}, std::move(out), rg);
    if (rg) {
        t.record("sum_lastdim", y, [x, y, m, n]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += gy[i];
        });
    }
    return y;
}

/// Mean of the first `count` rows: [m x n] -> [1 x n].
inline Tensor mean_rows(Tape& t, const Tensor& x, std::size_t count) {
    detail::require_matrix(x, "mean_rows");
    const std::size_t n = x.dim(1);
    if (count == 0 || count > x.dim(0)) throw DimensionError("mean_rows: row count out of range");
    std::vector<real> out(n, real(0));
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
    for (auto& v : out) v /= real(count);
    const bool rg = detail::wants_grad(t, {&x});
    Tensor y = detail::emit("mean_rows", {1, n}, std::move(out), rg);
    if (rg) {
        t.record("mean_rows", y, [x, y, count, n]() {
            auto gy = y.grad();
            auto gx = x.grad_mut();
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += gy[j] / real(count);
        });
    }
    return y;
}

/// Scales row i of x by s[i]: x [m x n], s [m x 1].
inline Tensor scale_rows(Tape& t, const Tensor& x, const Tensor& s) {
    const std::size_t n = x.cols(), m = x.size() / n;
    if (s.size() != m) {
        throw DimensionError("scale_rows: scale " + shape_str(s.shape()) + " for input " + shape_str(x.shape()));
    }
    std::vector<real> out(x.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = s[i] * x[i * n + j];
    const bool rg = detail::wants_grad(t, {&x, &s});
    Tensor y = detail::emit("scale_rows", x.shape(), std::move(out), rg);
    if (rg) {
        t.record("scale_rows", y, [x, s, y, m, n]() {
            auto gy = y.grad();
            if (x.requires_grad()) {
                auto gx = x.grad_mut();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += s[i] * gy[i * n + j];
            }
            if (s.requires_grad()) {
                auto gs = s.grad_mut();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gs[i] += x[i * n + j] * gy[i * n + j];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Batch normalization over the rows of a [batch x features] matrix.

enum class NormMode { train, eval };

struct BatchNorm1d {
    Tensor gamma;         // [features], trainable
    Tensor beta;          // [features], trainable
    Tensor running_mean;  // [features], state
    Tensor running_var;   // [features], state
    real momentum = real(0.1);
    real eps = real(1e-5);

    static BatchNorm1d create(std::size_t features) {
        BatchNorm1d bn;
        bn.gamma = Tensor::from({features}, std::vector<real>(features, real(1)), true);
        bn.beta = Tensor::zeros({features}, true);
        bn.running_mean = Tensor::zeros({features});
        bn.running_var = Tensor::from({features}, std::vector<real>(features, real(1)));
        return bn;
    }
};

/// Train mode normalizes with batch statistics (biased variance) and folds
/// them into the running estimates; eval mode is a fixed affine map.
inline Tensor batchnorm_1d(Tape& t, const Tensor& x, BatchNorm1d& bn, NormMode mode) {
    detail::require_matrix(x, "batchnorm_1d");
    const std::size_t b = x.dim(0), f = x.dim(1);
    if (bn.gamma.size() != f) {
        throw DimensionError("batchnorm_1d: " + std::to_string(bn.gamma.size()) + " features configured, input " +
                             shape_str(x.shape()));
    }
    std::vector<real> mu(f, real(0)), inv(f, real(0));
    if (mode == NormMode::train) {
        std::vector<real> var(f, real(0));
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < f; ++j) mu[j] += x[i * f + j];
        for (auto& v : mu) v /= real(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < f; ++j) {
                const real d = x[i * f + j] - mu[j];
                var[j] += d * d;
            }
        for (auto& v : var) v /= real(b);
        for (std::size_t j = 0; j < f; ++j) inv[j] = real(1) / std::sqrt(var[j] + bn.eps);
        auto rm = bn.running_mean.mutable_values();
        auto rv = bn.running_var.mutable_values();
        const real unbias = b > 1 ? real(b) / real(b - 1) : real(1);
        for (std::size_t j = 0; j < f; ++j) {
            rm[j] = (1 - bn.momentum) * rm[j] + bn.momentum * mu[j];
            rv[j] = (1 - bn.momentum) * rv[j] + bn.momentum * var[j] * unbias;
        }
    } else {
        for (std::size_t j = 0; j < f; ++j) {
            mu[j] = bn.running_mean[j];
            inv[j] = real(1) / std::sqrt(bn.running_var[j] + bn.eps);
        }
    }
    std::vector<real> xhat(b * f), out(b * f);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            xhat[i * f + j] = (x[i * f + j] - mu[j]) * inv[j];
            out[i * f + j] = bn.gamma[j] * xhat[i * f + j] + bn.beta[j];
        }
    Tensor gamma = bn.gamma, beta = bn.beta;
    const bool rg = detail::wants_grad(t, {&x, &gamma, &beta});
    Tensor y = detail::emit("batchnorm_1d", x.shape(), std::move(out), rg);
    if (rg) {
        t.record("batchnorm_1d", y,
                 [x, gamma, beta, y, xhat = std::move(xhat), inv = std::move(inv), b, f, mode]() {
                     auto gy = y.grad();
                     if (gamma.requires_grad()) {
                         auto gg = gamma.grad_mut();
                         for (std::size_t i = 0; i < b; ++i)
                             for (std::size_t j = 0; j < f; ++j) gg[j] += gy[i * f + j] * xhat[i * f + j];
                     }
                     if (beta.requires_grad()) {
                         auto gb = beta.grad_mut();
                         for (std::size_t i = 0; i < b; ++i)
                             for (std::size_t j = 0; j < f; ++j) gb[j] += gy[i * f + j];
                     }
                     if (!x.requires_grad()) return;
                     auto gx = x.grad_mut();
                     if (mode == NormMode::eval) {
                         for (std::size_t i = 0; i < b; ++i)
                             for (std::size_t j = 0; j < f; ++j) gx[i * f + j] += gy[i * f + j] * gamma[j] * inv[j];
                         return;
                     }
                     for (std::size_t j = 0; j < f; ++j) {
                         real sum_d = 0, sum_dx = 0;
                         for (std::size_t i = 0; i < b; ++i) {
                             const real d = gy[i * f + j] * gamma[j];
                             sum_d += d;
                             sum_dx += d * xhat[i * f + j];
                         }
                         for (std::size_t i = 0; i < b; ++i) {
                             const real d = gy[i * f + j] * gamma[j];
                             gx[i * f + j] +=
                                 inv[j] / real(b) * (real(b) * d - sum_d - xhat[i * f + j] * sum_dx);
                         }
                     }
                 });
    }
    return y;
}

}  // namespace deminet
