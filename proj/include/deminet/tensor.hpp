#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deminet/core.hpp"

namespace deminet {

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a cheap handle; copies share the same storage. Values are
/// treated as immutable once an op has produced them. Only leaves (parameters)
/// are mutated in place, and only by the optimizer or the gradient checker.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = checked_numel(shape);
        return Tensor(std::move(shape), std::vector<real>(n, real(0)), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<real> values, bool requires_grad = false) {
        const auto n = checked_numel(shape);
        if (values.size() != n) {
            throw DimensionError("tensor: " + std::to_string(values.size()) + " values for shape " +
                                 shape_str(shape));
        }
        for (real v : values) {
            if (!std::isfinite(v)) throw NumericError("tensor: non-finite value in leaf");
        }
        return Tensor(std::move(shape), std::move(values), requires_grad);
    }

    static Tensor scalar(real v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    // Matrix helper: rows x cols, values row-major.
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<real> values,
                         bool requires_grad = false) {
        return from({rows, cols}, std::move(values), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
    std::size_t cols() const { return node_->shape.back(); }
    bool is_scalar() const { return size() == 1; }

    std::span<const real> values() const { return node_->value; }
    std::span<real> mutable_values() { return node_->value; }
    real item() const {
        if (!is_scalar()) throw ContractError("item(): tensor of shape " + shape_str(shape()) + " is not scalar");
        return node_->value[0];
    }
    real operator[](std::size_t i) const { return node_->value[i]; }
    real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const real> grad() const { return node_->grad; }
    // Allocates a zero gradient on first use.
    std::span<real> grad_mut() const {
        if (node_->grad.empty()) node_->grad.assign(node_->value.size(), real(0));
        return node_->grad;
    }
    void zero_grad() const {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), real(0));
    }
    void drop_grad() {
        node_->grad.clear();
        node_->grad.shrink_to_fit();
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    // Deep copy of values (and requires_grad flag); no gradient.
    Tensor clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

    // Internal constructor used by ops once the output has been validated.
    static Tensor make_output(Shape shape, std::vector<real> values, bool requires_grad) {
        return Tensor(std::move(shape), std::move(values), requires_grad);
    }

  private:
    struct Node {
        Shape shape;
        std::vector<real> value;
        std::vector<real> grad;
        bool requires_grad = false;
    };

    Tensor(Shape shape, std::vector<real> values, bool requires_grad)
        : node_(std::make_shared<Node>(Node{std::move(shape), std::move(values), {}, requires_grad})) {}

    static std::size_t checked_numel(const Shape& shape) {
        if (shape.empty()) throw DimensionError("tensor: empty shape");
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor: zero dimension in shape " + shape_str(shape));
        }
        return shape_numel(shape);
    }

    std::shared_ptr<Node> node_;
};

/// Wengert list of recorded operations.
///
/// Entries are appended after their inputs exist, so the list is always in
/// topological order and the backward sweep is a plain reverse iteration.
class Tape {
  public:
    using Backward = std::function<void()>;

    explicit Tape(bool enabled = true) : enabled_(enabled) {}

    bool enabled() const { return enabled_; }
    std::size_t size() const { return entries_.size(); }

    void record(std::string_view op, const Tensor& output, Backward fn) {
        entries_.push_back(Entry{std::string(op), output, std::move(fn)});
    }

    // Adds `g` into the gradient of `output` ahead of run_backward().
    void seed(const Tensor& output, std::span<const real> g) {
        if (g.size() != output.size()) {
            throw DimensionError("seed: gradient of size " + std::to_string(g.size()) + " for tensor " +
                                 shape_str(output.shape()));
        }
        auto dst = output.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    void run_backward() {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (!it->output.has_grad()) continue;
            it->backward();
        }
    }

    void clear() { entries_.clear(); }

    std::vector<std::string> op_names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.op);
        return out;
    }

  private:
    struct Entry {
        std::string op;
        Tensor output;
        Backward backward;
    };

    std::vector<Entry> entries_;
    bool enabled_;
};

/// Seeds d(loss)/d(loss) = 1 and sweeps the tape.
inline void backward(const Tensor& loss, Tape& tape) {
    if (!loss.is_scalar()) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    const real one = 1;
    tape.seed(loss, std::span<const real>(&one, 1));
    tape.run_backward();
}

namespace detail {

inline bool wants_grad(const Tape& t, std::initializer_list<const Tensor*> inputs) {
    if (!t.enabled()) return false;
    for (const auto* x : inputs) {
        if (x->defined() && x->requires_grad()) return true;
    }
    return false;
}

inline void check_finite(std::span<const real> v, std::string_view op) {
    for (real x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in output");
    }
}

// Validates and wraps an op output.
inline Tensor emit(std::string_view op, Shape shape, std::vector<real> values, bool requires_grad) {
    check_finite(values, op);
    return Tensor::make_output(std::move(shape), std::move(values), requires_grad);
}

}  // namespace detail

}  // namespace deminet
