#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "deminet/tensor.hpp"

namespace deminet {

struct GradCheckReport {
    real max_relative_error = 0;
    std::size_t coordinates = 0;
    std::size_t worst_tensor = 0;  // index into the checked tensors
    std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate, over every tensor in `inputs`.
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
inline GradCheckReport check_gradients_report(const std::function<Tensor(Tape&)>& f, const std::vector<Tensor>& inputs,
                                              real step) {
    if (!(step > 0)) throw ContractError("check_gradients: step must be positive");
    for (const auto& x : inputs) x.zero_grad();

    std::vector<std::vector<real>> analytic;
    {
        Tape tape;
        Tensor loss = f(tape);
        if (!loss.is_scalar()) {
            throw ContractError("check_gradients: function returned shape " + shape_str(loss.shape()));
        }
        backward(loss, tape);
        for (const auto& x : inputs) {
            if (x.has_grad())
                analytic.emplace_back(x.grad().begin(), x.grad().end());
            else
                analytic.emplace_back(x.size(), real(0));
        }
    }

    auto eval = [&]() {
        Tape quiet(false);
        return f(quiet).item();
    };

    GradCheckReport report;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor x = inputs[ti];
        auto v = x.mutable_values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const real saved = v[i];
            v[i] = saved + step;
            const real up = eval();
            v[i] = saved - step;
            const real down = eval();
            v[i] = saved;
            const real numeric = (up - down) / (2 * step);
            const real a = analytic[ti][i];
            const real err = std::abs(a - numeric) / std::max(real(1), std::abs(a));
            if (err > report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_tensor = ti;
                report.worst_index = i;
            }
            ++report.coordinates;
        }
    }
    for (const auto& x : inputs) x.zero_grad();
    return report;
}

inline real check_gradients(const std::function<Tensor(Tape&)>& f, const std::vector<Tensor>& inputs, real step) {
    return check_gradients_report(f, inputs, step).max_relative_error;
}

/// Single-input form: f receives the tape and x.
inline real check_gradients(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x, real step) {
    if (!x.requires_grad()) throw ContractError("check_gradients: input does not require grad");
    return check_gradients([&](Tape& t) { return f(t, x); }, std::vector<Tensor>{x}, step);
}

}  // namespace deminet
