#pragma once

#include "tgpt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace tgpt::ad {

/// Scalar-valued function of some input tensors, built on the given tape.
using TensorFunction = std::function<Tensor(Tape&, const std::vector<Tensor>& inputs)>;

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::vector<Array> analytic;
    std::vector<Array> numeric;
};

/**
 * @brief Compares reverse-mode gradients with central differences.
 *
 * The relative error of each coordinate is |a - n| / max(1, |a|, |n|). GELU
 * is smooth, so no coordinates are skipped; callers use a looser bound for it.
 */
inline GradCheckResult grad_check(const TensorFunction& f, const std::vector<Array>& point, double step = 1e-5) {
    GradCheckResult result;
    {
        Tape tape;
        std::vector<Tensor> inputs;
        for (const auto& p : point) inputs.push_back(tape.leaf(p, true));
        const Tensor out = f(tape, inputs);
        if (out.value().size() != 1) throw ShapeError("grad_check needs a scalar-valued function");
        const Gradients grads = tape.backward(out);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const Array* g = grads.find(inputs[i]);
            result.analytic.push_back(g ? *g : Array(point[i].shape(), 0.0));
        }
    }
    auto evaluate = [&](const std::vector<Array>& at) {
        Tape tape;
        std::vector<Tensor> inputs;
        for (const auto& p : at) inputs.push_back(tape.leaf(p, false));
        return f(tape, inputs).value().item();
    };
    std::vector<Array> probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        Array numeric(point[i].shape(), 0.0);
        for (std::size_t j = 0; j < point[i].size(); ++j) {
            const double x0 = point[i][j];
            probe[i][j] = x0 + step;
            const double up = evaluate(probe);
            probe[i][j] = x0 - step;
            const double down = evaluate(probe);
            probe[i][j] = x0;
            numeric[j] = (up - down) / (2.0 * step);
            const double a = result.analytic[i][j];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric[j])});
            result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric[j]) / denom);
        }
        result.numeric.push_back(std::move(numeric));
    }
    return result;
}

}  // namespace tgpt::ad
