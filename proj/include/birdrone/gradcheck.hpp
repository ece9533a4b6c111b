#pragma once

#include <cstddef>
#include <string>

#include "birdrone/tensor.hpp"

namespace brd {

struct GradCheckResult {
    double max_err = 0.0;     // worst relative error over checked coordinates
    std::size_t worst = 0;    // flat index of that coordinate
    double analytic = 0.0;    // analytic gradient there
    double numeric = 0.0;     // central-difference estimate there
    std::size_t checked = 0;

    bool ok(double tol) const { return max_err < tol; }
    std::string str() const {
        return "max_err=" + std::to_string(max_err) + " at [" + std::to_string(worst) +
               "] analytic=" + std::to_string(analytic) +
               " numeric=" + std::to_string(numeric) +
               " (" + std::to_string(checked) + " coords)";
    }
};

// Compares backward() against central differences for one tensor. fn must
// build a fresh scalar loss from the passed tensor on every call; the same
// underlying storage is perturbed in place for the numeric side. Relative
// error per coordinate is |a-n| / max(1, |a|, |n|). max_coords > 0 checks an
// evenly strided subset instead of every coordinate.
template <typename T, typename Fn>
GradCheckResult gradcheck(Tensor<T>& param, Fn&& fn, double eps = 1e-5,
                          std::size_t max_coords = 0) {
    param.set_requires_grad(true);
    param.zero_grad();
    {
        Tensor<T> loss = fn(param);
        require(loss.numel() == 1, "gradcheck: fn must return a scalar");
        backward(loss);
    }
    std::vector<T> analytic(param.numel(), T(0));
    if (param.has_grad()) analytic.assign(param.grad().begin(), param.grad().end());

    const std::size_t n = param.numel();
    std::size_t step = 1;
    if (max_coords > 0 && n > max_coords) step = (n + max_coords - 1) / max_coords;

    GradCheckResult res;
    NoGradGuard ng;
    T* data = param.data();
    for (std::size_t i = 0; i < n; i += step) {
        const T saved = data[i];
        data[i] = saved + static_cast<T>(eps);
        const double lp = static_cast<double>(fn(param).value());
        data[i] = saved - static_cast<T>(eps);
        const double lm = static_cast<double>(fn(param).value());
        data[i] = saved;
        const double num = (lp - lm) / (2.0 * eps);
        const double ana = static_cast<double>(analytic[i]);
        const double err = std::abs(ana - num) /
                           std::max({1.0, std::abs(ana), std::abs(num)});
        if (err > res.max_err) {
            res.max_err = err;
            res.worst = i;
            res.analytic = ana;
            res.numeric = num;
        }
        ++res.checked;
    }
    return res;
}

}  // namespace brd
