#pragma once

#include <cmath>
#include <functional>

#include "poselift/rng.hpp"
#include "poselift/tensor.hpp"

namespace test_util {

inline poselift::Tensor random_tensor(std::vector<int64_t> shape, poselift::Rng& rng,
                                      double lo = -1.0, double hi = 1.0) {
    poselift::Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

inline double max_abs_diff(const poselift::Tensor& a, const poselift::Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

inline double max_rel_diff(const poselift::Tensor& a, const poselift::Tensor& b,
                           double floor = 1e-6) {
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double den = std::max({std::abs(static_cast<double>(a[i])),
                                     std::abs(static_cast<double>(b[i])), floor});
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]) / den);
    }
    return m;
}

/// Central-difference check of an analytic gradient: perturbs every element
/// of `param` by +/-h around its current value, evaluates `loss`, and returns
/// the worst scaled error against `analytic`. Each entry's error is scaled by
/// max(floor, 0.1 * max|analytic|, |numeric|, |analytic|): a relative error
/// whose floor tracks the gradient's own magnitude, so near-zero entries are
/// held to the precision the float32 pipeline can actually deliver.
inline double grad_check(poselift::Tensor& param, const poselift::Tensor& analytic,
                         const std::function<double()>& loss, double h = 1e-3,
                         double floor = 1e-2) {
    double gmax = 0.0;
    for (int64_t i = 0; i < analytic.size(); ++i)
        gmax = std::max(gmax, std::abs(static_cast<double>(analytic[i])));
    const double scale_floor = std::max(floor, 0.1 * gmax);
    double worst = 0.0;
    for (int64_t i = 0; i < param.size(); ++i) {
        const float saved = param[i];
        param[i] = static_cast<float>(saved + h);
        const double up = loss();
        param[i] = static_cast<float>(saved - h);
        const double down = loss();
        param[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(numeric - static_cast<double>(analytic[i])) /
                           std::max({scale_floor, std::abs(numeric),
                                     std::abs(static_cast<double>(analytic[i]))});
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace test_util
