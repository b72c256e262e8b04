#pragma once

#include <algorithm>
#include <cmath>

#include "embinv/rng.hpp"
#include "embinv/tensor.hpp"

// Shared test oracles. The finite-difference checker is intentionally
// independent of any backward-pass code: it only calls the value function.
namespace testutil {

using embinv::Rng;
using embinv::Tensor;

template <class F>
Tensor finite_diff_grad(F&& value_fn, const Tensor& x, double h = 1e-6) {
    Tensor g(x.dims());
    Tensor probe = x;
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = value_fn(probe);
        probe[i] = orig - h;
        const double fm = value_fn(probe);
        probe[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// norm-based relative error ||a-b|| / max(||a||, ||b||)
inline double rel_error(const Tensor& a, const Tensor& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        num += d * d;
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double den = std::max(std::sqrt(na), std::sqrt(nb));
    if (den == 0.0) return std::sqrt(num);
    return std::sqrt(num) / den;
}

}  // namespace testutil
