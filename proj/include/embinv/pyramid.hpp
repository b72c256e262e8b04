#pragma once

#include <vector>

#include "embinv/tensor.hpp"

namespace embinv {

// Laplacian pyramid over H x W x C tensors. Blur kernel is the separable
// binomial [1,4,6,4,1]/16 with cyclic boundaries, so reduce/expand are exact
// adjoints up to the factor 4: <reduce(x), y> = 1/4 <x, expand(y)>.
struct Pyramid {
    std::vector<Tensor> bands;  // L_0 .. L_{N-1}, halving spatial dims
    Tensor top;                 // Gaussian residual g_N
    int levels() const { return static_cast<int>(bands.size()); }
};

namespace detail {

inline constexpr double kBinomial[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

// separable cyclic blur, x pass then y pass
inline Tensor blur_cyclic(const Tensor& t) {
    const int H = t.dim(0), W = t.dim(1), C = t.dim(2);
    Tensor tmp(t.dims()), out(t.dims());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int k = -2; k <= 2; ++k) {
                    int xx = (x + k) % W;
                    if (xx < 0) xx += W;
                    acc += kBinomial[k + 2] * t.at3(y, xx, c);
                }
                tmp.at3(y, x, c) = acc;
            }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int k = -2; k <= 2; ++k) {
                    int yy = (y + k) % H;
                    if (yy < 0) yy += H;
                    acc += kBinomial[k + 2] * tmp.at3(yy, x, c);
                }
                out.at3(y, x, c) = acc;
            }
    return out;
}

inline void check_rank3(const Tensor& t, const char* op) {
    if (t.rank() != 3) throw ValidationError(std::string(op) + " expects a rank-3 tensor");
}

}  // namespace detail

inline Tensor reduce(const Tensor& g) {
    detail::check_rank3(g, "reduce");
    const int H = g.dim(0), W = g.dim(1), C = g.dim(2);
    if (H % 2 != 0 || W % 2 != 0) {
        throw ValidationError("reduce: spatial dims must be even, got " + g.dims_str());
    }
    const Tensor blurred = detail::blur_cyclic(g);
    Tensor out({H / 2, W / 2, C});
    for (int y = 0; y < H / 2; ++y)
        for (int x = 0; x < W / 2; ++x)
            for (int c = 0; c < C; ++c) out.at3(y, x, c) = blurred.at3(2 * y, 2 * x, c);
    return out;
}

// zero-upsample by 2, blur, gain x4 (constant images are preserved exactly)
inline Tensor expand(const Tensor& g) {
    detail::check_rank3(g, "expand");
    const int H = g.dim(0), W = g.dim(1), C = g.dim(2);
    Tensor up({2 * H, 2 * W, C});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) up.at3(2 * y, 2 * x, c) = g.at3(y, x, c);
    Tensor out = detail::blur_cyclic(up);
    out *= 4.0;
    return out;
}

inline Pyramid build_pyramid(const Tensor& p, int levels) {
    detail::check_rank3(p, "build_pyramid");
    if (levels < 1) throw ValidationError("build_pyramid: levels must be >= 1");
    const int div = 1 << levels;
    if (p.dim(0) % div != 0 || p.dim(1) % div != 0) {
        throw ValidationError("build_pyramid: dims " + p.dims_str() +
                              " not divisible by 2^" + std::to_string(levels));
    }
    Pyramid pyr;
    Tensor g = p;
    for (int k = 0; k < levels; ++k) {
        Tensor next = reduce(g);
        pyr.bands.push_back(g - expand(next));
        g = std::move(next);
    }
    pyr.top = std::move(g);
    return pyr;
}

inline Tensor collapse(const Pyramid& pyr) {
    if (pyr.bands.empty()) throw ValidationError("collapse: empty pyramid");
    Tensor g = pyr.top;
    for (size_t k = pyr.bands.size(); k-- > 0;) {
        g = pyr.bands[k] + expand(g);
    }
    return g;
}

// Adjoint of build_pyramid: maps gradients w.r.t. (bands, top) to the
// gradient w.r.t. the input image. Uses reduce^T = expand/4, expand^T = 4*reduce.
inline Tensor pyramid_adjoint(const std::vector<Tensor>& band_grads, const Tensor& top_grad) {
    if (band_grads.empty()) throw ValidationError("pyramid_adjoint: no bands");
    Tensor c = top_grad;
    for (size_t k = band_grads.size(); k-- > 0;) {
        Tensor inner = c - 4.0 * reduce(band_grads[k]);  // expand^T folded into g_{k+1} grad
        c = band_grads[k] + 0.25 * expand(inner);        // reduce^T back to g_k
    }
    return c;
}

// Laplacian-pyramid gradient normalization: every band (and the top residual)
// rescaled to unit RMS, then collapsed. Balances spectral energy of a gradient.
inline Tensor lpgn(const Tensor& grad, int levels, double eps = 1e-8) {
    Pyramid pyr = build_pyramid(grad, levels);
    for (auto& band : pyr.bands) {
        band *= 1.0 / (rms(band) + eps);
    }
    pyr.top *= 1.0 / (rms(pyr.top) + eps);
    return collapse(pyr);
}

}  // namespace embinv
