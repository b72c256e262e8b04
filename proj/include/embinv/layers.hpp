#pragma once

#include <optional>
#include <string>
#include <vector>

#include "embinv/tensor.hpp"

namespace embinv {

enum class LayerKind { Conv, Deconv, Fc, Relu, L2Norm, Crop, Pad, Concat };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Deconv: return "deconv";
        case LayerKind::Fc: return "fc";
        case LayerKind::Relu: return "relu";
        case LayerKind::L2Norm: return "l2norm";
        case LayerKind::Crop: return "crop";
        case LayerKind::Pad: return "pad";
        case LayerKind::Concat: return "concat";
    }
    return "?";
}

// Padding follows the "same" convention: out = ceil(in/stride),
// pad_total = max((out-1)*stride + k - in, 0), split floor/ceil front/back.
inline int conv_out_dim(int in, int stride) { return (in + stride - 1) / stride; }

inline int conv_pad_begin(int in, int k, int stride) {
    const int out = conv_out_dim(in, stride);
    const int total = std::max((out - 1) * stride + k - in, 0);
    return total / 2;
}

// Convolution is cross-correlation (no kernel flip). Kernels are
// kh x kw x Cin x Cout; fc kernels are in x out with out = kernel^T * in + b.
struct LayerParams {
    LayerKind kind = LayerKind::Relu;
    Tensor kernel;
    Tensor bias;
    int stride = 1;
    std::vector<int> in_dims;
    std::vector<int> out_dims;

    static LayerParams conv(Tensor kernel, Tensor bias, int stride, std::vector<int> in_dims) {
        LayerParams p;
        p.kind = LayerKind::Conv;
        if (kernel.rank() != 4) throw ValidationError("conv kernel must be rank 4 (kh x kw x Cin x Cout)");
        if (stride != 1 && stride != 2) throw ValidationError("conv stride must be 1 or 2");
        if (in_dims.size() != 3) throw ValidationError("conv input must be rank 3 (H x W x C)");
        if (in_dims[2] != kernel.dim(2)) {
            throw ValidationError("conv: input channels " + std::to_string(in_dims[2]) +
                                  " != kernel Cin " + std::to_string(kernel.dim(2)));
        }
        const int cout = kernel.dim(3);
        if (bias.rank() != 1 || bias.dim(0) != cout) throw ValidationError("conv bias must be rank 1 of length Cout");
        p.out_dims = {conv_out_dim(in_dims[0], stride), conv_out_dim(in_dims[1], stride), cout};
        p.kernel = std::move(kernel);
        p.bias = std::move(bias);
        p.stride = stride;
        p.in_dims = std::move(in_dims);
        return p;
    }

    static LayerParams deconv(Tensor kernel, Tensor bias, std::vector<int> in_dims) {
        LayerParams p;
        p.kind = LayerKind::Deconv;
        if (kernel.rank() != 4) throw ValidationError("deconv kernel must be rank 4 (kh x kw x Cin x Cout)");
        if (in_dims.size() != 3) throw ValidationError("deconv input must be rank 3");
        if (in_dims[2] != kernel.dim(2)) {
            throw ValidationError("deconv: input channels " + std::to_string(in_dims[2]) +
                                  " != kernel Cin " + std::to_string(kernel.dim(2)));
        }
        const int cout = kernel.dim(3);
        if (bias.rank() != 1 || bias.dim(0) != cout) throw ValidationError("deconv bias must be rank 1 of length Cout");
        p.out_dims = {2 * in_dims[0], 2 * in_dims[1], cout};
        p.kernel = std::move(kernel);
        p.bias = std::move(bias);
        p.stride = 2;
        p.in_dims = std::move(in_dims);
        return p;
    }

    static LayerParams fc(Tensor kernel, Tensor bias, std::vector<int> in_dims) {
        LayerParams p;
        p.kind = LayerKind::Fc;
        if (kernel.rank() != 2) throw ValidationError("fc kernel must be rank 2 (in x out)");
        size_t flat = 1;
        for (int d : in_dims) flat *= static_cast<size_t>(d);
        if (flat != static_cast<size_t>(kernel.dim(0))) {
            throw ValidationError("fc: flattened input length " + std::to_string(flat) +
                                  " != kernel rows " + std::to_string(kernel.dim(0)));
        }
        const int out = kernel.dim(1);
        if (bias.rank() != 1 || bias.dim(0) != out) throw ValidationError("fc bias must be rank 1 of length out");
        p.out_dims = {out};
        p.kernel = std::move(kernel);
        p.bias = std::move(bias);
        p.in_dims = std::move(in_dims);
        return p;
    }

    static LayerParams relu(std::vector<int> dims) {
        LayerParams p;
        p.kind = LayerKind::Relu;
        p.in_dims = dims;
        p.out_dims = std::move(dims);
        return p;
    }

    static LayerParams l2norm(int length) {
        LayerParams p;
        p.kind = LayerKind::L2Norm;
        p.in_dims = {length};
        p.out_dims = {length};
        return p;
    }

    static LayerParams crop(std::vector<int> in_dims, std::vector<int> out_dims) {
        LayerParams p;
        p.kind = LayerKind::Crop;
        if (in_dims.size() != 3 || out_dims.size() != 3) throw ValidationError("crop dims must be rank 3");
        if (out_dims[0] > in_dims[0] || out_dims[1] > in_dims[1] || out_dims[2] != in_dims[2]) {
            throw ValidationError("crop output must be spatially smaller with equal channels");
        }
        p.in_dims = std::move(in_dims);
        p.out_dims = std::move(out_dims);
        return p;
    }

    static LayerParams pad(std::vector<int> in_dims, std::vector<int> out_dims) {
        LayerParams p;
        p.kind = LayerKind::Pad;
        if (in_dims.size() != 3 || out_dims.size() != 3) throw ValidationError("pad dims must be rank 3");
        if (out_dims[0] < in_dims[0] || out_dims[1] < in_dims[1] || out_dims[2] != in_dims[2]) {
            throw ValidationError("pad output must be spatially larger with equal channels");
        }
        p.in_dims = std::move(in_dims);
        p.out_dims = std::move(out_dims);
        return p;
    }

    static LayerParams concat(std::vector<int> a_dims, std::vector<int> b_dims) {
        LayerParams p;
        p.kind = LayerKind::Concat;
        if (a_dims.size() != 3 || b_dims.size() != 3 || a_dims[0] != b_dims[0] || a_dims[1] != b_dims[1]) {
            throw ValidationError("concat requires two rank-3 tensors with equal spatial dims");
        }
        p.in_dims = a_dims;
        p.out_dims = {a_dims[0], a_dims[1], a_dims[2] + b_dims[2]};
        return p;
    }

    bool has_params() const {
        return kind == LayerKind::Conv || kind == LayerKind::Deconv || kind == LayerKind::Fc;
    }
};

namespace detail {

inline void check_input(const Tensor& in, const LayerParams& p) {
    if (in.dims() != p.in_dims) {
        throw ValidationError(std::string(layer_kind_name(p.kind)) + ": input dims " +
                              in.dims_str() + " do not match declared " +
                              Tensor(p.in_dims).dims_str());
    }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& in, const LayerParams& p) {
    if (p.kind != LayerKind::Conv) throw ValidationError("conv2d: params kind is not conv");
    detail::check_input(in, p);
    const int H = in.dim(0), W = in.dim(1), Cin = in.dim(2);
    const int kh = p.kernel.dim(0), kw = p.kernel.dim(1), Cout = p.kernel.dim(3);
    const int s = p.stride;
    const int Ho = p.out_dims[0], Wo = p.out_dims[1];
    const int py = conv_pad_begin(H, kh, s), px = conv_pad_begin(W, kw, s);
    Tensor out(p.out_dims);
    std::vector<double> acc(static_cast<size_t>(Cout));
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            for (int c = 0; c < Cout; ++c) acc[static_cast<size_t>(c)] = p.bias[static_cast<size_t>(c)];
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * s - py + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * s - px + kx;
                    if (ix < 0 || ix >= W) continue;
                    const double* in_px = in.data() + in.idx3(iy, ix, 0);
                    const double* krow = p.kernel.data() +
                                         (static_cast<size_t>(ky) * kw + kx) * Cin * Cout;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double v = in_px[ci];
                        const double* kk = krow + static_cast<size_t>(ci) * Cout;
                        for (int co = 0; co < Cout; ++co) acc[static_cast<size_t>(co)] += v * kk[co];
                    }
                }
            }
            double* out_px = out.data() + out.idx3(oy, ox, 0);
            for (int c = 0; c < Cout; ++c) out_px[c] = acc[static_cast<size_t>(c)];
        }
    }
    ensure_finite(out, "conv2d output");
    return out;
}

// Transposed convolution, stride 2, doubling spatial dims: the exact adjoint
// of the matching stride-2 conv2d (kernel channel axes swapped).
inline Tensor deconv2d(const Tensor& in, const LayerParams& p) {
    if (p.kind != LayerKind::Deconv) throw ValidationError("deconv2d: params kind is not deconv");
    detail::check_input(in, p);
    const int H = in.dim(0), W = in.dim(1), Cin = in.dim(2);
    const int kh = p.kernel.dim(0), kw = p.kernel.dim(1), Cout = p.kernel.dim(3);
    const int Ho = 2 * H, Wo = 2 * W;
    // padding of the matching conv (input 2H, kernel k, stride 2)
    const int py = conv_pad_begin(Ho, kh, 2), px = conv_pad_begin(Wo, kw, 2);
    Tensor out(p.out_dims);
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            double* out_px = out.data() + out.idx3(oy, ox, 0);
            for (int c = 0; c < Cout; ++c) out_px[c] = p.bias[static_cast<size_t>(c)];
        }
    }
    // scatter: out[2q - pad + k] += in[q] * K[k]
    for (int qy = 0; qy < H; ++qy) {
        for (int qx = 0; qx < W; ++qx) {
            const double* in_px = in.data() + in.idx3(qy, qx, 0);
            for (int ky = 0; ky < kh; ++ky) {
                const int oy = 2 * qy - py + ky;
                if (oy < 0 || oy >= Ho) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ox = 2 * qx - px + kx;
                    if (ox < 0 || ox >= Wo) continue;
                    double* out_px = out.data() + out.idx3(oy, ox, 0);
                    const double* krow = p.kernel.data() +
                                         (static_cast<size_t>(ky) * kw + kx) * Cin * Cout;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double v = in_px[ci];
                        const double* kk = krow + static_cast<size_t>(ci) * Cout;
                        for (int co = 0; co < Cout; ++co) out_px[co] += v * kk[co];
                    }
                }
            }
        }
    }
    ensure_finite(out, "deconv2d output");
    return out;
}

inline Tensor fully_connected(const Tensor& in, const LayerParams& p) {
    if (p.kind != LayerKind::Fc) throw ValidationError("fully_connected: params kind is not fc");
    if (in.size() != static_cast<size_t>(p.kernel.dim(0))) {
        throw ValidationError("fc: flattened input length " + std::to_string(in.size()) +
                              " != kernel rows " + std::to_string(p.kernel.dim(0)));
    }
    const int n_in = p.kernel.dim(0), n_out = p.kernel.dim(1);
    Tensor out(p.out_dims);
    for (int j = 0; j < n_out; ++j) out[static_cast<size_t>(j)] = p.bias[static_cast<size_t>(j)];
    for (int i = 0; i < n_in; ++i) {
        const double v = in[static_cast<size_t>(i)];
        const double* krow = p.kernel.data() + static_cast<size_t>(i) * n_out;
        for (int j = 0; j < n_out; ++j) out[static_cast<size_t>(j)] += v * krow[j];
    }
    ensure_finite(out, "fc output");
    return out;
}

inline Tensor relu(const Tensor& in) {
    Tensor out = in;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    return out;
}

inline Tensor l2_normalize(const Tensor& in) {
    if (in.rank() != 1) throw ValidationError("l2_normalize expects a rank-1 tensor");
    const double n = norm2(in);
    if (n <= 1e-12) throw ValidationError("l2_normalize: degenerate input (norm <= 1e-12)");
    Tensor out = in;
    out *= 1.0 / n;
    return out;
}

inline Tensor crop_center(const Tensor& in, const LayerParams& p) {
    if (p.kind != LayerKind::Crop) throw ValidationError("crop_center: params kind is not crop");
    detail::check_input(in, p);
    const int oy = (p.in_dims[0] - p.out_dims[0]) / 2;
    const int ox = (p.in_dims[1] - p.out_dims[1]) / 2;
    Tensor out(p.out_dims);
    for (int y = 0; y < p.out_dims[0]; ++y)
        for (int x = 0; x < p.out_dims[1]; ++x)
            for (int c = 0; c < p.out_dims[2]; ++c)
                out.at3(y, x, c) = in.at3(y + oy, x + ox, c);
    return out;
}

inline Tensor zero_pad(const Tensor& in, const LayerParams& p) {
    if (p.kind != LayerKind::Pad) throw ValidationError("zero_pad: params kind is not pad");
    detail::check_input(in, p);
    const int oy = (p.out_dims[0] - p.in_dims[0]) / 2;
    const int ox = (p.out_dims[1] - p.in_dims[1]) / 2;
    Tensor out(p.out_dims);
    for (int y = 0; y < p.in_dims[0]; ++y)
        for (int x = 0; x < p.in_dims[1]; ++x)
            for (int c = 0; c < p.in_dims[2]; ++c)
                out.at3(y + oy, x + ox, c) = in.at3(y, x, c);
    return out;
}

inline Tensor concat_depth(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
        throw ValidationError("concat_depth: spatial dims must match, got " + a.dims_str() +
                              " and " + b.dims_str());
    }
    const int H = a.dim(0), W = a.dim(1), Ca = a.dim(2), Cb = b.dim(2);
    Tensor out({H, W, Ca + Cb});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < Ca; ++c) out.at3(y, x, c) = a.at3(y, x, c);
            for (int c = 0; c < Cb; ++c) out.at3(y, x, Ca + c) = b.at3(y, x, c);
        }
    return out;
}

inline std::pair<Tensor, Tensor> concat_depth_backward(const Tensor& upstream, int ca, int cb) {
    if (upstream.rank() != 3 || upstream.dim(2) != ca + cb) {
        throw ValidationError("concat_depth_backward: channel split mismatch");
    }
    const int H = upstream.dim(0), W = upstream.dim(1);
    Tensor ga({H, W, ca}), gb({H, W, cb});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < ca; ++c) ga.at3(y, x, c) = upstream.at3(y, x, c);
            for (int c = 0; c < cb; ++c) gb.at3(y, x, c) = upstream.at3(y, x, ca + c);
        }
    return {std::move(ga), std::move(gb)};
}

struct LayerGrads {
    Tensor input_grad;
    Tensor kernel_grad;  // empty for parameterless layers
    Tensor bias_grad;
};

inline LayerGrads conv2d_backward(const Tensor& in, const LayerParams& p, const Tensor& upstream,
                                  bool need_param_grads = true) {
    if (upstream.dims() != p.out_dims) {
        throw ValidationError("conv2d_backward: upstream dims " + upstream.dims_str() +
                              " != output dims");
    }
    const int H = in.dim(0), W = in.dim(1), Cin = in.dim(2);
    const int kh = p.kernel.dim(0), kw = p.kernel.dim(1), Cout = p.kernel.dim(3);
    const int s = p.stride;
    const int Ho = p.out_dims[0], Wo = p.out_dims[1];
    const int py = conv_pad_begin(H, kh, s), px = conv_pad_begin(W, kw, s);

    LayerGrads g;
    g.input_grad = Tensor(in.dims());
    if (need_param_grads) {
        g.kernel_grad = Tensor(p.kernel.dims());
        g.bias_grad = Tensor(p.bias.dims());
    }
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            const double* up_px = upstream.data() + upstream.idx3(oy, ox, 0);
            if (need_param_grads) {
                for (int co = 0; co < Cout; ++co) g.bias_grad[static_cast<size_t>(co)] += up_px[co];
            }
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * s - py + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * s - px + kx;
                    if (ix < 0 || ix >= W) continue;
                    const double* in_px = in.data() + in.idx3(iy, ix, 0);
                    double* gin_px = g.input_grad.data() + g.input_grad.idx3(iy, ix, 0);
                    const size_t koff = (static_cast<size_t>(ky) * kw + kx) *
                                        static_cast<size_t>(Cin) * Cout;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double* kk = p.kernel.data() + koff + static_cast<size_t>(ci) * Cout;
                        double acc = 0.0;
                        for (int co = 0; co < Cout; ++co) acc += up_px[co] * kk[co];
                        gin_px[ci] += acc;
                        if (need_param_grads) {
                            double* gk = g.kernel_grad.data() + koff + static_cast<size_t>(ci) * Cout;
                            const double v = in_px[ci];
                            for (int co = 0; co < Cout; ++co) gk[co] += v * up_px[co];
                        }
                    }
                }
            }
        }
    }
    return g;
}

inline LayerGrads deconv2d_backward(const Tensor& in, const LayerParams& p, const Tensor& upstream,
                                    bool need_param_grads = true) {
    if (upstream.dims() != p.out_dims) {
        throw ValidationError("deconv2d_backward: upstream dims " + upstream.dims_str() +
                              " != output dims");
    }
    const int H = in.dim(0), W = in.dim(1), Cin = in.dim(2);
    const int kh = p.kernel.dim(0), kw = p.kernel.dim(1), Cout = p.kernel.dim(3);
    const int Ho = 2 * H, Wo = 2 * W;
    const int py = conv_pad_begin(Ho, kh, 2), px = conv_pad_begin(Wo, kw, 2);

    LayerGrads g;
    g.input_grad = Tensor(in.dims());
    if (need_param_grads) {
        g.kernel_grad = Tensor(p.kernel.dims());
        g.bias_grad = Tensor(p.bias.dims());
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                const double* up_px = upstream.data() + upstream.idx3(oy, ox, 0);
                for (int co = 0; co < Cout; ++co) g.bias_grad[static_cast<size_t>(co)] += up_px[co];
            }
    }
    for (int qy = 0; qy < H; ++qy) {
        for (int qx = 0; qx < W; ++qx) {
            const double* in_px = in.data() + in.idx3(qy, qx, 0);
            double* gin_px = g.input_grad.data() + g.input_grad.idx3(qy, qx, 0);
            for (int ky = 0; ky < kh; ++ky) {
                const int oy = 2 * qy - py + ky;
                if (oy < 0 || oy >= Ho) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ox = 2 * qx - px + kx;
                    if (ox < 0 || ox >= Wo) continue;
                    const double* up_px = upstream.data() + upstream.idx3(oy, ox, 0);
                    const size_t koff = (static_cast<size_t>(ky) * kw + kx) *
                                        static_cast<size_t>(Cin) * Cout;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double* kk = p.kernel.data() + koff + static_cast<size_t>(ci) * Cout;
                        double acc = 0.0;
                        for (int co = 0; co < Cout; ++co) acc += up_px[co] * kk[co];
                        gin_px[ci] += acc;
                        if (need_param_grads) {
                            double* gk = g.kernel_grad.data() + koff + static_cast<size_t>(ci) * Cout;
                            const double v = in_px[ci];
                            for (int co = 0; co < Cout; ++co) gk[co] += v * up_px[co];
                        }
                    }
                }
            }
        }
    }
    return g;
}

inline LayerGrads fc_backward(const Tensor& in, const LayerParams& p, const Tensor& upstream,
                              bool need_param_grads = true) {
    if (upstream.dims() != p.out_dims) {
        throw ValidationError("fc_backward: upstream dims mismatch");
    }
    const int n_in = p.kernel.dim(0), n_out = p.kernel.dim(1);
    LayerGrads g;
    g.input_grad = Tensor(in.dims());
    if (need_param_grads) {
        g.kernel_grad = Tensor(p.kernel.dims());
        g.bias_grad = upstream;
    }
    for (int i = 0; i < n_in; ++i) {
        const double* krow = p.kernel.data() + static_cast<size_t>(i) * n_out;
        double acc = 0.0;
        for (int j = 0; j < n_out; ++j) acc += krow[j] * upstream[static_cast<size_t>(j)];
        g.input_grad[static_cast<size_t>(i)] = acc;
        if (need_param_grads) {
            double* gk = g.kernel_grad.data() + static_cast<size_t>(i) * n_out;
            const double v = in[static_cast<size_t>(i)];
            for (int j = 0; j < n_out; ++j) gk[j] = v * upstream[static_cast<size_t>(j)];
        }
    }
    return g;
}

// subgradient at exactly 0 is 0
inline Tensor relu_backward(const Tensor& in, const Tensor& upstream) {
    if (!in.same_dims(upstream)) throw ValidationError("relu_backward: dims mismatch");
    Tensor g(in.dims());
    for (size_t i = 0; i < g.size(); ++i) g[i] = in[i] > 0.0 ? upstream[i] : 0.0;
    return g;
}

inline Tensor l2_normalize_backward(const Tensor& in, const Tensor& upstream) {
    if (!in.same_dims(upstream)) throw ValidationError("l2_normalize_backward: dims mismatch");
    const double n = norm2(in);
    if (n <= 1e-12) throw ValidationError("l2_normalize_backward: degenerate input");
    const double inv = 1.0 / n;
    const double proj = dot(in, upstream) * inv * inv * inv;  // (x.g)/n^3
    Tensor g(in.dims());
    for (size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] * inv - in[i] * proj;
    return g;
}

inline Tensor crop_backward(const LayerParams& p, const Tensor& upstream) {
    if (upstream.dims() != p.out_dims) throw ValidationError("crop_backward: dims mismatch");
    const int oy = (p.in_dims[0] - p.out_dims[0]) / 2;
    const int ox = (p.in_dims[1] - p.out_dims[1]) / 2;
    Tensor g(p.in_dims);
    for (int y = 0; y < p.out_dims[0]; ++y)
        for (int x = 0; x < p.out_dims[1]; ++x)
            for (int c = 0; c < p.out_dims[2]; ++c)
                g.at3(y + oy, x + ox, c) = upstream.at3(y, x, c);
    return g;
}

inline Tensor pad_backward(const LayerParams& p, const Tensor& upstream) {
    if (upstream.dims() != p.out_dims) throw ValidationError("pad_backward: dims mismatch");
    const int oy = (p.out_dims[0] - p.in_dims[0]) / 2;
    const int ox = (p.out_dims[1] - p.in_dims[1]) / 2;
    Tensor g(p.in_dims);
    for (int y = 0; y < p.in_dims[0]; ++y)
        for (int x = 0; x < p.in_dims[1]; ++x)
            for (int c = 0; c < p.in_dims[2]; ++c)
                g.at3(y, x, c) = upstream.at3(y + oy, x + ox, c);
    return g;
}

inline Tensor forward_layer(const Tensor& in, const LayerParams& p) {
    switch (p.kind) {
        case LayerKind::Conv: return conv2d(in, p);
        case LayerKind::Deconv: return deconv2d(in, p);
        case LayerKind::Fc: return fully_connected(in, p);
        case LayerKind::Relu: return relu(in);
        case LayerKind::L2Norm: return l2_normalize(in);
        case LayerKind::Crop: return crop_center(in, p);
        case LayerKind::Pad: return zero_pad(in, p);
        case LayerKind::Concat:
            throw ValidationError("concat takes two inputs; use concat_depth directly");
    }
    throw ValidationError("unknown layer kind");
}

inline LayerGrads backward_layer(const Tensor& in, const LayerParams& p, const Tensor& upstream,
                                 bool need_param_grads = true) {
    switch (p.kind) {
        case LayerKind::Conv: return conv2d_backward(in, p, upstream, need_param_grads);
        case LayerKind::Deconv: return deconv2d_backward(in, p, upstream, need_param_grads);
        case LayerKind::Fc: return fc_backward(in, p, upstream, need_param_grads);
        case LayerKind::Relu: return {relu_backward(in, upstream), {}, {}};
        case LayerKind::L2Norm: return {l2_normalize_backward(in, upstream), {}, {}};
        case LayerKind::Crop: return {crop_backward(p, upstream), {}, {}};
        case LayerKind::Pad: return {pad_backward(p, upstream), {}, {}};
        case LayerKind::Concat:
            throw ValidationError("concat takes two inputs; use concat_depth_backward");
    }
    throw ValidationError("unknown layer kind");
}

// Sequential net helpers. The trace keeps each layer's input so a reverse
// pass can be run later.
struct NetTrace {
    std::vector<Tensor> layer_inputs;
    Tensor output;
};

inline Tensor net_forward(const std::vector<LayerParams>& net, const Tensor& input,
                          NetTrace* trace = nullptr) {
    Tensor x = input;
    if (trace) trace->layer_inputs.clear();
    for (size_t li = 0; li < net.size(); ++li) {
        if (trace) trace->layer_inputs.push_back(x);
        try {
            if (net[li].kind == LayerKind::Fc && x.rank() != 1) {
                x = x.reshaped({static_cast<int>(x.size())});
            }
            x = forward_layer(x, net[li]);
        } catch (const ValidationError& e) {
            throw ValidationError("layer " + std::to_string(li) + " (" +
                                  layer_kind_name(net[li].kind) + "): " + e.what());
        }
    }
    if (trace) trace->output = x;
    return x;
}

struct BackpropResult {
    Tensor input_grad;
    std::vector<LayerGrads> param_grads;  // one entry per layer; empty tensors where n/a
};

// Exact reverse-mode gradients for a sequential net.
inline BackpropResult backprop(const std::vector<LayerParams>& net, const Tensor& input,
                               const Tensor& upstream, bool need_param_grads = true) {
    NetTrace trace;
    net_forward(net, input, &trace);
    if (upstream.dims() != trace.output.dims()) {
        throw ValidationError("backprop: upstream dims " + upstream.dims_str() +
                              " != forward output dims " + trace.output.dims_str());
    }
    BackpropResult r;
    r.param_grads.resize(net.size());
    Tensor g = upstream;
    for (size_t k = net.size(); k-- > 0;) {
        Tensor layer_in = trace.layer_inputs[k];
        const auto orig_dims = layer_in.dims();
        if (net[k].kind == LayerKind::Fc && layer_in.rank() != 1) {
            layer_in = layer_in.reshaped({static_cast<int>(layer_in.size())});
        }
        LayerGrads lg;
        try {
            lg = backward_layer(layer_in, net[k], g, need_param_grads);
        } catch (const ValidationError& e) {
            throw ValidationError("layer " + std::to_string(k) + " (" +
                                  layer_kind_name(net[k].kind) + "): " + e.what());
        }
        g = lg.input_grad.dims() == orig_dims ? std::move(lg.input_grad)
                                              : lg.input_grad.reshaped(orig_dims);
        r.param_grads[k].kernel_grad = std::move(lg.kernel_grad);
        r.param_grads[k].bias_grad = std::move(lg.bias_grad);
    }
    r.input_grad = std::move(g);
    return r;
}

}  // namespace embinv
