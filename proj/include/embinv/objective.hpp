#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "embinv/embedder.hpp"
#include "embinv/pyramid.hpp"
#include "embinv/tensor.hpp"

namespace embinv {

enum class DistanceFn { L2, Dot, NormalizedDot };

inline const char* distance_fn_name(DistanceFn d) {
    switch (d) {
        case DistanceFn::L2: return "l2";
        case DistanceFn::Dot: return "dot";
        case DistanceFn::NormalizedDot: return "normalized_dot";
    }
    return "?";
}

// Embedding-space distance. `scale` pre-multiplies the target (NormalizedDot
// ignores it, normalization absorbs any positive factor). L2 and Dot consume
// unnormalized embeddings, NormalizedDot the normalized one; flags are checked.
struct DistanceKind {
    DistanceFn fn = DistanceFn::Dot;
    Embedding target;
    double scale = 1.0;
};

enum class RegKind { Guiding, TV, Gauss, LPSpectrum, Mirror };

inline const char* reg_kind_name(RegKind k) {
    switch (k) {
        case RegKind::Guiding: return "guiding";
        case RegKind::TV: return "tv";
        case RegKind::Gauss: return "gauss";
        case RegKind::LPSpectrum: return "lp_spectrum";
        case RegKind::Mirror: return "mirror";
    }
    return "?";
}

struct RegularizerSpec {
    RegKind kind = RegKind::TV;
    double weight = 0.0;

    // guiding
    std::set<int> layers = {2};
    Tensor guide;

    // tv
    double alpha = 2.0;

    // gauss
    int layer = 2;
    Tensor mean;   // v_n
    Tensor sigma;  // sigma_n
    double nu = 1.0;

    // lp spectrum
    int levels = 3;
    double beta = 0.0;
    double band_norm = 1.0;  // N_L

    static RegularizerSpec tv(double weight, double alpha = 2.0) {
        RegularizerSpec r;
        r.kind = RegKind::TV;
        r.weight = weight;
        r.alpha = alpha;
        return r;
    }
    static RegularizerSpec guiding(double weight, Tensor guide, std::set<int> layers = {2}) {
        RegularizerSpec r;
        r.kind = RegKind::Guiding;
        r.weight = weight;
        r.guide = std::move(guide);
        r.layers = std::move(layers);
        return r;
    }
    static RegularizerSpec gauss(double weight, int layer, Tensor mean, Tensor sigma, double nu) {
        RegularizerSpec r;
        r.kind = RegKind::Gauss;
        r.weight = weight;
        r.layer = layer;
        r.mean = std::move(mean);
        r.sigma = std::move(sigma);
        r.nu = nu;
        return r;
    }
    static RegularizerSpec lp_spectrum(double weight, int levels, double beta, double band_norm) {
        RegularizerSpec r;
        r.kind = RegKind::LPSpectrum;
        r.weight = weight;
        r.levels = levels;
        r.beta = beta;
        r.band_norm = band_norm;
        return r;
    }
    static RegularizerSpec mirror(double weight) {
        RegularizerSpec r;
        r.kind = RegKind::Mirror;
        r.weight = weight;
        return r;
    }
};

// Weight decay schedule. `target` is a regularizer index, or kStepSize for
// the optimizer step size.
struct Schedule {
    static constexpr int kStepSize = -1;
    enum class Kind { Constant, ExponentialDecay };
    int target = 0;
    Kind kind = Kind::Constant;
    double rate = 1.0;   // per-iteration multiplier for ExponentialDecay
    double floor = 0.0;

    double apply(double base, int iteration) const {
        if (kind == Kind::Constant) return base;
        return std::max(floor, base * std::pow(rate, iteration));
    }
};

struct LossSpec {
    DistanceKind distance;
    std::vector<RegularizerSpec> regularizers;
    std::vector<Schedule> schedules;

    void validate(const EmbedderNet& net) const {
        if (distance.scale <= 0.0) throw ValidationError("distance scale must be positive");
        if (distance.target.values.rank() != 1 ||
            distance.target.values.dim(0) != net.embedding_dim()) {
            throw ValidationError("distance target must be rank 1 of embedding length " +
                                  std::to_string(net.embedding_dim()));
        }
        const bool needs_normalized = distance.fn == DistanceFn::NormalizedDot;
        if (distance.target.normalized != needs_normalized) {
            throw ValidationError(std::string("distance ") + distance_fn_name(distance.fn) +
                                  " requires a " + (needs_normalized ? "normalized" : "unnormalized") +
                                  " target embedding");
        }
        int n_guiding = 0, n_gauss = 0;
        for (size_t i = 0; i < regularizers.size(); ++i) {
            const auto& r = regularizers[i];
            if (r.weight < 0.0) throw ValidationError("regularizer weight must be >= 0");
            switch (r.kind) {
                case RegKind::Guiding: {
                    ++n_guiding;
                    const int s = net.image_size();
                    if (r.guide.rank() != 3 || r.guide.dim(0) != s || r.guide.dim(1) != s ||
                        r.guide.dim(2) != 3) {
                        throw ValidationError("guiding image dims must match the embedder input");
                    }
                    if (r.layers.empty()) throw ValidationError("guiding regularizer needs layers");
                    for (int l : r.layers)
                        if (l < 1 || l > EmbedderNet::kCapturePoints)
                            throw ValidationError("guiding layer index out of range");
                    break;
                }
                case RegKind::TV:
                    if (!(r.alpha > 1.0)) throw ValidationError("tv alpha must be > 1");
                    break;
                case RegKind::Gauss: {
                    ++n_gauss;
                    if (!(r.nu > 0.0)) throw ValidationError("gauss nu must be > 0");
                    if (r.layer < 1 || r.layer > EmbedderNet::kCapturePoints)
                        throw ValidationError("gauss layer index out of range");
                    if (r.mean.empty() || !r.mean.same_dims(r.sigma))
                        throw ValidationError("gauss mean/sigma must be present with equal dims");
                    break;
                }
                case RegKind::LPSpectrum: {
                    if (r.levels < 1) throw ValidationError("lp_spectrum levels must be >= 1");
                    const int div = 1 << r.levels;
                    if (net.image_size() % div != 0)
                        throw ValidationError("image dims not divisible by 2^levels");
                    break;
                }
                case RegKind::Mirror:
                    break;
            }
        }
        if (n_guiding > 1 || n_gauss > 1) {
            throw ValidationError("at most one guiding and one gauss regularizer allowed");
        }
        for (const auto& s : schedules) {
            if (s.target != Schedule::kStepSize &&
                (s.target < 0 || s.target >= static_cast<int>(regularizers.size()))) {
                throw ValidationError("schedule target index out of range");
            }
            if (s.kind == Schedule::Kind::ExponentialDecay) {
                if (!(s.rate > 0.0 && s.rate <= 1.0))
                    throw ValidationError("exponential_decay rate must be in (0,1]");
                if (s.floor < 0.0) throw ValidationError("schedule floor must be >= 0");
            }
        }
    }
};

struct DistanceResult {
    double value = 0.0;
    Tensor grad;  // w.r.t. the embedding variant the distance consumes
};

inline DistanceResult distance(const Embedding& emb, const DistanceKind& kind) {
    const bool needs_normalized = kind.fn == DistanceFn::NormalizedDot;
    if (emb.normalized != needs_normalized || kind.target.normalized != needs_normalized) {
        throw ValidationError(std::string("distance ") + distance_fn_name(kind.fn) +
                              ": embedding normalization flags inconsistent");
    }
    if (!emb.values.same_dims(kind.target.values)) {
        throw ValidationError("distance: embedding dims mismatch");
    }
    DistanceResult r;
    const Tensor& f = emb.values;
    const Tensor& e = kind.target.values;
    switch (kind.fn) {
        case DistanceFn::L2: {
            r.grad = Tensor(f.dims());
            double v = 0.0;
            for (size_t i = 0; i < f.size(); ++i) {
                const double d = f[i] - kind.scale * e[i];
                v += d * d;
                r.grad[i] = 2.0 * d;
            }
            r.value = v;
            break;
        }
        case DistanceFn::Dot: {
            r.grad = Tensor(f.dims());
            double v = 0.0;
            for (size_t i = 0; i < f.size(); ++i) {
                v -= f[i] * kind.scale * e[i];
                r.grad[i] = -kind.scale * e[i];
            }
            r.value = v;
            break;
        }
        case DistanceFn::NormalizedDot: {
            r.grad = Tensor(f.dims());
            double v = 0.0;
            for (size_t i = 0; i < f.size(); ++i) {
                v -= f[i] * e[i];
                r.grad[i] = -e[i];
            }
            r.value = v;
            break;
        }
    }
    return r;
}

// Total-variation regularizer with cyclic shifts, computed per channel and
// summed: R_c = (sum of squared 1-pixel differences in x and y)^(alpha/2).
// A channel with zero difference energy contributes value 0 and gradient 0
// (the exponent's derivative is singular there for alpha < 2).
inline std::pair<double, Tensor> tv_value_grad(const Tensor& p, double alpha) {
    if (p.rank() != 3) throw ValidationError("tv expects a rank-3 image");
    if (!(alpha > 1.0)) throw ValidationError("tv alpha must be > 1");
    const int H = p.dim(0), W = p.dim(1), C = p.dim(2);
    Tensor grad(p.dims());
    double value = 0.0;
    for (int c = 0; c < C; ++c) {
        double energy = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double v = p.at3(y, x, c);
                const double dx = v - p.at3(y, (x + W - 1) % W, c);
                const double dy = v - p.at3((y + H - 1) % H, x, c);
                energy += dx * dx + dy * dy;
            }
        if (energy == 0.0) continue;
        value += std::pow(energy, alpha / 2.0);
        const double outer = (alpha / 2.0) * std::pow(energy, alpha / 2.0 - 1.0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double lap = p.at3(y, (x + 1) % W, c) + p.at3(y, (x + W - 1) % W, c) +
                                   p.at3((y + 1) % H, x, c) + p.at3((y + H - 1) % H, x, c) -
                                   4.0 * p.at3(y, x, c);
                grad.at3(y, x, c) = outer * (-2.0) * lap;
            }
    }
    return {value, std::move(grad)};
}

// Guiding-image regularizer: w_G * sum over layers of ||a(p) - a(I_G)||_2^2.
// Returns the weighted value and per-layer gradients w.r.t. a(p).
inline std::pair<double, std::map<int, Tensor>> guiding_value_grad(
    const LayerActivations& acts, const LayerActivations& guide_acts,
    const std::set<int>& layers, double w_g) {
    double value = 0.0;
    std::map<int, Tensor> grads;
    for (int l : layers) {
        const Tensor& a = acts.at(l);
        const Tensor& ag = guide_acts.at(l);
        if (!a.same_dims(ag)) {
            throw ValidationError("guiding: activation dims mismatch at layer " + std::to_string(l));
        }
        Tensor g(a.dims());
        for (size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - ag[i];
            value += w_g * d * d;
            g[i] = 2.0 * w_g * d;
        }
        grads.emplace(l, std::move(g));
    }
    return {value, std::move(grads)};
}

// Gaussian activation regularizer:
//   sum_n nu * (a_n - v_n)^2 * s_max^2 / (sigma_n^2 + nu * s_max^2),
// with s_max = max_n sigma_n. The nu term keeps near-constant nodes from
// dominating.
inline std::pair<double, Tensor> gauss_value_grad(const Tensor& acts, const Tensor& mean,
                                                  const Tensor& sigma, double nu) {
    if (!acts.same_dims(mean) || !acts.same_dims(sigma)) {
        throw ValidationError("gauss: acts/mean/sigma dims mismatch");
    }
    if (!(nu > 0.0)) throw ValidationError("gauss: nu must be > 0");
    double smax = 0.0;
    for (size_t i = 0; i < sigma.size(); ++i) {
        if (sigma[i] < 0.0) throw ValidationError("gauss: sigma must be elementwise >= 0");
        smax = std::max(smax, sigma[i]);
    }
    if (smax <= 0.0) throw ValidationError("gauss: all sigmas are zero (layer carries no signal)");
    const double smax2 = smax * smax;
    Tensor grad(acts.dims());
    double value = 0.0;
    for (size_t i = 0; i < acts.size(); ++i) {
        const double d = acts[i] - mean[i];
        const double denom = sigma[i] * sigma[i] + nu * smax2;
        value += nu * d * d * smax2 / denom;
        grad[i] = 2.0 * nu * d * smax2 / denom;
    }
    return {value, std::move(grad)};
}

// Laplacian-pyramid spectrum regularizer: sum over bands of
// (||L_k|| - N_L * 2^(beta*(k+1)))^2, ||.|| the l2 norm over band elements.
inline std::pair<double, Tensor> lp_spectrum_value_grad(const Tensor& p, int levels, double beta,
                                                        double band_norm) {
    Pyramid pyr = build_pyramid(p, levels);
    double value = 0.0;
    std::vector<Tensor> band_grads;
    band_grads.reserve(pyr.bands.size());
    for (int k = 0; k < pyr.levels(); ++k) {
        const Tensor& band = pyr.bands[static_cast<size_t>(k)];
        const double n = norm2(band);
        const double target = band_norm * std::pow(2.0, beta * (k + 1));
        const double resid = n - target;
        value += resid * resid;
        Tensor g(band.dims());
        if (n > 0.0) {
            const double scale = 2.0 * resid / n;
            for (size_t i = 0; i < band.size(); ++i) g[i] = scale * band[i];
        }
        band_grads.push_back(std::move(g));
    }
    Tensor top_grad(pyr.top.dims());
    Tensor grad = pyramid_adjoint(band_grads, top_grad);
    return {value, std::move(grad)};
}

// Horizontal mirror regularizer ||p - F_x p||_2 (not squared); gradient is
// defined as 0 at exactly symmetric images.
inline std::pair<double, Tensor> mirror_value_grad(const Tensor& p) {
    if (p.rank() != 3) throw ValidationError("mirror expects a rank-3 image");
    const int H = p.dim(0), W = p.dim(1), C = p.dim(2);
    Tensor resid(p.dims());
    double sq = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                const double d = p.at3(y, x, c) - p.at3(y, W - 1 - x, c);
                resid.at3(y, x, c) = d;
                sq += d * d;
            }
    const double value = std::sqrt(sq);
    Tensor grad(p.dims());
    if (value > 0.0) {
        const double inv = 1.0 / value;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c) {
                    grad.at3(y, x, c) =
                        inv * (resid.at3(y, x, c) - resid.at3(y, W - 1 - x, c));
                }
    }
    return {value, std::move(grad)};
}

struct LossBreakdown {
    std::vector<std::pair<std::string, double>> terms;
    double total = 0.0;

    double term(const std::string& name) const {
        for (const auto& [k, v] : terms)
            if (k == name) return v;
        throw ValidationError("no loss term named " + name);
    }
};

struct TotalLoss {
    double value = 0.0;
    Tensor grad;
    LossBreakdown breakdown;
    Embedding unnormalized;
    Embedding normalized;
};

// Composite loss evaluator. Guide (and Gauss) activations are precomputed
// once per spec; eval() is pure and safe to call concurrently on different
// images.
class PreparedLoss {
public:
    PreparedLoss(const EmbedderNet& net, LossSpec spec) : net_(&net), spec_(std::move(spec)) {
        spec_.validate(net);
        for (const auto& r : spec_.regularizers) {
            if (r.kind == RegKind::Guiding) {
                for (int l : r.layers) capture_.insert(l);
            } else if (r.kind == RegKind::Gauss) {
                capture_.insert(r.layer);
            }
        }
        for (const auto& r : spec_.regularizers) {
            if (r.kind == RegKind::Guiding) {
                std::set<int> layers(r.layers.begin(), r.layers.end());
                guide_acts_ = net.embed(r.guide, layers).activations;
            }
        }
    }

    const LossSpec& spec() const { return spec_; }
    const EmbedderNet& net() const { return *net_; }

    // effective weight of regularizer i at the given iteration
    double weight_at(size_t i, int iteration) const {
        double w = spec_.regularizers[i].weight;
        for (const auto& s : spec_.schedules) {
            if (s.target == static_cast<int>(i)) w = s.apply(spec_.regularizers[i].weight, iteration);
        }
        return w;
    }

    double step_size_at(double base, int iteration) const {
        for (const auto& s : spec_.schedules) {
            if (s.target == Schedule::kStepSize) return s.apply(base, iteration);
        }
        return base;
    }

    TotalLoss eval(const Tensor& p, int iteration = 0) const {
        EmbedderNet::ForwardTrace trace;
        const auto out = net_->embed_traced(p, capture_, trace);

        TotalLoss tl;
        tl.unnormalized = out.unnormalized;
        tl.normalized = out.normalized;

        // distance term, chained to the unnormalized output when needed
        DistanceResult dist;
        Tensor out_upstream;
        if (spec_.distance.fn == DistanceFn::NormalizedDot) {
            dist = distance(out.normalized, spec_.distance);
            out_upstream = l2_normalize_backward(out.unnormalized.values, dist.grad);
        } else {
            dist = distance(out.unnormalized, spec_.distance);
            out_upstream = dist.grad;
        }
        tl.breakdown.terms.emplace_back("distance", dist.value);

        std::map<int, Tensor> injections;
        Tensor image_grad(p.dims());
        for (size_t i = 0; i < spec_.regularizers.size(); ++i) {
            const auto& r = spec_.regularizers[i];
            const double w = weight_at(i, iteration);
            double term_value = 0.0;
            switch (r.kind) {
                case RegKind::Guiding: {
                    auto [v, grads] = guiding_value_grad(out.activations, guide_acts_, r.layers, w);
                    term_value = v;  // weight already folded in
                    for (auto& [l, g] : grads) {
                        auto it = injections.find(l);
                        if (it == injections.end()) injections.emplace(l, std::move(g));
                        else it->second += g;
                    }
                    break;
                }
                case RegKind::TV: {
                    auto [v, g] = tv_value_grad(p, r.alpha);
                    term_value = w * v;
                    g *= w;
                    image_grad += g;
                    break;
                }
                case RegKind::Gauss: {
                    auto [v, g] = gauss_value_grad(out.activations.at(r.layer), r.mean, r.sigma, r.nu);
                    term_value = w * v;
                    g *= w;
                    auto it = injections.find(r.layer);
                    if (it == injections.end()) injections.emplace(r.layer, std::move(g));
                    else it->second += g;
                    break;
                }
                case RegKind::LPSpectrum: {
                    auto [v, g] = lp_spectrum_value_grad(p, r.levels, r.beta, r.band_norm);
                    term_value = w * v;
                    g *= w;
                    image_grad += g;
                    break;
                }
                case RegKind::Mirror: {
                    auto [v, g] = mirror_value_grad(p);
                    term_value = w * v;
                    g *= w;
                    image_grad += g;
                    break;
                }
            }
            tl.breakdown.terms.emplace_back(reg_kind_name(r.kind), term_value);
        }

        image_grad += net_->backward(trace, out_upstream, injections);

        double total = 0.0;
        for (const auto& [name, v] : tl.breakdown.terms) total += v;
        tl.breakdown.total = total;
        tl.value = total;
        tl.grad = std::move(image_grad);
        ensure_finite(tl.grad, "total_loss gradient");
        if (!std::isfinite(tl.value)) throw NumericError("total_loss value is non-finite");
        return tl;
    }

private:
    const EmbedderNet* net_;
    LossSpec spec_;
    std::set<int> capture_;
    LayerActivations guide_acts_;
};

inline TotalLoss total_loss(const Tensor& p, const LossSpec& spec, const EmbedderNet& net) {
    return PreparedLoss(net, spec).eval(p);
}

}  // namespace embinv
