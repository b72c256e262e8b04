#pragma once

#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "embinv/objective.hpp"
#include "embinv/pyramid.hpp"
#include "embinv/rng.hpp"

namespace embinv {

enum class OptKind { SGD, Adam };

struct OptimizerState {
    OptKind kind = OptKind::Adam;
    double step_size = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Tensor m;  // first moment (Adam)
    Tensor v;  // second moment (Adam)
    long t = 0;

    static OptimizerState sgd(double mu) {
        OptimizerState s;
        s.kind = OptKind::SGD;
        s.step_size = mu;
        return s;
    }
    static OptimizerState adam(double mu) {
        OptimizerState s;
        s.kind = OptKind::Adam;
        s.step_size = mu;
        return s;
    }
};

// One optimizer update. SGD: p - mu*g. Adam: bias-corrected update per the
// standard formulas. Optionally projects the result into the [0,1] box.
inline Tensor step(const Tensor& p, OptimizerState& st, const Tensor& grad, bool clamp01) {
    if (!p.same_dims(grad)) throw ValidationError("step: grad dims mismatch");
    for (size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) {
            throw NumericError("step: non-finite gradient at flat index " + std::to_string(i));
        }
    }
    Tensor out = p;
    st.t += 1;
    if (st.kind == OptKind::SGD) {
        for (size_t i = 0; i < out.size(); ++i) out[i] -= st.step_size * grad[i];
    } else {
        if (st.m.empty()) {
            st.m = Tensor(p.dims());
            st.v = Tensor(p.dims());
        }
        const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
        const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
        for (size_t i = 0; i < out.size(); ++i) {
            st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
            st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
            const double mhat = st.m[i] / c1;
            const double vhat = st.v[i] / c2;
            out[i] -= st.step_size * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
    if (clamp01) out = clamped01(std::move(out));
    return out;
}

struct InvertInit {
    enum class Kind { Noise, Guide, Constant };
    Kind kind = Kind::Noise;
    uint64_t seed = 0;
    double amplitude = 0.5;  // noise spread around 0.5
    double constant = 0.5;

    static InvertInit noise(uint64_t seed, double amplitude = 0.5) {
        return {Kind::Noise, seed, amplitude, 0.5};
    }
    static InvertInit guide() { return {Kind::Guide, 0, 0.0, 0.0}; }
    static InvertInit constant_fill(double c) { return {Kind::Constant, 0, 0.0, c}; }
};

struct InvertJob {
    LossSpec spec;
    InvertInit init;
    int iterations = 500;
    int lpgn_levels = 3;  // 0 disables gradient normalization
    bool clamp = true;
    int trace_cadence = 1;
    OptKind optimizer = OptKind::Adam;
    double step_size = 0.05;

    void validate(const EmbedderNet& net) const {
        spec.validate(net);
        if (iterations < 1) throw ValidationError("iterations must be >= 1");
        if (trace_cadence < 1) throw ValidationError("trace cadence must be >= 1");
        if (lpgn_levels < 0) throw ValidationError("lpgn levels must be >= 0");
        if (lpgn_levels > 0 && net.image_size() % (1 << lpgn_levels) != 0) {
            throw ValidationError("image dims not divisible by 2^lpgn_levels");
        }
        if (!(step_size > 0.0)) throw ValidationError("step size must be positive");
        if (init.kind == InvertInit::Kind::Noise && !(init.amplitude > 0.0)) {
            throw ValidationError("noise init amplitude must be positive");
        }
        if (init.kind == InvertInit::Kind::Guide) {
            bool has_guide = false;
            for (const auto& r : spec.regularizers) has_guide |= (r.kind == RegKind::Guiding);
            if (!has_guide) throw ValidationError("guide init requires a guiding regularizer");
        }
    }
};

struct TraceRecord {
    int iter = 0;
    double loss = 0.0;
    LossBreakdown breakdown;
    double l2_to_target = 0.0;
    double cos_to_target = 0.0;
    std::vector<double> weights;  // effective regularizer weights this iteration
    double step_size = 0.0;
};

struct InvertResult {
    Tensor image;
    std::vector<TraceRecord> trace;
    Embedding final_unnormalized;
    Embedding final_normalized;
    double final_loss = 0.0;
    LossBreakdown final_breakdown;
};

struct DivergenceError : NumericError {
    DivergenceError(const std::string& msg, std::vector<TraceRecord> tr)
        : NumericError(msg), trace(std::move(tr)) {}
    std::vector<TraceRecord> trace;
};

namespace detail {

// Shared descent loop. `eval(p, iter)` returns the loss at the weights in
// effect for that iteration; `fill_metrics` populates trace metric fields.
template <class Eval, class Metrics>
InvertResult run_descent(Eval&& eval, Metrics&& fill_metrics, Tensor p, int iterations,
                         OptKind opt, double base_step, int lpgn_levels, bool clamp,
                         int cadence,
                         const std::function<double(double, int)>& step_schedule) {
    InvertResult result;
    OptimizerState st = opt == OptKind::SGD ? OptimizerState::sgd(base_step)
                                            : OptimizerState::adam(base_step);
    for (int k = 0; k < iterations; ++k) {
        TotalLoss tl;
        try {
            tl = eval(p, k);
        } catch (const NumericError& e) {
            throw DivergenceError(std::string("loss evaluation failed at iteration ") +
                                      std::to_string(k) + ": " + e.what(),
                                  result.trace);
        }
        if (!(tl.value < 1e12)) {
            throw DivergenceError("divergence at iteration " + std::to_string(k) +
                                      ": loss = " + std::to_string(tl.value),
                                  result.trace);
        }
        st.step_size = step_schedule ? step_schedule(base_step, k) : base_step;
        if (k % cadence == 0) {
            TraceRecord rec;
            rec.iter = k;
            rec.loss = tl.value;
            rec.breakdown = tl.breakdown;
            rec.step_size = st.step_size;
            fill_metrics(tl, p, rec);
            result.trace.push_back(std::move(rec));
        }
        Tensor g = lpgn_levels > 0 ? lpgn(tl.grad, lpgn_levels) : tl.grad;
        p = step(p, st, g, clamp);
    }
    // final evaluation reuses the last iteration's weights
    TotalLoss tl = eval(p, iterations - 1);
    result.image = std::move(p);
    result.final_loss = tl.value;
    result.final_breakdown = tl.breakdown;
    result.final_unnormalized = tl.unnormalized;
    result.final_normalized = tl.normalized;
    return result;
}

}  // namespace detail

// Iterative reconstruction: repeatedly evaluate the composite loss, optionally
// normalize the gradient's pyramid bands, apply weight schedules, and step.
// Deterministic given seeds.
inline InvertResult reconstruct(const InvertJob& job, const EmbedderNet& net) {
    job.validate(net);
    PreparedLoss loss(net, job.spec);

    const int s = net.image_size();
    Tensor p;
    switch (job.init.kind) {
        case InvertInit::Kind::Noise: {
            Rng rng(job.init.seed);
            p = Tensor({s, s, 3});
            for (size_t i = 0; i < p.size(); ++i) {
                p[i] = 0.5 + job.init.amplitude * rng.uniform(-1.0, 1.0);
            }
            if (job.clamp) p = clamped01(std::move(p));
            break;
        }
        case InvertInit::Kind::Guide: {
            for (const auto& r : job.spec.regularizers) {
                if (r.kind == RegKind::Guiding) p = r.guide;
            }
            break;
        }
        case InvertInit::Kind::Constant:
            p = Tensor({s, s, 3}, job.init.constant);
            break;
    }

    Tensor norm_target = l2_normalize(job.spec.distance.target.values);
    const Tensor& raw_target = job.spec.distance.target.values;
    const bool target_normalized = job.spec.distance.target.normalized;
    const size_t n_regs = job.spec.regularizers.size();

    auto eval = [&](const Tensor& img, int iter) { return loss.eval(img, iter); };
    auto metrics = [&](const TotalLoss& tl, const Tensor&, TraceRecord& rec) {
        const Tensor& e = target_normalized ? tl.normalized.values : tl.unnormalized.values;
        double l2 = 0.0;
        for (size_t i = 0; i < e.size(); ++i) {
            const double d = e[i] - raw_target[i];
            l2 += d * d;
        }
        rec.l2_to_target = l2;
        rec.cos_to_target = dot(tl.normalized.values, norm_target);
        rec.weights.resize(n_regs);
        for (size_t i = 0; i < n_regs; ++i) rec.weights[i] = loss.weight_at(i, rec.iter);
    };
    auto step_schedule = std::function<double(double, int)>(
        [&](double base, int iter) { return loss.step_size_at(base, iter); });

    InvertResult r = detail::run_descent(eval, metrics, std::move(p), job.iterations,
                                         job.optimizer, job.step_size, job.lpgn_levels,
                                         job.clamp, job.trace_cadence, step_schedule);
    ensure_finite(r.image, "reconstructed image");
    return r;
}

// ---------------------------------------------------------------------------
// Stationary-state analysis for the large-TV-weight limit, on the built-in
// quadratic objective L(p) = 1/2 ||p - t||^2 (closed-form dL/dp).
// ---------------------------------------------------------------------------

namespace detail {

using Cplx = std::complex<double>;

// analysis transform with the 1/(H*W) factor; synthesis is the plain sum
inline std::vector<Cplx> dft2(const Tensor& img, int channel) {
    const int H = img.dim(0), W = img.dim(1);
    std::vector<Cplx> out(static_cast<size_t>(H) * W);
    const double two_pi = 6.283185307179586476925286766559;
    for (int ny = 0; ny < H; ++ny)
        for (int nx = 0; nx < W; ++nx) {
            Cplx acc(0.0, 0.0);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double ang = -two_pi * (static_cast<double>(nx) * x / W +
                                                  static_cast<double>(ny) * y / H);
                    acc += img.at3(y, x, channel) * Cplx(std::cos(ang), std::sin(ang));
                }
            out[static_cast<size_t>(ny) * W + nx] = acc / static_cast<double>(H * W);
        }
    return out;
}

inline void idft2_into(const std::vector<Cplx>& coef, Tensor& img, int channel) {
    const int H = img.dim(0), W = img.dim(1);
    const double two_pi = 6.283185307179586476925286766559;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            Cplx acc(0.0, 0.0);
            for (int ny = 0; ny < H; ++ny)
                for (int nx = 0; nx < W; ++nx) {
                    const double ang = two_pi * (static_cast<double>(nx) * x / W +
                                                 static_cast<double>(ny) * y / H);
                    acc += coef[static_cast<size_t>(ny) * W + nx] * Cplx(std::cos(ang), std::sin(ang));
                }
            img.at3(y, x, channel) = acc.real();
        }
}

}  // namespace detail

// Fourier symbol of the TV diffusion term: sin^2(pi*nx/W) + sin^2(pi*ny/H).
inline double tv_fourier_gamma(int nx, int ny, int w, int h) {
    const double sx = std::sin(3.14159265358979323846 * nx / w);
    const double sy = std::sin(3.14159265358979323846 * ny / h);
    return sx * sx + sy * sy;
}

struct StationaryPrediction {
    std::vector<double> dc;  // per-channel constant component p_bar
    Tensor delta;            // first-order AC component
    Tensor image() const {
        Tensor out = delta;
        const int H = out.dim(0), W = out.dim(1), C = out.dim(2);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c) out.at3(y, x, c) += dc[static_cast<size_t>(c)];
        return out;
    }
};

// First-order stationary state of the quadratic objective plus w_tv * TV(alpha)
// as w_tv -> infinity: the constant component solves the zero-mean-gradient
// condition (here: the channel mean of t) and each AC Fourier mode is damped
// by 1/(4*alpha*gamma*w_tv), with the closed-form correction factor
// C = R_TV^((2-alpha)/(alpha*(alpha-1))) applied afterwards.
inline StationaryPrediction asymptotic_stationary_state(const Tensor& target, double alpha,
                                                        double w_tv) {
    if (target.rank() != 3) throw ValidationError("asymptotic analysis expects a rank-3 target");
    if (w_tv == 0.0) throw ValidationError("asymptotic expansion invalid for w_tv = 0");
    if (!(alpha > 1.0)) throw ValidationError("tv alpha must be > 1");
    const int H = target.dim(0), W = target.dim(1), C = target.dim(2);

    StationaryPrediction pred;
    pred.dc.resize(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) s += target.at3(y, x, c);
        pred.dc[static_cast<size_t>(c)] = s / (H * W);
    }

    // dL/dp at the constant image p_bar is (p_bar - t)
    Tensor grad_at_bar(target.dims());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                grad_at_bar.at3(y, x, c) = pred.dc[static_cast<size_t>(c)] - target.at3(y, x, c);

    pred.delta = Tensor(target.dims());
    for (int c = 0; c < C; ++c) {
        auto coef = detail::dft2(grad_at_bar, c);
        for (int ny = 0; ny < H; ++ny)
            for (int nx = 0; nx < W; ++nx) {
                auto& v = coef[static_cast<size_t>(ny) * W + nx];
                if (nx == 0 && ny == 0) {
                    v = 0.0;
                    continue;
                }
                v *= -1.0 / (4.0 * alpha * tv_fourier_gamma(nx, ny, W, H) * w_tv);
            }
        detail::idft2_into(coef, pred.delta, c);
    }
    if (norm2(pred.delta) > 0.0) {
        const double r_tv = tv_value_grad(pred.delta, alpha).first;
        const double expo = (2.0 - alpha) / (alpha * (alpha - 1.0));
        pred.delta *= std::pow(r_tv, expo);
    }
    return pred;
}

struct AsymptoticsReport {
    struct Row {
        double w_tv = 0.0;
        double dc_err = 0.0;        // max over channels |mean(p*) - mean(t)|
        double ac_norm_iter = 0.0;  // ||p* - mean||_2
        double ac_norm_pred = 0.0;  // ||delta_pred||_2
        double rel_err = 0.0;       // ||p* - p_pred||_2 / ||delta_pred||_2
        int iterations = 0;
        double step_size = 0.0;
    };
    std::vector<Row> rows;
    bool dc_ok = false;             // all dc_err < 1e-6
    bool norm_scaling_ok = false;   // AC norm tracks 1/w_tv within 10% between rows
    bool err_decreasing = false;    // rel_err strictly decreases with w_tv
};

// Runs the descent loop on the quadratic objective at each TV weight and
// compares converged states against the asymptotic prediction. Initialization
// at the target keeps the decoupled constant mode exact from the start.
inline AsymptoticsReport verify_asymptotics(const Tensor& target, double alpha,
                                            std::vector<double> w_tv_list,
                                            int iterations = 3000) {
    if (w_tv_list.size() < 2) throw ValidationError("verify_asymptotics needs >= 2 weights");
    std::sort(w_tv_list.begin(), w_tv_list.end());
    const int H = target.dim(0), W = target.dim(1), C = target.dim(2);
    const double gamma_max = tv_fourier_gamma(W / 2, H / 2, W, H);

    AsymptoticsReport report;
    for (const double w : w_tv_list) {
        StationaryPrediction pred = asymptotic_stationary_state(target, alpha, w);
        double linf = 0.0;
        for (size_t i = 0; i < pred.delta.size(); ++i) linf = std::max(linf, std::abs(pred.delta[i]));
        if (linf >= 0.1) {
            throw ValidationError("w_tv = " + std::to_string(w) +
                                  " too small for the asymptotic regime (|delta|_inf = " +
                                  std::to_string(linf) + ")");
        }

        // step size below the quadratic-plus-diffusion stability bound; for
        // alpha != 2 fall back to halving until the descent is monotone
        double mu = 0.95 / (1.0 + 4.0 * alpha * 2.0 * gamma_max * w);
        auto eval = [&](const Tensor& p, int) {
            TotalLoss tl;
            Tensor g(p.dims());
            double v = 0.0;
            for (size_t i = 0; i < p.size(); ++i) {
                const double d = p[i] - target[i];
                v += 0.5 * d * d;
                g[i] = d;
            }
            auto [tv_v, tv_g] = tv_value_grad(p, alpha);
            tl.value = v + w * tv_v;
            tv_g *= w;
            tl.grad = g + tv_g;
            tl.breakdown.terms = {{"distance", v}, {"tv", w * tv_v}};
            tl.breakdown.total = tl.value;
            return tl;
        };
        auto metrics = [](const TotalLoss&, const Tensor&, TraceRecord&) {};

        InvertResult run;
        for (int attempt = 0;; ++attempt) {
            bool ok = false;
            try {
                run = detail::run_descent(eval, metrics, target, iterations, OptKind::SGD, mu,
                                          /*lpgn=*/0, /*clamp=*/false, /*cadence=*/iterations,
                                          nullptr);
                ok = run.final_loss <= eval(target, 0).value + 1e-12;
            } catch (const DivergenceError&) {
                ok = false;
            }
            if (ok) break;
            if (attempt >= 6) {
                throw NumericError("verify_asymptotics: descent failed to converge at w_tv = " +
                                   std::to_string(w));
            }
            mu *= 0.5;
        }

        AsymptoticsReport::Row row;
        row.w_tv = w;
        row.iterations = iterations;
        row.step_size = mu;
        Tensor ac = run.image;
        for (int c = 0; c < C; ++c) {
            double mean = 0.0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) mean += run.image.at3(y, x, c);
            mean /= H * W;
            row.dc_err = std::max(row.dc_err, std::abs(mean - pred.dc[static_cast<size_t>(c)]));
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) ac.at3(y, x, c) -= mean;
        }
        row.ac_norm_iter = norm2(ac);
        row.ac_norm_pred = norm2(pred.delta);
        const Tensor diff = run.image - pred.image();
        row.rel_err = norm2(diff) / std::max(row.ac_norm_pred, 1e-300);
        report.rows.push_back(row);
    }

    report.dc_ok = true;
    for (const auto& r : report.rows) report.dc_ok &= (r.dc_err < 1e-6);
    report.norm_scaling_ok = true;
    report.err_decreasing = true;
    for (size_t i = 0; i + 1 < report.rows.size(); ++i) {
        const auto& a = report.rows[i];
        const auto& b = report.rows[i + 1];
        const double measured_ratio = a.ac_norm_iter / b.ac_norm_iter;
        const double expected_ratio = b.w_tv / a.w_tv;
        report.norm_scaling_ok &= std::abs(measured_ratio / expected_ratio - 1.0) <= 0.10;
        report.err_decreasing &= (b.rel_err < a.rel_err);
    }
    return report;
}

}  // namespace embinv
