#pragma once

#include <map>
#include <set>
#include <vector>

#include "embinv/layers.hpp"
#include "embinv/rng.hpp"
#include "embinv/tensor.hpp"

namespace embinv {

// Embedding vector plus a flag telling which variant it is. The flag is
// checked wherever a distance function consumes it.
struct Embedding {
    Tensor values;
    bool normalized = false;
};

// Per-layer activation tensors captured during a forward pass.
// Capture points 1..3 are the post-ReLU conv stages, 4 is the fc output.
struct LayerActivations {
    std::map<int, Tensor> acts;

    const Tensor& at(int layer) const {
        auto it = acts.find(layer);
        if (it == acts.end()) {
            throw ValidationError("activations for layer " + std::to_string(layer) +
                                  " were not captured");
        }
        return it->second;
    }
};

struct EmbedderConfig {
    int image_size = 32;      // must be divisible by 8
    int embedding_dim = 16;
    uint64_t seed = 7;
    bool lightly_trained = false;  // additionally fits the fc layer to separate blob classes
};

// Fixed surrogate embedding network: three stride-2 3x3 conv+relu stages
// (3 -> 8 -> 16 -> 32 filters) and a final fc to the embedding. Weights are
// Xavier-uniform from the seed and frozen; the net is immutable after
// construction and shareable across threads.
class EmbedderNet {
public:
    static constexpr int kCapturePoints = 4;

    explicit EmbedderNet(EmbedderConfig cfg = {}) : cfg_(cfg) {
        if (cfg.image_size < 8 || cfg.image_size % 8 != 0) {
            throw ValidationError("embedder image_size must be a positive multiple of 8");
        }
        if (cfg.embedding_dim < 1) throw ValidationError("embedding_dim must be >= 1");
        Rng rng(cfg.seed);
        const int s = cfg.image_size;
        append_conv(rng, {s, s, 3}, 8);
        append_conv(rng, {s / 2, s / 2, 8}, 16);
        append_conv(rng, {s / 4, s / 4, 16}, 32);
        const int flat = (s / 8) * (s / 8) * 32;
        Tensor kw = xavier_uniform(rng, {flat, cfg.embedding_dim}, flat, cfg.embedding_dim);
        Tensor kb = rng.uniform_tensor({cfg.embedding_dim}, -0.1, 0.1);
        layers_.push_back(LayerParams::fc(std::move(kw), std::move(kb), {s / 8, s / 8, 32}));
        if (cfg.lightly_trained) fit_fc_to_blobs(rng);
    }

    const EmbedderConfig& config() const { return cfg_; }
    int image_size() const { return cfg_.image_size; }
    int embedding_dim() const { return cfg_.embedding_dim; }
    const std::vector<LayerParams>& layers() const { return layers_; }

    struct EmbedOut {
        Embedding unnormalized;
        Embedding normalized;
        LayerActivations activations;
    };

    struct ForwardTrace {
        NetTrace net;
    };

    EmbedOut embed(const Tensor& image, const std::set<int>& capture = {}) const {
        ForwardTrace tr;
        return embed_traced(image, capture, tr);
    }

    EmbedOut embed_traced(const Tensor& image, const std::set<int>& capture,
                          ForwardTrace& trace) const {
        check_image(image);
        for (int layer : capture) {
            if (layer < 1 || layer > kCapturePoints) {
                throw ValidationError("capture layer index " + std::to_string(layer) +
                                      " out of range 1.." + std::to_string(kCapturePoints));
            }
        }
        const Tensor out = net_forward(layers_, image, &trace.net);
        EmbedOut r;
        r.unnormalized = {out, false};
        r.normalized = {l2_normalize(out), true};
        for (int layer : capture) {
            r.activations.acts.emplace(layer, activation_of(trace, layer));
        }
        ensure_finite(out, "embedding");
        return r;
    }

    // Gradient of the unnormalized embedding contracted with `upstream`,
    // pulled back to pixel space.
    Tensor embed_grad(const Tensor& image, const Tensor& upstream) const {
        check_image(image);
        if (upstream.rank() != 1 || upstream.dim(0) != cfg_.embedding_dim) {
            throw ValidationError("embed_grad: upstream must be rank 1 of embedding length");
        }
        return backprop(layers_, image, upstream, /*need_param_grads=*/false).input_grad;
    }

    // Reverse pass from a stored forward trace: `out_upstream` seeds the fc
    // output; `layer_upstreams` inject additional gradients at capture points
    // (used by the guiding and Gaussian activation regularizers).
    Tensor backward(const ForwardTrace& trace, const Tensor& out_upstream,
                    const std::map<int, Tensor>& layer_upstreams = {}) const {
        Tensor g = out_upstream;
        if (auto it = layer_upstreams.find(4); it != layer_upstreams.end()) g += it->second;
        for (size_t k = layers_.size(); k-- > 0;) {
            Tensor layer_in = trace.net.layer_inputs[k];
            const auto orig_dims = layer_in.dims();
            if (layers_[k].kind == LayerKind::Fc && layer_in.rank() != 1) {
                layer_in = layer_in.reshaped({static_cast<int>(layer_in.size())});
            }
            LayerGrads lg = backward_layer(layer_in, layers_[k], g, /*need_param_grads=*/false);
            g = lg.input_grad.dims() == orig_dims ? std::move(lg.input_grad)
                                                  : lg.input_grad.reshaped(orig_dims);
            // after stepping below relu stage m, g is the grad w.r.t. capture point m's input;
            // injections apply at the *output* of each capture point, i.e. before its consumer.
            const int cap = capture_point_feeding(static_cast<int>(k));
            if (cap != 0) {
                if (auto it = layer_upstreams.find(cap); it != layer_upstreams.end()) {
                    g += it->second;
                }
            }
        }
        return g;
    }

    std::vector<std::string> layer_names() const {
        return {"conv1.kernel", "conv1.bias", "conv2.kernel", "conv2.bias",
                "conv3.kernel", "conv3.bias", "fc.kernel", "fc.bias"};
    }

    std::vector<const Tensor*> weight_tensors() const {
        std::vector<const Tensor*> out;
        for (const auto& l : layers_) {
            if (l.has_params()) {
                out.push_back(&l.kernel);
                out.push_back(&l.bias);
            }
        }
        return out;
    }

private:
    // layer list: [conv,relu,conv,relu,conv,relu,fc]; capture 1..3 are the
    // relu outputs (net indices 1,3,5), capture 4 is the fc output (index 6).
    static int net_index_of_capture(int capture) { return capture == 4 ? 6 : 2 * capture - 1; }

    // returns the capture point whose output is the input of net layer k (0 = none)
    static int capture_point_feeding(int k) {
        switch (k) {
            case 2: return 1;
            case 4: return 2;
            case 6: return 3;
            default: return 0;
        }
    }

    Tensor activation_of(const ForwardTrace& trace, int capture) const {
        const int idx = net_index_of_capture(capture);
        if (idx == 6) return trace.net.output;
        // output of net layer idx == input of layer idx+1
        return trace.net.layer_inputs[static_cast<size_t>(idx) + 1];
    }

    void check_image(const Tensor& image) const {
        const int s = cfg_.image_size;
        if (image.rank() != 3 || image.dim(0) != s || image.dim(1) != s || image.dim(2) != 3) {
            throw ValidationError("embedder expects a " + std::to_string(s) + "x" +
                                  std::to_string(s) + "x3 image, got " + image.dims_str());
        }
        ensure_finite(image, "embedder input image");
    }

    void append_conv(Rng& rng, std::vector<int> in_dims, int cout) {
        const int cin = in_dims[2];
        Tensor k = xavier_uniform(rng, {3, 3, cin, cout}, 9 * cin, 9 * cout);
        Tensor b = rng.uniform_tensor({cout}, -0.1, 0.1);
        layers_.push_back(LayerParams::conv(std::move(k), std::move(b), 2, in_dims));
        layers_.push_back(LayerParams::relu(layers_.back().out_dims));
    }

    // Optional mode: nudge the fc layer so four synthetic blob classes map to
    // four fixed anchor embeddings. Conv features stay frozen, so the fc can
    // be fit on precomputed features.
    void fit_fc_to_blobs(Rng& rng);

    EmbedderConfig cfg_;
    std::vector<LayerParams> layers_;
};

inline void EmbedderNet::fit_fc_to_blobs(Rng& rng) {
    const int s = cfg_.image_size;
    const int dim = cfg_.embedding_dim;
    const int n_classes = std::min(4, dim);
    const double centers[4][2] = {{0.3, 0.3}, {0.3, 0.7}, {0.7, 0.3}, {0.7, 0.7}};

    // cache conv-stack features; only the fc layer moves
    std::vector<Tensor> features;
    std::vector<int> labels;
    for (int c = 0; c < n_classes; ++c) {
        for (int rep = 0; rep < 8; ++rep) {
            const double cy = centers[c][0] + rng.uniform(-0.05, 0.05);
            const double cx = centers[c][1] + rng.uniform(-0.05, 0.05);
            Tensor img({s, s, 3});
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    const double dy = (y + 0.5) / s - cy;
                    const double dx = (x + 0.5) / s - cx;
                    const double v = std::exp(-(dy * dy + dx * dx) / 0.02);
                    for (int ch = 0; ch < 3; ++ch) img.at3(y, x, ch) = v;
                }
            Tensor f = img;
            for (size_t li = 0; li + 1 < layers_.size(); ++li) f = forward_layer(f, layers_[li]);
            features.push_back(f.reshaped({static_cast<int>(f.size())}));
            labels.push_back(c);
        }
    }
    LayerParams& fc = layers_.back();
    const int n_in = fc.kernel.dim(0), n_out = fc.kernel.dim(1);
    const double lr = 0.01;
    for (int epoch = 0; epoch < 200; ++epoch) {
        for (size_t i = 0; i < features.size(); ++i) {
            const Tensor& x = features[i];
            Tensor out = fully_connected(x, fc);
            Tensor gout(out.dims());
            for (int j = 0; j < n_out; ++j) {
                const double target = (j == labels[i]) ? 2.0 : 0.0;
                gout[static_cast<size_t>(j)] = out[static_cast<size_t>(j)] - target;
            }
            for (int r = 0; r < n_in; ++r) {
                double* krow = fc.kernel.data() + static_cast<size_t>(r) * n_out;
                const double xv = x[static_cast<size_t>(r)];
                for (int j = 0; j < n_out; ++j) krow[j] -= lr * xv * gout[static_cast<size_t>(j)];
            }
            for (int j = 0; j < n_out; ++j) fc.bias[static_cast<size_t>(j)] -= lr * gout[static_cast<size_t>(j)];
        }
    }
}

// Per-node mean and population standard deviation of layer activations over
// an image collection.
inline std::pair<Tensor, Tensor> activation_stats(const EmbedderNet& net,
                                                  const std::vector<Tensor>& images, int layer) {
    if (images.size() < 2) {
        throw ValidationError("activation_stats needs at least 2 images (std undefined)");
    }
    Tensor mean, m2;
    const double inv_n = 1.0 / static_cast<double>(images.size());
    std::vector<Tensor> acts;
    acts.reserve(images.size());
    for (const auto& img : images) {
        acts.push_back(net.embed(img, {layer}).activations.at(layer));
        if (!acts.empty() && !acts.back().same_dims(acts.front())) {
            throw ValidationError("activation_stats: images produced mismatched activations");
        }
    }
    mean = Tensor(acts.front().dims());
    for (const auto& a : acts) mean += a;
    mean *= inv_n;
    Tensor sd(acts.front().dims());
    for (const auto& a : acts) {
        for (size_t i = 0; i < sd.size(); ++i) {
            const double d = a[i] - mean[i];
            sd[i] += d * d;
        }
    }
    for (size_t i = 0; i < sd.size(); ++i) sd[i] = std::sqrt(sd[i] * inv_n);
    return {std::move(mean), std::move(sd)};
}

}  // namespace embinv
