#pragma once

#include <cmath>
#include <vector>

#include "embinv/pyramid.hpp"
#include "embinv/rng.hpp"
#include "embinv/tensor.hpp"

namespace embinv {

// Low-frequency random image: 4x4 uniform noise expanded up to `size`.
// Expansion is a convex combination of neighbours, so values stay in [0,1].
inline Tensor random_smooth_image(Rng& rng, int size, int channels = 3) {
    if (size < 4 || (size & (size - 1)) != 0) {
        throw ValidationError("random_smooth_image: size must be a power of two >= 4");
    }
    Tensor img = rng.uniform_tensor({4, 4, channels}, 0.0, 1.0);
    while (img.dim(0) < size) img = expand(img);
    return img;
}

// Procedural blob scene standing in for a posed face: soft head ellipse, two
// eye blobs and a mouth bar on a gradient background. Pure function of its
// parameters, so frame sequences are reproducible.
inline Tensor synthetic_face_frame(int size, double shift_x = 0.0, double shift_y = 0.0,
                                   double angle = 0.0) {
    Tensor img({size, size, 3});
    const double cy = 0.5 + shift_y;
    const double cx = 0.5 + shift_x;
    const double ca = std::cos(angle), sa = std::sin(angle);
    auto blob = [](double d2, double radius) { return std::exp(-d2 / (radius * radius)); };
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double v = (y + 0.5) / size;
            const double u = (x + 0.5) / size;
            // rotate into the head frame
            const double ry = ca * (v - cy) - sa * (u - cx);
            const double rx = sa * (v - cy) + ca * (u - cx);
            double r = 0.15 + 0.25 * v;  // background gradient
            double g = 0.2 + 0.2 * v;
            double b = 0.35 + 0.15 * v;
            const double head = blob(ry * ry / 0.9 + rx * rx / 0.55, 0.3);
            r += 0.65 * head;
            g += 0.5 * head;
            b += 0.35 * head;
            const double eye_l = blob((ry + 0.07) * (ry + 0.07) + (rx + 0.09) * (rx + 0.09), 0.045);
            const double eye_r = blob((ry + 0.07) * (ry + 0.07) + (rx - 0.09) * (rx - 0.09), 0.045);
            const double mouth = blob((ry - 0.12) * (ry - 0.12) / 0.35 + rx * rx, 0.055);
            const double dark = 0.8 * (eye_l + eye_r) + 0.5 * mouth;
            r -= dark * 0.55;
            g -= dark * 0.45;
            b -= dark * 0.35;
            img.at3(y, x, 0) = std::clamp(r, 0.0, 1.0);
            img.at3(y, x, 1) = std::clamp(g, 0.0, 1.0);
            img.at3(y, x, 2) = std::clamp(b, 0.0, 1.0);
        }
    }
    return img;
}

// Frames of the blob scene translated and rotated over a loop.
inline std::vector<Tensor> synthetic_frame_sequence(int size, int count) {
    std::vector<Tensor> frames;
    frames.reserve(static_cast<size_t>(count));
    const double two_pi = 6.283185307179586476925286766559;
    for (int i = 0; i < count; ++i) {
        const double t = two_pi * i / count;
        frames.push_back(synthetic_face_frame(size, 0.08 * std::cos(t), 0.05 * std::sin(t),
                                              0.35 * std::sin(t)));
    }
    return frames;
}

}  // namespace embinv
