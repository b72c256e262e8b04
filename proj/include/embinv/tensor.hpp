#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace embinv {

// Thrown on contract violations: bad shapes, inconsistent flags, invalid
// configuration. Maps to CLI exit code 2.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation produces non-finite values or diverges.
// Maps to CLI exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense tensor of 64-bit reals, rank 1..4, row-major.
// Images are H x W x C; conv kernels are kh x kw x Cin x Cout.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims, double fill = 0.0)
        : dims_(std::move(dims)) {
        validate_dims(dims_);
        data_.assign(element_count(dims_), fill);
    }

    static Tensor from_data(std::vector<int> dims, std::vector<double> data) {
        validate_dims(dims);
        if (data.size() != element_count(dims)) {
            throw ValidationError("tensor data length " + std::to_string(data.size()) +
                                  " does not match dims product " +
                                  std::to_string(element_count(dims)));
        }
        Tensor t;
        t.dims_ = std::move(dims);
        t.data_ = std::move(data);
        return t;
    }

    int rank() const { return static_cast<int>(dims_.size()); }
    int dim(int i) const { return dims_[static_cast<size_t>(i)]; }
    const std::vector<int>& dims() const { return dims_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    // rank-2 (rows x cols)
    size_t idx2(int i, int j) const {
        return static_cast<size_t>(i) * dims_[1] + j;
    }
    double& at2(int i, int j) { return data_[idx2(i, j)]; }
    double at2(int i, int j) const { return data_[idx2(i, j)]; }

    // rank-3 (y, x, c)
    size_t idx3(int y, int x, int c) const {
        return (static_cast<size_t>(y) * dims_[1] + x) * dims_[2] + c;
    }
    double& at3(int y, int x, int c) { return data_[idx3(y, x, c)]; }
    double at3(int y, int x, int c) const { return data_[idx3(y, x, c)]; }

    // rank-4 (a, b, c, d)
    size_t idx4(int a, int b, int c, int d) const {
        return ((static_cast<size_t>(a) * dims_[1] + b) * dims_[2] + c) * dims_[3] + d;
    }
    double& at4(int a, int b, int c, int d) { return data_[idx4(a, b, c, d)]; }
    double at4(int a, int b, int c, int d) const { return data_[idx4(a, b, c, d)]; }

    bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

    Tensor& operator+=(const Tensor& o) {
        require_same_dims(o, "+=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same_dims(o, "-=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    Tensor reshaped(std::vector<int> new_dims) const {
        return from_data(std::move(new_dims), data_);
    }

    std::string dims_str() const {
        std::string s = "[";
        for (size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s + "]";
    }

private:
    static size_t element_count(const std::vector<int>& dims) {
        size_t n = 1;
        for (int d : dims) n *= static_cast<size_t>(d);
        return n;
    }
    static void validate_dims(const std::vector<int>& dims) {
        if (dims.empty() || dims.size() > 4) {
            throw ValidationError("tensor rank must be 1..4, got " +
                                  std::to_string(dims.size()));
        }
        for (int d : dims) {
            if (d <= 0) throw ValidationError("tensor dims must be positive");
        }
    }
    void require_same_dims(const Tensor& o, const char* op) const {
        if (!same_dims(o)) {
            throw ValidationError(std::string("tensor dim mismatch in ") + op + ": " +
                                  dims_str() + " vs " + o.dims_str());
        }
    }

    std::vector<int> dims_;
    std::vector<double> data_;
};

// Pixel-space image, H x W x C with values nominally in [0,1].
using ImageTensor = Tensor;

inline void ensure_finite(const Tensor& t, const std::string& what) {
    for (size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) {
            throw NumericError("non-finite value in " + what + " at flat index " +
                               std::to_string(i));
        }
    }
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw ValidationError("dot: size mismatch " + a.dims_str() + " vs " + b.dims_str());
    }
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Tensor& t) { return std::sqrt(dot(t, t)); }

inline double rms(const Tensor& t) {
    if (t.size() == 0) return 0.0;
    return std::sqrt(dot(t, t) / static_cast<double>(t.size()));
}

inline Tensor operator+(Tensor a, const Tensor& b) { a += b; return a; }
inline Tensor operator-(Tensor a, const Tensor& b) { a -= b; return a; }
inline Tensor operator*(Tensor a, double s) { a *= s; return a; }
inline Tensor operator*(double s, Tensor a) { a *= s; return a; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_dims(b)) {
        throw ValidationError("max_abs_diff: dim mismatch");
    }
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline Tensor clamped01(Tensor t) {
    for (size_t i = 0; i < t.size(); ++i) t[i] = std::clamp(t[i], 0.0, 1.0);
    return t;
}

}  // namespace embinv
