#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdgc {

struct Shape {
    std::vector<std::size_t> dims;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> d) : dims(d) { validate(); }
    explicit Shape(std::vector<std::size_t> d) : dims(std::move(d)) { validate(); }

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

    std::size_t rank() const { return dims.size(); }

    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims[i]);
        }
        return s + ")";
    }

private:
    void validate() const {
        for (std::size_t d : dims) {
            if (d == 0) throw std::invalid_argument("Shape: every extent must be >= 1");
        }
    }
};

// Dense row-major tensor of 64-bit floats.
class NdArray {
public:
    NdArray() = default;

    explicit NdArray(Shape shape)
        : shape_(std::move(shape)), values_(shape_.numel(), 0.0) {}

    NdArray(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != shape_.numel()) {
            throw std::invalid_argument("NdArray: " + std::to_string(values_.size()) +
                                        " values for shape " + shape_.str());
        }
    }

    static NdArray zeros(Shape shape) { return NdArray(std::move(shape)); }

    static NdArray full(Shape shape, double v) {
        NdArray a(std::move(shape));
        for (double& x : a.values_) x = v;
        return a;
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }
    const double* data() const { return values_.data(); }
    double* data() { return values_.data(); }

    bool all_finite() const {
        for (double v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    Shape shape_;
    std::vector<double> values_;
};

inline double dot(const NdArray& a, const NdArray& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("dot: size mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const NdArray& a) { return std::sqrt(dot(a, a)); }

inline void require_shape(const NdArray& a, const Shape& want, const char* where) {
    if (a.shape() != want) {
        throw std::invalid_argument(std::string(where) + ": expected shape " + want.str() +
                                    ", got " + a.shape().str());
    }
}

}  // namespace sdgc
