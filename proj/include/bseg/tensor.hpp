#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "bseg/errors.hpp"

namespace bseg {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

/// Dense row-major float64 array. The canonical feature-map layout is
/// (batch, channels, height, width); losses and token tensors use fewer
/// or differently ordered dims as noted at each call site.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(double v) { return Tensor({1}, v); }

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 4-d accessor for (B,C,H,W) tensors.
    double& at(int64_t b, int64_t c, int64_t y, int64_t x) {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    double at(int64_t b, int64_t c, int64_t y, int64_t x) const {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    // 3-d accessor for (B,N,D) token tensors.
    double& at(int64_t b, int64_t n, int64_t d) {
        return data_[static_cast<size_t>((b * shape_[1] + n) * shape_[2] + d)];
    }
    double at(int64_t b, int64_t n, int64_t d) const {
        return data_[static_cast<size_t>((b * shape_[1] + n) * shape_[2] + d)];
    }
    // 2-d accessor.
    double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    Tensor reshaped(Shape new_shape) const;

    void fill(double v);
    void add_(const Tensor& o);          // elementwise +=, shapes must match
    void scale_(double s);

    double sum() const;
    double min() const;
    double max() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const Shape& s);

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace bseg
