#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "rastg/error.hpp"

namespace rastg::nd {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense row-major f64 array. Copies share the underlying buffer; published
// values are treated as immutable, mutation happens only while a result is
// being built (data() access).
class NdArray {
public:
    NdArray() = default;
    explicit NdArray(Shape shape);                       // zero-filled
    NdArray(Shape shape, std::vector<double> values);

    static NdArray full(Shape shape, double v);
    static NdArray scalar(double v);
    static NdArray zeros_like(const NdArray& other) { return NdArray(other.shape()); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int axis) const;                    // negative axis allowed
    std::int64_t size() const { return buf_ ? static_cast<std::int64_t>(buf_->size()) : 0; }
    bool empty() const { return size() == 0; }

    double* data() { return buf_->data(); }
    const double* data() const { return buf_->data(); }

    double& operator[](std::int64_t i) { return (*buf_)[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return (*buf_)[static_cast<std::size_t>(i)]; }

    double& at(std::initializer_list<std::int64_t> idx);
    double at(std::initializer_list<std::int64_t> idx) const;

    // Scalar extraction; throws ShapeError unless size() == 1.
    double value() const;

    // Same buffer, new shape (element count must match).
    NdArray reshaped(Shape shape) const;

    // Materialized axis permutation.
    NdArray transposed(const std::vector<int>& perm) const;

    bool all_finite() const;
    bool same_shape(const NdArray& other) const { return shape_ == other.shape_; }

    // Deep copy (fresh buffer).
    NdArray clone() const;

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> buf_;
};

// Row-major strides for a shape.
std::vector<std::int64_t> strides_of(const Shape& s);

void require_same_shape(const NdArray& a, const NdArray& b, const char* what);

} // namespace rastg::nd
