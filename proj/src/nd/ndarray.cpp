#include "rastg/ndarray.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace rastg::nd {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d < 0) throw ShapeError("negative axis length in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

NdArray::NdArray(Shape shape)
    : shape_(std::move(shape)),
      buf_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(shape_numel(shape_)), 0.0)) {}

NdArray::NdArray(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape_));
    }
    buf_ = std::make_shared<std::vector<double>>(std::move(values));
}

NdArray NdArray::full(Shape shape, double v) {
    NdArray a(std::move(shape));
    std::fill(a.buf_->begin(), a.buf_->end(), v);
    return a;
}

NdArray NdArray::scalar(double v) {
    return NdArray(Shape{}, std::vector<double>{v});
}

std::int64_t NdArray::dim(int axis) const {
    int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    }
    return shape_[static_cast<std::size_t>(axis)];
}

std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
        st[i] = st[i + 1] * s[i + 1];
    }
    return st;
}

double& NdArray::at(std::initializer_list<std::int64_t> idx) {
    return const_cast<double&>(static_cast<const NdArray*>(this)->at(idx));
}

double NdArray::at(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
        throw ShapeError("index rank mismatch for shape " + shape_str(shape_));
    }
    auto st = strides_of(shape_);
    std::int64_t off = 0;
    int i = 0;
    for (auto v : idx) {
        if (v < 0 || v >= shape_[static_cast<std::size_t>(i)]) {
            throw ShapeError("index out of bounds for shape " + shape_str(shape_));
        }
        off += v * st[static_cast<std::size_t>(i)];
        ++i;
    }
    return (*buf_)[static_cast<std::size_t>(off)];
}

double NdArray::value() const {
    if (size() != 1) throw ShapeError("value() on non-scalar array of shape " + shape_str(shape_));
    return (*buf_)[0];
}

NdArray NdArray::reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    NdArray out;
    out.shape_ = std::move(shape);
    out.buf_ = buf_;
    return out;
}

NdArray NdArray::transposed(const std::vector<int>& perm) const {
    int r = rank();
    if (static_cast<int>(perm.size()) != r) throw ShapeError("transpose permutation rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        int p = perm[static_cast<std::size_t>(i)];
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
            throw ShapeError("invalid transpose permutation");
        }
        seen[static_cast<std::size_t>(p)] = true;
        out_shape[static_cast<std::size_t>(i)] = shape_[static_cast<std::size_t>(p)];
    }
    NdArray out(out_shape);
    if (size() == 0) return out;

    auto in_strides = strides_of(shape_);
    std::vector<std::int64_t> gather(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) gather[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];

    // walk output positions in order, computing the source offset incrementally
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    const double* src = data();
    double* dst = out.data();
    std::int64_t n = size();
    std::int64_t src_off = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = src[src_off];
        for (int ax = r - 1; ax >= 0; --ax) {
            auto a = static_cast<std::size_t>(ax);
            idx[a] += 1;
            src_off += gather[a];
            if (idx[a] < out_shape[a]) break;
            src_off -= gather[a] * out_shape[a];
            idx[a] = 0;
        }
    }
    return out;
}

bool NdArray::all_finite() const {
    if (!buf_) return true;
    for (double v : *buf_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

NdArray NdArray::clone() const {
    NdArray out;
    out.shape_ = shape_;
    out.buf_ = buf_ ? std::make_shared<std::vector<double>>(*buf_) : nullptr;
    return out;
}

void require_same_shape(const NdArray& a, const NdArray& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

} // namespace rastg::nd
