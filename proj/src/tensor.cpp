#include "vtt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor() : Tensor(Shape{1}, std::vector<Scalar>{0.0f}) {}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)) {
    if (shape_.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (auto d : shape_) {
        if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape_));
    }
    if (data.size() != shape_numel(shape_)) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape_));
    }
    data_ = std::make_shared<const std::vector<Scalar>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, Scalar value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Scalar>(n, value));
}

Tensor Tensor::scalar(Scalar value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<Scalar> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Scalar> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("axis out of range for " + shape_str(shape_));
    return shape_[axis];
}

std::size_t Tensor::rows() const {
    if (rank() == 1) return 1;
    if (rank() == 2) return shape_[0];
    throw DimensionError("rows() needs rank 1 or 2, got " + shape_str(shape_));
}

std::size_t Tensor::cols() const { return shape_.back(); }

Scalar Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::reshape(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::row(std::size_t r) const {
    const auto c = cols();
    if (r >= rows()) throw DimensionError("row index out of range");
    std::vector<Scalar> out(data_->begin() + static_cast<std::ptrdiff_t>(r * c),
                           data_->begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    return Tensor({c}, std::move(out));
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::memcmp(data_->data(), other.data_->data(), numel() * sizeof(Scalar)) == 0;
}

double norm2(std::span<const Scalar> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const Scalar> a, std::span<const Scalar> b) {
    if (a.size() != b.size()) throw DimensionError("dot of unequal lengths");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Scalar m = 0.0f;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace vtt::inline VTT_PRECISION_NS
