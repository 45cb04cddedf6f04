#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vtt/precision.hpp"

namespace vtt::inline VTT_PRECISION_NS {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of Scalar (f32 in the production build). Storage is
// shared and immutable, so copies are cheap and a Tensor can be read from
// several threads at once.
class Tensor {
   public:
    Tensor();
    Tensor(Shape shape, std::vector<Scalar> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, Scalar value);
    static Tensor scalar(Scalar value);
    static Tensor vector(std::vector<Scalar> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return data_->size(); }

    // Rows/cols view a rank-1 tensor as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const Scalar> data() const { return {data_->data(), data_->size()}; }
    Scalar operator[](std::size_t i) const { return (*data_)[i]; }
    Scalar at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
    Scalar item() const;

    Tensor reshape(Shape shape) const;
    Tensor row(std::size_t r) const;
    std::vector<Scalar> to_vector() const { return *data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool bitwise_equal(const Tensor& other) const;

   private:
    Shape shape_;
    std::shared_ptr<const std::vector<Scalar>> data_;
};

double norm2(std::span<const Scalar> v);
double dot(std::span<const Scalar> a, std::span<const Scalar> b);
Scalar max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace vtt::inline VTT_PRECISION_NS
