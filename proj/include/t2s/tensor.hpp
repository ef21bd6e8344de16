#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "t2s/errors.hpp"

namespace t2s {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array. Rank 0 (scalar) is represented by an empty shape.
template <typename Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = Real{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " values");
    }

    static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<Real> data) {
        return Tensor(Shape{rows, cols}, std::move(data));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }

    // Rank-2 accessors; a rank-1 tensor is treated as a single row.
    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const {
        if (shape_.empty()) return 1;
        return shape_.back();
    }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }
    Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::vector<Real>& values() { return data_; }
    const std::vector<Real>& values() const { return data_; }

    Real item() const {
        if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<Real> data_;
};

}  // namespace t2s
