#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace routelab::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Every op in the engine views a tensor as
// a matrix: rows() is the product of all leading dimensions and cols() is the
// last dimension. A rank-0 tensor is a scalar (1x1).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor row(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rows() const
    {
        if (shape_.empty()) return 1;
        return cols() == 0 ? 0 : data_.size() / cols();
    }
    std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
    bool is_scalar() const { return data_.size() == 1; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double item() const;

    void fill(double v);
    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

} // namespace routelab::ad
