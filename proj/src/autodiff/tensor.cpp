#include "routelab/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace routelab::ad {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
  : shape_(std::move(shape)), data_(shape_size(shape_), fill)
{ }

Tensor::Tensor(Shape shape, std::vector<double> data)
  : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_size(shape_) != data_.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " needs " +
                                    std::to_string(shape_size(shape_)) + " values, got " +
                                    std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
{
    return Tensor(Shape{rows, cols}, std::move(values));
}

double Tensor::item() const
{
    if (data_.size() != 1) {
        throw std::invalid_argument("Tensor::item: tensor of shape " + shape_str(shape_) +
                                    " is not a scalar");
    }
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_size(shape) != data_.size()) {
        throw std::invalid_argument("Tensor::reshaped: cannot view " + shape_str(shape_) +
                                    " as " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

} // namespace routelab::ad
