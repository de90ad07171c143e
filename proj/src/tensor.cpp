#include "driftgate/tensor.hpp"

#include "driftgate/errors.hpp"

#include <cmath>
#include <sstream>

namespace driftgate {

std::size_t shape_size(const Shape& shape) noexcept
{
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

void check_dims(const Shape& shape)
{
    for (auto d : shape)
        if (d == 0)
            throw ShapeError("tensor: zero-sized dimension in " + shape_string(shape));
}

} // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    check_dims(shape_);
    values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end())
{
    check_dims(shape_);
    if (values_.size() != shape_size(shape_))
        throw ShapeError("tensor: shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
{
    return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= shape_.size())
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape_));
    return shape_[axis];
}

double Tensor::item() const
{
    if (values_.size() != 1)
        throw ShapeError("tensor: item() on shape " + shape_string(shape_));
    return values_[0];
}

bool Tensor::all_finite() const noexcept
{
    for (double v : values_)
        if (!std::isfinite(v))
            return false;
    return true;
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_size(shape) != values_.size())
        throw ShapeError("tensor: cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    check_dims(out.shape_);
    return out;
}

} // namespace driftgate
