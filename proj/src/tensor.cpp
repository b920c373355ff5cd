#include <amlora/tensor.hpp>

#include <amlora/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace amlora {

std::string shape_string(const Shape &shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_volume(const Shape &shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {
void check_shape(const Shape &shape)
{
    if (shape.empty())
        throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape)
        if (d == 0)
            throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
}
} // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    check_shape(shape_);
    data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    check_shape(shape_);
    if (shape_volume(shape_) != data_.size())
        throw DimensionError("buffer of length " + std::to_string(data_.size()) + " does not fit shape " +
                             shape_string(shape_));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto &row : rows) {
        if (row.size() != c)
            throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i)
        t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const noexcept
{
    if (shape_.empty())
        return 0;
    return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept
{
    return shape_.empty() ? 0 : shape_.back();
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value)
{
    std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor &other) const noexcept
{
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor &a, const Tensor &b)
{
    if (a.shape() != b.shape())
        throw DimensionError("cannot compare " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

Tensor matmul_eager(const Tensor &a, const Tensor &b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            for (std::size_t j = 0; j < n; ++j)
                out.at(i, j) += av * b.at(p, j);
        }
    return out;
}

Tensor transpose_eager(const Tensor &a)
{
    if (a.rank() != 2)
        throw DimensionError("transpose expects a matrix, got " + shape_string(a.shape()));
    Tensor out({a.shape()[1], a.shape()[0]});
    for (std::size_t i = 0; i < a.shape()[0]; ++i)
        for (std::size_t j = 0; j < a.shape()[1]; ++j)
            out.at(j, i) = a.at(i, j);
    return out;
}

} // namespace amlora
