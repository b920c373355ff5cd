#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace amlora {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape &shape);
std::size_t shape_volume(const Shape &shape);

/// Dense row-major array of doubles. Plain value type: copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor scalar(double value) { return Tensor({1}, std::vector<double>{value}); }
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor identity(std::size_t n);

    const Shape &shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Leading extent for a matrix view: product of all but the last dim.
    std::size_t rows() const noexcept;
    /// Last dimension.
    std::size_t cols() const noexcept;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double> &buffer() noexcept { return data_; }
    const std::vector<double> &buffer() const noexcept { return data_; }

    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double &at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    /// Same buffer, new shape of equal volume.
    Tensor reshaped(Shape shape) const;
    void fill(double value);
    bool all_finite() const noexcept;
    /// Bitwise comparison of shape and data.
    bool bit_equal(const Tensor &other) const noexcept;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Largest absolute elementwise difference; shapes must agree.
double max_abs_diff(const Tensor &a, const Tensor &b);

/// Eager, tape-free helpers used by oracles and evaluation code.
Tensor matmul_eager(const Tensor &a, const Tensor &b);
Tensor transpose_eager(const Tensor &a);

} // namespace amlora
