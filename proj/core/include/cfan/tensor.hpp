#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "cfan/exceptions.hpp"
#include "cfan/util.hpp"

namespace cfan {

/// Contiguous 64-bit float buffer with a row-major shape. One- and
/// two-dimensional tensors cover everything the model needs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::int64_t> shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double stddev = 1.0);
    static Tensor from_matrix(const Eigen::MatrixXd& m);
    static Tensor from_vector(const Eigen::VectorXd& v);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t rows() const;
    std::int64_t cols() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool is_scalar() const { return numel() == 1; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    double& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

    Eigen::MatrixXd to_matrix() const;
    Eigen::VectorXd to_eigen_vector() const;

    bool all_finite() const;

private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

}  // namespace cfan
