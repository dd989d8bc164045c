#include "cfan/tensor.hpp"

#include <cmath>

namespace cfan {

namespace {

std::size_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::size_t count = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeMismatch("tensor: negative dimension");
        count *= static_cast<std::size_t>(d);
    }
    return count;
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) throw ShapeMismatch("tensor: shape does not match data size");
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::randn(std::vector<std::int64_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.normal(0.0, stddev);
    return t;
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
    Tensor t({m.rows(), m.cols()});
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(r, c) = m(r, c);
    }
    return t;
}

Tensor Tensor::from_vector(const Eigen::VectorXd& v) {
    return Tensor({v.size()}, std::vector<double>(v.data(), v.data() + v.size()));
}

std::int64_t Tensor::rows() const {
    if (shape_.empty()) throw ShapeMismatch("tensor: rows() on empty shape");
    return shape_[0];
}

std::int64_t Tensor::cols() const {
    if (shape_.size() == 1) return 1;
    if (shape_.size() != 2) throw ShapeMismatch("tensor: cols() needs a 1-D or 2-D tensor");
    return shape_[1];
}

Eigen::MatrixXd Tensor::to_matrix() const {
    const std::int64_t r = rows(), c = cols();
    Eigen::MatrixXd m(r, c);
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) m(i, j) = data_[static_cast<std::size_t>(i * c + j)];
    }
    return m;
}

Eigen::VectorXd Tensor::to_eigen_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(data_.data(), static_cast<Eigen::Index>(data_.size()));
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace cfan
