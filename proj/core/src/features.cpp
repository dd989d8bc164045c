#include "cfan/features.hpp"

#include <Eigen/Geometry>
#include <cmath>

#include "cfan/exceptions.hpp"
#include "cfan/util.hpp"

namespace cfan {

Eigen::MatrixXd CfanFeature::as_matrix() const {
    Eigen::MatrixXd packed(conformal.size(), 4);
    packed.col(0) = conformal;
    packed.rightCols<3>() = normals;
    return packed;
}

CfanFeature CfanFeature::from_matrix(const Eigen::MatrixXd& packed) {
    if (packed.cols() != 4) throw ShapeMismatch("CfanFeature::from_matrix expects 4 columns");
    CfanFeature feature;
    feature.conformal = packed.col(0);
    feature.normals = packed.rightCols<3>();
    return feature;
}

CfanFeature compute_cfan(const TriangleMesh& mesh) {
    const Eigen::Index n = mesh.vertex_count();
    const Eigen::Index k = mesh.face_count();

    Eigen::VectorXd face_area(k);
    Eigen::MatrixX3d face_normal(k, 3);
    for (Eigen::Index f = 0; f < k; ++f) {
        auto [area, normal] = mesh.face_area_and_normal(f);
        face_area(f) = area;
        face_normal.row(f) = normal;
    }

    CfanFeature feature;
    feature.conformal.resize(n);
    feature.normals.resize(n, 3);
    const auto& incident = mesh.vertex_faces();
    std::vector<double> areas;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& ring = incident[static_cast<std::size_t>(i)];
        if (ring.empty()) throw ValidationError("isolated vertex " + std::to_string(i));
        areas.clear();
        Eigen::Vector3d weighted = Eigen::Vector3d::Zero();
        for (int f : ring) {
            areas.push_back(face_area(f) / 3.0);
            weighted += face_area(f) * face_normal.row(f).transpose();
        }
        const double lumped = pairwise_sum(areas);
        if (!(lumped > 0.0)) throw ValidationError("vertex " + std::to_string(i) + " has zero incident area");
        feature.conformal(i) = std::log(lumped);
        const double norm = weighted.norm();
        if (norm < 1e-30) throw ValidationError("vertex " + std::to_string(i) + " has a vanishing normal sum");
        feature.normals.row(i) = weighted / norm;
    }
    return feature;
}

CfanFeature compute_cfan_raw(const Eigen::MatrixX3d& coords, const Eigen::MatrixX3i& faces) {
    const Eigen::Index n = coords.rows();
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(n);
    Eigen::MatrixX3d normal_sums = Eigen::MatrixX3d::Zero(n, 3);
    for (Eigen::Index f = 0; f < faces.rows(); ++f) {
        const Eigen::Vector3d a = coords.row(faces(f, 0));
        const Eigen::Vector3d b = coords.row(faces(f, 1));
        const Eigen::Vector3d c = coords.row(faces(f, 2));
        const Eigen::Vector3d cross = (b - a).cross(c - a);  // 2 * area * unit normal
        for (int k = 0; k < 3; ++k) {
            sums(faces(f, k)) += 0.5 * cross.norm() / 3.0;
            normal_sums.row(faces(f, k)) += cross;
        }
    }
    CfanFeature feature;
    feature.conformal.resize(n);
    feature.normals.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        feature.conformal(i) = std::log(std::max(sums(i), 1e-12));
        feature.normals.row(i) = normal_sums.row(i) / std::max(normal_sums.row(i).norm(), 1e-12);
    }
    return feature;
}

Eigen::VectorXd vertex_mass(const TriangleMesh& mesh) {
    const Eigen::Index n = mesh.vertex_count();
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        const double share = mesh.face_area_and_normal(f).first / 3.0;
        mass(mesh.faces()(f, 0)) += share;
        mass(mesh.faces()(f, 1)) += share;
        mass(mesh.faces()(f, 2)) += share;
    }
    return mass;
}

FeatureNormalizer::FeatureNormalizer(Eigen::MatrixXd mean, Eigen::MatrixXd stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
    if (mean_.rows() != stddev_.rows() || mean_.cols() != stddev_.cols()) {
        throw ShapeMismatch("normalizer mean/std shapes differ");
    }
    if ((stddev_.array() <= 0.0).any()) throw ValidationError("normalizer std must be positive");
}

FeatureNormalizer FeatureNormalizer::fit(const std::vector<Eigen::MatrixXd>& samples) {
    if (samples.size() < 2) throw ValidationError("normalizer fit needs at least 2 samples");
    const Eigen::Index rows = samples.front().rows();
    const Eigen::Index cols = samples.front().cols();
    for (const auto& s : samples) {
        if (s.rows() != rows || s.cols() != cols) throw ShapeMismatch("normalizer fit: sample shapes differ");
    }
    const double count = static_cast<double>(samples.size());
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(rows, cols);
    for (const auto& s : samples) mean += s;
    mean /= count;
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(rows, cols);
    for (const auto& s : samples) var += (s - mean).cwiseAbs2();
    var /= count;
    const Eigen::MatrixXd stddev = var.cwiseSqrt().cwiseMax(1e-6);
    return FeatureNormalizer(std::move(mean), stddev);
}

Eigen::MatrixXd FeatureNormalizer::apply(const Eigen::MatrixXd& features) const {
    if (features.rows() != mean_.rows() || features.cols() != mean_.cols()) {
        throw ShapeMismatch("normalizer apply: feature shape mismatch");
    }
    return (features - mean_).cwiseQuotient(stddev_);
}

Eigen::MatrixXd FeatureNormalizer::invert(const Eigen::MatrixXd& normalized) const {
    if (normalized.rows() != mean_.rows() || normalized.cols() != mean_.cols()) {
        throw ShapeMismatch("normalizer invert: feature shape mismatch");
    }
    return normalized.cwiseProduct(stddev_) + mean_;
}

}  // namespace cfan
