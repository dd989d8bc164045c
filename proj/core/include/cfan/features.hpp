#pragma once

#include <Eigen/Core>
#include <vector>

#include "cfan/mesh.hpp"

namespace cfan {

/// Per-vertex conformal factor and unit normal. The conformal factor is the
/// log of one third of the incident face area; the normal is the normalized
/// area-weighted average of incident face normals.
struct CfanFeature {
    Eigen::VectorXd conformal;  // length n, log(m^2) after the area sum
    Eigen::MatrixX3d normals;   // n x 3, rows unit within 1e-6

    /// Channels packed as [conformal | normal], an n x 4 matrix.
    Eigen::MatrixXd as_matrix() const;
    static CfanFeature from_matrix(const Eigen::MatrixXd& packed);
};

/// Computes the CFAN feature. Throws ValidationError on an isolated vertex
/// (impossible for a validated TriangleMesh, kept for raw-matrix callers).
CfanFeature compute_cfan(const TriangleMesh& mesh);

/// Total variant over raw coordinates on a fixed topology: area sums are
/// floored at 1e-12 and normal sums at 1e-12 before normalization, so
/// degenerate geometry yields finite features instead of throwing. Matches
/// the differentiable feature path used during training.
CfanFeature compute_cfan_raw(const Eigen::MatrixX3d& coords, const Eigen::MatrixX3i& faces);

/// Lumped vertex mass: one third of the incident face area per vertex.
/// exp(conformal[i]) == mass[i] by construction, and the masses sum to the
/// total surface area up to floating-point accumulation.
Eigen::VectorXd vertex_mass(const TriangleMesh& mesh);

/// Per-vertex, per-channel z-scoring statistics fit on a training split.
/// Standard deviations are population deviations floored at 1e-6.
class FeatureNormalizer {
public:
    FeatureNormalizer() = default;
    FeatureNormalizer(Eigen::MatrixXd mean, Eigen::MatrixXd stddev);

    /// Fits statistics over >= 2 equally shaped feature matrices.
    static FeatureNormalizer fit(const std::vector<Eigen::MatrixXd>& samples);

    Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;
    Eigen::MatrixXd invert(const Eigen::MatrixXd& normalized) const;

    const Eigen::MatrixXd& mean() const { return mean_; }
    const Eigen::MatrixXd& stddev() const { return stddev_; }
    Eigen::Index rows() const { return mean_.rows(); }
    Eigen::Index cols() const { return mean_.cols(); }

private:
    Eigen::MatrixXd mean_;
    Eigen::MatrixXd stddev_;
};

}  // namespace cfan
