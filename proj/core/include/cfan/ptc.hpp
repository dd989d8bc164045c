#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "cfan/container.hpp"
#include "cfan/geodesic.hpp"

namespace cfan {

/// Compressed sparse rows, the on-disk and in-memory layout of every fixed
/// operator (interpolation, down/up transfer).
struct CsrMatrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<std::int64_t> row_offsets;  // rows + 1
    std::vector<std::int64_t> col_indices;
    std::vector<double> values;

    /// out = this * x, applied independently to each `cols`-row block of x
    /// (block count inferred from x.rows()).
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;

    Eigen::MatrixXd to_dense() const;
};

/// Per-level convolution geometry: the fixed interpolation matrix F (rows
/// grouped per center vertex, 13 stencil rows each, <= 9 nonzeros per row,
/// rows summing to 1) and the diagonal lumped mass.
struct PtcOperator {
    static constexpr int kStencilSize = 13;

    std::int64_t level_vertex_count = 0;
    CsrMatrix interp;       // (n * 13) x n
    Eigen::VectorXd mass;   // length n, positive

    /// F * signal: stencil samples without any mass weighting.
    Eigen::MatrixXd interpolate(const Eigen::MatrixXd& signal) const { return interp.apply(signal); }

    /// F * (M~ . signal). By default the mass diagonal is normalized by its
    /// mean so constants stay O(1); raw_mass applies the plain diagonal.
    Eigen::MatrixXd apply(const Eigen::MatrixXd& signal, bool raw_mass = false) const;

    /// The (normalized or raw) diagonal the apply path multiplies by.
    Eigen::VectorXd mass_diagonal(bool raw_mass = false) const;
};

/// Two-ring hexagonal stencil: 1 center, 6 points at 0.5 * mean_radius and
/// 6 at mean_radius, at angles 0, 60, ..., 300 degrees.
Eigen::Matrix<double, PtcOperator::kStencilSize, 2> stencil_template(double mean_radius);

/// Inverse-squared-distance interpolation of every stencil site over each
/// chart's 9 neighbors; a site within 1e-9 of a neighbor takes that
/// neighbor's value exactly. Chart neighbor ids must already be level-local
/// (in [0, charts.size())).
PtcOperator assemble_operator(const std::vector<LogMapChart>& charts, const Eigen::VectorXd& masses,
                              const Eigen::Matrix<double, PtcOperator::kStencilSize, 2>& site_template);

/// FPS decimation pyramid plus one PtcOperator per level.
struct MeshHierarchy {
    std::uint64_t topology_checksum = 0;
    int seed_vertex = 0;
    bool truncated = false;  // requested depth was cut to keep >= 13 vertices

    /// Base-mesh vertex ids per level; level 0 is the identity ordering,
    /// deeper levels are FPS-ordering prefixes of the previous level.
    std::vector<std::vector<int>> levels;
    std::vector<double> mean_radii;        // one per level
    std::vector<PtcOperator> operators;    // one per level
    std::vector<CsrMatrix> down_maps;      // levels[l] -> levels[l+1] (selection rows)
    std::vector<CsrMatrix> up_maps;        // levels[l+1] -> levels[l] (3-NN inverse-squared)

    int depth() const { return static_cast<int>(levels.size()) - 1; }
    std::int64_t level_size(int level) const { return static_cast<std::int64_t>(levels[level].size()); }
};

/// Builds the decimation hierarchy: level l+1 keeps the first
/// ceil(n_l / 4) entries of level l's FPS ordering. Levels stop (with
/// `truncated` set) before dropping below `min_level_size` vertices; throws
/// NumericError("hierarchy too deep") if not even one decimation fits.
MeshHierarchy build_hierarchy(const TriangleMesh& mesh, const CfanFeature& feature, int seed_vertex = 0,
                              int max_depth = 5, int min_level_size = 13);

/// Operator-cache serialization (chunked binary container).
void save_hierarchy(const MeshHierarchy& hierarchy, Container& container);
MeshHierarchy load_hierarchy(const Container& container);

}  // namespace cfan
