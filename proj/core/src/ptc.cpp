#include "cfan/ptc.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "cfan/exceptions.hpp"
#include "cfan/util.hpp"

namespace cfan {

Eigen::MatrixXd CsrMatrix::apply(const Eigen::MatrixXd& x) const {
    if (cols == 0 || x.rows() % cols != 0) {
        throw ShapeMismatch("csr apply: input rows " + std::to_string(x.rows()) +
                            " not a multiple of operator cols " + std::to_string(cols));
    }
    const std::int64_t blocks = x.rows() / cols;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(blocks * rows, x.cols());
    for (std::int64_t b = 0; b < blocks; ++b) {
        const std::int64_t in_base = b * cols;
        const std::int64_t out_base = b * rows;
        for (std::int64_t r = 0; r < rows; ++r) {
            auto out_row = out.row(out_base + r);
            for (std::int64_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
                out_row += values[k] * x.row(in_base + col_indices[k]);
            }
        }
    }
    return out;
}

Eigen::MatrixXd CsrMatrix::to_dense() const {
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(rows, cols);
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
            dense(r, col_indices[k]) += values[k];
        }
    }
    return dense;
}

Eigen::VectorXd PtcOperator::mass_diagonal(bool raw_mass) const {
    if (raw_mass) return mass;
    return mass / mass.mean();
}

Eigen::MatrixXd PtcOperator::apply(const Eigen::MatrixXd& signal, bool raw_mass) const {
    if (signal.rows() % level_vertex_count != 0) {
        throw ShapeMismatch("apply_ptc: signal rows do not match operator vertex count");
    }
    const Eigen::VectorXd diag = mass_diagonal(raw_mass);
    Eigen::MatrixXd weighted = signal;
    const std::int64_t blocks = signal.rows() / level_vertex_count;
    for (std::int64_t b = 0; b < blocks; ++b) {
        weighted.middleRows(b * level_vertex_count, level_vertex_count).array().colwise() *= diag.array();
    }
    return interp.apply(weighted);
}

Eigen::Matrix<double, PtcOperator::kStencilSize, 2> stencil_template(double mean_radius) {
    if (!(mean_radius > 0.0)) throw ValidationError("stencil_template: mean_radius must be positive");
    Eigen::Matrix<double, PtcOperator::kStencilSize, 2> sites;
    sites.row(0) << 0.0, 0.0;
    for (int k = 0; k < 6; ++k) {
        const double angle = k * (3.14159265358979323846 / 3.0);
        sites.row(1 + k) << 0.5 * mean_radius * std::cos(angle), 0.5 * mean_radius * std::sin(angle);
        sites.row(7 + k) << mean_radius * std::cos(angle), mean_radius * std::sin(angle);
    }
    return sites;
}

PtcOperator assemble_operator(const std::vector<LogMapChart>& charts, const Eigen::VectorXd& masses,
                              const Eigen::Matrix<double, PtcOperator::kStencilSize, 2>& site_template) {
    const auto n = static_cast<std::int64_t>(charts.size());
    if (n == 0) throw NumericError("assemble_operator: empty chart list");
    if (masses.size() != n) throw ShapeMismatch("assemble_operator: mass length != chart count");

    constexpr int K = PtcOperator::kStencilSize;
    constexpr int J = LogMapChart::kNeighbors;

    PtcOperator op;
    op.level_vertex_count = n;
    op.mass = masses;
    op.interp.rows = n * K;
    op.interp.cols = n;
    op.interp.row_offsets.reserve(static_cast<std::size_t>(n * K + 1));
    op.interp.row_offsets.push_back(0);

    for (std::int64_t i = 0; i < n; ++i) {
        const auto& chart = charts[static_cast<std::size_t>(i)];
        for (int s = 0; s < K; ++s) {
            const Eigen::Vector2d site = site_template.row(s);
            // Exact hit: the closest neighbor within 1e-9 takes the full weight.
            int hit = -1;
            double hit_dist = 1e-9;
            double dist2[J];
            for (int j = 0; j < J; ++j) {
                const double d = (site - chart.coords.row(j).transpose()).norm();
                dist2[j] = d * d;
                if (d < hit_dist) {
                    hit_dist = d;
                    hit = j;
                }
            }
            if (hit >= 0) {
                op.interp.col_indices.push_back(chart.neighbor_ids[static_cast<std::size_t>(hit)]);
                op.interp.values.push_back(1.0);
            } else {
                double total = 0.0;
                double w[J];
                for (int j = 0; j < J; ++j) {
                    w[j] = 1.0 / dist2[j];
                    total += w[j];
                }
                for (int j = 0; j < J; ++j) {
                    op.interp.col_indices.push_back(chart.neighbor_ids[static_cast<std::size_t>(j)]);
                    op.interp.values.push_back(w[j] / total);
                }
            }
            op.interp.row_offsets.push_back(static_cast<std::int64_t>(op.interp.values.size()));
        }
    }
    return op;
}

namespace {

// Level-local charts: 9 nearest members of `level`, ids remapped to level
// positions.
std::vector<LogMapChart> level_charts(const EdgeGraph& graph, const TriangleMesh& mesh,
                                      const std::vector<TangentFrame>& frames,
                                      const std::vector<int>& level) {
    if (level.size() < LogMapChart::kNeighbors + 1) {
        throw NumericError("too few neighbors: level has " + std::to_string(level.size()) + " vertices");
    }
    std::vector<char> mask(static_cast<std::size_t>(graph.vertex_count), 0);
    std::unordered_map<int, int> position;
    position.reserve(level.size());
    for (std::size_t p = 0; p < level.size(); ++p) {
        mask[static_cast<std::size_t>(level[p])] = 1;
        position[level[p]] = static_cast<int>(p);
    }
    std::vector<LogMapChart> charts;
    charts.reserve(level.size());
    for (int v : level) {
        LogMapChart chart = build_log_chart(graph, mesh, frames[static_cast<std::size_t>(v)], mask);
        for (auto& id : chart.neighbor_ids) id = position.at(id);
        chart.center = position.at(chart.center);
        charts.push_back(std::move(chart));
    }
    return charts;
}

double mean_neighbor_radius(const std::vector<LogMapChart>& charts) {
    std::vector<double> radii;
    radii.reserve(charts.size());
    for (const auto& chart : charts) {
        radii.push_back(chart.coords.rowwise().norm().mean());
    }
    return pairwise_sum(radii) / static_cast<double>(radii.size());
}

CsrMatrix selection_rows(const std::vector<int>& coarse_positions, std::int64_t fine_count) {
    CsrMatrix m;
    m.rows = static_cast<std::int64_t>(coarse_positions.size());
    m.cols = fine_count;
    m.row_offsets.push_back(0);
    for (int p : coarse_positions) {
        m.col_indices.push_back(p);
        m.values.push_back(1.0);
        m.row_offsets.push_back(static_cast<std::int64_t>(m.values.size()));
    }
    return m;
}

}  // namespace

MeshHierarchy build_hierarchy(const TriangleMesh& mesh, const CfanFeature& feature, int seed_vertex,
                              int max_depth, int min_level_size) {
    const int n = static_cast<int>(mesh.vertex_count());
    if (seed_vertex < 0 || seed_vertex >= n) throw ValidationError("build_hierarchy: seed out of range");

    MeshHierarchy hierarchy;
    hierarchy.topology_checksum = mesh.topology_checksum();
    hierarchy.seed_vertex = seed_vertex;

    const EdgeGraph graph = EdgeGraph::from_mesh(mesh);
    const DistanceField seed_field = dijkstra(graph, seed_vertex);
    const std::vector<TangentFrame> frames = build_frame_field(mesh, feature, seed_field);
    const Eigen::VectorXd base_mass = vertex_mass(mesh);

    std::vector<int> level(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) level[static_cast<std::size_t>(v)] = v;
    hierarchy.levels.push_back(level);

    for (int d = 0; d < max_depth; ++d) {
        const auto& fine = hierarchy.levels.back();
        const int next_size = static_cast<int>((fine.size() + 3) / 4);
        if (next_size < min_level_size) {
            if (d == 0) {
                throw NumericError("hierarchy too deep: first decimation of " +
                                   std::to_string(fine.size()) + " vertices would drop below " +
                                   std::to_string(min_level_size));
            }
            hierarchy.truncated = true;
            break;
        }
        hierarchy.levels.push_back(farthest_point_sample(graph, next_size, seed_vertex, fine));
    }
    hierarchy.truncated = hierarchy.truncated || hierarchy.depth() < max_depth;

    // Per-level operators.
    for (const auto& members : hierarchy.levels) {
        const auto charts = level_charts(graph, mesh, frames, members);
        const double radius = mean_neighbor_radius(charts);
        Eigen::VectorXd masses(static_cast<Eigen::Index>(members.size()));
        for (std::size_t p = 0; p < members.size(); ++p) {
            masses(static_cast<Eigen::Index>(p)) = base_mass(members[p]);
        }
        hierarchy.mean_radii.push_back(radius);
        hierarchy.operators.push_back(assemble_operator(charts, masses, stencil_template(radius)));
    }

    // Transfer maps between consecutive levels.
    for (int l = 0; l + 1 <= hierarchy.depth(); ++l) {
        const auto& fine = hierarchy.levels[static_cast<std::size_t>(l)];
        const auto& coarse = hierarchy.levels[static_cast<std::size_t>(l + 1)];
        std::unordered_map<int, int> fine_pos, coarse_pos;
        for (std::size_t p = 0; p < fine.size(); ++p) fine_pos[fine[p]] = static_cast<int>(p);
        for (std::size_t p = 0; p < coarse.size(); ++p) coarse_pos[coarse[p]] = static_cast<int>(p);

        std::vector<int> coarse_in_fine;
        coarse_in_fine.reserve(coarse.size());
        for (int v : coarse) coarse_in_fine.push_back(fine_pos.at(v));
        hierarchy.down_maps.push_back(
            selection_rows(coarse_in_fine, static_cast<std::int64_t>(fine.size())));

        std::vector<char> coarse_mask(static_cast<std::size_t>(n), 0);
        for (int v : coarse) coarse_mask[static_cast<std::size_t>(v)] = 1;

        CsrMatrix up;
        up.rows = static_cast<std::int64_t>(fine.size());
        up.cols = static_cast<std::int64_t>(coarse.size());
        up.row_offsets.push_back(0);
        for (int v : fine) {
            if (coarse_mask[static_cast<std::size_t>(v)]) {
                // A kept vertex is its own nearest coarse vertex at distance 0.
                up.col_indices.push_back(coarse_pos.at(v));
                up.values.push_back(1.0);
            } else {
                const auto hits = nearest_members(graph, v, coarse_mask, 3);
                double total = 0.0;
                for (const auto& hit : hits) total += 1.0 / (hit.distance * hit.distance);
                for (const auto& hit : hits) {
                    up.col_indices.push_back(coarse_pos.at(hit.vertex));
                    up.values.push_back((1.0 / (hit.distance * hit.distance)) / total);
                }
            }
            up.row_offsets.push_back(static_cast<std::int64_t>(up.values.size()));
        }
        hierarchy.up_maps.push_back(std::move(up));
    }
    return hierarchy;
}

namespace {

void put_csr(Container& c, const std::string& prefix, const CsrMatrix& m) {
    c.put_i64(prefix + ".shape", {2}, {m.rows, m.cols});
    c.put_i64(prefix + ".row_offsets", {m.row_offsets.size()}, m.row_offsets);
    c.put_i64(prefix + ".col_indices", {m.col_indices.size()}, m.col_indices);
    c.put_f64(prefix + ".values", {m.values.size()}, m.values);
}

CsrMatrix get_csr(const Container& c, const std::string& prefix) {
    CsrMatrix m;
    const auto& shape = c.get(prefix + ".shape").i64;
    m.rows = shape.at(0);
    m.cols = shape.at(1);
    m.row_offsets = c.get(prefix + ".row_offsets").i64;
    m.col_indices = c.get(prefix + ".col_indices").i64;
    m.values = c.get(prefix + ".values").f64;
    return m;
}

}  // namespace

void save_hierarchy(const MeshHierarchy& hierarchy, Container& container) {
    container.put_scalar_i64("hierarchy.topology_checksum",
                             static_cast<std::int64_t>(hierarchy.topology_checksum));
    container.put_scalar_i64("hierarchy.seed_vertex", hierarchy.seed_vertex);
    container.put_scalar_i64("hierarchy.truncated", hierarchy.truncated ? 1 : 0);
    container.put_scalar_i64("hierarchy.depth", hierarchy.depth());
    for (std::size_t l = 0; l < hierarchy.levels.size(); ++l) {
        const std::string prefix = "hierarchy.level" + std::to_string(l);
        std::vector<std::int64_t> ids(hierarchy.levels[l].begin(), hierarchy.levels[l].end());
        container.put_i64(prefix + ".vertices", {ids.size()}, std::move(ids));
        container.put_scalar(prefix + ".mean_radius", hierarchy.mean_radii[l]);
        const auto& op = hierarchy.operators[l];
        container.put_scalar_i64(prefix + ".vertex_count", op.level_vertex_count);
        container.put_vector(prefix + ".mass", op.mass);
        put_csr(container, prefix + ".interp", op.interp);
    }
    for (std::size_t l = 0; l < hierarchy.down_maps.size(); ++l) {
        put_csr(container, "hierarchy.down" + std::to_string(l), hierarchy.down_maps[l]);
        put_csr(container, "hierarchy.up" + std::to_string(l), hierarchy.up_maps[l]);
    }
}

MeshHierarchy load_hierarchy(const Container& container) {
    MeshHierarchy hierarchy;
    hierarchy.topology_checksum =
        static_cast<std::uint64_t>(container.get_scalar_i64("hierarchy.topology_checksum"));
    hierarchy.seed_vertex = static_cast<int>(container.get_scalar_i64("hierarchy.seed_vertex"));
    hierarchy.truncated = container.get_scalar_i64("hierarchy.truncated") != 0;
    const auto depth = container.get_scalar_i64("hierarchy.depth");
    for (std::int64_t l = 0; l <= depth; ++l) {
        const std::string prefix = "hierarchy.level" + std::to_string(l);
        const auto& ids = container.get(prefix + ".vertices").i64;
        hierarchy.levels.emplace_back(ids.begin(), ids.end());
        hierarchy.mean_radii.push_back(container.get_scalar(prefix + ".mean_radius"));
        PtcOperator op;
        op.level_vertex_count = container.get_scalar_i64(prefix + ".vertex_count");
        op.mass = container.get_vector(prefix + ".mass");
        op.interp = get_csr(container, prefix + ".interp");
        hierarchy.operators.push_back(std::move(op));
    }
    for (std::int64_t l = 0; l < depth; ++l) {
        hierarchy.down_maps.push_back(get_csr(container, "hierarchy.down" + std::to_string(l)));
        hierarchy.up_maps.push_back(get_csr(container, "hierarchy.up" + std::to_string(l)));
    }
    return hierarchy;
}

}  // namespace cfan
