#include "cfan/geodesic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace cfan {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using QueueEntry = std::pair<double, int>;  // (distance, vertex), min-heap

struct MinHeapOrder {
    bool operator()(const QueueEntry& a, const QueueEntry& b) const {
        if (a.first != b.first) return a.first > b.first;
        return a.second > b.second;  // smaller index pops first on ties
    }
};

}  // namespace

EdgeGraph EdgeGraph::from_mesh(const TriangleMesh& mesh) {
    EdgeGraph graph;
    graph.vertex_count = static_cast<int>(mesh.vertex_count());
    graph.adjacency.resize(static_cast<std::size_t>(graph.vertex_count));
    const auto& rings = mesh.vertex_neighbors();
    for (int v = 0; v < graph.vertex_count; ++v) {
        auto& row = graph.adjacency[static_cast<std::size_t>(v)];
        row.reserve(rings[static_cast<std::size_t>(v)].size());
        for (int u : rings[static_cast<std::size_t>(v)]) {
            row.emplace_back(u, (mesh.vertices().row(u) - mesh.vertices().row(v)).norm());
        }
        // Ring lists are already sorted by index; keep that order.
    }
    return graph;
}

DistanceField dijkstra(const EdgeGraph& graph, int source) {
    const int n = graph.vertex_count;
    if (source < 0 || source >= n) throw ValidationError("dijkstra: source out of range");
    DistanceField field;
    field.source = source;
    field.dist = Eigen::VectorXd::Constant(n, kInf);
    field.predecessor.assign(static_cast<std::size_t>(n), -1);
    field.dist(source) = 0.0;
    field.predecessor[static_cast<std::size_t>(source)] = source;

    std::priority_queue<QueueEntry, std::vector<QueueEntry>, MinHeapOrder> queue;
    queue.push({0.0, source});
    std::vector<char> settled(static_cast<std::size_t>(n), 0);
    while (!queue.empty()) {
        const auto [d, v] = queue.top();
        queue.pop();
        if (settled[static_cast<std::size_t>(v)]) continue;
        settled[static_cast<std::size_t>(v)] = 1;
        for (const auto& [u, w] : graph.adjacency[static_cast<std::size_t>(v)]) {
            const double candidate = d + w;
            if (candidate < field.dist(u)) {
                field.dist(u) = candidate;
                field.predecessor[static_cast<std::size_t>(u)] = v;
                queue.push({candidate, u});
            }
        }
    }
    for (int v = 0; v < n; ++v) {
        if (!settled[static_cast<std::size_t>(v)]) {
            throw NumericError("disconnected mesh: vertex " + std::to_string(v) +
                               " unreachable from " + std::to_string(source));
        }
    }
    return field;
}

DistanceField dijkstra(const TriangleMesh& mesh, int source) {
    return dijkstra(EdgeGraph::from_mesh(mesh), source);
}

std::vector<NearestHit> nearest_members(const EdgeGraph& graph, int center,
                                        const std::vector<char>& member_mask, int k) {
    const int n = graph.vertex_count;
    if (center < 0 || center >= n) throw ValidationError("nearest_members: center out of range");
    const bool all = member_mask.empty();
    std::vector<double> dist(static_cast<std::size_t>(n), kInf);
    std::vector<int> first_step(static_cast<std::size_t>(n), -1);
    std::vector<char> settled(static_cast<std::size_t>(n), 0);
    dist[static_cast<std::size_t>(center)] = 0.0;

    std::priority_queue<QueueEntry, std::vector<QueueEntry>, MinHeapOrder> queue;
    queue.push({0.0, center});
    std::vector<NearestHit> hits;
    while (!queue.empty() && static_cast<int>(hits.size()) < k) {
        const auto [d, v] = queue.top();
        queue.pop();
        if (settled[static_cast<std::size_t>(v)]) continue;
        settled[static_cast<std::size_t>(v)] = 1;
        if (v != center && (all || member_mask[static_cast<std::size_t>(v)])) {
            hits.push_back({v, d, first_step[static_cast<std::size_t>(v)]});
        }
        for (const auto& [u, w] : graph.adjacency[static_cast<std::size_t>(v)]) {
            const double candidate = d + w;
            if (candidate < dist[static_cast<std::size_t>(u)]) {
                dist[static_cast<std::size_t>(u)] = candidate;
                first_step[static_cast<std::size_t>(u)] =
                    (v == center) ? u : first_step[static_cast<std::size_t>(v)];
                queue.push({candidate, u});
            }
        }
    }
    if (static_cast<int>(hits.size()) < k) {
        throw NumericError("too few neighbors: wanted " + std::to_string(k) + ", reachable " +
                           std::to_string(hits.size()));
    }
    return hits;
}

std::vector<int> farthest_point_sample(const EdgeGraph& graph, int count, int seed,
                                       const std::vector<int>& members) {
    std::vector<int> pool = members;
    if (pool.empty()) {
        pool.resize(static_cast<std::size_t>(graph.vertex_count));
        for (int v = 0; v < graph.vertex_count; ++v) pool[static_cast<std::size_t>(v)] = v;
    }
    if (count > static_cast<int>(pool.size())) {
        throw NumericError("farthest_point_sample: count " + std::to_string(count) +
                           " exceeds member count " + std::to_string(pool.size()));
    }
    if (count <= 0) return {};
    if (std::find(pool.begin(), pool.end(), seed) == pool.end()) {
        throw ValidationError("farthest_point_sample: seed is not a member");
    }

    std::vector<int> selected;
    selected.reserve(static_cast<std::size_t>(count));
    std::vector<char> taken(static_cast<std::size_t>(graph.vertex_count), 0);
    Eigen::VectorXd min_dist = dijkstra(graph, seed).dist;
    selected.push_back(seed);
    taken[static_cast<std::size_t>(seed)] = 1;

    while (static_cast<int>(selected.size()) < count) {
        int best = -1;
        double best_dist = -1.0;
        for (int v : pool) {
            if (taken[static_cast<std::size_t>(v)]) continue;
            const double d = min_dist(v);
            if (d > best_dist) {  // ties keep the earlier (smaller) index
                best_dist = d;
                best = v;
            }
        }
        selected.push_back(best);
        taken[static_cast<std::size_t>(best)] = 1;
        if (static_cast<int>(selected.size()) == count) break;
        min_dist = min_dist.cwiseMin(dijkstra(graph, best).dist);
    }
    return selected;
}

std::vector<int> farthest_point_sample(const TriangleMesh& mesh, int count, int seed) {
    return farthest_point_sample(EdgeGraph::from_mesh(mesh), count, seed);
}

Eigen::Vector3d geodesic_gradient(const TriangleMesh& mesh, const DistanceField& field,
                                  int vertex, const Eigen::Vector3d& normal) {
    if (vertex == field.source) throw ZeroGradient("gradient undefined at the source vertex");
    const auto& ring = mesh.vertex_neighbors()[static_cast<std::size_t>(vertex)];
    const Eigen::Vector3d origin = mesh.vertices().row(vertex);
    const double d0 = field.dist(vertex);

    // Weighted LS fit of dist(x) ~ d0 + g . (x - origin), weights 1/|dx|^2.
    Eigen::Matrix3d lhs = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (int u : ring) {
        const Eigen::Vector3d dx = mesh.vertices().row(u).transpose() - origin;
        const double len2 = dx.squaredNorm();
        if (len2 < 1e-24) continue;
        const double w = 1.0 / len2;
        lhs += w * dx * dx.transpose();
        rhs += w * dx * (field.dist(u) - d0);
    }
    // Rank-revealing solve: a flat one-ring makes the 3x3 system singular.
    const Eigen::Vector3d fit = lhs.completeOrthogonalDecomposition().solve(rhs);
    Eigen::Vector3d projected = fit - fit.dot(normal) * normal;
    const double norm = projected.norm();
    if (norm < 1e-9) throw ZeroGradient("projected gradient norm below 1e-9");
    return projected / norm;
}

namespace {

// Tangent basis from the coordinate axis least aligned with the normal.
Eigen::Vector3d axis_tangent(const Eigen::Vector3d& normal) {
    int axis = 0;
    double best = std::abs(normal(0));
    for (int a = 1; a < 3; ++a) {
        if (std::abs(normal(a)) < best) {
            best = std::abs(normal(a));
            axis = a;
        }
    }
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e(axis) = 1.0;
    e -= e.dot(normal) * normal;
    return e.normalized();
}

std::optional<Eigen::Vector3d> project_to_tangent(const Eigen::Vector3d& v,
                                                  const Eigen::Vector3d& normal) {
    Eigen::Vector3d p = v - v.dot(normal) * normal;
    const double norm = p.norm();
    if (norm < 1e-9) return std::nullopt;
    return p / norm;
}

struct CurvatureFit {
    bool valid = false;
    double kappa1 = 0.0;            // |kappa1| >= |kappa2|
    double kappa2 = 0.0;
    Eigen::Vector3d direction1;     // unit, in the tangent plane
};

// Least-squares symmetric shape operator from normal variation over the
// one-ring, expressed in an arbitrary tangent basis.
CurvatureFit fit_shape_operator(const TriangleMesh& mesh, const CfanFeature& feature, int vertex) {
    const auto& ring = mesh.vertex_neighbors()[static_cast<std::size_t>(vertex)];
    CurvatureFit fit;
    if (ring.size() < 3) return fit;

    const Eigen::Vector3d normal = feature.normals.row(vertex);
    const Eigen::Vector3d t1 = axis_tangent(normal);
    const Eigen::Vector3d t2 = normal.cross(t1);
    const Eigen::Vector3d origin = mesh.vertices().row(vertex);

    Eigen::Matrix3d lhs = Eigen::Matrix3d::Zero();  // unknowns (s11, s12, s22)
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (int u : ring) {
        const Eigen::Vector3d dp = mesh.vertices().row(u).transpose() - origin;
        const Eigen::Vector3d dn = feature.normals.row(u).transpose() - normal;
        const double x = dp.dot(t1), y = dp.dot(t2);
        const double a = dn.dot(t1), b = dn.dot(t2);
        // Row 1: s11*x + s12*y = a; row 2: s12*x + s22*y = b.
        const Eigen::Vector3d r1(x, y, 0.0), r2(0.0, x, y);
        lhs += r1 * r1.transpose() + r2 * r2.transpose();
        rhs += r1 * a + r2 * b;
    }
    if (std::abs(lhs.determinant()) < 1e-18) return fit;
    const Eigen::Vector3d s = lhs.ldlt().solve(rhs);

    Eigen::Matrix2d shape;
    shape << s(0), s(1), s(1), s(2);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eigen(shape);
    if (eigen.info() != Eigen::Success) return fit;
    const Eigen::Vector2d values = eigen.eigenvalues();
    const int major = std::abs(values(0)) >= std::abs(values(1)) ? 0 : 1;
    const Eigen::Vector2d dir = eigen.eigenvectors().col(major);

    fit.valid = true;
    fit.kappa1 = values(major);
    fit.kappa2 = values(1 - major);
    fit.direction1 = (dir(0) * t1 + dir(1) * t2).normalized();
    return fit;
}

TangentFrame finish_frame(int vertex, Eigen::Vector3d e1, const Eigen::Vector3d& normal) {
    TangentFrame frame;
    frame.origin = vertex;
    frame.normal = normal;
    frame.e1 = (e1 - e1.dot(normal) * normal).normalized();
    frame.e2 = normal.cross(frame.e1);
    return frame;
}

}  // namespace

TangentFrame principal_frame(const TriangleMesh& mesh, const CfanFeature& feature,
                             const DistanceField& field, int vertex,
                             const TangentFrame* previous) {
    const Eigen::Vector3d normal = feature.normals.row(vertex);

    std::optional<Eigen::Vector3d> gradient;
    try {
        gradient = geodesic_gradient(mesh, field, vertex, normal);
    } catch (const ZeroGradient&) {
        gradient = std::nullopt;
    }
    std::optional<Eigen::Vector3d> transported;
    if (previous != nullptr) transported = project_to_tangent(previous->e1, normal);

    const CurvatureFit fit = fit_shape_operator(mesh, feature, vertex);
    const bool umbilic =
        !fit.valid ||
        std::abs(fit.kappa1) - std::abs(fit.kappa2) < 0.1 * std::max(std::abs(fit.kappa1), 1e-9);

    Eigen::Vector3d e1;
    if (!umbilic) {
        e1 = fit.direction1;
        const Eigen::Vector3d reference =
            gradient ? *gradient : (transported ? *transported : axis_tangent(normal));
        if (e1.dot(reference) < 0.0) e1 = -e1;
    } else if (gradient) {
        e1 = *gradient;
    } else if (transported) {
        e1 = *transported;
    } else {
        e1 = axis_tangent(normal);
    }
    return finish_frame(vertex, e1, normal);
}

std::vector<TangentFrame> build_frame_field(const TriangleMesh& mesh, const CfanFeature& feature,
                                            const DistanceField& field) {
    const int n = static_cast<int>(mesh.vertex_count());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) order[static_cast<std::size_t>(v)] = v;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (field.dist(a) != field.dist(b)) return field.dist(a) < field.dist(b);
        return a < b;
    });

    std::vector<TangentFrame> frames(static_cast<std::size_t>(n));
    std::vector<char> built(static_cast<std::size_t>(n), 0);
    for (int v : order) {
        const int pred = field.predecessor[static_cast<std::size_t>(v)];
        const TangentFrame* previous =
            (pred != v && built[static_cast<std::size_t>(pred)]) ? &frames[static_cast<std::size_t>(pred)]
                                                                 : nullptr;
        frames[static_cast<std::size_t>(v)] = principal_frame(mesh, feature, field, v, previous);
        built[static_cast<std::size_t>(v)] = 1;
    }
    return frames;
}

LogMapChart build_log_chart(const EdgeGraph& graph, const TriangleMesh& mesh,
                            const TangentFrame& frame, const std::vector<char>& member_mask) {
    const auto hits = nearest_members(graph, frame.origin, member_mask, LogMapChart::kNeighbors);
    LogMapChart chart;
    chart.center = frame.origin;
    const Eigen::Vector3d origin = mesh.vertices().row(frame.origin);
    for (int j = 0; j < LogMapChart::kNeighbors; ++j) {
        const auto& hit = hits[static_cast<std::size_t>(j)];
        chart.neighbor_ids[static_cast<std::size_t>(j)] = hit.vertex;
        const Eigen::Vector3d step = mesh.vertices().row(hit.first_step).transpose() - origin;
        const double angle = std::atan2(step.dot(frame.e2), step.dot(frame.e1));
        chart.coords(j, 0) = hit.distance * std::cos(angle);
        chart.coords(j, 1) = hit.distance * std::sin(angle);
    }
    return chart;
}

}  // namespace cfan
