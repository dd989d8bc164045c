#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "cfan/exceptions.hpp"
#include "cfan/features.hpp"
#include "cfan/mesh.hpp"

namespace cfan {

/// Projected geodesic-distance gradient vanished; callers fall back to the
/// transported previous frame.
class ZeroGradient : public NumericError {
public:
    using NumericError::NumericError;
};

/// Undirected edge graph with Euclidean edge weights. Geodesic distance in
/// this library means shortest path on this graph.
struct EdgeGraph {
    int vertex_count = 0;
    std::vector<std::vector<std::pair<int, double>>> adjacency;  // sorted by neighbor id

    static EdgeGraph from_mesh(const TriangleMesh& mesh);
};

struct DistanceField {
    int source = -1;
    Eigen::VectorXd dist;
    std::vector<int> predecessor;  // predecessor[source] == source
};

/// Exact shortest-path distances; deterministic tie-break by smaller vertex
/// index. Throws NumericError("disconnected...") when any vertex is
/// unreachable.
DistanceField dijkstra(const EdgeGraph& graph, int source);
DistanceField dijkstra(const TriangleMesh& mesh, int source);

/// Result row of a truncated nearest-member search.
struct NearestHit {
    int vertex = -1;
    double distance = 0.0;
    int first_step = -1;  // second vertex on the shortest path from the center
};

/// The k geodesically nearest members (center excluded), in increasing
/// (distance, index) order. `member_mask` may be empty meaning "all vertices".
std::vector<NearestHit> nearest_members(const EdgeGraph& graph, int center,
                                        const std::vector<char>& member_mask, int k);

/// Greedy farthest point sampling over `members` (all vertices when empty):
/// the first element is `seed`; every next element maximizes the minimum
/// geodesic distance to the already selected set, ties broken by smaller
/// index.
std::vector<int> farthest_point_sample(const EdgeGraph& graph, int count, int seed,
                                       const std::vector<int>& members = {});
std::vector<int> farthest_point_sample(const TriangleMesh& mesh, int count, int seed);

/// Weighted least-squares estimate of the distance-field gradient at
/// `vertex`, projected into the tangent plane of `normal` and normalized.
/// Throws ZeroGradient when the projection is shorter than 1e-9.
Eigen::Vector3d geodesic_gradient(const TriangleMesh& mesh, const DistanceField& field,
                                  int vertex, const Eigen::Vector3d& normal);

struct TangentFrame {
    int origin = -1;
    Eigen::Vector3d e1;
    Eigen::Vector3d e2;
    Eigen::Vector3d normal;
};

/// Frame from the largest-|curvature| principal direction, sign-fixed along
/// the geodesic-distance gradient. Umbilic vertices (principal curvature
/// magnitudes within 10% relative) fall back to the gradient itself;
/// a vanishing gradient falls back to `previous` transported by projection;
/// with no previous frame the least-aligned coordinate axis seeds e1.
TangentFrame principal_frame(const TriangleMesh& mesh, const CfanFeature& feature,
                             const DistanceField& field, int vertex,
                             const TangentFrame* previous = nullptr);

/// Frames for every vertex, processed in increasing seed-distance order so
/// each fallback's "previous vertex" (the shortest-path predecessor) is
/// already built. Deterministic given (mesh, field).
std::vector<TangentFrame> build_frame_field(const TriangleMesh& mesh, const CfanFeature& feature,
                                            const DistanceField& field);

/// Tangent-plane polar chart of the 9 geodesically nearest member vertices.
struct LogMapChart {
    static constexpr int kNeighbors = 9;
    int center = -1;
    std::array<int, kNeighbors> neighbor_ids{};
    Eigen::Matrix<double, kNeighbors, 2> coords;  // radius * (cos a, sin a), angle from e1
};

/// Radius = geodesic distance; angle = direction of the first shortest-path
/// edge projected into the frame. Throws NumericError("too few...") when
/// fewer than 9 members are reachable.
LogMapChart build_log_chart(const EdgeGraph& graph, const TriangleMesh& mesh,
                            const TangentFrame& frame,
                            const std::vector<char>& member_mask = {});

}  // namespace cfan
