#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cfan {

enum class MeshFormat { Obj, Off };

/// Shared-topology triangle surface. Immutable after construction; validation
/// happens once in the constructor so downstream code can assume:
///   - every face index lies in [0, n) and no face repeats a vertex,
///   - every face area is >= area_epsilon,
///   - every vertex is referenced by at least one face.
class TriangleMesh {
public:
    static constexpr double kAreaEpsilon = 1e-12;  // m^2

    TriangleMesh(Eigen::MatrixX3d vertices, Eigen::MatrixX3i faces, std::string name = "");

    Eigen::Index vertex_count() const { return vertices_.rows(); }
    Eigen::Index face_count() const { return faces_.rows(); }

    const Eigen::MatrixX3d& vertices() const { return vertices_; }
    const Eigen::MatrixX3i& faces() const { return faces_; }
    const std::string& name() const { return name_; }

    /// Signed-winding face geometry: area = |(v1-v0) x (v2-v0)| / 2 and the
    /// unit normal of that cross product. Throws ValidationError when the
    /// cross-product norm is below 1e-12.
    std::pair<double, Eigen::Vector3d> face_area_and_normal(Eigen::Index face) const;

    /// Replaces coordinates, keeping topology. Re-validates face areas.
    TriangleMesh with_vertices(Eigen::MatrixX3d vertices) const;

    /// FNV-1a over (vertex count, face index buffer): identifies the
    /// connectivity a precomputed cache belongs to.
    std::uint64_t topology_checksum() const;

    /// One-ring vertex adjacency (sorted, unique).
    const std::vector<std::vector<int>>& vertex_neighbors() const { return neighbors_; }
    /// Incident faces per vertex.
    const std::vector<std::vector<int>>& vertex_faces() const { return incident_faces_; }

private:
    void validate() const;
    void build_adjacency();

    Eigen::MatrixX3d vertices_;
    Eigen::MatrixX3i faces_;
    std::string name_;
    std::vector<std::vector<int>> neighbors_;
    std::vector<std::vector<int>> incident_faces_;
};

/// Text readers for the two supported formats. Vertex order is preserved
/// exactly as in the file. OBJ faces are 1-based; an index <= 0 is a
/// ParseError. Faces with more than three sides are fan-triangulated.
TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format);

/// Infers the format from the extension (.obj / .off).
TriangleMesh load_mesh(const std::filesystem::path& path);

/// Writers emit coordinates with 9 significant digits.
void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path, MeshFormat format);
void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);

}  // namespace cfan
