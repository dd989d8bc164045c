#include "cfan/mesh.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cfan/exceptions.hpp"
#include "cfan/util.hpp"

namespace cfan {

TriangleMesh::TriangleMesh(Eigen::MatrixX3d vertices, Eigen::MatrixX3i faces, std::string name)
    : vertices_(std::move(vertices)), faces_(std::move(faces)), name_(std::move(name)) {
    validate();
    build_adjacency();
}

void TriangleMesh::validate() const {
    const Eigen::Index n = vertices_.rows();
    if (n == 0 || faces_.rows() == 0) {
        throw ValidationError("mesh must have at least one vertex and one face");
    }
    std::vector<char> referenced(static_cast<std::size_t>(n), 0);
    for (Eigen::Index f = 0; f < faces_.rows(); ++f) {
        const int a = faces_(f, 0), b = faces_(f, 1), c = faces_(f, 2);
        for (int idx : {a, b, c}) {
            if (idx < 0 || idx >= n) {
                throw ValidationError("face " + std::to_string(f) + " references vertex " +
                                      std::to_string(idx) + " outside [0, " + std::to_string(n) + ")");
            }
        }
        if (a == b || b == c || a == c) {
            throw ValidationError("face " + std::to_string(f) + " repeats a vertex index");
        }
        referenced[a] = referenced[b] = referenced[c] = 1;
        const Eigen::Vector3d u = vertices_.row(b) - vertices_.row(a);
        const Eigen::Vector3d v = vertices_.row(c) - vertices_.row(a);
        if (0.5 * u.cross(v).norm() < kAreaEpsilon) {
            throw ValidationError("face " + std::to_string(f) + " is degenerate (area < 1e-12)");
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!referenced[static_cast<std::size_t>(i)]) {
            throw ValidationError("vertex " + std::to_string(i) + " is not referenced by any face");
        }
    }
}

void TriangleMesh::build_adjacency() {
    const auto n = static_cast<std::size_t>(vertices_.rows());
    neighbors_.assign(n, {});
    incident_faces_.assign(n, {});
    for (Eigen::Index f = 0; f < faces_.rows(); ++f) {
        const int idx[3] = {faces_(f, 0), faces_(f, 1), faces_(f, 2)};
        for (int k = 0; k < 3; ++k) {
            incident_faces_[idx[k]].push_back(static_cast<int>(f));
            neighbors_[idx[k]].push_back(idx[(k + 1) % 3]);
            neighbors_[idx[k]].push_back(idx[(k + 2) % 3]);
        }
    }
    for (auto& ring : neighbors_) {
        std::sort(ring.begin(), ring.end());
        ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
    }
}

std::pair<double, Eigen::Vector3d> TriangleMesh::face_area_and_normal(Eigen::Index face) const {
    if (face < 0 || face >= faces_.rows()) {
        throw ValidationError("face index out of range");
    }
    const Eigen::Vector3d v0 = vertices_.row(faces_(face, 0));
    const Eigen::Vector3d v1 = vertices_.row(faces_(face, 1));
    const Eigen::Vector3d v2 = vertices_.row(faces_(face, 2));
    const Eigen::Vector3d cross = (v1 - v0).cross(v2 - v0);
    const double norm = cross.norm();
    if (norm < 1e-12) {
        throw ValidationError("degenerate face: cross-product norm below 1e-12");
    }
    return {0.5 * norm, cross / norm};
}

TriangleMesh TriangleMesh::with_vertices(Eigen::MatrixX3d vertices) const {
    if (vertices.rows() != vertices_.rows()) {
        throw ShapeMismatch("with_vertices: vertex count changed");
    }
    return TriangleMesh(std::move(vertices), faces_, name_);
}

std::uint64_t TriangleMesh::topology_checksum() const {
    const std::int64_t n = vertices_.rows();
    std::uint64_t hash = fnv1a(&n, sizeof(n));
    for (Eigen::Index f = 0; f < faces_.rows(); ++f) {
        const std::int32_t idx[3] = {faces_(f, 0), faces_(f, 1), faces_(f, 2)};
        hash = fnv1a(idx, sizeof(idx), hash);
    }
    return hash;
}

namespace {

// Strips comments and whitespace-only lines; returns false at EOF.
bool next_content_line(std::istream& in, std::string& line, char comment) {
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto pos = line.find_first_not_of(" \t");
        if (pos == std::string::npos) continue;
        if (line[pos] == comment) continue;
        return true;
    }
    return false;
}

TriangleMesh load_off(std::istream& in, const std::string& name) {
    std::string line;
    if (!next_content_line(in, line, '#')) throw ParseError("OFF: empty file");
    std::istringstream header(line);
    std::string magic;
    header >> magic;
    if (magic != "OFF") throw ParseError("OFF: missing OFF header");

    long nv = -1, nf = -1, ne = -1;
    // Counts may share the header line or occupy the next one.
    if (!(header >> nv >> nf >> ne)) {
        if (!next_content_line(in, line, '#')) throw ParseError("OFF: missing counts line");
        std::istringstream counts(line);
        if (!(counts >> nv >> nf >> ne)) throw ParseError("OFF: malformed counts line");
    }
    if (nv <= 0 || nf <= 0) throw ParseError("OFF: nonpositive vertex or face count");

    Eigen::MatrixX3d vertices(nv, 3);
    for (long i = 0; i < nv; ++i) {
        if (!next_content_line(in, line, '#')) throw ParseError("OFF: truncated vertex list");
        std::istringstream row(line);
        double x, y, z;
        if (!(row >> x >> y >> z)) throw ParseError("OFF: malformed vertex line " + line);
        vertices.row(i) << x, y, z;
    }

    std::vector<std::array<int, 3>> tris;
    tris.reserve(static_cast<std::size_t>(nf));
    for (long f = 0; f < nf; ++f) {
        if (!next_content_line(in, line, '#')) throw ParseError("OFF: truncated face list");
        std::istringstream row(line);
        int count = 0;
        if (!(row >> count) || count < 3) throw ParseError("OFF: malformed face line " + line);
        std::vector<int> poly(count);
        for (int k = 0; k < count; ++k) {
            if (!(row >> poly[k])) throw ParseError("OFF: malformed face line " + line);
        }
        for (int k = 1; k + 1 < count; ++k) {
            tris.push_back({poly[0], poly[k], poly[k + 1]});
        }
    }

    Eigen::MatrixX3i faces(static_cast<Eigen::Index>(tris.size()), 3);
    for (std::size_t t = 0; t < tris.size(); ++t) {
        faces.row(static_cast<Eigen::Index>(t)) << tris[t][0], tris[t][1], tris[t][2];
    }
    return TriangleMesh(std::move(vertices), std::move(faces), name);
}

TriangleMesh load_obj(std::istream& in, const std::string& name) {
    std::vector<Eigen::Vector3d> verts;
    std::vector<std::array<int, 3>> tris;
    std::string line;
    while (next_content_line(in, line, '#')) {
        std::istringstream row(line);
        std::string tag;
        row >> tag;
        if (tag == "v") {
            double x, y, z;
            if (!(row >> x >> y >> z)) throw ParseError("OBJ: malformed vertex line: " + line);
            verts.emplace_back(x, y, z);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string token;
            while (row >> token) {
                // "idx", "idx/uv", "idx/uv/nrm", "idx//nrm" all start with idx.
                const auto slash = token.find('/');
                const std::string head = token.substr(0, slash);
                int idx = 0;
                const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
                if (ec != std::errc() || ptr != head.data() + head.size()) {
                    throw ParseError("OBJ: malformed face token: " + token);
                }
                if (idx == 0) throw ParseError("OBJ: face index 0 (OBJ indices are 1-based)");
                if (idx < 0) {
                    idx = static_cast<int>(verts.size()) + idx;  // relative index
                } else {
                    idx -= 1;
                }
                poly.push_back(idx);
            }
            if (poly.size() < 3) throw ParseError("OBJ: face with fewer than 3 vertices: " + line);
            for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
                tris.push_back({poly[0], poly[k], poly[k + 1]});
            }
        }
        // Other tags (vn, vt, usemtl, o, g, s, mtllib) are ignored.
    }
    if (verts.empty() || tris.empty()) throw ParseError("OBJ: no vertices or faces found");

    Eigen::MatrixX3d vertices(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
    Eigen::MatrixX3i faces(static_cast<Eigen::Index>(tris.size()), 3);
    for (std::size_t t = 0; t < tris.size(); ++t) {
        faces.row(static_cast<Eigen::Index>(t)) << tris[t][0], tris[t][1], tris[t][2];
    }
    return TriangleMesh(std::move(vertices), std::move(faces), name);
}

MeshFormat format_from_extension(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".obj") return MeshFormat::Obj;
    if (ext == ".off") return MeshFormat::Off;
    throw ParseError("cannot infer mesh format from extension: " + path.string());
}

}  // namespace

TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open mesh file: " + path.string());
    const std::string name = path.stem().string();
    return format == MeshFormat::Off ? load_off(in, name) : load_obj(in, name);
}

TriangleMesh load_mesh(const std::filesystem::path& path) {
    return load_mesh(path, format_from_extension(path));
}

void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path, MeshFormat format) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path.string());
    char buf[96];
    const auto& v = mesh.vertices();
    const auto& f = mesh.faces();
    if (format == MeshFormat::Off) {
        out << "OFF\n" << v.rows() << ' ' << f.rows() << " 0\n";
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", v(i, 0), v(i, 1), v(i, 2));
            out << buf;
        }
        for (Eigen::Index t = 0; t < f.rows(); ++t) {
            out << "3 " << f(t, 0) << ' ' << f(t, 1) << ' ' << f(t, 2) << '\n';
        }
    } else {
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v(i, 0), v(i, 1), v(i, 2));
            out << buf;
        }
        for (Eigen::Index t = 0; t < f.rows(); ++t) {
            out << "f " << f(t, 0) + 1 << ' ' << f(t, 1) + 1 << ' ' << f(t, 2) + 1 << '\n';
        }
    }
    if (!out) throw ParseError("write failed: " + path.string());
}

void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
    save_mesh(mesh, path, format_from_extension(path));
}

}  // namespace cfan
