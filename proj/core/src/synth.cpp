#include "cfan/synth.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "cfan/exceptions.hpp"

namespace cfan {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

TriangleMesh make_icosphere(int subdivisions, double radius) {
    if (subdivisions < 0) throw ValidationError("make_icosphere: negative subdivision count");
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Eigen::Vector3d> verts = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1},
    };
    for (auto& v : verts) v.normalize();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1},
    };

    for (int pass = 0; pass < subdivisions; ++pass) {
        std::map<std::pair<int, int>, int> midpoint;
        auto midpoint_of = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            const auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const Eigen::Vector3d mid = (verts[a] + verts[b]).normalized();
            verts.push_back(mid);
            const int id = static_cast<int>(verts.size()) - 1;
            midpoint.emplace(key, id);
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int ab = midpoint_of(f[0], f[1]);
            const int bc = midpoint_of(f[1], f[2]);
            const int ca = midpoint_of(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    Eigen::MatrixX3d v(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = radius * verts[i];
    Eigen::MatrixX3i f(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t t = 0; t < faces.size(); ++t) {
        f.row(static_cast<Eigen::Index>(t)) << faces[t][0], faces[t][1], faces[t][2];
    }
    return TriangleMesh(std::move(v), std::move(f), "icosphere" + std::to_string(subdivisions));
}

TriangleMesh make_capsule(int segments, double radius, double half_height, int cap_rings,
                          int side_rings) {
    if (segments < 3 || cap_rings < 1 || side_rings < 1) {
        throw ValidationError("make_capsule: invalid resolution");
    }
    std::vector<Eigen::Vector3d> verts;
    // Bottom pole, bottom cap rings, side rings, top cap rings, top pole.
    verts.emplace_back(0.0, 0.0, -half_height - radius);
    std::vector<std::pair<double, double>> rings;  // (ring radius, z)
    for (int i = 1; i <= cap_rings; ++i) {
        const double a = -kPi / 2.0 + (kPi / 2.0) * i / (cap_rings + 0.0);
        rings.emplace_back(radius * std::cos(a), -half_height + radius * std::sin(a));
    }
    for (int i = 1; i < side_rings; ++i) {
        const double z = -half_height + 2.0 * half_height * i / side_rings;
        rings.emplace_back(radius, z);
    }
    for (int i = 0; i < cap_rings; ++i) {
        const double a = (kPi / 2.0) * i / (cap_rings + 0.0);
        rings.emplace_back(radius * std::cos(a), half_height + radius * std::sin(a));
    }
    for (const auto& [r, z] : rings) {
        for (int s = 0; s < segments; ++s) {
            const double angle = 2.0 * kPi * s / segments;
            verts.emplace_back(r * std::cos(angle), r * std::sin(angle), z);
        }
    }
    verts.emplace_back(0.0, 0.0, half_height + radius);
    const int top = static_cast<int>(verts.size()) - 1;
    const int ring_count = static_cast<int>(rings.size());

    std::vector<std::array<int, 3>> faces;
    auto ring_vertex = [&](int ring, int s) { return 1 + ring * segments + (s % segments); };
    for (int s = 0; s < segments; ++s) {
        faces.push_back({0, ring_vertex(0, s + 1), ring_vertex(0, s)});
    }
    for (int r = 0; r + 1 < ring_count; ++r) {
        for (int s = 0; s < segments; ++s) {
            const int a = ring_vertex(r, s), b = ring_vertex(r, s + 1);
            const int c = ring_vertex(r + 1, s), d = ring_vertex(r + 1, s + 1);
            faces.push_back({a, b, d});
            faces.push_back({a, d, c});
        }
    }
    for (int s = 0; s < segments; ++s) {
        faces.push_back({top, ring_vertex(ring_count - 1, s), ring_vertex(ring_count - 1, s + 1)});
    }

    Eigen::MatrixX3d v(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = verts[i];
    Eigen::MatrixX3i f(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t t = 0; t < faces.size(); ++t) {
        f.row(static_cast<Eigen::Index>(t)) << faces[t][0], faces[t][1], faces[t][2];
    }
    return TriangleMesh(std::move(v), std::move(f), "capsule" + std::to_string(segments));
}

namespace {

TriangleMesh base_mesh(const SynthConfig& config) {
    switch (config.base) {
        case BaseShape::Icosphere:
            return make_icosphere(config.base_param);
        case BaseShape::Capsule:
            return make_capsule(config.base_param);
    }
    throw ValidationError("unknown base shape");
}

// Low-order real harmonics on the unit direction; the fixed profile basis
// for the identity factors.
double profile_basis(int index, const Eigen::Vector3d& u) {
    const double x = u.x(), y = u.y(), z = u.z();
    switch (index % 8) {
        case 0: return 3.0 * z * z - 1.0;
        case 1: return x * y;
        case 2: return y * z;
        case 3: return x * z;
        case 4: return x * x - y * y;
        case 5: return z * (5.0 * z * z - 3.0);
        case 6: return x * (x * x - 3.0 * y * y);
        default: return y * (3.0 * x * x - y * y);
    }
}

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace

TriangleMesh generate_mesh(const SynthConfig& config, const FactorSpec& spec, const std::string& name) {
    if (spec.theta.size() > 0 && spec.theta.cwiseAbs().maxCoeff() > kPi / 2.0 + 1e-12) {
        throw NumericError("self-intersection risk: |theta| exceeds pi/2");
    }
    const TriangleMesh base = base_mesh(config);
    Eigen::MatrixX3d coords = base.vertices();
    const double z_min = coords.col(2).minCoeff();
    const double z_max = coords.col(2).maxCoeff();

    // Identity: radial profile displacement. Scale factor floored well above
    // zero so the surface never inverts.
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
        const Eigen::Vector3d p = coords.row(i);
        const Eigen::Vector3d u = p.normalized();
        double bump = 0.0;
        for (Eigen::Index b = 0; b < spec.beta.size(); ++b) {
            bump += spec.beta(b) * profile_basis(static_cast<int>(b), u);
        }
        coords.row(i) = p * std::max(0.3, 1.0 + config.identity_gain * bump);
    }

    // Pose: blended piecewise-rigid bends/twists of the upper region.
    // Blend weights come from the base z-coordinate so pose never depends
    // on the identity stage.
    const double z_lo = z_min + 0.45 * (z_max - z_min);
    const double z_hi = z_min + 0.95 * (z_max - z_min);
    const double pivot_z = z_lo;
    for (Eigen::Index t = 0; t < spec.theta.size(); ++t) {
        Eigen::Vector3d axis;
        switch (t % 3) {
            case 0: axis = Eigen::Vector3d::UnitX(); break;
            case 1: axis = Eigen::Vector3d::UnitY(); break;
            default: axis = Eigen::Vector3d::UnitZ(); break;
        }
        const double angle_scale = config.pose_gain * spec.theta(t);
        for (Eigen::Index i = 0; i < coords.rows(); ++i) {
            const double w = smoothstep((base.vertices()(i, 2) - z_lo) / (z_hi - z_lo));
            if (w == 0.0) continue;
            const Eigen::Vector3d pivot(0.0, 0.0, pivot_z);
            const Eigen::AngleAxisd rot(w * angle_scale, axis);
            coords.row(i) = pivot + rot * (coords.row(i).transpose() - pivot);
        }
    }
    return TriangleMesh(std::move(coords), base.faces(), name.empty() ? base.name() : name);
}

std::vector<std::size_t> DatasetManifest::split_indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].split == split) out.push_back(i);
    }
    return out;
}

namespace {

std::string split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ParseError("manifest: unknown split " + name);
}

}  // namespace

void DatasetManifest::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["base"] = config.base == BaseShape::Icosphere ? "icosphere" : "capsule";
    j["base_param"] = config.base_param;
    j["identity_gain"] = config.identity_gain;
    j["pose_gain"] = config.pose_gain;
    j["beta_dim"] = beta_dim;
    j["theta_dim"] = theta_dim;
    j["seed"] = seed;
    j["noise_sigma"] = noise_sigma;
    j["topology_checksum"] = topology_checksum;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json row;
        row["id"] = s.id;
        row["split"] = split_name(s.split);
        row["beta"] = std::vector<double>(s.spec.beta.data(), s.spec.beta.data() + s.spec.beta.size());
        row["theta"] =
            std::vector<double>(s.spec.theta.data(), s.spec.theta.data() + s.spec.theta.size());
        rows.push_back(std::move(row));
    }
    j["samples"] = std::move(rows);
    std::ofstream out(path);
    if (!out) throw ParseError("manifest: cannot open for writing " + path.string());
    out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("manifest: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest: invalid json: ") + e.what());
    }
    DatasetManifest manifest;
    manifest.config.base = j.at("base") == "icosphere" ? BaseShape::Icosphere : BaseShape::Capsule;
    manifest.config.base_param = j.at("base_param");
    manifest.config.identity_gain = j.at("identity_gain");
    manifest.config.pose_gain = j.at("pose_gain");
    manifest.beta_dim = j.at("beta_dim");
    manifest.theta_dim = j.at("theta_dim");
    manifest.seed = j.at("seed");
    manifest.noise_sigma = j.at("noise_sigma");
    manifest.topology_checksum = j.at("topology_checksum");
    for (const auto& row : j.at("samples")) {
        SampleRecord record;
        record.id = row.at("id");
        record.split = split_from_name(row.at("split"));
        const std::vector<double> beta = row.at("beta");
        const std::vector<double> theta = row.at("theta");
        record.spec.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
        record.spec.theta =
            Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
        manifest.samples.push_back(std::move(record));
    }
    return manifest;
}

DatasetManifest sample_manifest(int count, int beta_dim, int theta_dim, std::uint64_t seed,
                                const SynthConfig& config, double noise_sigma,
                                const SplitFractions& fractions) {
    if (count < 10) throw ValidationError("sample_manifest: count must be at least 10");
    DatasetManifest manifest;
    manifest.config = config;
    manifest.beta_dim = beta_dim;
    manifest.theta_dim = theta_dim;
    manifest.seed = seed;
    manifest.noise_sigma = noise_sigma;
    manifest.topology_checksum = base_mesh(config).topology_checksum();

    Rng rng(seed);
    const int train_count = static_cast<int>(std::floor(fractions.train * count));
    const int val_count = static_cast<int>(std::floor(fractions.val * count));
    char id_buf[32];
    for (int i = 0; i < count; ++i) {
        SampleRecord record;
        std::snprintf(id_buf, sizeof(id_buf), "sample_%05d", i);
        record.id = id_buf;
        record.spec.beta.resize(beta_dim);
        record.spec.theta.resize(theta_dim);
        for (int b = 0; b < beta_dim; ++b) record.spec.beta(b) = rng.normal(0.0, 0.2);
        for (int t = 0; t < theta_dim; ++t) record.spec.theta(t) = rng.normal(0.0, 0.2);
        record.split = i < train_count           ? Split::Train
                       : i < train_count + val_count ? Split::Val
                                                     : Split::Test;
        manifest.samples.push_back(std::move(record));
    }
    return manifest;
}

TriangleMesh realize_sample(const DatasetManifest& manifest, std::size_t index, Rng* noise_rng) {
    const auto& record = manifest.samples.at(index);
    TriangleMesh mesh = generate_mesh(manifest.config, record.spec, record.id);
    if (noise_rng != nullptr && manifest.noise_sigma > 0.0) {
        Eigen::MatrixX3d noisy = mesh.vertices();
        for (Eigen::Index i = 0; i < noisy.rows(); ++i) {
            for (int c = 0; c < 3; ++c) noisy(i, c) += noise_rng->normal(0.0, manifest.noise_sigma);
        }
        mesh = mesh.with_vertices(std::move(noisy));
    }
    return mesh;
}

DatasetManifest generate_dataset(const std::filesystem::path& directory, int count, int beta_dim,
                                 int theta_dim, std::uint64_t seed, const SynthConfig& config,
                                 double noise_sigma, const SplitFractions& fractions) {
    DatasetManifest manifest =
        sample_manifest(count, beta_dim, theta_dim, seed, config, noise_sigma, fractions);
    std::filesystem::create_directories(directory);
    Rng noise_rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        const TriangleMesh mesh = realize_sample(manifest, i, &noise_rng);
        save_mesh(mesh, directory / (manifest.samples[i].id + ".off"), MeshFormat::Off);
    }
    manifest.save(directory / "manifest.json");
    return manifest;
}

}  // namespace cfan
