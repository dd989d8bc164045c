#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfan/mesh.hpp"
#include "cfan/util.hpp"

namespace cfan {

/// Unit icosphere: icosahedron subdivided `subdivisions` times, vertices
/// projected to the sphere. 12, 42, 162, 642, 2562, ... vertices.
TriangleMesh make_icosphere(int subdivisions, double radius = 1.0);

/// Capsule along z: cylinder of the given half height with hemispherical
/// caps, `segments` vertices per ring.
TriangleMesh make_capsule(int segments, double radius = 0.35, double half_height = 0.5,
                          int cap_rings = 4, int side_rings = 6);

enum class BaseShape { Icosphere, Capsule };

struct SynthConfig {
    BaseShape base = BaseShape::Icosphere;
    int base_param = 2;           // subdivisions (icosphere) or segments (capsule)
    double identity_gain = 0.25;  // radial-profile amplitude per unit beta
    double pose_gain = 1.0;       // radians of deformation per unit theta
};

/// Ground-truth generative factors: intrinsic radial-profile coefficients
/// (beta) and bend/twist angles in radians (theta, |theta|_inf <= pi/2).
struct FactorSpec {
    Eigen::VectorXd beta;
    Eigen::VectorXd theta;
};

/// Identity stage: radial displacement by a low-order harmonic profile with
/// coefficients beta (changes local areas). Pose stage: smoothly blended
/// piecewise-rigid bends/twists of the upper region by theta about fixed
/// axes (approximately area preserving). Topology is that of the base mesh
/// for every spec.
TriangleMesh generate_mesh(const SynthConfig& config, const FactorSpec& spec,
                           const std::string& name = "");

enum class Split { Train, Val, Test };

struct SampleRecord {
    std::string id;
    FactorSpec spec;
    Split split = Split::Train;
};

struct DatasetManifest {
    SynthConfig config;
    int beta_dim = 0;
    int theta_dim = 0;
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
    std::uint64_t topology_checksum = 0;
    std::vector<SampleRecord> samples;

    std::vector<std::size_t> split_indices(Split split) const;

    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);
};

struct SplitFractions {
    double train = 0.75;
    double val = 0.05;
    double test = 0.20;
};

/// Draws beta, theta ~ N(0, 0.2^2) per coordinate and assigns splits.
/// Deterministic given the seed.
DatasetManifest sample_manifest(int count, int beta_dim, int theta_dim, std::uint64_t seed,
                                const SynthConfig& config = {}, double noise_sigma = 0.0,
                                const SplitFractions& fractions = {});

/// Materializes a manifest: writes manifest.json plus one OFF file per
/// sample (named by sample id) into `directory`. Optional per-vertex
/// Gaussian coordinate noise is applied to the saved meshes.
DatasetManifest generate_dataset(const std::filesystem::path& directory, int count, int beta_dim,
                                 int theta_dim, std::uint64_t seed, const SynthConfig& config = {},
                                 double noise_sigma = 0.0, const SplitFractions& fractions = {});

/// In-memory sample generation used by tests and by generate_dataset.
TriangleMesh realize_sample(const DatasetManifest& manifest, std::size_t index, Rng* noise_rng = nullptr);

}  // namespace cfan
