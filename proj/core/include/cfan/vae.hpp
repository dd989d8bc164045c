#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfan/features.hpp"
#include "cfan/mesh.hpp"
#include "cfan/ptc.hpp"
#include "cfan/tape.hpp"

namespace cfan {

enum class BnMode { Train, Eval, Frozen };
enum class Variant { Cfan, Xyz };

struct ModelConfig {
    Variant variant = Variant::Cfan;
    int latent_c = 32;
    int latent_n = 32;
    std::vector<int> encoder_widths = {12, 24, 48, 48, 96};
    std::vector<int> decoder_widths = {128, 64, 64, 32, 16};
    double lambda_kl = 1e-4;
    double lambda_d = 5e-2;
    double lambda_m = 5e-2;
    int epochs = 300;
    int batch = 32;
    std::uint64_t seed = 0;
    double noise_augment_sigma = 0.0;  // meters, 0 disables
    /// Adds Eq-style i = j re-encode terms (compared against the perturbed
    /// code) to the disentanglement penalty; off keeps cross terms only.
    bool ld_cycle_terms = false;
    bool raw_mass = false;  // plain mass diagonal instead of mean-normalized
    double lr = 1e-3;
    double weight_decay = 5e-5;

    int latent_total() const { return latent_c + latent_n; }
    void validate() const;
};

/// Variational statistics of a batch: one row per sample, columns
/// [conformal | normal] for the CFAN variant (split = latent_c; 0 for XYZ).
struct VariationalStats {
    Eigen::MatrixXd mu;
    Eigen::MatrixXd logvar;
    int split = 0;

    Eigen::MatrixXd mu_c() const { return mu.leftCols(split); }
    Eigen::MatrixXd mu_n() const { return mu.rightCols(mu.cols() - split); }
};

struct LatentCode {
    Eigen::VectorXd z;
    int split = 0;

    Eigen::VectorXd z_c() const { return z.head(split); }
    Eigen::VectorXd z_n() const { return z.tail(z.size() - split); }
    static LatentCode join(const Eigen::VectorXd& z_c, const Eigen::VectorXd& z_n);
};

/// The mesh autoencoder: twin PTC encoders over conformal factor and normals
/// (or one encoder over xyz coordinates), a joint PTC decoder back to
/// coordinates. Parameter tensors live in a name-sorted map so iteration
/// order, initialization, and optimization are deterministic.
class CfanVae {
public:
    CfanVae(ModelConfig config, const TriangleMesh* base_mesh, const MeshHierarchy* hierarchy,
            FeatureNormalizer normalizer);

    /// Per-tape binding of parameters plus deferred batch-norm statistics;
    /// commit_bn applies the recorded updates after an optimizer step.
    struct Forward {
        Tape* tape = nullptr;
        std::map<std::string, Tape::NodeId> params;
        std::vector<std::pair<std::string, Tensor>> bn_pending;

        Tape::NodeId p(const std::string& name) const;
    };

    Forward bind(Tape& tape) const;
    void commit_bn(const Forward& fwd);

    struct StatsNodes {
        Tape::NodeId mu = -1;
        Tape::NodeId logvar = -1;
    };

    /// features: (B*n) x input_channels(), already normalized.
    StatsNodes encode(Forward& fwd, Tape::NodeId features, BnMode mode) const;

    /// z: B x latent_total() -> coordinates (B*n) x 3 in raw units.
    Tape::NodeId decode(Forward& fwd, Tape::NodeId z) const;

    /// Differentiable CFAN-or-xyz feature extraction + normalization of
    /// decoded coordinates, for the re-encoding paths.
    Tape::NodeId features_from_coords(Forward& fwd, Tape::NodeId coords) const;

    // ---- numeric (tape-internal) conveniences ----

    /// Normalized input features of raw coordinate samples, stacked (B*n) x C.
    Tensor pack_features(const std::vector<const Eigen::MatrixX3d*>& coords) const;
    Tensor pack_coords(const std::vector<const Eigen::MatrixX3d*>& coords) const;

    /// Eval-mode statistics (batch norm on running stats, no sampling).
    VariationalStats encode_batch(const std::vector<const Eigen::MatrixX3d*>& coords,
                                  BnMode mode = BnMode::Eval);
    /// Eval-mode reconstruction through z = mu.
    std::vector<Eigen::MatrixX3d> reconstruct(const std::vector<const Eigen::MatrixX3d*>& coords);
    /// Decode one latent row per output mesh.
    std::vector<Eigen::MatrixX3d> decode_latents(const Eigen::MatrixXd& z_rows);
    /// Mean-embedding of samples, one row each (Eval mode).
    Eigen::MatrixXd embed_means(const std::vector<const Eigen::MatrixX3d*>& coords);

    int input_channels() const { return config_.variant == Variant::Cfan ? 4 : 3; }
    int depth() const { return hierarchy_->depth(); }
    const ModelConfig& config() const { return config_; }
    const TriangleMesh* base_mesh() const { return base_mesh_; }
    const MeshHierarchy* hierarchy() const { return hierarchy_; }
    const FeatureNormalizer& normalizer() const { return normalizer_; }
    const std::vector<int>& encoder_widths_used() const { return enc_widths_; }
    const std::vector<int>& decoder_widths_used() const { return dec_widths_; }

    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }
    std::map<std::string, Tensor>& buffers() { return buffers_; }
    const std::map<std::string, Tensor>& buffers() const { return buffers_; }

    void save_checkpoint(Container& container) const;
    static CfanVae load_checkpoint(const Container& container, const TriangleMesh* base_mesh,
                                   const MeshHierarchy* hierarchy);

private:
    struct EncoderSpec {
        std::string prefix;
        int in_channels = 0;
        int out_latent = 0;
    };

    void init_params();
    Tape::NodeId encoder_tower(Forward& fwd, const EncoderSpec& enc, Tape::NodeId x, BnMode mode,
                               StatsNodes* stats) const;
    Tape::NodeId batch_norm(Forward& fwd, Tape::NodeId x, const std::string& prefix, BnMode mode) const;
    Tape::NodeId tiled_constant(Tape& tape, const Eigen::MatrixXd& per_vertex, std::int64_t blocks) const;
    Tape::NodeId tiled_mass(Tape& tape, int level, std::int64_t blocks, int channels) const;
    std::vector<EncoderSpec> encoders() const;

    ModelConfig config_;
    const TriangleMesh* base_mesh_ = nullptr;
    const MeshHierarchy* hierarchy_ = nullptr;
    FeatureNormalizer normalizer_;
    std::vector<int> enc_widths_;
    std::vector<int> dec_widths_;
    std::vector<Eigen::VectorXd> mass_diag_;  // per level, normalized or raw
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> buffers_;
};

/// exp(logvar) + mu^2 - 1 - logvar summed over every entry; equals twice the
/// Gaussian KL divergence from N(0, I).
double kl_term(const VariationalStats& stats);

}  // namespace cfan
