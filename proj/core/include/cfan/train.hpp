#pragma once

#include <filesystem>
#include <optional>

#include "cfan/optim.hpp"
#include "cfan/vae.hpp"

namespace cfan {

struct Batch {
    Tensor coords;    // (B*n) x 3, raw target coordinates
    Tensor features;  // (B*n) x C, normalized inputs
    int count = 0;
};

struct LossValues {
    double total = 0.0;
    double l1 = 0.0;  // reconstruction, batch-averaged
    double kl = 0.0;  // unweighted
    double ld = 0.0;  // unweighted sum over pairs
    double lm = 0.0;  // unweighted sum over pairs
    int pair_count = 0;
};

struct LossNodes {
    Tape::NodeId total = -1;
    LossValues values;
};

/// The four-term loss: batch-averaged L1 reconstruction, lambda-weighted
/// disentanglement and metric penalties over shuffled consecutive pairs,
/// and the KL term. In Train mode z is reparameterized and batch norm uses
/// batch statistics (running-stat updates deferred to commit_bn); any other
/// mode decodes z = mu. Re-encoding inside the disentanglement penalty
/// always runs with frozen batch norm.
LossNodes total_loss(const CfanVae& model, CfanVae::Forward& fwd, const Batch& batch, Rng& rng,
                     BnMode mode = BnMode::Train, bool force_penalties = false);

/// Assembles a batch from raw per-sample coordinates.
Batch make_batch(const CfanVae& model, const std::vector<const Eigen::MatrixX3d*>& coords);

struct EpochStats {
    int epoch = 0;
    double train_l1 = 0.0;
    double val_l1 = 0.0;
    double kl = 0.0;
    double ld = 0.0;
    double lm = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;  // row 0 is the pre-training evaluation
    int best_epoch = 0;
    double best_val_l1 = 0.0;
};

/// AdamW training; the model is left holding the best-validation parameters.
/// Throws NonFiniteDetected (with the offending epoch/step recorded) if a
/// forward value diverges.
TrainResult train_model(CfanVae& model, const std::vector<Eigen::MatrixX3d>& train_coords,
                        const std::vector<Eigen::MatrixX3d>& val_coords);

void write_history_csv(const std::vector<EpochStats>& history, const std::filesystem::path& path);

/// Eval-mode mean reconstruction L1 (sum per sample, averaged over samples).
double mean_l1(CfanVae& model, const std::vector<Eigen::MatrixX3d>& coords);

struct PenaltyReport {
    double ld = 0.0;  // mean per pair
    double lm = 0.0;
};

/// Deterministic held-out penalty evaluation: pairs the set after a seeded
/// shuffle and reports per-pair means with z = mu and frozen re-encoding.
PenaltyReport heldout_penalties(CfanVae& model, const std::vector<Eigen::MatrixX3d>& coords,
                                std::uint64_t seed);

}  // namespace cfan
