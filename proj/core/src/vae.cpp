#include "cfan/vae.hpp"

#include <cmath>

#include "cfan/exceptions.hpp"

namespace cfan {

void ModelConfig::validate() const {
    if (latent_c <= 0 || latent_n <= 0) throw ValidationError("config: latent dims must be positive");
    if (lambda_kl < 0 || lambda_d < 0 || lambda_m < 0) {
        throw ValidationError("config: loss weights must be nonnegative");
    }
    if (variant == Variant::Xyz && lambda_d > 0) {
        throw ValidationError("config: the xyz variant has no latent split to disentangle; set lambda_d = 0");
    }
    if (batch < 2) throw ValidationError("config: batch must be >= 2 (loss pairs)");
}

LatentCode LatentCode::join(const Eigen::VectorXd& z_c, const Eigen::VectorXd& z_n) {
    LatentCode code;
    code.split = static_cast<int>(z_c.size());
    code.z.resize(z_c.size() + z_n.size());
    code.z << z_c, z_n;
    return code;
}

double kl_term(const VariationalStats& stats) {
    double total = 0.0;
    for (Eigen::Index r = 0; r < stats.mu.rows(); ++r) {
        for (Eigen::Index c = 0; c < stats.mu.cols(); ++c) {
            const double lv = stats.logvar(r, c);
            const double mu = stats.mu(r, c);
            total += std::exp(lv) + mu * mu - 1.0 - lv;
        }
    }
    return total;
}

Tape::NodeId CfanVae::Forward::p(const std::string& name) const {
    const auto it = params.find(name);
    if (it == params.end()) throw ValidationError("forward: unknown parameter " + name);
    return it->second;
}

CfanVae::CfanVae(ModelConfig config, const TriangleMesh* base_mesh, const MeshHierarchy* hierarchy,
                 FeatureNormalizer normalizer)
    : config_(std::move(config)),
      base_mesh_(base_mesh),
      hierarchy_(hierarchy),
      normalizer_(std::move(normalizer)) {
    config_.validate();
    if (base_mesh_ == nullptr || hierarchy_ == nullptr) {
        throw ValidationError("model: base mesh and hierarchy are required");
    }
    if (hierarchy_->topology_checksum != base_mesh_->topology_checksum()) {
        throw ValidationError("model: hierarchy was built for a different topology");
    }
    const int d = hierarchy_->depth();
    if (d < 1) throw ValidationError("model: hierarchy must have at least one decimation level");
    if (static_cast<int>(config_.encoder_widths.size()) < d ||
        static_cast<int>(config_.decoder_widths.size()) < d) {
        throw ValidationError("model: width lists shorter than hierarchy depth");
    }
    if (normalizer_.rows() != base_mesh_->vertex_count() || normalizer_.cols() != input_channels()) {
        throw ShapeMismatch("model: normalizer shape does not match the input features");
    }
    enc_widths_.assign(config_.encoder_widths.begin(), config_.encoder_widths.begin() + d);
    dec_widths_.assign(config_.decoder_widths.end() - d, config_.decoder_widths.end());
    for (int l = 0; l <= d; ++l) {
        mass_diag_.push_back(hierarchy_->operators[static_cast<std::size_t>(l)].mass_diagonal(config_.raw_mass));
    }
    init_params();
}

std::vector<CfanVae::EncoderSpec> CfanVae::encoders() const {
    if (config_.variant == Variant::Cfan) {
        return {{"enc_c", 1, config_.latent_c}, {"enc_n", 3, config_.latent_n}};
    }
    return {{"enc_x", 3, config_.latent_total()}};
}

void CfanVae::init_params() {
    Rng rng(config_.seed);
    const int d = depth();
    constexpr int K = PtcOperator::kStencilSize;

    auto dense = [&](const std::string& prefix, std::int64_t fan_in, std::int64_t fan_out,
                     double gain) {
        const double stddev = gain * std::sqrt(1.0 / static_cast<double>(fan_in));
        params_[prefix + ".W"] = Tensor::randn({fan_in, fan_out}, rng, stddev);
        params_[prefix + ".b"] = Tensor::zeros({fan_out});
    };

    for (const auto& enc : encoders()) {
        int channels = enc.in_channels;
        for (int i = 0; i < d; ++i) {
            const std::string conv = enc.prefix + ".conv" + std::to_string(i);
            const std::int64_t fan_in = static_cast<std::int64_t>(K) * channels;
            const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));  // ReLU gain
            params_[conv + ".W"] = Tensor::randn({fan_in, enc_widths_[i]}, rng, stddev);
            params_[conv + ".b"] = Tensor::zeros({enc_widths_[i]});
            const std::string bn = enc.prefix + ".bn" + std::to_string(i);
            params_[bn + ".gamma"] = Tensor::full({enc_widths_[i]}, 1.0);
            params_[bn + ".beta"] = Tensor::zeros({enc_widths_[i]});
            buffers_[bn + ".running_mean"] = Tensor::zeros({1, enc_widths_[i]});
            buffers_[bn + ".running_var"] = Tensor::full({1, enc_widths_[i]}, 1.0);
            channels = enc_widths_[i];
        }
        const std::int64_t flat = hierarchy_->level_size(d) * channels;
        dense(enc.prefix + ".mu", flat, enc.out_latent, 1.0);
        dense(enc.prefix + ".logvar", flat, enc.out_latent, 1.0);
    }

    // Decoder: dense to the coarsest signal, convs back up, linear to xyz.
    const int d0 = dec_widths_.front();
    dense("dec.in", config_.latent_total(), hierarchy_->level_size(d) * d0, 1.0);
    int channels = d0;
    for (int i = 0; i < d; ++i) {
        const std::string conv = "dec.conv" + std::to_string(i);
        const std::int64_t fan_in = static_cast<std::int64_t>(K) * channels;
        const double stddev = std::sqrt(1.0 / static_cast<double>(fan_in));  // ELU-friendly
        params_[conv + ".W"] = Tensor::randn({fan_in, dec_widths_[static_cast<std::size_t>(i)]}, rng, stddev);
        params_[conv + ".b"] = Tensor::zeros({dec_widths_[static_cast<std::size_t>(i)]});
        channels = dec_widths_[static_cast<std::size_t>(i)];
    }
    dense("dec.out", channels, 3, 1.0);
}

CfanVae::Forward CfanVae::bind(Tape& tape) const {
    Forward fwd;
    fwd.tape = &tape;
    for (const auto& [name, tensor] : params_) {
        fwd.params.emplace(name, tape.leaf(tensor, /*requires_grad=*/true));
    }
    return fwd;
}

void CfanVae::commit_bn(const Forward& fwd) {
    for (const auto& [name, value] : fwd.bn_pending) {
        buffers_.at(name) = value;
    }
}

Tape::NodeId CfanVae::batch_norm(Forward& fwd, Tape::NodeId x, const std::string& prefix,
                                 BnMode mode) const {
    Tape& t = *fwd.tape;
    constexpr double kEps = 1e-8;
    const Tape::NodeId gamma = fwd.p(prefix + ".gamma");
    const Tape::NodeId beta = fwd.p(prefix + ".beta");

    Tape::NodeId normalized;
    if (mode == BnMode::Train) {
        const Tape::NodeId mean = t.col_mean(x);
        const Tape::NodeId centered = t.sub_rowvec(x, mean);
        const Tape::NodeId var = t.col_mean(t.square(centered));
        const Tape::NodeId inv = t.rsqrt_eps(var, kEps);
        normalized = t.mul_rowvec(centered, inv);

        // Deferred running-statistic update (momentum 0.1), applied by
        // commit_bn after the optimizer step.
        const Tensor& batch_mean = t.value(mean);
        const Tensor& batch_var = t.value(var);
        const Tensor& run_mean = buffers_.at(prefix + ".running_mean");
        const Tensor& run_var = buffers_.at(prefix + ".running_var");
        Tensor new_mean(run_mean.shape());
        Tensor new_var(run_var.shape());
        for (std::int64_t j = 0; j < run_mean.numel(); ++j) {
            new_mean[j] = 0.9 * run_mean[j] + 0.1 * batch_mean[j];
            new_var[j] = 0.9 * run_var[j] + 0.1 * batch_var[j];
        }
        fwd.bn_pending.emplace_back(prefix + ".running_mean", std::move(new_mean));
        fwd.bn_pending.emplace_back(prefix + ".running_var", std::move(new_var));
    } else {
        const Tensor& run_mean = buffers_.at(prefix + ".running_mean");
        const Tensor& run_var = buffers_.at(prefix + ".running_var");
        Tensor inv_std(run_var.shape());
        for (std::int64_t j = 0; j < run_var.numel(); ++j) {
            inv_std[j] = 1.0 / std::sqrt(run_var[j] + kEps);
        }
        const Tape::NodeId mean_const = t.constant(run_mean);
        const Tape::NodeId inv_const = t.constant(std::move(inv_std));
        normalized = t.mul_rowvec(t.sub_rowvec(x, mean_const), inv_const);
    }
    return t.add_rowvec(t.mul_rowvec(normalized, gamma), beta);
}

Tape::NodeId CfanVae::encoder_tower(Forward& fwd, const EncoderSpec& enc, Tape::NodeId x, BnMode mode,
                                    StatsNodes* stats) const {
    Tape& t = *fwd.tape;
    const int d = depth();
    constexpr int K = PtcOperator::kStencilSize;
    int channels = enc.in_channels;
    for (int i = 0; i < d; ++i) {
        const auto& op = hierarchy_->operators[static_cast<std::size_t>(i)];
        const std::int64_t n = op.level_vertex_count;
        const std::int64_t blocks = t.value(x).rows() / n;

        // sigma(W F M f): mass scale, stencil interpolation, learned mix.
        Tape::NodeId h = t.mul(x, tiled_mass(t, i, blocks, channels));
        h = t.sparse_matmul(&op.interp, h);
        h = t.reshape(h, {blocks * n, static_cast<std::int64_t>(K) * channels});
        const std::string conv = enc.prefix + ".conv" + std::to_string(i);
        h = t.affine(h, fwd.p(conv + ".W"), fwd.p(conv + ".b"));
        h = batch_norm(fwd, h, enc.prefix + ".bn" + std::to_string(i), mode);
        h = t.relu(h);
        x = t.sparse_matmul(&hierarchy_->down_maps[static_cast<std::size_t>(i)], h);
        channels = enc_widths_[static_cast<std::size_t>(i)];
    }
    const std::int64_t coarse = hierarchy_->level_size(d);
    const std::int64_t blocks = t.value(x).rows() / coarse;
    const Tape::NodeId flat = t.reshape(x, {blocks, coarse * channels});
    stats->mu = t.affine(flat, fwd.p(enc.prefix + ".mu.W"), fwd.p(enc.prefix + ".mu.b"));
    stats->logvar = t.clamp(
        t.affine(flat, fwd.p(enc.prefix + ".logvar.W"), fwd.p(enc.prefix + ".logvar.b")), -20.0, 20.0);
    return flat;
}

CfanVae::StatsNodes CfanVae::encode(Forward& fwd, Tape::NodeId features, BnMode mode) const {
    Tape& t = *fwd.tape;
    if (t.value(features).cols() != input_channels() ||
        t.value(features).rows() % base_mesh_->vertex_count() != 0) {
        throw ShapeMismatch("encode: features must be (B*n) x input_channels");
    }
    const auto encs = encoders();
    if (config_.variant == Variant::Cfan) {
        StatsNodes stats_c, stats_n;
        encoder_tower(fwd, encs[0], t.slice_cols(features, 0, 1), mode, &stats_c);
        encoder_tower(fwd, encs[1], t.slice_cols(features, 1, 3), mode, &stats_n);
        StatsNodes joint;
        joint.mu = t.concat_cols({stats_c.mu, stats_n.mu});
        joint.logvar = t.concat_cols({stats_c.logvar, stats_n.logvar});
        return joint;
    }
    StatsNodes stats;
    encoder_tower(fwd, encs[0], features, mode, &stats);
    return stats;
}

Tape::NodeId CfanVae::decode(Forward& fwd, Tape::NodeId z) const {
    Tape& t = *fwd.tape;
    if (t.value(z).cols() != config_.latent_total()) {
        throw ShapeMismatch("decode: latent width mismatch");
    }
    const int d = depth();
    constexpr int K = PtcOperator::kStencilSize;
    const std::int64_t blocks = t.value(z).rows();
    const std::int64_t coarse = hierarchy_->level_size(d);

    Tape::NodeId h = t.affine(z, fwd.p("dec.in.W"), fwd.p("dec.in.b"));
    int channels = dec_widths_.front();
    h = t.reshape(h, {blocks * coarse, static_cast<std::int64_t>(channels)});
    for (int i = 0; i < d; ++i) {
        const int level = d - i;
        const auto& op = hierarchy_->operators[static_cast<std::size_t>(level)];
        const std::int64_t n = op.level_vertex_count;
        Tape::NodeId m = t.mul(h, tiled_mass(t, level, blocks, channels));
        m = t.sparse_matmul(&op.interp, m);
        m = t.reshape(m, {blocks * n, static_cast<std::int64_t>(K) * channels});
        const std::string conv = "dec.conv" + std::to_string(i);
        m = t.affine(m, fwd.p(conv + ".W"), fwd.p(conv + ".b"));
        m = t.elu(m);
        channels = dec_widths_[static_cast<std::size_t>(i)];
        h = t.sparse_matmul(&hierarchy_->up_maps[static_cast<std::size_t>(level - 1)], m);
    }
    return t.affine(h, fwd.p("dec.out.W"), fwd.p("dec.out.b"));
}

Tape::NodeId CfanVae::features_from_coords(Forward& fwd, Tape::NodeId coords) const {
    Tape& t = *fwd.tape;
    const std::int64_t n = base_mesh_->vertex_count();
    if (t.value(coords).cols() != 3 || t.value(coords).rows() % n != 0) {
        throw ShapeMismatch("features_from_coords: coords must be (B*n) x 3");
    }
    const std::int64_t blocks = t.value(coords).rows() / n;
    Tape::NodeId packed;
    if (config_.variant == Variant::Cfan) {
        const Tape::NodeId conf = t.conformal_factor(coords, &base_mesh_->faces(), n);
        const Tape::NodeId norms = t.vertex_normals(coords, &base_mesh_->faces(), n);
        packed = t.concat_cols({conf, norms});
    } else {
        packed = coords;
    }
    const Tape::NodeId mean = tiled_constant(t, normalizer_.mean(), blocks);
    const Tape::NodeId inv_std = tiled_constant(t, normalizer_.stddev().cwiseInverse(), blocks);
    return t.mul(t.sub(packed, mean), inv_std);
}

Tape::NodeId CfanVae::tiled_mass(Tape& tape, int level, std::int64_t blocks, int channels) const {
    const Eigen::VectorXd& diag = mass_diag_[static_cast<std::size_t>(level)];
    const std::int64_t n = diag.size();
    Tensor tile({blocks * n, static_cast<std::int64_t>(channels)});
    for (std::int64_t b = 0; b < blocks; ++b) {
        for (std::int64_t r = 0; r < n; ++r) {
            for (int c = 0; c < channels; ++c) tile.at(b * n + r, c) = diag(r);
        }
    }
    return tape.constant(std::move(tile));
}

Tape::NodeId CfanVae::tiled_constant(Tape& tape, const Eigen::MatrixXd& per_vertex,
                                     std::int64_t blocks) const {
    Tensor tile({per_vertex.rows() * blocks, per_vertex.cols()});
    for (std::int64_t b = 0; b < blocks; ++b) {
        for (Eigen::Index r = 0; r < per_vertex.rows(); ++r) {
            for (Eigen::Index c = 0; c < per_vertex.cols(); ++c) {
                tile.at(b * per_vertex.rows() + r, c) = per_vertex(r, c);
            }
        }
    }
    return tape.constant(std::move(tile));
}

Tensor CfanVae::pack_features(const std::vector<const Eigen::MatrixX3d*>& coords) const {
    const std::int64_t n = base_mesh_->vertex_count();
    const std::int64_t b_count = static_cast<std::int64_t>(coords.size());
    Tensor out({b_count * n, input_channels()});
    for (std::int64_t b = 0; b < b_count; ++b) {
        const Eigen::MatrixX3d& p = *coords[static_cast<std::size_t>(b)];
        if (p.rows() != n) throw ShapeMismatch("pack_features: vertex count mismatch");
        Eigen::MatrixXd packed;
        if (config_.variant == Variant::Cfan) {
            packed = compute_cfan_raw(p, base_mesh_->faces()).as_matrix();
        } else {
            packed = p;
        }
        const Eigen::MatrixXd normalized = normalizer_.apply(packed);
        for (std::int64_t r = 0; r < n; ++r) {
            for (std::int64_t c = 0; c < input_channels(); ++c) {
                out.at(b * n + r, c) = normalized(r, c);
            }
        }
    }
    return out;
}

Tensor CfanVae::pack_coords(const std::vector<const Eigen::MatrixX3d*>& coords) const {
    const std::int64_t n = base_mesh_->vertex_count();
    const std::int64_t b_count = static_cast<std::int64_t>(coords.size());
    Tensor out({b_count * n, 3});
    for (std::int64_t b = 0; b < b_count; ++b) {
        const Eigen::MatrixX3d& p = *coords[static_cast<std::size_t>(b)];
        if (p.rows() != n) throw ShapeMismatch("pack_coords: vertex count mismatch");
        for (std::int64_t r = 0; r < n; ++r) {
            for (std::int64_t c = 0; c < 3; ++c) out.at(b * n + r, c) = p(r, c);
        }
    }
    return out;
}

VariationalStats CfanVae::encode_batch(const std::vector<const Eigen::MatrixX3d*>& coords,
                                       BnMode mode) {
    Tape tape;
    Forward fwd = bind(tape);
    const Tape::NodeId features = tape.constant(pack_features(coords));
    const StatsNodes nodes = encode(fwd, features, mode);
    VariationalStats stats;
    stats.mu = tape.value(nodes.mu).to_matrix();
    stats.logvar = tape.value(nodes.logvar).to_matrix();
    stats.split = config_.variant == Variant::Cfan ? config_.latent_c : 0;
    return stats;
}

std::vector<Eigen::MatrixX3d> CfanVae::reconstruct(const std::vector<const Eigen::MatrixX3d*>& coords) {
    const VariationalStats stats = encode_batch(coords, BnMode::Eval);
    return decode_latents(stats.mu);
}

std::vector<Eigen::MatrixX3d> CfanVae::decode_latents(const Eigen::MatrixXd& z_rows) {
    Tape tape;
    Forward fwd = bind(tape);
    const Tape::NodeId z = tape.constant(Tensor::from_matrix(z_rows));
    const Tape::NodeId out = decode(fwd, z);
    const Eigen::MatrixXd stacked = tape.value(out).to_matrix();
    const std::int64_t n = base_mesh_->vertex_count();
    std::vector<Eigen::MatrixX3d> meshes;
    for (Eigen::Index b = 0; b < z_rows.rows(); ++b) {
        meshes.emplace_back(stacked.middleRows(b * n, n));
    }
    return meshes;
}

Eigen::MatrixXd CfanVae::embed_means(const std::vector<const Eigen::MatrixX3d*>& coords) {
    // Batched in slabs to bound tape memory on large sets.
    const std::size_t slab = 64;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(coords.size()), config_.latent_total());
    for (std::size_t begin = 0; begin < coords.size(); begin += slab) {
        const std::size_t end = std::min(coords.size(), begin + slab);
        const std::vector<const Eigen::MatrixX3d*> chunk(coords.begin() + begin, coords.begin() + end);
        const VariationalStats stats = encode_batch(chunk, BnMode::Eval);
        out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) = stats.mu;
    }
    return out;
}

void CfanVae::save_checkpoint(Container& container) const {
    container.put_text("model.variant", config_.variant == Variant::Cfan ? "cfan" : "xyz");
    container.put_scalar_i64("model.latent_c", config_.latent_c);
    container.put_scalar_i64("model.latent_n", config_.latent_n);
    container.put_scalar_i64("model.seed", static_cast<std::int64_t>(config_.seed));
    container.put_scalar("model.lambda_kl", config_.lambda_kl);
    container.put_scalar("model.lambda_d", config_.lambda_d);
    container.put_scalar("model.lambda_m", config_.lambda_m);
    container.put_scalar("model.lr", config_.lr);
    container.put_scalar("model.weight_decay", config_.weight_decay);
    container.put_scalar("model.noise_augment_sigma", config_.noise_augment_sigma);
    container.put_scalar_i64("model.ld_cycle_terms", config_.ld_cycle_terms ? 1 : 0);
    container.put_scalar_i64("model.raw_mass", config_.raw_mass ? 1 : 0);
    container.put_scalar_i64("model.epochs", config_.epochs);
    container.put_scalar_i64("model.batch", config_.batch);
    container.put_i64("model.encoder_widths", {config_.encoder_widths.size()},
                      std::vector<std::int64_t>(config_.encoder_widths.begin(), config_.encoder_widths.end()));
    container.put_i64("model.decoder_widths", {config_.decoder_widths.size()},
                      std::vector<std::int64_t>(config_.decoder_widths.begin(), config_.decoder_widths.end()));
    container.put_scalar_i64("model.topology_checksum",
                             static_cast<std::int64_t>(base_mesh_->topology_checksum()));
    container.put_matrix("model.normalizer.mean", normalizer_.mean());
    container.put_matrix("model.normalizer.std", normalizer_.stddev());
    for (const auto& [name, tensor] : params_) {
        std::vector<std::uint64_t> dims(tensor.shape().begin(), tensor.shape().end());
        container.put_f64("param." + name, std::move(dims),
                          std::vector<double>(tensor.data().begin(), tensor.data().end()));
    }
    for (const auto& [name, tensor] : buffers_) {
        std::vector<std::uint64_t> dims(tensor.shape().begin(), tensor.shape().end());
        container.put_f64("buffer." + name, std::move(dims),
                          std::vector<double>(tensor.data().begin(), tensor.data().end()));
    }
}

CfanVae CfanVae::load_checkpoint(const Container& container, const TriangleMesh* base_mesh,
                                 const MeshHierarchy* hierarchy) {
    ModelConfig config;
    config.variant = container.get_text("model.variant") == "cfan" ? Variant::Cfan : Variant::Xyz;
    config.latent_c = static_cast<int>(container.get_scalar_i64("model.latent_c"));
    config.latent_n = static_cast<int>(container.get_scalar_i64("model.latent_n"));
    config.seed = static_cast<std::uint64_t>(container.get_scalar_i64("model.seed"));
    config.lambda_kl = container.get_scalar("model.lambda_kl");
    config.lambda_d = container.get_scalar("model.lambda_d");
    config.lambda_m = container.get_scalar("model.lambda_m");
    config.lr = container.get_scalar("model.lr");
    config.weight_decay = container.get_scalar("model.weight_decay");
    config.noise_augment_sigma = container.get_scalar("model.noise_augment_sigma");
    config.ld_cycle_terms = container.get_scalar_i64("model.ld_cycle_terms") != 0;
    config.raw_mass = container.get_scalar_i64("model.raw_mass") != 0;
    config.epochs = static_cast<int>(container.get_scalar_i64("model.epochs"));
    config.batch = static_cast<int>(container.get_scalar_i64("model.batch"));
    const auto& enc_w = container.get("model.encoder_widths").i64;
    const auto& dec_w = container.get("model.decoder_widths").i64;
    config.encoder_widths.assign(enc_w.begin(), enc_w.end());
    config.decoder_widths.assign(dec_w.begin(), dec_w.end());

    const auto checksum = static_cast<std::uint64_t>(container.get_scalar_i64("model.topology_checksum"));
    if (base_mesh == nullptr || base_mesh->topology_checksum() != checksum) {
        throw ValidationError("checkpoint: topology checksum mismatch with the provided mesh");
    }
    FeatureNormalizer normalizer(container.get_matrix("model.normalizer.mean"),
                                 container.get_matrix("model.normalizer.std"));
    CfanVae model(config, base_mesh, hierarchy, std::move(normalizer));
    for (auto& [name, tensor] : model.params_) {
        const auto& chunk = container.get("param." + name);
        if (chunk.f64.size() != static_cast<std::size_t>(tensor.numel())) {
            throw ShapeMismatch("checkpoint: parameter size mismatch for " + name);
        }
        tensor = Tensor(tensor.shape(), chunk.f64);
    }
    for (auto& [name, tensor] : model.buffers_) {
        const auto& chunk = container.get("buffer." + name);
        if (chunk.f64.size() != static_cast<std::size_t>(tensor.numel())) {
            throw ShapeMismatch("checkpoint: buffer size mismatch for " + name);
        }
        tensor = Tensor(tensor.shape(), chunk.f64);
    }
    return model;
}

}  // namespace cfan
