#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "cfan/ptc.hpp"
#include "cfan/tensor.hpp"

namespace cfan {

/// Reverse-mode differentiation tape. Nodes are appended in topological
/// order; backward() visits them exactly once in reverse. Forward outputs
/// are scanned for NaN/Inf and abort the step with NonFiniteDetected.
///
/// Sparse operators passed to sparse_matmul / conformal_factor /
/// vertex_normals are borrowed and must outlive the tape.
class Tape {
public:
    using NodeId = std::int32_t;

    explicit Tape(bool finite_checks = true) : finite_checks_(finite_checks) {}

    NodeId leaf(Tensor value, bool requires_grad = false);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Elementwise.
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId add_scalar(NodeId a, double offset);
    NodeId relu(NodeId a);
    NodeId elu(NodeId a);
    NodeId log(NodeId a);
    NodeId exp(NodeId a);
    NodeId square(NodeId a);
    NodeId clamp(NodeId a, double lo, double hi);
    NodeId rsqrt_eps(NodeId a, double eps);

    // Linear algebra. affine() = matmul + row-broadcast bias.
    NodeId matmul(NodeId x, NodeId w);
    NodeId affine(NodeId x, NodeId w, NodeId bias);
    /// y = S * x applied per cols(S)-row block; differentiates through x only.
    NodeId sparse_matmul(const CsrMatrix* op, NodeId x);

    // Reductions to a scalar node of shape {1}.
    NodeId reduce_sum(NodeId a);
    NodeId reduce_mean(NodeId a);
    NodeId abs_sum(NodeId a);
    NodeId sq_sum(NodeId a);

    // Per-column statistics and row-vector broadcasts (bias-add and
    // per-channel scale are the only broadcast forms).
    NodeId col_mean(NodeId a);                 // R x C -> 1 x C
    NodeId add_rowvec(NodeId a, NodeId v);
    NodeId sub_rowvec(NodeId a, NodeId v);
    NodeId mul_rowvec(NodeId a, NodeId v);

    // Shape surgery.
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId slice_rows(NodeId a, std::int64_t begin, std::int64_t count);
    NodeId slice_cols(NodeId a, std::int64_t begin, std::int64_t count);
    NodeId reshape(NodeId a, std::vector<std::int64_t> shape);

    /// Per-vertex conformal factor of coordinate blocks: rows must be a
    /// multiple of vertex_count; faces index into each block. Face-area sums
    /// are floored at 1e-12 before the log so degenerate geometry stays
    /// finite (zero gradient there).
    NodeId conformal_factor(NodeId coords, const Eigen::MatrixX3i* faces, std::int64_t vertex_count);

    /// Area-weighted unit vertex normals of coordinate blocks; the normal
    /// sum's norm is floored at 1e-12.
    NodeId vertex_normals(NodeId coords, const Eigen::MatrixX3i* faces, std::int64_t vertex_count);

    /// z = mu + exp(0.5 * logvar) . eps with a fixed noise draw.
    NodeId reparameterize(NodeId mu, NodeId logvar, const Tensor& eps_draw);

    /// Seeds d(root)=1 and propagates to every requires_grad node. Root must
    /// be scalar.
    void backward(NodeId root);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backward_fn;
    };

    NodeId emplace(Tensor value, bool requires_grad, std::function<void(Tape&)> backward_fn);
    Tensor& grad_mut(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    void check_same_shape(NodeId a, NodeId b, const char* what) const;

    std::vector<Node> nodes_;
    bool finite_checks_;
};

}  // namespace cfan
