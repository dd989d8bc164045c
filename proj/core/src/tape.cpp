#include "cfan/tape.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace cfan {

Tape::NodeId Tape::emplace(Tensor value, bool requires_grad, std::function<void(Tape&)> backward_fn) {
    if (finite_checks_ && !value.all_finite()) {
        throw NonFiniteDetected("non-finite value in forward pass at node " +
                               std::to_string(nodes_.size()));
    }
    Node node;
    node.requires_grad = requires_grad;
    if (requires_grad) node.grad = Tensor(value.shape());
    node.value = std::move(value);
    node.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor value, bool requires_grad) {
    return emplace(std::move(value), requires_grad, nullptr);
}

const Tensor& Tape::grad(NodeId id) const {
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) throw ValidationError("grad requested for a non-differentiable node");
    return node.grad;
}

void Tape::check_same_shape(NodeId a, NodeId b, const char* what) const {
    if (!value(a).same_shape(value(b))) {
        throw ShapeMismatch(std::string(what) + ": operand shapes differ");
    }
}

void Tape::backward(NodeId root) {
    if (!value(root).is_scalar()) throw ShapeMismatch("backward: root must be scalar");
    if (!nodes_[static_cast<std::size_t>(root)].requires_grad) {
        throw ValidationError("backward: root does not require grad");
    }
    grad_mut(root)[0] = 1.0;
    for (std::int64_t i = root; i >= 0; --i) {
        auto& node = nodes_[static_cast<std::size_t>(i)];
        if (node.requires_grad && node.backward_fn) node.backward_fn(*this);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    check_same_shape(a, b, "add");
    Tensor out(value(a).shape());
    const auto& va = value(a).data();
    const auto& vb = value(b).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va[i] + vb[i];
    const bool needs = requires_grad(a) || requires_grad(b);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, b, id](Tape& t) {
        const auto g = t.grad(id).data();
        if (t.requires_grad(a)) {
            auto ga = t.grad_mut(a).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            auto gb = t.grad_mut(b).data();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    };
    return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    check_same_shape(a, b, "sub");
    Tensor out(value(a).shape());
    const auto& va = value(a).data();
    const auto& vb = value(b).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va[i] - vb[i];
    const bool needs = requires_grad(a) || requires_grad(b);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, b, id](Tape& t) {
        const auto g = t.grad(id).data();
        if (t.requires_grad(a)) {
            auto ga = t.grad_mut(a).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            auto gb = t.grad_mut(b).data();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    };
    return id;
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    check_same_shape(a, b, "mul");
    Tensor out(value(a).shape());
    const auto& va = value(a).data();
    const auto& vb = value(b).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va[i] * vb[i];
    const bool needs = requires_grad(a) || requires_grad(b);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, b, id](Tape& t) {
        const auto g = t.grad(id).data();
        if (t.requires_grad(a)) {
            auto ga = t.grad_mut(a).data();
            const auto vb2 = t.value(b).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb2[i];
        }
        if (t.requires_grad(b)) {
            auto gb = t.grad_mut(b).data();
            const auto va2 = t.value(a).data();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va2[i];
        }
    };
    return id;
}

Tape::NodeId Tape::scale(NodeId a, double factor) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va[i] * factor;
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id, factor](Tape& t) {
        const auto g = t.grad(id).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    };
    return id;
}

Tape::NodeId Tape::add_scalar(NodeId a, double offset) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va[i] + offset;
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const auto g = t.grad(id).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
    return id;
}

Tape::NodeId Tape::relu(NodeId a) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va[i] > 0.0 ? va[i] : 0.0;
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const auto g = t.grad(id).data();
        const auto va2 = t.value(a).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (va2[i] > 0.0) ga[i] += g[i];
        }
    };
    return id;
}

Tape::NodeId Tape::elu(NodeId a) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) {
        out.data()[i] = va[i] > 0.0 ? va[i] : std::expm1(va[i]);
    }
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const auto g = t.grad(id).data();
        const auto va2 = t.value(a).data();
        const auto y = t.value(id).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * (va2[i] > 0.0 ? 1.0 : y[i] + 1.0);
        }
    };
    return id;
}

Tape::NodeId Tape::log(NodeId a) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = std::log(va[i]);
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const auto g = t.grad(id).data();
        const auto va2 = t.value(a).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va2[i];
    };
    return id;
}

Tape::NodeId Tape::exp(NodeId a) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = std::exp(va[i]);
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const auto g = t.grad(id).data();
        const auto y = t.value(id).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    };
    return id;
}

Tape::NodeId Tape::square(NodeId a) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va[i] * va[i];
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const auto g = t.grad(id).data();
        const auto va2 = t.value(a).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * va2[i] * g[i];
    };
    return id;
}

Tape::NodeId Tape::clamp(NodeId a, double lo, double hi) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = std::min(std::max(va[i], lo), hi);
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id, lo, hi](Tape& t) {
        const auto g = t.grad(id).data();
        const auto va2 = t.value(a).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (va2[i] > lo && va2[i] < hi) ga[i] += g[i];
        }
    };
    return id;
}

Tape::NodeId Tape::rsqrt_eps(NodeId a, double eps) {
    Tensor out(value(a).shape());
    const auto va = value(a).data();
    for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = 1.0 / std::sqrt(va[i] + eps);
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const auto g = t.grad(id).data();
        const auto y = t.value(id).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += -0.5 * y[i] * y[i] * y[i] * g[i];
    };
    return id;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tape::NodeId Tape::matmul(NodeId x, NodeId w) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    if (vx.shape().size() != 2 || vw.shape().size() != 2 || vx.cols() != vw.rows()) {
        throw ShapeMismatch("matmul: inner dimensions differ");
    }
    const std::int64_t r = vx.rows(), k = vx.cols(), m = vw.cols();
    Tensor out({r, m});
    {
        const double* X = vx.data().data();
        const double* W = vw.data().data();
        double* Y = out.data().data();
        for (std::int64_t i = 0; i < r; ++i) {
            const double* xi = X + i * k;
            double* yi = Y + i * m;
            for (std::int64_t p = 0; p < k; ++p) {
                const double xv = xi[p];
                if (xv == 0.0) continue;
                const double* wp = W + p * m;
                for (std::int64_t j = 0; j < m; ++j) yi[j] += xv * wp[j];
            }
        }
    }
    const bool needs = requires_grad(x) || requires_grad(w);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [x, w, id, r, k, m](Tape& t) {
        const double* G = t.grad(id).data().data();
        if (t.requires_grad(x)) {
            // gx += G * W^T
            const double* W = t.value(w).data().data();
            double* GX = t.grad_mut(x).data().data();
            for (std::int64_t i = 0; i < r; ++i) {
                const double* gi = G + i * m;
                double* gxi = GX + i * k;
                for (std::int64_t p = 0; p < k; ++p) {
                    const double* wp = W + p * m;
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < m; ++j) acc += gi[j] * wp[j];
                    gxi[p] += acc;
                }
            }
        }
        if (t.requires_grad(w)) {
            // gw += X^T * G
            const double* X = t.value(x).data().data();
            double* GW = t.grad_mut(w).data().data();
            for (std::int64_t i = 0; i < r; ++i) {
                const double* xi = X + i * k;
                const double* gi = G + i * m;
                for (std::int64_t p = 0; p < k; ++p) {
                    const double xv = xi[p];
                    if (xv == 0.0) continue;
                    double* gwp = GW + p * m;
                    for (std::int64_t j = 0; j < m; ++j) gwp[j] += xv * gi[j];
                }
            }
        }
    };
    return id;
}

Tape::NodeId Tape::affine(NodeId x, NodeId w, NodeId bias) {
    return add_rowvec(matmul(x, w), bias);
}

Tape::NodeId Tape::sparse_matmul(const CsrMatrix* op, NodeId x) {
    const Tensor& vx = value(x);
    if (vx.shape().size() != 2 || vx.rows() % op->cols != 0) {
        throw ShapeMismatch("sparse_matmul: rows not a multiple of operator cols");
    }
    const std::int64_t blocks = vx.rows() / op->cols;
    const std::int64_t c = vx.cols();
    Tensor out({blocks * op->rows, c});
    {
        const double* X = vx.data().data();
        double* Y = out.data().data();
        for (std::int64_t b = 0; b < blocks; ++b) {
            const double* xb = X + b * op->cols * c;
            double* yb = Y + b * op->rows * c;
            for (std::int64_t r = 0; r < op->rows; ++r) {
                double* yr = yb + r * c;
                for (std::int64_t k = op->row_offsets[r]; k < op->row_offsets[r + 1]; ++k) {
                    const double v = op->values[k];
                    const double* xr = xb + op->col_indices[k] * c;
                    for (std::int64_t j = 0; j < c; ++j) yr[j] += v * xr[j];
                }
            }
        }
    }
    const bool needs = requires_grad(x);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [op, x, id, blocks, c](Tape& t) {
        const double* G = t.grad(id).data().data();
        double* GX = t.grad_mut(x).data().data();
        for (std::int64_t b = 0; b < blocks; ++b) {
            const double* gb = G + b * op->rows * c;
            double* gxb = GX + b * op->cols * c;
            for (std::int64_t r = 0; r < op->rows; ++r) {
                const double* gr = gb + r * c;
                for (std::int64_t k = op->row_offsets[r]; k < op->row_offsets[r + 1]; ++k) {
                    const double v = op->values[k];
                    double* gxr = gxb + op->col_indices[k] * c;
                    for (std::int64_t j = 0; j < c; ++j) gxr[j] += v * gr[j];
                }
            }
        }
    };
    return id;
}

// ---------------------------------------------------------------------------
// Reductions

Tape::NodeId Tape::reduce_sum(NodeId a) {
    const auto va = value(a).data();
    Tensor out = Tensor::scalar(pairwise_sum(va));
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const double g = t.grad(id)[0];
        auto ga = t.grad_mut(a).data();
        for (auto& v : ga) v += g;
    };
    return id;
}

Tape::NodeId Tape::reduce_mean(NodeId a) {
    const auto va = value(a).data();
    const double n = static_cast<double>(va.size());
    Tensor out = Tensor::scalar(pairwise_sum(va) / n);
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id, n](Tape& t) {
        const double g = t.grad(id)[0] / n;
        auto ga = t.grad_mut(a).data();
        for (auto& v : ga) v += g;
    };
    return id;
}

Tape::NodeId Tape::abs_sum(NodeId a) {
    const auto va = value(a).data();
    std::vector<double> magnitudes(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) magnitudes[i] = std::abs(va[i]);
    Tensor out = Tensor::scalar(pairwise_sum(magnitudes));
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const double g = t.grad(id)[0];
        const auto va2 = t.value(a).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < va2.size(); ++i) {
            if (va2[i] > 0.0) ga[i] += g;
            else if (va2[i] < 0.0) ga[i] -= g;
        }
    };
    return id;
}

Tape::NodeId Tape::sq_sum(NodeId a) {
    const auto va = value(a).data();
    std::vector<double> squares(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) squares[i] = va[i] * va[i];
    Tensor out = Tensor::scalar(pairwise_sum(squares));
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const double g = t.grad(id)[0];
        const auto va2 = t.value(a).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < va2.size(); ++i) ga[i] += 2.0 * va2[i] * g;
    };
    return id;
}

// ---------------------------------------------------------------------------
// Column statistics and row-vector broadcasts

Tape::NodeId Tape::col_mean(NodeId a) {
    const Tensor& va = value(a);
    const std::int64_t r = va.rows(), c = va.cols();
    Tensor out({1, c});
    std::vector<double> column(static_cast<std::size_t>(r));
    for (std::int64_t j = 0; j < c; ++j) {
        for (std::int64_t i = 0; i < r; ++i) column[static_cast<std::size_t>(i)] = va.at(i, j);
        out[j] = pairwise_sum(column) / static_cast<double>(r);
    }
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id, r, c](Tape& t) {
        const auto g = t.grad(id).data();
        auto ga = t.grad_mut(a).data();
        for (std::int64_t i = 0; i < r; ++i) {
            for (std::int64_t j = 0; j < c; ++j) {
                ga[static_cast<std::size_t>(i * c + j)] += g[static_cast<std::size_t>(j)] / static_cast<double>(r);
            }
        }
    };
    return id;
}

namespace {

void check_rowvec(const Tensor& a, const Tensor& v, const char* what) {
    const std::int64_t c = a.cols();
    if (v.numel() != c) throw ShapeMismatch(std::string(what) + ": row-vector length != columns");
}

}  // namespace

Tape::NodeId Tape::add_rowvec(NodeId a, NodeId v) {
    const Tensor& va = value(a);
    const Tensor& vv = value(v);
    check_rowvec(va, vv, "add_rowvec");
    const std::int64_t r = va.rows(), c = va.cols();
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) out.data()[static_cast<std::size_t>(i * c + j)] = va.at(i, j) + vv[j];
    }
    const bool needs = requires_grad(a) || requires_grad(v);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, v, id, r, c](Tape& t) {
        const auto g = t.grad(id).data();
        if (t.requires_grad(a)) {
            auto ga = t.grad_mut(a).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(v)) {
            auto gv = t.grad_mut(v).data();
            for (std::int64_t i = 0; i < r; ++i) {
                for (std::int64_t j = 0; j < c; ++j) gv[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * c + j)];
            }
        }
    };
    return id;
}

Tape::NodeId Tape::sub_rowvec(NodeId a, NodeId v) {
    const Tensor& va = value(a);
    const Tensor& vv = value(v);
    check_rowvec(va, vv, "sub_rowvec");
    const std::int64_t r = va.rows(), c = va.cols();
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) out.data()[static_cast<std::size_t>(i * c + j)] = va.at(i, j) - vv[j];
    }
    const bool needs = requires_grad(a) || requires_grad(v);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, v, id, r, c](Tape& t) {
        const auto g = t.grad(id).data();
        if (t.requires_grad(a)) {
            auto ga = t.grad_mut(a).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(v)) {
            auto gv = t.grad_mut(v).data();
            for (std::int64_t i = 0; i < r; ++i) {
                for (std::int64_t j = 0; j < c; ++j) gv[static_cast<std::size_t>(j)] -= g[static_cast<std::size_t>(i * c + j)];
            }
        }
    };
    return id;
}

Tape::NodeId Tape::mul_rowvec(NodeId a, NodeId v) {
    const Tensor& va = value(a);
    const Tensor& vv = value(v);
    check_rowvec(va, vv, "mul_rowvec");
    const std::int64_t r = va.rows(), c = va.cols();
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) out.data()[static_cast<std::size_t>(i * c + j)] = va.at(i, j) * vv[j];
    }
    const bool needs = requires_grad(a) || requires_grad(v);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, v, id, r, c](Tape& t) {
        const auto g = t.grad(id).data();
        if (t.requires_grad(a)) {
            auto ga = t.grad_mut(a).data();
            const auto vv2 = t.value(v).data();
            for (std::int64_t i = 0; i < r; ++i) {
                for (std::int64_t j = 0; j < c; ++j) {
                    ga[static_cast<std::size_t>(i * c + j)] += g[static_cast<std::size_t>(i * c + j)] * vv2[static_cast<std::size_t>(j)];
                }
            }
        }
        if (t.requires_grad(v)) {
            auto gv = t.grad_mut(v).data();
            const auto va2 = t.value(a).data();
            for (std::int64_t i = 0; i < r; ++i) {
                for (std::int64_t j = 0; j < c; ++j) {
                    gv[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * c + j)] * va2[static_cast<std::size_t>(i * c + j)];
                }
            }
        }
    };
    return id;
}

// ---------------------------------------------------------------------------
// Shape surgery

Tape::NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: empty part list");
    const std::int64_t c = value(parts[0]).cols();
    std::int64_t total = 0;
    bool needs = false;
    for (NodeId p : parts) {
        if (value(p).cols() != c) throw ShapeMismatch("concat_rows: column counts differ");
        total += value(p).rows();
        needs = needs || requires_grad(p);
    }
    Tensor out({total, c});
    std::int64_t row = 0;
    for (NodeId p : parts) {
        const auto& vp = value(p);
        std::copy(vp.data().begin(), vp.data().end(), out.data().begin() + row * c);
        row += vp.rows();
    }
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [parts, id, c](Tape& t) {
        const auto g = t.grad(id).data();
        std::int64_t row = 0;
        for (NodeId p : parts) {
            const std::int64_t rows = t.value(p).rows();
            if (t.requires_grad(p)) {
                auto gp = t.grad_mut(p).data();
                for (std::int64_t i = 0; i < rows * c; ++i) gp[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(row * c + i)];
            }
            row += rows;
        }
    };
    return id;
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: empty part list");
    const std::int64_t r = value(parts[0]).rows();
    std::int64_t total = 0;
    bool needs = false;
    for (NodeId p : parts) {
        if (value(p).rows() != r) throw ShapeMismatch("concat_cols: row counts differ");
        total += value(p).cols();
        needs = needs || requires_grad(p);
    }
    Tensor out({r, total});
    std::int64_t col = 0;
    for (NodeId p : parts) {
        const auto& vp = value(p);
        const std::int64_t pc = vp.cols();
        for (std::int64_t i = 0; i < r; ++i) {
            for (std::int64_t j = 0; j < pc; ++j) out.at(i, col + j) = vp.at(i, j);
        }
        col += pc;
    }
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [parts, id, r, total](Tape& t) {
        const Tensor& g = t.grad(id);
        std::int64_t col = 0;
        for (NodeId p : parts) {
            const std::int64_t pc = t.value(p).cols();
            if (t.requires_grad(p)) {
                Tensor& gp = t.grad_mut(p);
                for (std::int64_t i = 0; i < r; ++i) {
                    for (std::int64_t j = 0; j < pc; ++j) gp.at(i, j) += g.at(i, col + j);
                }
            }
            col += pc;
        }
        (void)total;
    };
    return id;
}

Tape::NodeId Tape::slice_rows(NodeId a, std::int64_t begin, std::int64_t count) {
    const Tensor& va = value(a);
    if (begin < 0 || count < 0 || begin + count > va.rows()) throw ShapeMismatch("slice_rows: out of range");
    const std::int64_t c = va.cols();
    Tensor out({count, c});
    std::copy(va.data().begin() + begin * c, va.data().begin() + (begin + count) * c, out.data().begin());
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id, begin, count, c](Tape& t) {
        const auto g = t.grad(id).data();
        auto ga = t.grad_mut(a).data();
        for (std::int64_t i = 0; i < count * c; ++i) ga[static_cast<std::size_t>(begin * c + i)] += g[static_cast<std::size_t>(i)];
    };
    return id;
}

Tape::NodeId Tape::slice_cols(NodeId a, std::int64_t begin, std::int64_t count) {
    const Tensor& va = value(a);
    if (begin < 0 || count < 0 || begin + count > va.cols()) throw ShapeMismatch("slice_cols: out of range");
    const std::int64_t r = va.rows();
    Tensor out({r, count});
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < count; ++j) out.at(i, j) = va.at(i, begin + j);
    }
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id, begin, count, r](Tape& t) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.grad_mut(a);
        for (std::int64_t i = 0; i < r; ++i) {
            for (std::int64_t j = 0; j < count; ++j) ga.at(i, begin + j) += g.at(i, j);
        }
    };
    return id;
}

Tape::NodeId Tape::reshape(NodeId a, std::vector<std::int64_t> shape) {
    const Tensor& va = value(a);
    Tensor out(std::move(shape), std::vector<double>(va.data().begin(), va.data().end()));
    if (out.numel() != va.numel()) throw ShapeMismatch("reshape: element count changed");
    const bool needs = requires_grad(a);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [a, id](Tape& t) {
        const auto g = t.grad(id).data();
        auto ga = t.grad_mut(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
    return id;
}

// ---------------------------------------------------------------------------
// Mesh-geometry ops

namespace {

constexpr double kAreaFloor = 1e-12;
constexpr double kNormFloor = 1e-12;

}  // namespace

Tape::NodeId Tape::conformal_factor(NodeId coords, const Eigen::MatrixX3i* faces,
                                    std::int64_t vertex_count) {
    const Tensor& vx = value(coords);
    if (vx.cols() != 3 || vx.rows() % vertex_count != 0) {
        throw ShapeMismatch("conformal_factor: coords must be (B*n) x 3");
    }
    const std::int64_t blocks = vx.rows() / vertex_count;
    Tensor out({vx.rows(), 1});
    {
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> P(
            vx.data().data(), vx.rows(), 3);
        for (std::int64_t b = 0; b < blocks; ++b) {
            const std::int64_t base = b * vertex_count;
            Eigen::VectorXd sums = Eigen::VectorXd::Zero(vertex_count);
            for (Eigen::Index f = 0; f < faces->rows(); ++f) {
                const Eigen::Vector3d pa = P.row(base + (*faces)(f, 0));
                const Eigen::Vector3d pb = P.row(base + (*faces)(f, 1));
                const Eigen::Vector3d pc = P.row(base + (*faces)(f, 2));
                const double area = 0.5 * (pb - pa).cross(pc - pa).norm();
                sums((*faces)(f, 0)) += area / 3.0;
                sums((*faces)(f, 1)) += area / 3.0;
                sums((*faces)(f, 2)) += area / 3.0;
            }
            for (std::int64_t i = 0; i < vertex_count; ++i) {
                out[base + i] = std::log(std::max(sums(i), kAreaFloor));
            }
        }
    }
    const bool needs = requires_grad(coords);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [coords, id, faces, vertex_count, blocks](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& vx2 = t.value(coords);
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> P(
            vx2.data().data(), vx2.rows(), 3);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> GX(
            t.grad_mut(coords).data().data(), vx2.rows(), 3);
        for (std::int64_t b = 0; b < blocks; ++b) {
            const std::int64_t base = b * vertex_count;
            // Recompute area sums; d(log s)/ds = 1/s with the same floor.
            Eigen::VectorXd sums = Eigen::VectorXd::Zero(vertex_count);
            for (Eigen::Index f = 0; f < faces->rows(); ++f) {
                const Eigen::Vector3d pa = P.row(base + (*faces)(f, 0));
                const Eigen::Vector3d pb = P.row(base + (*faces)(f, 1));
                const Eigen::Vector3d pc = P.row(base + (*faces)(f, 2));
                const double area = 0.5 * (pb - pa).cross(pc - pa).norm();
                sums((*faces)(f, 0)) += area / 3.0;
                sums((*faces)(f, 1)) += area / 3.0;
                sums((*faces)(f, 2)) += area / 3.0;
            }
            for (Eigen::Index f = 0; f < faces->rows(); ++f) {
                const int ia = (*faces)(f, 0), ib = (*faces)(f, 1), ic = (*faces)(f, 2);
                const Eigen::Vector3d pa = P.row(base + ia);
                const Eigen::Vector3d pb = P.row(base + ib);
                const Eigen::Vector3d pc = P.row(base + ic);
                const Eigen::Vector3d cross = (pb - pa).cross(pc - pa);
                const double norm = cross.norm();
                if (norm < kNormFloor) continue;  // clamped region: zero gradient
                const Eigen::Vector3d unit = cross / norm;
                double area_bar = 0.0;
                for (int v : {ia, ib, ic}) {
                    if (sums(v) > kAreaFloor) area_bar += g[base + v] / sums(v) / 3.0;
                }
                GX.row(base + ia) += area_bar * 0.5 * (pb - pc).cross(unit);
                GX.row(base + ib) += area_bar * 0.5 * (pc - pa).cross(unit);
                GX.row(base + ic) += area_bar * 0.5 * (pa - pb).cross(unit);
            }
        }
    };
    return id;
}

Tape::NodeId Tape::vertex_normals(NodeId coords, const Eigen::MatrixX3i* faces,
                                  std::int64_t vertex_count) {
    const Tensor& vx = value(coords);
    if (vx.cols() != 3 || vx.rows() % vertex_count != 0) {
        throw ShapeMismatch("vertex_normals: coords must be (B*n) x 3");
    }
    const std::int64_t blocks = vx.rows() / vertex_count;
    Tensor out({vx.rows(), 3});
    {
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> P(
            vx.data().data(), vx.rows(), 3);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> N(
            out.data().data(), vx.rows(), 3);
        for (std::int64_t b = 0; b < blocks; ++b) {
            const std::int64_t base = b * vertex_count;
            Eigen::MatrixX3d sums = Eigen::MatrixX3d::Zero(vertex_count, 3);
            for (Eigen::Index f = 0; f < faces->rows(); ++f) {
                const Eigen::Vector3d pa = P.row(base + (*faces)(f, 0));
                const Eigen::Vector3d pb = P.row(base + (*faces)(f, 1));
                const Eigen::Vector3d pc = P.row(base + (*faces)(f, 2));
                const Eigen::Vector3d cross = (pb - pa).cross(pc - pa);
                sums.row((*faces)(f, 0)) += cross;
                sums.row((*faces)(f, 1)) += cross;
                sums.row((*faces)(f, 2)) += cross;
            }
            for (std::int64_t i = 0; i < vertex_count; ++i) {
                const double norm = std::max(sums.row(i).norm(), kNormFloor);
                N.row(base + i) = sums.row(i) / norm;
            }
        }
    }
    const bool needs = requires_grad(coords);
    NodeId id = emplace(std::move(out), needs, nullptr);
    if (!needs) return id;
    nodes_.back().backward_fn = [coords, id, faces, vertex_count, blocks](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& vx2 = t.value(coords);
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> P(
            vx2.data().data(), vx2.rows(), 3);
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> G(
            g.data().data(), vx2.rows(), 3);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> GX(
            t.grad_mut(coords).data().data(), vx2.rows(), 3);
        for (std::int64_t b = 0; b < blocks; ++b) {
            const std::int64_t base = b * vertex_count;
            Eigen::MatrixX3d sums = Eigen::MatrixX3d::Zero(vertex_count, 3);
            for (Eigen::Index f = 0; f < faces->rows(); ++f) {
                const Eigen::Vector3d pa = P.row(base + (*faces)(f, 0));
                const Eigen::Vector3d pb = P.row(base + (*faces)(f, 1));
                const Eigen::Vector3d pc = P.row(base + (*faces)(f, 2));
                sums.row((*faces)(f, 0)) += (pb - pa).cross(pc - pa);
                sums.row((*faces)(f, 1)) += (pb - pa).cross(pc - pa);
                sums.row((*faces)(f, 2)) += (pb - pa).cross(pc - pa);
            }
            // sum_bar = (I - nn^T) g / |S|
            Eigen::MatrixX3d sum_bar(vertex_count, 3);
            for (std::int64_t i = 0; i < vertex_count; ++i) {
                const double norm = std::max(sums.row(i).norm(), kNormFloor);
                const Eigen::Vector3d unit = sums.row(i) / norm;
                const Eigen::Vector3d gi = G.row(base + i);
                sum_bar.row(i) = (gi - unit * unit.dot(gi)) / norm;
            }
            for (Eigen::Index f = 0; f < faces->rows(); ++f) {
                const int ia = (*faces)(f, 0), ib = (*faces)(f, 1), ic = (*faces)(f, 2);
                const Eigen::Vector3d pa = P.row(base + ia);
                const Eigen::Vector3d pb = P.row(base + ib);
                const Eigen::Vector3d pc = P.row(base + ic);
                const Eigen::Vector3d cross_bar =
                    sum_bar.row(ia) + sum_bar.row(ib) + sum_bar.row(ic);
                GX.row(base + ia) += cross_bar.cross(pc - pb);
                GX.row(base + ib) += cross_bar.cross(pa - pc);
                GX.row(base + ic) += cross_bar.cross(pb - pa);
            }
        }
    };
    return id;
}

Tape::NodeId Tape::reparameterize(NodeId mu, NodeId logvar, const Tensor& eps_draw) {
    check_same_shape(mu, logvar, "reparameterize");
    if (!value(mu).same_shape(eps_draw)) throw ShapeMismatch("reparameterize: eps shape mismatch");
    NodeId sigma = exp(scale(logvar, 0.5));
    NodeId noise = constant(eps_draw);
    return add(mu, mul(sigma, noise));
}

}  // namespace cfan
