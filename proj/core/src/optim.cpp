#include "cfan/optim.hpp"

#include <cmath>

#include "cfan/exceptions.hpp"

namespace cfan {

void AdamW::step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads) {
    step_ += 1;
    const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& [name, param] : params) {
        const auto it = grads.find(name);
        if (it == grads.end()) throw ShapeMismatch("adamw: missing gradient for " + name);
        const Tensor& grad = it->second;
        if (!grad.same_shape(param)) throw ShapeMismatch("adamw: gradient shape mismatch for " + name);

        // Moment buffers are stored flat; only element counts must agree.
        auto& m = m_.try_emplace(name, Tensor({param.numel()})).first->second;
        auto& v = v_.try_emplace(name, Tensor({param.numel()})).first->second;
        if (m.numel() != param.numel() || v.numel() != param.numel()) {
            throw ShapeMismatch("adamw: stale moment buffers for " + name);
        }

        auto p = param.data();
        const auto g = grad.data();
        auto md = m.data();
        auto vd = v.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= config_.lr * config_.weight_decay * p[i];
            md[i] = config_.beta1 * md[i] + (1.0 - config_.beta1) * g[i];
            vd[i] = config_.beta2 * vd[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double m_hat = md[i] / bias1;
            const double v_hat = vd[i] / bias2;
            p[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

void AdamW::save(Container& container, const std::string& prefix) const {
    container.put_scalar_i64(prefix + ".step", step_);
    container.put_scalar(prefix + ".lr", config_.lr);
    container.put_scalar(prefix + ".weight_decay", config_.weight_decay);
    container.put_scalar(prefix + ".beta1", config_.beta1);
    container.put_scalar(prefix + ".beta2", config_.beta2);
    container.put_scalar(prefix + ".eps", config_.eps);
    for (const auto& [name, t] : m_) {
        container.put_f64(prefix + ".m." + name,
                          {static_cast<std::uint64_t>(t.numel())},
                          std::vector<double>(t.data().begin(), t.data().end()));
    }
    for (const auto& [name, t] : v_) {
        container.put_f64(prefix + ".v." + name,
                          {static_cast<std::uint64_t>(t.numel())},
                          std::vector<double>(t.data().begin(), t.data().end()));
    }
}

void AdamW::load(const Container& container, const std::string& prefix) {
    step_ = container.get_scalar_i64(prefix + ".step");
    config_.lr = container.get_scalar(prefix + ".lr");
    config_.weight_decay = container.get_scalar(prefix + ".weight_decay");
    config_.beta1 = container.get_scalar(prefix + ".beta1");
    config_.beta2 = container.get_scalar(prefix + ".beta2");
    config_.eps = container.get_scalar(prefix + ".eps");
    m_.clear();
    v_.clear();
    for (const auto& name : container.names()) {
        const std::string m_prefix = prefix + ".m.";
        const std::string v_prefix = prefix + ".v.";
        if (name.rfind(m_prefix, 0) == 0) {
            const auto& chunk = container.get(name);
            m_[name.substr(m_prefix.size())] =
                Tensor({static_cast<std::int64_t>(chunk.f64.size())}, chunk.f64);
        } else if (name.rfind(v_prefix, 0) == 0) {
            const auto& chunk = container.get(name);
            v_[name.substr(v_prefix.size())] =
                Tensor({static_cast<std::int64_t>(chunk.f64.size())}, chunk.f64);
        }
    }
}

}  // namespace cfan
