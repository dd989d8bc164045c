#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cfan/container.hpp"
#include "cfan/tensor.hpp"

namespace cfan {

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// AdamW with decoupled weight decay: parameters shrink by lr * wd * param
/// before the bias-corrected moment update.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    void step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads);

    std::int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return config_; }

    void save(Container& container, const std::string& prefix) const;
    void load(const Container& container, const std::string& prefix);

private:
    AdamWConfig config_;
    std::int64_t step_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

}  // namespace cfan
