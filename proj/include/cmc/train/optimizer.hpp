#pragma once

#include <cstdint>
#include <vector>

#include "cmc/model/checkpoint.hpp"
#include "cmc/model/parameters.hpp"

namespace cmc {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
    /// false: decay is added to the gradient (L2); true: decoupled decay.
    bool decoupled_weight_decay = false;
};

/// Adam with bias correction over a parameter store. Moment buffers are
/// kept in registration order.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    /// One update from the gradients currently held by the store.
    /// Parameters without a gradient are left untouched.
    void step(ParameterStore& params, double lr);

    std::int64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    /// Moments as "optimizer.m.<name>" / "optimizer.v.<name>" tensors.
    void save(Checkpoint& ckpt, const ParameterStore& params) const;
    void load(const Checkpoint& ckpt, const ParameterStore& params);

private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<Matrix> m_, v_;
};

}  // namespace cmc
