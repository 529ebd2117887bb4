#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "contproto/tensor.hpp"

namespace contproto {

// AdamW: Adam moment estimates with bias correction plus decoupled weight
// decay applied directly to the parameters (not through the gradient).
struct AdamWConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // Registers a parameter tensor and returns its slot index. The tensor
    // must outlive the optimizer; its shape is fixed at registration.
    std::size_t add_param(Tensor* param);

    // Applies one update to every registered parameter. grads[i] pairs with
    // slot i and must match its shape. Throws before touching any parameter
    // if a gradient contains a NaN or infinity.
    void step(const std::vector<Tensor>& grads);

    std::size_t num_params() const { return params_.size(); }
    std::uint64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    std::vector<Tensor*> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t t_ = 0;
};

} // namespace contproto
