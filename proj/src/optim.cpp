#include "contproto/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace contproto {

std::size_t AdamW::add_param(Tensor* param) {
    if (param == nullptr) throw std::runtime_error("AdamW: null parameter");
    params_.push_back(param);
    m_.push_back(Tensor::zeros(param->shape()));
    v_.push_back(Tensor::zeros(param->shape()));
    return params_.size() - 1;
}

void AdamW::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) {
        throw std::runtime_error("AdamW: got " + std::to_string(grads.size()) +
                                 " gradients for " + std::to_string(params_.size()) +
                                 " parameters");
    }
    // Validate everything before mutating anything, so a bad batch cannot
    // leave the parameters half-updated.
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(*params_[i])) {
            throw std::runtime_error("AdamW: gradient shape " + grads[i].shape_str() +
                                     " does not match parameter shape " +
                                     params_[i]->shape_str() + " at slot " +
                                     std::to_string(i));
        }
        for (double g : grads[i].vec()) {
            if (!std::isfinite(g)) {
                throw std::runtime_error("AdamW: non-finite gradient at slot " +
                                         std::to_string(i));
            }
        }
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        double* p = params_[i]->data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        const double* g = grads[i].data();
        const std::size_t n = params_[i]->size();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                               cfg_.weight_decay * p[j]);
        }
    }
}

} // namespace contproto
