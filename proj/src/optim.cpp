#include "segfuse/optim.hpp"

#include <cmath>

namespace segfuse {

Optimizer::Optimizer(Kind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
    if (learning_rate <= 0) throw DomainError("learning rate must be positive");
}

void Optimizer::step(std::vector<Tensor>& params) {
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad())
            throw ContractError("optimizer step: parameter " + std::to_string(i) +
                                " has no gradient");
    }
    if (kind_ == Kind::Adam && m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].data().size(), 0.0);
            v_[i].assign(params[i].data().size(), 0.0);
        }
    }
    ++step_count_;
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data();
        auto& g = params[i].grad();
        if (kind_ == Kind::SGD) {
            for (size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
        } else {
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < p.size(); ++j) {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                p[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + epsilon);
            }
        }
        params[i].zero_grad();
    }
}

}  // namespace segfuse
