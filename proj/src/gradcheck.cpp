#include "segfuse/gradcheck.hpp"

#include <cmath>

namespace segfuse {

double gradient_check(std::vector<Tensor> params,
                      const std::function<Tensor()>& build_loss, double epsilon) {
    if (epsilon < 1e-7 || epsilon > 1e-3)
        throw DomainError("gradient_check epsilon must lie in [1e-7, 1e-3]");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor loss = build_loss();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].data();
        for (size_t j = 0; j < data.size(); ++j) {
            const double orig = data[j];
            data[j] = orig + epsilon;
            const double lp = build_loss().value();
            data[j] = orig - epsilon;
            const double lm = build_loss().value();
            data[j] = orig;
            const double numeric = (lp - lm) / (2.0 * epsilon);
            const double a = analytic[pi][j];
            const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
            worst = std::max(worst, err);
        }
    }
    for (auto& p : params) p.zero_grad();
    return worst;
}

}  // namespace segfuse
