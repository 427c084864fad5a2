#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

// SGD / Adam over an ordered parameter list. Adam moments are keyed by
// parameter order, so the same list must be passed on every step.
class Optimizer {
public:
    enum class Kind { SGD, Adam };

    Optimizer(Kind kind, double learning_rate);

    void step(std::vector<Tensor>& params);

    Kind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    std::int64_t step_count() const { return step_count_; }

    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

private:
    Kind kind_;
    double lr_;
    std::int64_t step_count_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace segfuse
