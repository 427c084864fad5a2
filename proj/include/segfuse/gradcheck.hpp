#pragma once

#include <functional>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

// Central finite differences on every element of every parameter against the
// autodiff gradients of the loss produced by `build_loss`. The builder must
// re-run the forward pass from the current parameter values on each call.
// Returns the worst relative error over all checked elements.
double gradient_check(std::vector<Tensor> params,
                      const std::function<Tensor()>& build_loss,
                      double epsilon = 1e-5);

}  // namespace segfuse
