#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "segfuse/errors.hpp"

namespace segfuse {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// Dense float64 tensor participating in a reverse-mode gradient graph.
// Cheap to copy: a Tensor is a shared handle onto its storage/node.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, double fill, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int ndim() const;
    std::int64_t size() const;
    std::vector<double>& data();
    const std::vector<double>& data() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    // Gradient buffer; allocated lazily, zero-filled.
    std::vector<double>& grad();
    bool has_grad() const;
    void zero_grad();

    double value() const;  // scalar tensors only

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched
    bool requires_grad = false;
    bool in_graph = false;  // reachable from a requires_grad leaf
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

enum class EwKind { Add, Mul, Relu, Sigmoid };

// -- ops ------------------------------------------------------------------

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b = nullptr);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);
Tensor conv1d(const Tensor& input, const Tensor& kernels, int stride, int padding);
Tensor softmax(const Tensor& t, int axis, double temperature = 1.0);
Tensor l2_normalize(const Tensor& t, int axis, double epsilon = 1e-8);
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

Tensor sum(const Tensor& t);              // -> scalar
Tensor scale(const Tensor& t, double c);  // c * t
Tensor add_const(const Tensor& t, double c);
Tensor reshape(const Tensor& t, Shape new_shape);
Tensor transpose(const Tensor& t);  // 2-D only
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& t, int axis, int start, int len);
Tensor upsample2x_nearest(const Tensor& t);  // [C,H,W] -> [C,2H,2W]
// Cut [H,W] into non-overlapping patch x patch tiles, row-major; -> [N, patch^2].
Tensor grid_to_patches(const Tensor& t, int patch);
// Inverse of grid_to_patches for a grid of grid_h x grid_w tiles.
Tensor patches_to_grid(const Tensor& t, int grid_h, int grid_w, int patch);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

// Populates .grad of every reachable requires_grad tensor with dLoss/dParam.
// Repeated calls without zeroing accumulate.
void backward(const Tensor& loss);

}  // namespace segfuse
