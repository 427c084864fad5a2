#include "segfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace segfuse {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(numel(impl_->shape)), fill);
    impl_->requires_grad = requires_grad;
    impl_->in_graph = requires_grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t(shape, 0.0, requires_grad);
    t.impl()->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
std::int64_t Tensor::size() const { return static_cast<std::int64_t>(impl_->data.size()); }
std::vector<double>& Tensor::data() { return impl_->data; }
const std::vector<double>& Tensor::data() const { return impl_->data; }
bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on) impl_->in_graph = true;
}

std::vector<double>& Tensor::grad() { return impl_->grad_buffer(); }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::value() const {
    if (size() != 1) throw ContractError("value() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
}

namespace {

Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool track = false;
    for (const auto& p : parents) track = track || p.impl()->in_graph;
    if (track) {
        impl->in_graph = true;
        for (const auto& p : parents) impl->parents.push_back(p.impl());
        impl->backward_fn = std::move(backward_fn);
    }
    return Tensor(impl);
}

// Trailing-dimension broadcast of two shapes; throws ShapeError on mismatch.
Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t n = std::max(a.size(), b.size());
    Shape out(n);
    for (size_t i = 0; i < n; ++i) {
        const int da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const int db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " +
                             shape_str(b));
        }
        out[n - 1 - i] = std::max(da, db);
    }
    return out;
}

// Strides of `shape` viewed as `out` (0 where broadcast), right-aligned.
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
    std::vector<std::int64_t> natural(shape.size());
    std::int64_t s = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        natural[i] = s;
        s *= shape[i];
    }
    std::vector<std::int64_t> strides(out.size(), 0);
    const size_t off = out.size() - shape.size();
    for (size_t i = 0; i < shape.size(); ++i) {
        strides[off + i] = (shape[i] == 1 && out[off + i] != 1) ? 0 : natural[i];
    }
    return strides;
}

// Calls fn(out_index, a_index, b_index) for every element of the broadcast shape.
template <typename Fn>
void broadcast_iterate(const Shape& out, const std::vector<std::int64_t>& sa,
                       const std::vector<std::int64_t>& sb, Fn&& fn) {
    const std::int64_t total = numel(out);
    std::vector<int> idx(out.size(), 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t flat = 0; flat < total; ++flat) {
        fn(flat, ia, ib);
        for (int d = static_cast<int>(out.size()) - 1; d >= 0; --d) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

Tensor binary_ew(const Tensor& a, const Tensor& b, bool is_add) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    const auto& da = a.data();
    const auto& db = b.data();
    broadcast_iterate(out_shape, sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        out[o] = is_add ? da[ia] + db[ib] : da[ia] * db[ib];
    });
    Tensor av = a, bv = b;
    return make_node(out_shape, std::move(out), {a, b},
                     [av, bv, out_shape, sa, sb, is_add](TensorImpl& self) {
                         auto& ga = av.impl()->grad_buffer();
                         auto& gb = bv.impl()->grad_buffer();
                         const auto& da = av.data();
                         const auto& db = bv.data();
                         const auto& g = self.grad;
                         broadcast_iterate(out_shape, sa, sb,
                                           [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                                               if (is_add) {
                                                   ga[ia] += g[o];
                                                   gb[ib] += g[o];
                                               } else {
                                                   ga[ia] += g[o] * db[ib];
                                                   gb[ib] += g[o] * da[ia];
                                               }
                                           });
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_ew(a, b, true); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_ew(a, b, false); }

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0 ? a.data()[i] : 0.0;
    Tensor av = a;
    return make_node(a.shape(), std::move(out), {a}, [av](TensorImpl& self) {
        auto& ga = av.impl()->grad_buffer();
        for (size_t i = 0; i < ga.size(); ++i)
            if (av.data()[i] > 0) ga[i] += self.grad[i];
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
    }
    Tensor av = a;
    return make_node(a.shape(), std::move(out), {a}, [av](TensorImpl& self) {
        auto& ga = av.impl()->grad_buffer();
        for (size_t i = 0; i < ga.size(); ++i) {
            const double s = self.data[i];
            ga[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b) {
    switch (kind) {
        case EwKind::Add:
        case EwKind::Mul:
            if (!b || !b->defined())
                throw ContractError("binary elementwise op requires a second operand");
            return kind == EwKind::Add ? add(a, *b) : mul(a, *b);
        case EwKind::Relu:
            return relu(a);
        case EwKind::Sigmoid:
            return sigmoid(a);
    }
    throw ContractError("unknown elementwise kind");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul expects 2-D operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    const auto& da = a.data();
    const auto& db = b.data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = da[static_cast<size_t>(i) * k + p];
            if (av == 0.0) continue;
            const double* brow = &db[static_cast<size_t>(p) * n];
            double* orow = &out[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    Tensor av = a, bv = b;
    return make_node({m, n}, std::move(out), {a, b}, [av, bv, m, k, n](TensorImpl& self) {
        auto& ga = av.impl()->grad_buffer();
        auto& gb = bv.impl()->grad_buffer();
        const auto& da = av.data();
        const auto& db = bv.data();
        const auto& g = self.grad;
        // dA = G * B^T
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const double gv = g[static_cast<size_t>(i) * n + j];
                if (gv == 0.0) continue;
                for (int p = 0; p < k; ++p)
                    ga[static_cast<size_t>(i) * k + p] += gv * db[static_cast<size_t>(p) * n + j];
            }
        // dB = A^T * G
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const double avv = da[static_cast<size_t>(i) * k + p];
                if (avv == 0.0) continue;
                for (int j = 0; j < n; ++j)
                    gb[static_cast<size_t>(p) * n + j] += avv * g[static_cast<size_t>(i) * n + j];
            }
    });
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (input.ndim() != 3)
        throw ShapeError("conv2d input must be [C,H,W], got " + shape_str(input.shape()));
    if (kernels.ndim() != 4)
        throw ShapeError("conv2d kernels must be [Cout,Cin,k,k], got " +
                         shape_str(kernels.shape()));
    const int cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    const int cout = kernels.shape()[0], kcin = kernels.shape()[1];
    const int kh = kernels.shape()[2], kw = kernels.shape()[3];
    if (cin != kcin)
        throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                         " vs kernels " + shape_str(kernels.shape()));
    if (stride < 1) throw DomainError("conv2d stride must be positive");
    if (padding < 0) throw DomainError("conv2d padding must be non-negative");
    if (h + 2 * padding < kh || w + 2 * padding < kw)
        throw ShapeError("conv2d kernel " + shape_str(kernels.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(cout) * oh * ow, 0.0);
    const auto& din = input.data();
    const auto& dk = kernels.data();
    for (int oc = 0; oc < cout; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                const int iy0 = oy * stride - padding;
                const int ix0 = ox * stride - padding;
                for (int ic = 0; ic < cin; ++ic)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* irow = &din[(static_cast<size_t>(ic) * h + iy) * w];
                        const double* krow =
                            &dk[((static_cast<size_t>(oc) * cin + ic) * kh + ky) * kw];
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += irow[ix] * krow[kx];
                        }
                    }
                out[(static_cast<size_t>(oc) * oh + oy) * ow + ox] = acc;
            }
    Tensor iv = input, kv = kernels;
    return make_node(
        {cout, oh, ow}, std::move(out), {input, kernels},
        [iv, kv, cin, h, w, cout, kh, kw, oh, ow, stride, padding](TensorImpl& self) {
            auto& gi = iv.impl()->grad_buffer();
            auto& gk = kv.impl()->grad_buffer();
            const auto& din = iv.data();
            const auto& dk = kv.data();
            const auto& g = self.grad;
            for (int oc = 0; oc < cout; ++oc)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const double gv = g[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
                        if (gv == 0.0) continue;
                        const int iy0 = oy * stride - padding;
                        const int ix0 = ox * stride - padding;
                        for (int ic = 0; ic < cin; ++ic)
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = iy0 + ky;
                                if (iy < 0 || iy >= h) continue;
                                const size_t ibase = (static_cast<size_t>(ic) * h + iy) * w;
                                const size_t kbase =
                                    ((static_cast<size_t>(oc) * cin + ic) * kh + ky) * kw;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = ix0 + kx;
                                    if (ix < 0 || ix >= w) continue;
                                    gi[ibase + ix] += gv * dk[kbase + kx];
                                    gk[kbase + kx] += gv * din[ibase + ix];
                                }
                            }
                    }
        });
}

Tensor conv1d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (input.ndim() != 2)
        throw ShapeError("conv1d input must be [C,L], got " + shape_str(input.shape()));
    if (kernels.ndim() != 3)
        throw ShapeError("conv1d kernels must be [Cout,Cin,k], got " +
                         shape_str(kernels.shape()));
    const int cin = input.shape()[0], l = input.shape()[1];
    const int cout = kernels.shape()[0], kcin = kernels.shape()[1], k = kernels.shape()[2];
    if (cin != kcin)
        throw ShapeError("conv1d channel mismatch: input " + shape_str(input.shape()) +
                         " vs kernels " + shape_str(kernels.shape()));
    if (stride < 1) throw DomainError("conv1d stride must be positive");
    if (padding < 0) throw DomainError("conv1d padding must be non-negative");
    if (l + 2 * padding < k)
        throw ShapeError("conv1d kernel " + shape_str(kernels.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
    const int ol = (l + 2 * padding - k) / stride + 1;
    std::vector<double> out(static_cast<size_t>(cout) * ol, 0.0);
    const auto& din = input.data();
    const auto& dk = kernels.data();
    for (int oc = 0; oc < cout; ++oc)
        for (int ox = 0; ox < ol; ++ox) {
            double acc = 0.0;
            const int ix0 = ox * stride - padding;
            for (int ic = 0; ic < cin; ++ic)
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= l) continue;
                    acc += din[static_cast<size_t>(ic) * l + ix] *
                           dk[(static_cast<size_t>(oc) * cin + ic) * k + kx];
                }
            out[static_cast<size_t>(oc) * ol + ox] = acc;
        }
    Tensor iv = input, kv = kernels;
    return make_node({cout, ol}, std::move(out), {input, kernels},
                     [iv, kv, cin, l, cout, k, ol, stride, padding](TensorImpl& self) {
                         auto& gi = iv.impl()->grad_buffer();
                         auto& gk = kv.impl()->grad_buffer();
                         const auto& din = iv.data();
                         const auto& dk = kv.data();
                         const auto& g = self.grad;
                         for (int oc = 0; oc < cout; ++oc)
                             for (int ox = 0; ox < ol; ++ox) {
                                 const double gv = g[static_cast<size_t>(oc) * ol + ox];
                                 if (gv == 0.0) continue;
                                 const int ix0 = ox * stride - padding;
                                 for (int ic = 0; ic < cin; ++ic)
                                     for (int kx = 0; kx < k; ++kx) {
                                         const int ix = ix0 + kx;
                                         if (ix < 0 || ix >= l) continue;
                                         const size_t ii = static_cast<size_t>(ic) * l + ix;
                                         const size_t ki =
                                             (static_cast<size_t>(oc) * cin + ic) * k + kx;
                                         gi[ii] += gv * dk[ki];
                                         gk[ki] += gv * din[ii];
                                     }
                             }
                     });
}

Tensor softmax(const Tensor& t, int axis, double temperature) {
    if (temperature <= 0) throw DomainError("softmax temperature must be positive");
    if (axis < 0) axis += t.ndim();
    if (axis < 0 || axis >= t.ndim())
        throw ShapeError("softmax axis out of range for " + shape_str(t.shape()));
    const auto& shape = t.shape();
    const int n = shape[axis];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (int i = axis + 1; i < t.ndim(); ++i) inner *= shape[i];
    std::vector<double> out(t.data().size());
    const auto& d = t.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * n * inner + in;
            double mx = -1e300;
            for (int i = 0; i < n; ++i) mx = std::max(mx, d[base + i * inner]);
            double z = 0.0;
            for (int i = 0; i < n; ++i) {
                const double e = std::exp((d[base + i * inner] - mx) / temperature);
                out[base + i * inner] = e;
                z += e;
            }
            for (int i = 0; i < n; ++i) out[base + i * inner] /= z;
        }
    Tensor tv = t;
    return make_node(shape, std::move(out), {t},
                     [tv, outer, inner, n, temperature](TensorImpl& self) {
                         auto& gt = tv.impl()->grad_buffer();
                         const auto& s = self.data;
                         const auto& g = self.grad;
                         for (std::int64_t o = 0; o < outer; ++o)
                             for (std::int64_t in = 0; in < inner; ++in) {
                                 const std::int64_t base = o * n * inner + in;
                                 double dot = 0.0;
                                 for (int i = 0; i < n; ++i)
                                     dot += g[base + i * inner] * s[base + i * inner];
                                 for (int i = 0; i < n; ++i) {
                                     const std::int64_t k = base + i * inner;
                                     gt[k] += s[k] * (g[k] - dot) / temperature;
                                 }
                             }
                     });
}

Tensor l2_normalize(const Tensor& t, int axis, double epsilon) {
    if (epsilon <= 0) throw DomainError("l2_normalize epsilon must be positive");
    if (axis < 0) axis += t.ndim();
    if (axis < 0 || axis >= t.ndim())
        throw ShapeError("l2_normalize axis out of range for " + shape_str(t.shape()));
    const auto& shape = t.shape();
    const int n = shape[axis];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (int i = axis + 1; i < t.ndim(); ++i) inner *= shape[i];
    std::vector<double> out(t.data().size());
    std::vector<double> norms(static_cast<size_t>(outer * inner));
    const auto& d = t.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * n * inner + in;
            double sq = 0.0;
            for (int i = 0; i < n; ++i) sq += d[base + i * inner] * d[base + i * inner];
            const double norm = std::sqrt(sq);
            const double denom = norm < epsilon ? epsilon : norm;
            norms[o * inner + in] = denom;
            for (int i = 0; i < n; ++i) out[base + i * inner] = d[base + i * inner] / denom;
        }
    Tensor tv = t;
    return make_node(shape, std::move(out), {t},
                     [tv, outer, inner, n, norms, epsilon](TensorImpl& self) {
                         auto& gt = tv.impl()->grad_buffer();
                         const auto& y = self.data;
                         const auto& g = self.grad;
                         const auto& d = tv.data();
                         for (std::int64_t o = 0; o < outer; ++o)
                             for (std::int64_t in = 0; in < inner; ++in) {
                                 const std::int64_t base = o * n * inner + in;
                                 const double denom = norms[o * inner + in];
                                 double sq = 0.0;
                                 for (int i = 0; i < n; ++i)
                                     sq += d[base + i * inner] * d[base + i * inner];
                                 const bool clipped = std::sqrt(sq) < epsilon;
                                 if (clipped) {
                                     for (int i = 0; i < n; ++i)
                                         gt[base + i * inner] += g[base + i * inner] / denom;
                                 } else {
                                     double dot = 0.0;
                                     for (int i = 0; i < n; ++i)
                                         dot += g[base + i * inner] * y[base + i * inner];
                                     for (int i = 0; i < n; ++i) {
                                         const std::int64_t k = base + i * inner;
                                         gt[k] += (g[k] - y[k] * dot) / denom;
                                     }
                                 }
                             }
                     });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape())
        throw ShapeError("bce_with_logits shape mismatch: " + shape_str(logits.shape()) +
                         " vs " + shape_str(targets.shape()));
    const auto& x = logits.data();
    const auto& y = targets.data();
    const double n = static_cast<double>(x.size());
    double total = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        if (y[i] < 0.0 || y[i] > 1.0)
            throw DomainError("bce_with_logits target " + std::to_string(y[i]) +
                              " outside [0,1]");
        total += std::max(x[i], 0.0) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
    }
    Tensor lv = logits, tv = targets;
    return make_node({1}, {total / n}, {logits}, [lv, tv, n](TensorImpl& self) {
        auto& gl = lv.impl()->grad_buffer();
        const auto& x = lv.data();
        const auto& y = tv.data();
        const double g = self.grad[0];
        for (size_t i = 0; i < gl.size(); ++i) {
            const double s = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                       : std::exp(x[i]) / (1.0 + std::exp(x[i]));
            gl[i] += g * (s - y[i]) / n;
        }
    });
}

Tensor sum(const Tensor& t) {
    double total = 0.0;
    for (double v : t.data()) total += v;
    Tensor tv = t;
    return make_node({1}, {total}, {t}, [tv](TensorImpl& self) {
        auto& g = tv.impl()->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor scale(const Tensor& t, double c) {
    std::vector<double> out(t.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = t.data()[i] * c;
    Tensor tv = t;
    return make_node(t.shape(), std::move(out), {t}, [tv, c](TensorImpl& self) {
        auto& g = tv.impl()->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    });
}

Tensor add_const(const Tensor& t, double c) {
    std::vector<double> out(t.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = t.data()[i] + c;
    Tensor tv = t;
    return make_node(t.shape(), std::move(out), {t}, [tv](TensorImpl& self) {
        auto& g = tv.impl()->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor reshape(const Tensor& t, Shape new_shape) {
    if (numel(new_shape) != t.size())
        throw ShapeError("reshape " + shape_str(t.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
    Tensor tv = t;
    return make_node(std::move(new_shape), t.data(), {t}, [tv](TensorImpl& self) {
        auto& g = tv.impl()->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& t) {
    if (t.ndim() != 2) throw ShapeError("transpose expects 2-D, got " + shape_str(t.shape()));
    const int m = t.shape()[0], n = t.shape()[1];
    std::vector<double> out(t.data().size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(j) * m + i] = t.data()[static_cast<size_t>(i) * n + j];
    Tensor tv = t;
    return make_node({n, m}, std::move(out), {t}, [tv, m, n](TensorImpl& self) {
        auto& g = tv.impl()->grad_buffer();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const int nd = parts[0].ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("concat axis out of range");
    Shape out_shape = parts[0].shape();
    int cat = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd) throw ShapeError("concat rank mismatch");
        for (int d = 0; d < nd; ++d)
            if (d != axis && p.shape()[d] != out_shape[d])
                throw ShapeError("concat shape mismatch: " + shape_str(out_shape) + " vs " +
                                 shape_str(p.shape()));
        cat += p.shape()[axis];
    }
    out_shape[axis] = cat;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < nd; ++i) inner *= out_shape[i];
    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t pn = p.shape()[axis];
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(p.data().begin() + o * pn * inner, p.data().begin() + (o + 1) * pn * inner,
                      out.begin() + (o * cat + offset) * inner);
        offset += pn;
    }
    std::vector<Tensor> held = parts;
    return make_node(out_shape, std::move(out), parts,
                     [held, outer, inner, cat](TensorImpl& self) {
                         std::int64_t offset = 0;
                         for (const auto& p : held) {
                             auto& g = p.impl()->grad_buffer();
                             const std::int64_t an = static_cast<std::int64_t>(g.size()) /
                                                     (outer * inner);
                             for (std::int64_t o = 0; o < outer; ++o)
                                 for (std::int64_t i = 0; i < an * inner; ++i)
                                     g[o * an * inner + i] +=
                                         self.grad[(o * cat + offset) * inner + i];
                             offset += an;
                         }
                     });
}

Tensor slice(const Tensor& t, int axis, int start, int len) {
    const int nd = t.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("slice axis out of range");
    if (start < 0 || len <= 0 || start + len > t.shape()[axis])
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(t.shape()));
    Shape out_shape = t.shape();
    out_shape[axis] = len;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= t.shape()[i];
    for (int i = axis + 1; i < nd; ++i) inner *= t.shape()[i];
    const std::int64_t n = t.shape()[axis];
    std::vector<double> out(static_cast<size_t>(outer) * len * inner);
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(t.data().begin() + (o * n + start) * inner,
                  t.data().begin() + (o * n + start + len) * inner,
                  out.begin() + o * len * inner);
    Tensor tv = t;
    return make_node(out_shape, std::move(out), {t},
                     [tv, outer, inner, n, start, len](TensorImpl& self) {
                         auto& g = tv.impl()->grad_buffer();
                         for (std::int64_t o = 0; o < outer; ++o)
                             for (std::int64_t i = 0; i < len * inner; ++i)
                                 g[(o * n + start) * inner + i] += self.grad[o * len * inner + i];
                     });
}

Tensor upsample2x_nearest(const Tensor& t) {
    if (t.ndim() != 3)
        throw ShapeError("upsample2x_nearest expects [C,H,W], got " + shape_str(t.shape()));
    const int c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
    std::vector<double> out(static_cast<size_t>(c) * 4 * h * w);
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
                out[(static_cast<size_t>(ic) * 2 * h + y) * 2 * w + x] =
                    t.data()[(static_cast<size_t>(ic) * h + y / 2) * w + x / 2];
    Tensor tv = t;
    return make_node({c, 2 * h, 2 * w}, std::move(out), {t}, [tv, c, h, w](TensorImpl& self) {
        auto& g = tv.impl()->grad_buffer();
        for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < 2 * h; ++y)
                for (int x = 0; x < 2 * w; ++x)
                    g[(static_cast<size_t>(ic) * h + y / 2) * w + x / 2] +=
                        self.grad[(static_cast<size_t>(ic) * 2 * h + y) * 2 * w + x];
    });
}

namespace {

// flat index mapping shared by grid_to_patches / patches_to_grid
inline size_t patch_src_index(int n, int j, int gw, int patch, int w) {
    const int gy = n / gw, gx = n % gw;
    const int py = j / patch, px = j % patch;
    return static_cast<size_t>(gy * patch + py) * w + gx * patch + px;
}

}  // namespace

Tensor grid_to_patches(const Tensor& t, int patch) {
    if (t.ndim() != 2) throw ShapeError("grid_to_patches expects [H,W]");
    const int h = t.shape()[0], w = t.shape()[1];
    if (patch < 1 || h % patch != 0 || w % patch != 0)
        throw ShapeError("grid_to_patches: " + shape_str(t.shape()) +
                         " not divisible into " + std::to_string(patch) + "-pixel patches");
    const int gh = h / patch, gw = w / patch;
    const int n = gh * gw, pp = patch * patch;
    std::vector<double> out(static_cast<size_t>(n) * pp);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < pp; ++j)
            out[static_cast<size_t>(i) * pp + j] = t.data()[patch_src_index(i, j, gw, patch, w)];
    Tensor tv = t;
    return make_node({n, pp}, std::move(out), {t}, [tv, gw, patch, w, n, pp](TensorImpl& self) {
        auto& g = tv.impl()->grad_buffer();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < pp; ++j)
                g[patch_src_index(i, j, gw, patch, w)] += self.grad[static_cast<size_t>(i) * pp + j];
    });
}

Tensor patches_to_grid(const Tensor& t, int grid_h, int grid_w, int patch) {
    if (t.ndim() != 2) throw ShapeError("patches_to_grid expects [N, patch^2]");
    const int n = t.shape()[0], pp = t.shape()[1];
    if (n != grid_h * grid_w || pp != patch * patch)
        throw ShapeError("patches_to_grid: " + shape_str(t.shape()) + " does not match a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid of " +
                         std::to_string(patch) + "-pixel patches");
    const int h = grid_h * patch, w = grid_w * patch;
    std::vector<double> out(static_cast<size_t>(h) * w);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < pp; ++j)
            out[patch_src_index(i, j, grid_w, patch, w)] = t.data()[static_cast<size_t>(i) * pp + j];
    Tensor tv = t;
    return make_node({h, w}, std::move(out), {t}, [tv, grid_w, patch, w, n, pp](TensorImpl& self) {
        auto& g = tv.impl()->grad_buffer();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < pp; ++j)
                g[static_cast<size_t>(i) * pp + j] += self.grad[patch_src_index(i, j, grid_w, patch, w)];
    });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.ndim() != 2) throw ShapeError("layer_norm_rows expects [N,D]");
    const int n = x.shape()[0], d = x.shape()[1];
    if (gain.size() != d || bias.size() != d)
        throw ShapeError("layer_norm_rows gain/bias must have length D=" + std::to_string(d));
    std::vector<double> out(x.data().size());
    std::vector<double> means(n), invstd(n);
    const auto& xd = x.data();
    for (int i = 0; i < n; ++i) {
        double m = 0.0;
        for (int j = 0; j < d; ++j) m += xd[static_cast<size_t>(i) * d + j];
        m /= d;
        double v = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xd[static_cast<size_t>(i) * d + j] - m;
            v += c * c;
        }
        v /= d;
        means[i] = m;
        invstd[i] = 1.0 / std::sqrt(v + eps);
        for (int j = 0; j < d; ++j)
            out[static_cast<size_t>(i) * d + j] =
                (xd[static_cast<size_t>(i) * d + j] - m) * invstd[i] * gain.data()[j] +
                bias.data()[j];
    }
    Tensor xv = x, gv = gain, bv = bias;
    return make_node({n, d}, std::move(out), {x, gain, bias},
                     [xv, gv, bv, n, d, means, invstd](TensorImpl& self) {
                         auto& gx = xv.impl()->grad_buffer();
                         auto& gg = gv.impl()->grad_buffer();
                         auto& gb = bv.impl()->grad_buffer();
                         const auto& xd = xv.data();
                         const auto& gd = gv.data();
                         const auto& g = self.grad;
                         for (int i = 0; i < n; ++i) {
                             const double is = invstd[i];
                             double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                             for (int j = 0; j < d; ++j) {
                                 const size_t k = static_cast<size_t>(i) * d + j;
                                 const double xhat = (xd[k] - means[i]) * is;
                                 const double dxhat = g[k] * gd[j];
                                 sum_dxhat += dxhat;
                                 sum_dxhat_xhat += dxhat * xhat;
                                 gg[j] += g[k] * xhat;
                                 gb[j] += g[k];
                             }
                             for (int j = 0; j < d; ++j) {
                                 const size_t k = static_cast<size_t>(i) * d + j;
                                 const double xhat = (xd[k] - means[i]) * is;
                                 const double dxhat = g[k] * gd[j];
                                 gx[k] += is * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
                             }
                         }
                     });
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward requires a scalar loss tensor");
    // Topological order by iterative DFS.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImpl* node;
        size_t next;
    };
    std::vector<Frame> stack{{loss.impl().get(), 0}};
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            TensorImpl* p = f.node->parents[f.next++].get();
            if (p->in_graph && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    auto* root = loss.impl().get();
    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

}  // namespace segfuse
