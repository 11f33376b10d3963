#include "crisisfuse/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace crisisfuse {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using RowVecMap = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using ConstRowVecMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <typename T>
void ensure_finite(const Buffer<T>& values, const char* op)
{
    for (const T v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": forward produced a non-finite value");
        }
    }
}

/// Wraps a computed output in a node. The backward rule and the input links
/// are only kept when some input needs a gradient.
template <typename T>
Tensor<T> record(const char* op, Shape shape, Buffer<T> data, std::initializer_list<const Tensor<T>*> inputs,
                 std::function<void(Node<T>&)> rule)
{
    ensure_finite(data, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs_grad = false;
    for (const auto* in : inputs) {
        needs_grad = needs_grad || in->requires_grad();
    }
    if (needs_grad) {
        node->requires_grad = true;
        for (const auto* in : inputs) {
            node->inputs.push_back(in->node_ptr());
        }
        node->backward = std::move(rule);
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* name)
{
    if (!t.defined()) {
        throw ContractError(std::string(op) + ": " + name + " is undefined");
    }
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got " +
                             shape_to_string(t.shape()));
    }
}

template <typename T>
void im2col3x3(const T* image, std::size_t channels, std::size_t height, std::size_t width, T* cols)
{
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        const T* src_plane = image + c * plane;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                T* row = cols + ((c * 9 + ky * 3 + kx) * plane);
                for (std::size_t y = 0; y < height; ++y) {
                    T* dst = row + y * width;
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(dst, dst + width, T(0));
                        continue;
                    }
                    const T* src = src_plane + static_cast<std::size_t>(iy) * width;
                    if (kx == 1) {
                        std::copy(src, src + width, dst);
                    } else if (kx == 0) {
                        dst[0] = T(0);
                        std::copy(src, src + width - 1, dst + 1);
                    } else {
                        std::copy(src + 1, src + width, dst);
                        dst[width - 1] = T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im3x3_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width, T* image)
{
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        T* dst_plane = image + c * plane;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const T* row = cols + ((c * 9 + ky * 3 + kx) * plane);
                for (std::size_t y = 0; y < height; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        continue;
                    }
                    const T* src = row + y * width;
                    T* dst = dst_plane + static_cast<std::size_t>(iy) * width;
                    if (kx == 1) {
                        for (std::size_t x = 0; x < width; ++x) dst[x] += src[x];
                    } else if (kx == 0) {
                        for (std::size_t x = 1; x < width; ++x) dst[x - 1] += src[x];
                    } else {
                        for (std::size_t x = 0; x + 1 < width; ++x) dst[x + 1] += src[x];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    require_rank(x, 2, "dense", "x");
    require_rank(weight, 2, "dense", "W");
    require_rank(bias, 1, "dense", "b");
    if (x.dim(1) != weight.dim(0) || bias.dim(0) != weight.dim(1)) {
        throw DimensionError("dense: x " + shape_to_string(x.shape()) + " incompatible with W " +
                             shape_to_string(weight.shape()) + " and b " + shape_to_string(bias.shape()));
    }
    const std::size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(1);
    Buffer<T> y(batch * out);
    MatMap<T> ym(y.data(), batch, out);
    ym.noalias() = ConstMatMap<T>(x.data().data(), batch, in) * ConstMatMap<T>(weight.data().data(), in, out);
    ym.rowwise() += ConstRowVecMap<T>(bias.data().data(), out);

    return record<T>("dense", {batch, out}, std::move(y), {&x, &weight, &bias}, [batch, in, out](Node<T>& self) {
        ConstMatMap<T> dy(self.grad.data(), batch, out);
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        if (xn.requires_grad) {
            MatMap<T>(xn.grad_buffer().data(), batch, in).noalias() +=
                dy * ConstMatMap<T>(wn.data.data(), in, out).transpose();
        }
        if (wn.requires_grad) {
            MatMap<T>(wn.grad_buffer().data(), in, out).noalias() +=
                ConstMatMap<T>(xn.data.data(), batch, in).transpose() * dy;
        }
        if (bn.requires_grad) {
            RowVecMap<T>(bn.grad_buffer().data(), out) += dy.colwise().sum();
        }
    });
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias)
{
    require_rank(x, 3, "conv1d", "x");
    require_rank(kernels, 3, "conv1d", "kernels");
    require_rank(bias, 1, "conv1d", "bias");
    const std::size_t batch = x.dim(0), length = x.dim(1), depth = x.dim(2);
    const std::size_t filters = kernels.dim(0), window = kernels.dim(1);
    if (kernels.dim(2) != depth || bias.dim(0) != filters) {
        throw DimensionError("conv1d: x " + shape_to_string(x.shape()) + " incompatible with kernels " +
                             shape_to_string(kernels.shape()) + " and bias " + shape_to_string(bias.shape()));
    }
    if (length < window) {
        throw DimensionError("conv1d: sequence too short (L=" + std::to_string(length) +
                             " < W=" + std::to_string(window) + ")");
    }
    const std::size_t out_len = length - window + 1;
    const std::size_t patch = window * depth;
    using Strided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

    Buffer<T> y(batch * out_len * filters);
    ConstMatMap<T> k(kernels.data().data(), filters, patch);
    ConstRowVecMap<T> b(bias.data().data(), filters);
    for (std::size_t n = 0; n < batch; ++n) {
        // Window t is the contiguous slice x[n, t:t+W, :], so rows overlap with stride D.
        Strided cols(x.data().data() + n * length * depth, out_len, patch, Eigen::OuterStride<>(depth));
        MatMap<T> yn(y.data() + n * out_len * filters, out_len, filters);
        yn.noalias() = cols * k.transpose();
        yn.rowwise() += b;
    }

    return record<T>(
        "conv1d", {batch, out_len, filters}, std::move(y), {&x, &kernels, &bias},
        [batch, length, depth, filters, out_len, patch](Node<T>& self) {
            auto& xn = *self.inputs[0];
            auto& kn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            ConstMatMap<T> k(kn.data.data(), filters, patch);
            RowMat<T> dcols;
            for (std::size_t n = 0; n < batch; ++n) {
                ConstMatMap<T> dy(self.grad.data() + n * out_len * filters, out_len, filters);
                Strided cols(xn.data.data() + n * length * depth, out_len, patch, Eigen::OuterStride<>(depth));
                if (kn.requires_grad) {
                    MatMap<T>(kn.grad_buffer().data(), filters, patch).noalias() += dy.transpose() * cols;
                }
                if (bn.requires_grad) {
                    RowVecMap<T>(bn.grad_buffer().data(), filters) += dy.colwise().sum();
                }
                if (xn.requires_grad) {
                    dcols.noalias() = dy * k;
                    T* dx = xn.grad_buffer().data() + n * length * depth;
                    for (std::size_t t = 0; t < out_len; ++t) {
                        const T* src = dcols.data() + t * patch;
                        T* dst = dx + t * depth;
                        for (std::size_t j = 0; j < patch; ++j) {
                            dst[j] += src[j];
                        }
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& x, std::size_t pool_len)
{
    require_rank(x, 3, "maxpool1d", "x");
    if (pool_len == 0) {
        throw ParameterError("maxpool1d: pool_len must be >= 1");
    }
    const std::size_t batch = x.dim(0), length = x.dim(1), features = x.dim(2);
    if (pool_len > length) {
        throw DimensionError("maxpool1d: pool_len " + std::to_string(pool_len) + " exceeds length " +
                             std::to_string(length) + ", output would be empty");
    }
    const std::size_t out_len = length / pool_len;
    Buffer<T> y(batch * out_len * features);
    std::vector<std::size_t> argmax(y.size());
    const T* in = x.data().data();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < out_len; ++o) {
            for (std::size_t f = 0; f < features; ++f) {
                std::size_t best = (n * length + o * pool_len) * features + f;
                for (std::size_t j = 1; j < pool_len; ++j) {
                    const std::size_t idx = (n * length + o * pool_len + j) * features + f;
                    if (in[idx] > in[best]) {
                        best = idx;
                    }
                }
                const std::size_t out_idx = (n * out_len + o) * features + f;
                y[out_idx] = in[best];
                argmax[out_idx] = best;
            }
        }
    }
    return record<T>("maxpool1d", {batch, out_len, features}, std::move(y), {&x},
                     [argmax = std::move(argmax)](Node<T>& self) {
                         auto& g = self.inputs[0]->grad_buffer();
                         for (std::size_t i = 0; i < argmax.size(); ++i) {
                             g[argmax[i]] += self.grad[i];
                         }
                     });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias)
{
    require_rank(x, 4, "conv2d", "x");
    require_rank(kernels, 4, "conv2d", "kernels");
    require_rank(bias, 1, "conv2d", "bias");
    const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
    const std::size_t filters = kernels.dim(0);
    if (kernels.dim(1) != channels || kernels.dim(2) != 3 || kernels.dim(3) != 3 || bias.dim(0) != filters) {
        throw DimensionError("conv2d: x " + shape_to_string(x.shape()) + " incompatible with kernels " +
                             shape_to_string(kernels.shape()) + " and bias " + shape_to_string(bias.shape()));
    }
    const std::size_t plane = height * width;
    const std::size_t patch = channels * 9;
    Buffer<T> y(batch * filters * plane);
    Buffer<T> cols(patch * plane);
    ConstMatMap<T> k(kernels.data().data(), filters, patch);
    const T* b = bias.data().data();
    for (std::size_t n = 0; n < batch; ++n) {
        im2col3x3(x.data().data() + n * channels * plane, channels, height, width, cols.data());
        MatMap<T> yn(y.data() + n * filters * plane, filters, plane);
        yn.noalias() = k * ConstMatMap<T>(cols.data(), patch, plane);
        for (std::size_t f = 0; f < filters; ++f) {
            yn.row(f).array() += b[f];
        }
    }
    return record<T>(
        "conv2d", {batch, filters, height, width}, std::move(y), {&x, &kernels, &bias},
        [batch, channels, height, width, filters, plane, patch](Node<T>& self) {
            auto& xn = *self.inputs[0];
            auto& kn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            ConstMatMap<T> k(kn.data.data(), filters, patch);
            Buffer<T> cols(patch * plane);
            RowMat<T> dcols;
            for (std::size_t n = 0; n < batch; ++n) {
                ConstMatMap<T> dy(self.grad.data() + n * filters * plane, filters, plane);
                if (bn.requires_grad) {
                    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bn.grad_buffer().data(), filters) +=
                        dy.rowwise().sum();
                }
                if (kn.requires_grad) {
                    im2col3x3(xn.data.data() + n * channels * plane, channels, height, width, cols.data());
                    MatMap<T>(kn.grad_buffer().data(), filters, patch).noalias() +=
                        dy * ConstMatMap<T>(cols.data(), patch, plane).transpose();
                }
                if (xn.requires_grad) {
                    dcols.noalias() = k.transpose() * dy;
                    col2im3x3_add(dcols.data(), channels, height, width,
                                  xn.grad_buffer().data() + n * channels * plane);
                }
            }
        });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x)
{
    require_rank(x, 4, "maxpool2d", "x");
    const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
    if (height % 2 != 0 || width % 2 != 0) {
        throw DimensionError("maxpool2d: spatial size " + std::to_string(height) + "x" + std::to_string(width) +
                             " must be even");
    }
    const std::size_t oh = height / 2, ow = width / 2;
    Buffer<T> y(batch * channels * oh * ow);
    std::vector<std::size_t> argmax(y.size());
    const T* in = x.data().data();
    std::size_t out_idx = 0;
    for (std::size_t plane = 0; plane < batch * channels; ++plane) {
        const std::size_t base = plane * height * width;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++out_idx) {
                const std::size_t top = base + (2 * oy) * width + 2 * ox;
                const std::size_t candidates[4] = {top, top + 1, top + width, top + width + 1};
                std::size_t best = candidates[0];
                for (int c = 1; c < 4; ++c) {
                    if (in[candidates[c]] > in[best]) {
                        best = candidates[c];
                    }
                }
                y[out_idx] = in[best];
                argmax[out_idx] = best;
            }
        }
    }
    return record<T>("maxpool2d", {batch, channels, oh, ow}, std::move(y), {&x},
                     [argmax = std::move(argmax)](Node<T>& self) {
                         auto& g = self.inputs[0]->grad_buffer();
                         for (std::size_t i = 0; i < argmax.size(); ++i) {
                             g[argmax[i]] += self.grad[i];
                         }
                     });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x)
{
    Buffer<T> y(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = in[i] > T(0) ? in[i] : T(0);
    }
    return record<T>("relu", x.shape(), std::move(y), {&x}, [](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& g = xn.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
#ifdef CRISISFUSE_FAULT_RELU_SIGN
            if (xn.data[i] > T(0)) g[i] -= self.grad[i];
#else
            if (xn.data[i] > T(0)) g[i] += self.grad[i];
#endif
        }
    });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng)
{
    if (!(rate >= 0.0) || rate >= 1.0) {
        throw ParameterError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) {
        return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Buffer<T> mask(x.numel());
    Buffer<T> y(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
        y[i] = in[i] * mask[i];
    }
    return record<T>("dropout", x.shape(), std::move(y), {&x}, [mask = std::move(mask)](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * mask[i];
        }
    });
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                    bool training, BatchNormOptions options)
{
    require_rank(x, 2, "batchnorm", "x");
    require_rank(gamma, 1, "batchnorm", "gamma");
    require_rank(beta, 1, "batchnorm", "beta");
    const std::size_t batch = x.dim(0), features = x.dim(1);
    if (gamma.dim(0) != features || beta.dim(0) != features || state.running_mean.numel() != features ||
        state.running_var.numel() != features) {
        throw DimensionError("batchnorm: x " + shape_to_string(x.shape()) + " incompatible with gamma " +
                             shape_to_string(gamma.shape()) + " / running statistics of width " +
                             std::to_string(state.running_mean.numel()));
    }
    if (training && batch < 2) {
        throw DimensionError("batchnorm: batch of " + std::to_string(batch) + " is too small in training mode");
    }
    const T eps = static_cast<T>(options.eps);
    const T momentum = static_cast<T>(options.momentum);
    const auto in = x.data();
    const auto g = gamma.data();
    const auto b = beta.data();

    Buffer<T> inv_std(features);
    Buffer<T> xhat(batch * features);
    if (training) {
        auto rm = state.running_mean.data();
        auto rv = state.running_var.data();
        for (std::size_t f = 0; f < features; ++f) {
            T mean = 0;
            for (std::size_t n = 0; n < batch; ++n) mean += in[n * features + f];
            mean /= static_cast<T>(batch);
            T var = 0;
            for (std::size_t n = 0; n < batch; ++n) {
                const T d = in[n * features + f] - mean;
                var += d * d;
            }
            var /= static_cast<T>(batch);
            inv_std[f] = T(1) / std::sqrt(var + eps);
            for (std::size_t n = 0; n < batch; ++n) {
                xhat[n * features + f] = (in[n * features + f] - mean) * inv_std[f];
            }
            rm[f] = (T(1) - momentum) * rm[f] + momentum * mean;
            rv[f] = (T(1) - momentum) * rv[f] + momentum * var;
        }
    } else {
        const auto rm = state.running_mean.data();
        const auto rv = state.running_var.data();
        for (std::size_t f = 0; f < features; ++f) {
            inv_std[f] = T(1) / std::sqrt(rv[f] + eps);
            for (std::size_t n = 0; n < batch; ++n) {
                xhat[n * features + f] = (in[n * features + f] - rm[f]) * inv_std[f];
            }
        }
    }
    Buffer<T> y(batch * features);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t f = 0; f < features; ++f) {
            y[n * features + f] = g[f] * xhat[n * features + f] + b[f];
        }
    }
    return record<T>(
        "batchnorm", {batch, features}, std::move(y), {&x, &gamma, &beta},
        [batch, features, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            auto& xn = *self.inputs[0];
            auto& gn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            const auto& dy = self.grad;
            Buffer<T> sum_dy(features, T(0)), sum_dy_xhat(features, T(0));
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t f = 0; f < features; ++f) {
                    sum_dy[f] += dy[n * features + f];
                    sum_dy_xhat[f] += dy[n * features + f] * xhat[n * features + f];
                }
            }
            if (gn.requires_grad) {
                auto& gg = gn.grad_buffer();
                for (std::size_t f = 0; f < features; ++f) gg[f] += sum_dy_xhat[f];
            }
            if (bn.requires_grad) {
                auto& bg = bn.grad_buffer();
                for (std::size_t f = 0; f < features; ++f) bg[f] += sum_dy[f];
            }
            if (!xn.requires_grad) {
                return;
            }
            auto& dx = xn.grad_buffer();
            const auto& gamma_v = gn.data;
            const T count = static_cast<T>(batch);
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t f = 0; f < features; ++f) {
                    const std::size_t i = n * features + f;
                    if (training) {
                        // dxhat = dy * gamma; batch statistics depend on x as well.
                        dx[i] += gamma_v[f] * inv_std[f] / count *
                                 (count * dy[i] - sum_dy[f] - xhat[i] * sum_dy_xhat[f]);
                    } else {
                        dx[i] += dy[i] * gamma_v[f] * inv_std[f];
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts)
{
    if (parts.empty()) {
        throw DimensionError("concat: empty input list");
    }
    for (const auto& p : parts) {
        require_rank(p, 2, "concat", "part");
        if (p.dim(0) != parts.front().dim(0)) {
            throw DimensionError("concat: batch mismatch " + shape_to_string(parts.front().shape()) + " vs " +
                                 shape_to_string(p.shape()));
        }
    }
    if (parts.size() == 1) {
        return parts.front();
    }
    const std::size_t batch = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    Buffer<T> y(batch * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto in = p.data();
        const std::size_t w = p.dim(1);
        for (std::size_t n = 0; n < batch; ++n) {
            std::copy_n(in.data() + n * w, w, y.data() + n * total + offset);
        }
        offset += w;
    }

    // record() takes a fixed initializer list, so link the inputs by hand.
    ensure_finite(y, "concat");
    auto node = std::make_shared<Node<T>>();
    node->shape = {batch, total};
    node->data = std::move(y);
    node->op = "concat";
    const bool needs_grad = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
    if (needs_grad) {
        node->requires_grad = true;
        for (const auto& p : parts) {
            node->inputs.push_back(p.node_ptr());
        }
        node->backward = [batch, total, widths = std::move(widths)](Node<T>& self) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                auto& in = *self.inputs[k];
                const std::size_t w = widths[k];
                if (in.requires_grad) {
                    auto& g = in.grad_buffer();
                    for (std::size_t n = 0; n < batch; ++n) {
                        for (std::size_t j = 0; j < w; ++j) {
                            g[n * w + j] += self.grad[n * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        };
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end)
{
    require_rank(x, 2, "slice", "x");
    const std::size_t batch = x.dim(0), width = x.dim(1);
    if (begin >= end || end > width) {
        throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for width " + std::to_string(width));
    }
    const std::size_t w = end - begin;
    Buffer<T> y(batch * w);
    const auto in = x.data();
    for (std::size_t n = 0; n < batch; ++n) {
        std::copy_n(in.data() + n * width + begin, w, y.data() + n * w);
    }
    return record<T>("slice", {batch, w}, std::move(y), {&x}, [batch, width, begin, w](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t j = 0; j < w; ++j) {
                g[n * width + begin + j] += self.grad[n * w + j];
            }
        }
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape)
{
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
    }
    Buffer<T> y(x.data().begin(), x.data().end());
    return record<T>("reshape", std::move(shape), std::move(y), {&x}, [](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids, std::size_t batch, std::size_t length,
                    std::int32_t padding_index)
{
    require_rank(table, 2, "embedding", "table");
    if (ids.size() != batch * length) {
        throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids for a [" + std::to_string(batch) +
                             "," + std::to_string(length) + "] batch");
    }
    const std::size_t rows = table.dim(0), dim = table.dim(1);
    Buffer<T> y(batch * length * dim);
    const auto t = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= rows) {
            throw DimensionError("embedding: token index " + std::to_string(id) + " at position " + std::to_string(i) +
                                 " outside table of " + std::to_string(rows) + " rows");
        }
        // padding positions read as zeros whatever the stored row holds
        if (id != padding_index) std::copy_n(t.data() + static_cast<std::size_t>(id) * dim, dim, y.data() + i * dim);
    }
    std::vector<std::int32_t> kept(ids.begin(), ids.end());
    return record<T>("embedding", {batch, length, dim}, std::move(y), {&table},
                     [dim, padding_index, kept = std::move(kept)](Node<T>& self) {
                         auto& g = self.inputs[0]->grad_buffer();
                         for (std::size_t i = 0; i < kept.size(); ++i) {
                             if (kept[i] == padding_index) {
                                 continue;
                             }
                             T* dst = g.data() + static_cast<std::size_t>(kept[i]) * dim;
                             const T* src = self.grad.data() + i * dim;
                             for (std::size_t j = 0; j < dim; ++j) {
                                 dst[j] += src[j];
                             }
                         }
                     });
}

template <typename T>
Buffer<T> softmax_rows(const Tensor<T>& logits)
{
    require_rank(logits, 2, "softmax", "logits");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    Buffer<T> p(batch * classes);
    const auto z = logits.data();
    for (std::size_t n = 0; n < batch; ++n) {
        const T* row = z.data() + n * classes;
        const T top = *std::max_element(row, row + classes);
        T total = 0;
        for (std::size_t k = 0; k < classes; ++k) {
            p[n * classes + k] = std::exp(row[k] - top);
            total += p[n * classes + k];
        }
        for (std::size_t k = 0; k < classes; ++k) {
            p[n * classes + k] /= total;
        }
    }
    return p;
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels)
{
    require_rank(logits, 2, "softmax_cross_entropy", "logits");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(batch));
    }
    for (std::size_t n = 0; n < batch; ++n) {
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= classes) {
            throw LabelError("softmax_cross_entropy: label " + std::to_string(labels[n]) + " at index " +
                             std::to_string(n) + " outside [0," + std::to_string(classes) + ")");
        }
    }
    auto probs = softmax_rows(logits);
    const auto z = logits.data();
    // Accumulate the loss in double: log-sum-exp of max-shifted logits.
    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        const T* row = z.data() + n * classes;
        const T top = *std::max_element(row, row + classes);
        double lse = 0.0;
        for (std::size_t k = 0; k < classes; ++k) {
            lse += std::exp(static_cast<double>(row[k] - top));
        }
        total += std::log(lse) - static_cast<double>(row[labels[n]] - top);
    }
    Buffer<T> loss{static_cast<T>(total / static_cast<double>(batch))};
    std::vector<int> kept(labels.begin(), labels.end());
    Tensor<T> out = record<T>("softmax_cross_entropy", {1}, std::move(loss), {&logits},
                              [batch, classes, probs, kept = std::move(kept)](Node<T>& self) {
                                  auto& g = self.inputs[0]->grad_buffer();
                                  const T scale = self.grad[0] / static_cast<T>(batch);
                                  for (std::size_t n = 0; n < batch; ++n) {
                                      for (std::size_t k = 0; k < classes; ++k) {
                                          const T target = static_cast<int>(k) == kept[n] ? T(1) : T(0);
                                          g[n * classes + k] += scale * (probs[n * classes + k] - target);
                                      }
                                  }
                              });
    return {std::move(out), Tensor<T>(Shape{batch, classes}, std::move(probs))};
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x)
{
    T total = 0;
    for (const T v : x.data()) total += v;
    return record<T>("sum", {1}, {total}, {&x}, [](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x)
{
    T total = 0;
    for (const T v : x.data()) total += v * v;
    return record<T>("sum_squares", {1}, {total}, {&x}, [](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& g = xn.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * xn.data[i] * self.grad[0];
    });
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights)
{
    if (weights.size() != x.numel()) {
        throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for tensor " +
                             shape_to_string(x.shape()));
    }
    T total = 0;
    const auto in = x.data();
    for (std::size_t i = 0; i < in.size(); ++i) total += in[i] * weights[i];
    Buffer<T> w(weights.begin(), weights.end());
    return record<T>("weighted_sum", {1}, {total}, {&x}, [w = std::move(w)](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * self.grad[0];
    });
}

#define CRISISFUSE_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> conv1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> maxpool1d<T>(const Tensor<T>&, std::size_t);                                                \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> maxpool2d<T>(const Tensor<T>&);                                                             \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                                  \
    template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, Rng&);                                           \
    template Tensor<T> batchnorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, bool, \
                                    BatchNormOptions);                                                             \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&);                                                   \
    template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t);                                       \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                        \
    template Tensor<T> embedding<T>(const Tensor<T>&, std::span<const std::int32_t>, std::size_t, std::size_t,      \
                                    std::int32_t);                                                                 \
    template CrossEntropyResult<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);               \
    template Buffer<T> softmax_rows<T>(const Tensor<T>&);                                                     \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                                   \
    template Tensor<T> sum_squares<T>(const Tensor<T>&);                                                           \
    template Tensor<T> weighted_sum<T>(const Tensor<T>&, std::span<const T>);

CRISISFUSE_INSTANTIATE_OPS(float)
CRISISFUSE_INSTANTIATE_OPS(double)

}  // namespace crisisfuse
