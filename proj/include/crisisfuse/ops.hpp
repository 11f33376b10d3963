#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crisisfuse/rng.hpp"
#include "crisisfuse/tensor.hpp"

namespace crisisfuse {

/// x[B,I] * W[I,O] + b[O].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Valid 1-D convolution over the sequence axis: x[B,L,D], kernels[F,W,D],
/// bias[F] -> [B,L-W+1,F].
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias);

/// Non-overlapping max pooling over the sequence axis of x[B,L,F]. The trailing
/// L % pool_len positions are dropped.
template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& x, std::size_t pool_len);

/// 3x3, stride 1, zero-padding 1 cross-correlation: x[B,C,H,W] -> [B,F,H,W].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias);

/// 2x2 stride-2 max pooling; H and W must be even.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Inverted dropout. Identity (and no RNG draw) when !training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng);

/// Running statistics owned by a batch-norm layer. Stored as tensors so they
/// travel through checkpoints with the parameters.
template <typename T>
struct BatchNormState {
    Tensor<T> running_mean;
    Tensor<T> running_var;

    explicit BatchNormState(std::size_t features = 1)
        : running_mean(Shape{features}, T(0)), running_var(Shape{features}, T(1))
    {
    }
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
};

/// Batch normalization of x[B,F] using population variance. Training mode
/// normalizes by batch statistics and updates the running estimates.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                    bool training, BatchNormOptions options = {});

/// Feature-axis concatenation of rank-2 tensors.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);

/// Columns [begin, end) of x[B,D].
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Row lookup table[V,E] at ids (B*L, row-major) -> [B,L,E]. Positions holding
/// padding_index yield zeros and send no gradient to the table.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids, std::size_t batch, std::size_t length,
                    std::int32_t padding_index = 0);

template <typename T>
struct CrossEntropyResult {
    Tensor<T> loss;           // shape [1], mean over the batch
    Tensor<T> probabilities;  // [B,K], detached
};

/// Mean softmax cross-entropy of logits[B,K] against class ids.
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise softmax without recording a graph.
template <typename T>
Buffer<T> softmax_rows(const Tensor<T>& logits);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x);

/// sum_i x_i * weights_i with constant weights.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights);

}  // namespace crisisfuse
