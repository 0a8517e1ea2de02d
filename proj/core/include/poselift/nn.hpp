#pragma once

#include <cstdint>
#include <vector>

#include "poselift/rng.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

/// Geometry of one temporal convolution. The architecture never combines
/// dilation and stride in the same layer: dilation widens the inference-time
/// receptive field, stride implements the training-time single-frame variant.
struct Conv1dSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_width = 1;
    int dilation = 1;
    int stride = 1;
    /// Alignment flag: a causal layer's output frame t is a function of input
    /// frames <= t. The arithmetic of a valid (unpadded) convolution is the
    /// same either way; the flag drives residual slicing and padding upstream.
    bool causal = false;

    void validate() const;

    /// Frames consumed beyond the first tap: (W-1)*dilation.
    int64_t span() const {
        return static_cast<int64_t>(kernel_width - 1) * dilation;
    }

    /// Valid-convolution output length; throws on insufficient input.
    int64_t output_length(int64_t input_length) const;
};

/// Valid (unpadded) 1-D convolution.
///   out[n, co, t] = bias[co] + sum_{ci, k} w[co, ci, k] * in[n, ci, t*stride + k*dilation]
/// input [N, C_in, T], weights [C_out, C_in, W], bias [C_out] or empty.
/// Inner sums accumulate in double. When `madd_counter` is given, the number
/// of multiply-add operations performed is added to it.
Tensor conv1d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const Conv1dSpec& spec, uint64_t* madd_counter = nullptr);

struct Conv1dGrads {
    Tensor input;   // [N, C_in, T]
    Tensor weights; // [C_out, C_in, W]
    Tensor bias;    // [C_out]
};

/// Gradients of a scalar sum-reduction downstream of conv1d_forward.
Conv1dGrads conv1d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weights,
                            const Conv1dSpec& spec);

/// Per-channel batch-normalization parameters and running statistics.
struct BatchNormState {
    Tensor gamma;        // [C]
    Tensor beta;         // [C]
    Tensor running_mean; // [C]
    Tensor running_var;  // [C]
    float momentum = 0.1f; // update factor: new = (1-m)*old + m*batch
    float epsilon = 1e-5f;

    static BatchNormState make(int64_t channels);
    void validate(int64_t channels) const;
};

/// Saved intermediates of a training-mode forward, consumed by the backward.
struct BatchNormCache {
    Tensor xhat;                 // [N, C, T]
    std::vector<double> inv_std; // [C]
};

/// Training mode normalizes each channel over the N*T sample axis (population
/// variance) and updates running statistics with factor `momentum`; eval mode
/// normalizes with the running statistics. Output = gamma * xhat + beta.
Tensor batchnorm_forward(const Tensor& input, BatchNormState& state, bool training,
                         BatchNormCache* cache = nullptr);

/// Eval-mode forward that leaves the state untouched.
Tensor batchnorm_eval(const Tensor& input, const BatchNormState& state);

struct BatchNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

/// Backward of the training-mode forward, through the batch statistics.
BatchNormGrads batchnorm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                  const BatchNormState& state);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& grad_out, const Tensor& input);

/// Inverted-scaling dropout: kept activations are multiplied by 1/(1-p) so
/// eval mode is the identity. The mask is fully elementwise and reproducible
/// from the rng stream. When `mask_out` is given it receives the applied
/// per-element factor (0 or 1/(1-p)).
Tensor dropout_forward(const Tensor& input, float p, bool training, Rng& rng,
                       Tensor* mask_out = nullptr);

Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask);

} // namespace poselift
