#include "poselift/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace poselift {

void Conv1dSpec::validate() const {
    if (in_channels < 1 || out_channels < 1)
        throw ConfigError("conv1d: channel counts must be >= 1");
    if (kernel_width < 1) throw ConfigError("conv1d: kernel_width must be >= 1");
    if (dilation < 1) throw ConfigError("conv1d: dilation must be >= 1");
    if (stride < 1) throw ConfigError("conv1d: stride must be >= 1");
    if (dilation > 1 && stride > 1)
        throw ConfigError("conv1d: dilation and stride may not both exceed 1");
}

int64_t Conv1dSpec::output_length(int64_t input_length) const {
    const int64_t needed = span() + 1;
    if (input_length < needed)
        throw ShapeError("conv1d: insufficient temporal extent: T=" + std::to_string(input_length) +
                         " < " + std::to_string(needed) + " required by W=" +
                         std::to_string(kernel_width) + ", D=" + std::to_string(dilation));
    return (input_length - span() - 1) / stride + 1;
}

namespace {

void check_conv_shapes(const Tensor& input, const Tensor& weights, const Tensor& bias,
                       const Conv1dSpec& spec) {
    spec.validate();
    if (input.rank() != 3)
        throw ShapeError("conv1d: input must be rank 3 [N,C_in,T], got " + input.shape_str());
    if (weights.rank() != 3)
        throw ShapeError("conv1d: weights must be rank 3 [C_out,C_in,W], got " + weights.shape_str());
    if (input.dim(1) != spec.in_channels)
        throw ShapeError("conv1d: input channel dim is " + std::to_string(input.dim(1)) +
                         ", spec expects " + std::to_string(spec.in_channels));
    if (weights.dim(0) != spec.out_channels || weights.dim(1) != spec.in_channels ||
        weights.dim(2) != spec.kernel_width)
        throw ShapeError("conv1d: weights shape " + weights.shape_str() + " does not match spec [" +
                         std::to_string(spec.out_channels) + "," + std::to_string(spec.in_channels) +
                         "," + std::to_string(spec.kernel_width) + "]");
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != spec.out_channels))
        throw ShapeError("conv1d: bias must be [C_out]=" + std::to_string(spec.out_channels) +
                         ", got " + bias.shape_str());
}

} // namespace

Tensor conv1d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const Conv1dSpec& spec, uint64_t* madd_counter) {
    check_conv_shapes(input, weights, bias, spec);
    const int64_t N = input.dim(0);
    const int64_t Cin = input.dim(1);
    const int64_t T = input.dim(2);
    const int64_t Cout = spec.out_channels;
    const int64_t W = spec.kernel_width;
    const int64_t Tout = spec.output_length(T);

    Tensor out({N, Cout, Tout});
    std::vector<double> acc(static_cast<size_t>(Tout));

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t co = 0; co < Cout; ++co) {
            const double b = bias.empty() ? 0.0 : static_cast<double>(bias[co]);
            std::fill(acc.begin(), acc.end(), b);
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const float* in_row = &input(n, ci, 0);
                const float* w_row = &weights(co, ci, 0);
                for (int64_t k = 0; k < W; ++k) {
                    const double w = static_cast<double>(w_row[k]);
                    const float* src = in_row + k * spec.dilation;
                    if (spec.stride == 1) {
                        for (int64_t t = 0; t < Tout; ++t) acc[static_cast<size_t>(t)] += w * src[t];
                    } else {
                        for (int64_t t = 0; t < Tout; ++t)
                            acc[static_cast<size_t>(t)] += w * src[t * spec.stride];
                    }
                }
            }
            float* out_row = &out(n, co, 0);
            for (int64_t t = 0; t < Tout; ++t) out_row[t] = static_cast<float>(acc[static_cast<size_t>(t)]);
        }
    }
    if (madd_counter)
        *madd_counter += static_cast<uint64_t>(N) * static_cast<uint64_t>(Cout) *
                         static_cast<uint64_t>(Tout) * static_cast<uint64_t>(W) *
                         static_cast<uint64_t>(Cin);
    return out;
}

Conv1dGrads conv1d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weights,
                            const Conv1dSpec& spec) {
    check_conv_shapes(input, weights, Tensor(), spec);
    const int64_t N = input.dim(0);
    const int64_t Cin = input.dim(1);
    const int64_t T = input.dim(2);
    const int64_t Cout = spec.out_channels;
    const int64_t W = spec.kernel_width;
    const int64_t Tout = spec.output_length(T);
    if (grad_out.rank() != 3 || grad_out.dim(0) != N || grad_out.dim(1) != Cout ||
        grad_out.dim(2) != Tout)
        throw ShapeError("conv1d_backward: grad_out shape " + grad_out.shape_str() +
                         " does not match forward output [" + std::to_string(N) + "," +
                         std::to_string(Cout) + "," + std::to_string(Tout) + "]");

    Conv1dGrads g;
    g.input = Tensor({N, Cin, T});
    g.weights = Tensor({Cout, Cin, W});
    g.bias = Tensor({Cout});

    // grad_input: scatter of grad_out through the transposed taps.
    std::vector<double> acc(static_cast<size_t>(T));
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t ci = 0; ci < Cin; ++ci) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int64_t co = 0; co < Cout; ++co) {
                const float* go_row = &grad_out(n, co, 0);
                const float* w_row = &weights(co, ci, 0);
                for (int64_t k = 0; k < W; ++k) {
                    const double w = static_cast<double>(w_row[k]);
                    double* dst = acc.data() + k * spec.dilation;
                    if (spec.stride == 1) {
                        for (int64_t t = 0; t < Tout; ++t) dst[t] += w * go_row[t];
                    } else {
                        for (int64_t t = 0; t < Tout; ++t) dst[t * spec.stride] += w * go_row[t];
                    }
                }
            }
            float* gi_row = &g.input(n, ci, 0);
            for (int64_t t = 0; t < T; ++t) gi_row[t] = static_cast<float>(acc[static_cast<size_t>(t)]);
        }
    }

    // grad_weights: per-tap correlation of grad_out with the cached input.
    for (int64_t co = 0; co < Cout; ++co) {
        for (int64_t ci = 0; ci < Cin; ++ci) {
            for (int64_t k = 0; k < W; ++k) {
                double s = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    const float* go_row = &grad_out(n, co, 0);
                    const float* in_off = &input(n, ci, 0) + k * spec.dilation;
                    if (spec.stride == 1) {
                        for (int64_t t = 0; t < Tout; ++t)
                            s += static_cast<double>(go_row[t]) * static_cast<double>(in_off[t]);
                    } else {
                        for (int64_t t = 0; t < Tout; ++t)
                            s += static_cast<double>(go_row[t]) *
                                 static_cast<double>(in_off[t * spec.stride]);
                    }
                }
                g.weights(co, ci, k) = static_cast<float>(s);
            }
        }
    }

    for (int64_t co = 0; co < Cout; ++co) {
        double s = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            const float* go_row = &grad_out(n, co, 0);
            for (int64_t t = 0; t < Tout; ++t) s += static_cast<double>(go_row[t]);
        }
        g.bias[co] = static_cast<float>(s);
    }
    return g;
}

BatchNormState BatchNormState::make(int64_t channels) {
    BatchNormState st;
    st.gamma = Tensor::full({channels}, 1.0f);
    st.beta = Tensor({channels});
    st.running_mean = Tensor({channels});
    st.running_var = Tensor::full({channels}, 1.0f);
    return st;
}

void BatchNormState::validate(int64_t channels) const {
    const std::vector<int64_t> want{channels};
    if (gamma.shape() != want || beta.shape() != want || running_mean.shape() != want ||
        running_var.shape() != want)
        throw ShapeError("batchnorm: state tensors must all be [C]=" + std::to_string(channels));
    if (!(momentum > 0.0f && momentum <= 1.0f))
        throw ConfigError("batchnorm: momentum must be in (0,1], got " + std::to_string(momentum));
    if (!(epsilon > 0.0f)) throw ConfigError("batchnorm: epsilon must be positive");
    for (int64_t c = 0; c < running_var.size(); ++c)
        if (running_var[c] < 0.0f)
            throw NumericError("batchnorm: running_var[" + std::to_string(c) + "] is negative");
}

namespace {

void check_bn_input(const Tensor& input) {
    if (input.rank() != 3)
        throw ShapeError("batchnorm: input must be rank 3 [N,C,T], got " + input.shape_str());
}

} // namespace

Tensor batchnorm_eval(const Tensor& input, const BatchNormState& state) {
    check_bn_input(input);
    const int64_t N = input.dim(0), C = input.dim(1), T = input.dim(2);
    state.validate(C);
    Tensor out({N, C, T});
    for (int64_t c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) +
                                           static_cast<double>(state.epsilon));
        const float scale = static_cast<float>(static_cast<double>(state.gamma[c]) * inv);
        const float shift = static_cast<float>(
            static_cast<double>(state.beta[c]) -
            static_cast<double>(state.gamma[c]) * inv * static_cast<double>(state.running_mean[c]));
        for (int64_t n = 0; n < N; ++n) {
            const float* in_row = &input(n, c, 0);
            float* out_row = &out(n, c, 0);
            for (int64_t t = 0; t < T; ++t) out_row[t] = in_row[t] * scale + shift;
        }
    }
    return out;
}

Tensor batchnorm_forward(const Tensor& input, BatchNormState& state, bool training,
                         BatchNormCache* cache) {
    if (!training) return batchnorm_eval(input, state);
    check_bn_input(input);
    const int64_t N = input.dim(0), C = input.dim(1), T = input.dim(2);
    state.validate(C);
    const int64_t m = N * T;
    if (m < 2)
        throw NumericError("batchnorm: degenerate batch (N*T = 1), variance undefined in training mode");

    Tensor out({N, C, T});
    if (cache) {
        cache->xhat = Tensor({N, C, T});
        cache->inv_std.assign(static_cast<size_t>(C), 0.0);
    }
    for (int64_t c = 0; c < C; ++c) {
        double sum = 0.0, sum_sq = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            const float* in_row = &input(n, c, 0);
            for (int64_t t = 0; t < T; ++t) {
                const double v = in_row[t];
                sum += v;
                sum_sq += v * v;
            }
        }
        const double mean = sum / static_cast<double>(m);
        double var = sum_sq / static_cast<double>(m) - mean * mean;
        if (var < 0.0) var = 0.0; // cancellation guard
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(state.epsilon));
        const double gam = state.gamma[c];
        const double bet = state.beta[c];
        for (int64_t n = 0; n < N; ++n) {
            const float* in_row = &input(n, c, 0);
            float* out_row = &out(n, c, 0);
            float* xh_row = cache ? &cache->xhat(n, c, 0) : nullptr;
            for (int64_t t = 0; t < T; ++t) {
                const double xh = (static_cast<double>(in_row[t]) - mean) * inv;
                if (xh_row) xh_row[t] = static_cast<float>(xh);
                out_row[t] = static_cast<float>(gam * xh + bet);
            }
        }
        if (cache) cache->inv_std[static_cast<size_t>(c)] = inv;
        const double mom = state.momentum;
        state.running_mean[c] =
            static_cast<float>((1.0 - mom) * static_cast<double>(state.running_mean[c]) + mom * mean);
        state.running_var[c] =
            static_cast<float>((1.0 - mom) * static_cast<double>(state.running_var[c]) + mom * var);
    }
    return out;
}

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                  const BatchNormState& state) {
    const Tensor& xhat = cache.xhat;
    if (!grad_out.same_shape(xhat))
        throw ShapeError("batchnorm_backward: grad_out " + grad_out.shape_str() +
                         " does not match cached activations " + xhat.shape_str());
    const int64_t N = xhat.dim(0), C = xhat.dim(1), T = xhat.dim(2);
    const double m = static_cast<double>(N * T);

    BatchNormGrads g;
    g.input = Tensor({N, C, T});
    g.gamma = Tensor({C});
    g.beta = Tensor({C});

    for (int64_t c = 0; c < C; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            const float* go_row = &grad_out(n, c, 0);
            const float* xh_row = &xhat(n, c, 0);
            for (int64_t t = 0; t < T; ++t) {
                sum_g += go_row[t];
                sum_gx += static_cast<double>(go_row[t]) * static_cast<double>(xh_row[t]);
            }
        }
        g.gamma[c] = static_cast<float>(sum_gx);
        g.beta[c] = static_cast<float>(sum_g);
        const double mean_g = sum_g / m;
        const double mean_gx = sum_gx / m;
        const double scale = static_cast<double>(state.gamma[c]) * cache.inv_std[static_cast<size_t>(c)];
        for (int64_t n = 0; n < N; ++n) {
            const float* go_row = &grad_out(n, c, 0);
            const float* xh_row = &xhat(n, c, 0);
            float* gi_row = &g.input(n, c, 0);
            for (int64_t t = 0; t < T; ++t) {
                const double v = static_cast<double>(go_row[t]) - mean_g -
                                 static_cast<double>(xh_row[t]) * mean_gx;
                gi_row[t] = static_cast<float>(scale * v);
            }
        }
    }
    return g;
}

Tensor relu_forward(const Tensor& input) {
    Tensor out = input;
    float* p = out.data();
    for (int64_t i = 0; i < out.size(); ++i) p[i] = p[i] > 0.0f ? p[i] : 0.0f;
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
    if (!grad_out.same_shape(input))
        throw ShapeError("relu_backward: grad_out " + grad_out.shape_str() + " vs input " +
                         input.shape_str());
    Tensor g = grad_out;
    float* p = g.data();
    const float* x = input.data();
    for (int64_t i = 0; i < g.size(); ++i)
        if (x[i] <= 0.0f) p[i] = 0.0f;
    return g;
}

Tensor dropout_forward(const Tensor& input, float p, bool training, Rng& rng, Tensor* mask_out) {
    if (p < 0.0f || p >= 1.0f)
        throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0f) {
        if (mask_out) *mask_out = Tensor::full(input.shape(), 1.0f);
        return input;
    }
    const float keep_scale = 1.0f / (1.0f - p);
    Tensor out = input;
    Tensor mask = Tensor(input.shape());
    float* o = out.data();
    float* mk = mask.data();
    for (int64_t i = 0; i < out.size(); ++i) {
        if (rng.uniform() < static_cast<double>(p)) {
            o[i] = 0.0f;
            mk[i] = 0.0f;
        } else {
            o[i] *= keep_scale;
            mk[i] = keep_scale;
        }
    }
    if (mask_out) *mask_out = std::move(mask);
    return out;
}

Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask) {
    if (!grad_out.same_shape(mask))
        throw ShapeError("dropout_backward: grad_out " + grad_out.shape_str() + " vs mask " +
                         mask.shape_str());
    Tensor g = grad_out;
    float* p = g.data();
    const float* mk = mask.data();
    for (int64_t i = 0; i < g.size(); ++i) p[i] *= mk[i];
    return g;
}

} // namespace poselift
