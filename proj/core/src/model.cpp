#include "poselift/model.hpp"

#include <algorithm>
#include <cmath>

namespace poselift {

void ModelConfig::validate() const {
    if (num_joints < 1) throw ConfigError("model: num_joints must be >= 1");
    if (in_dims < 1 || out_dims < 1) throw ConfigError("model: joint dims must be >= 1");
    if (out_joints == 0 || out_joints < -1)
        throw ConfigError("model: out_joints must be positive or -1 (follow num_joints)");
    if (blocks < 0) throw ConfigError("model: blocks must be >= 0");
    if (kernel_width < 1) throw ConfigError("model: kernel_width must be >= 1");
    if (kernel_width > 1 && kernel_width % 2 == 0)
        throw ConfigError("model: kernel_width must be odd (symmetric residual slicing)");
    if (channels < 1) throw ConfigError("model: channels must be >= 1");
    if (dropout_p < 0.0f || dropout_p >= 1.0f)
        throw ConfigError("model: dropout_p must be in [0,1)");
    constexpr int64_t rf_limit = 1 << 20;
    if (receptive_field() > rf_limit)
        throw ConfigError("model: receptive field exceeds " + std::to_string(rf_limit));
}

int64_t ModelConfig::receptive_field() const {
    int64_t rf = kernel_width;
    int64_t dilation = kernel_width;
    for (int b = 1; b <= blocks; ++b) {
        rf += static_cast<int64_t>(kernel_width - 1) * dilation;
        dilation *= kernel_width;
    }
    return rf;
}

namespace {

/// Frames trimmed from the residual of block b (1-based): (W-1) * W^b.
int64_t block_trim(const ModelConfig& cfg, int b) {
    int64_t d = 1;
    for (int i = 0; i < b; ++i) d *= cfg.kernel_width;
    return static_cast<int64_t>(cfg.kernel_width - 1) * d;
}

} // namespace

TemporalModel TemporalModel::build(const ModelConfig& config, uint64_t seed) {
    config.validate();
    TemporalModel m;
    m.config_ = config;
    Rng rng(seed);

    auto make_layer = [&](int in_ch, int out_ch, int width, int dilation, bool final_layer) {
        ModelLayer layer;
        layer.spec.in_channels = in_ch;
        layer.spec.out_channels = out_ch;
        layer.spec.kernel_width = width;
        layer.spec.dilation = dilation;
        layer.spec.stride = 1;
        layer.spec.causal = config.causal;
        layer.weights = Tensor({out_ch, in_ch, width});
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * width);
        for (int64_t i = 0; i < layer.weights.size(); ++i)
            layer.weights[i] = static_cast<float>(rng.uniform(-bound, bound));
        if (final_layer) {
            layer.bias = Tensor({out_ch});
            for (int64_t i = 0; i < layer.bias.size(); ++i)
                layer.bias[i] = static_cast<float>(rng.uniform(-bound, bound));
            layer.has_bn = false;
            layer.has_act = false;
        } else {
            layer.bn = BatchNormState::make(out_ch);
        }
        return layer;
    };

    const int W = config.kernel_width;
    m.layers_.push_back(make_layer(config.in_channels(), config.channels, W, 1, false));
    int64_t dilation = W;
    for (int b = 1; b <= config.blocks; ++b) {
        if (config.dense_mode) {
            const int dense_width = static_cast<int>(block_trim(config, b)) + 1;
            m.layers_.push_back(make_layer(config.channels, config.channels, dense_width, 1, false));
        } else {
            m.layers_.push_back(
                make_layer(config.channels, config.channels, W, static_cast<int>(dilation), false));
        }
        m.layers_.push_back(make_layer(config.channels, config.channels, 1, 1, false));
        dilation *= W;
    }
    m.layers_.push_back(make_layer(config.channels, config.out_channels(), 1, 1, true));
    return m;
}

Conv1dSpec TemporalModel::layer_run_spec(size_t idx, bool strided) const {
    Conv1dSpec spec = layers_[idx].spec;
    if (!strided) return spec;
    // Training-time single-frame form: every width-W convolution becomes a
    // stride-W convolution; pointwise layers are unchanged.
    const bool is_final = idx + 1 == layers_.size();
    if (!is_final && spec.kernel_width > 1) {
        spec.dilation = 1;
        spec.stride = spec.kernel_width;
    }
    return spec;
}

Tensor TemporalModel::run(const Tensor& input, bool training, bool strided, ModelTape* tape,
                          Rng* rng, uint64_t* madds) {
    if (strided && config_.dense_mode)
        throw ConfigError("model: the strided single-frame path requires dilated mode");
    if (input.rank() != 3)
        throw ShapeError("model: input must be [N,C,T], got " + input.shape_str());
    if (input.dim(1) != config_.in_channels())
        throw ShapeError("model: input channels " + std::to_string(input.dim(1)) +
                         " do not match config (" + std::to_string(config_.in_channels()) +
                         " = " + std::to_string(config_.num_joints) + " joints x " +
                         std::to_string(config_.in_dims) + ")");
    const int64_t rf = receptive_field();
    if (strided && input.dim(2) != rf)
        throw ShapeError("model: strided single-frame input must have exactly RF=" +
                         std::to_string(rf) + " frames, got " + std::to_string(input.dim(2)));
    if (input.dim(2) < rf)
        throw ShapeError("model: insufficient temporal extent: T=" + std::to_string(input.dim(2)) +
                         " < receptive field " + std::to_string(rf));

    if (tape) {
        tape->strided = strided;
        tape->layers.assign(layers_.size(), LayerTape{});
    }

    const int W = config_.kernel_width;
    const int64_t res_start = config_.causal ? (W - 1) : (W - 1) / 2;

    auto apply_layer = [&](size_t idx, const Tensor& x) {
        ModelLayer& layer = layers_[idx];
        const Conv1dSpec spec = layer_run_spec(idx, strided);
        LayerTape* lt = tape ? &tape->layers[idx] : nullptr;
        if (lt) lt->conv_in = x;
        Tensor y = conv1d_forward(x, layer.weights, layer.bias, spec, madds);
        if (layer.has_bn) {
            if (training)
                y = batchnorm_forward(y, layer.bn, true, lt ? &lt->bn_cache : nullptr);
            else
                y = batchnorm_eval(y, layer.bn);
        }
        if (layer.has_act) {
            if (lt) lt->act_in = y;
            y = relu_forward(y);
            if (training && config_.dropout_p > 0.0f) {
                y = dropout_forward(y, config_.dropout_p, true, *rng, lt ? &lt->dropout_mask : nullptr);
            }
        }
        return y;
    };

    Tensor x = apply_layer(0, input);
    for (int b = 1; b <= config_.blocks; ++b) {
        const Tensor res_src = x;
        Tensor y = apply_layer(static_cast<size_t>(2 * b - 1), x);
        y = apply_layer(static_cast<size_t>(2 * b), y);

        const int64_t out_len = y.dim(2);
        const int64_t N = y.dim(0), C = y.dim(1);
        if (strided) {
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const float* src = &res_src(n, c, 0);
                    float* dst = &y(n, c, 0);
                    for (int64_t t = 0; t < out_len; ++t) dst[t] += src[res_start + t * W];
                }
        } else {
            const int64_t trim = block_trim(config_, b);
            const int64_t off = config_.causal ? trim : trim / 2;
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const float* src = &res_src(n, c, 0) + off;
                    float* dst = &y(n, c, 0);
                    for (int64_t t = 0; t < out_len; ++t) dst[t] += src[t];
                }
        }
        x = std::move(y);
    }
    return apply_layer(layers_.size() - 1, x);
}

Tensor TemporalModel::forward(const Tensor& input, uint64_t* madd_counter) const {
    // Eval mode performs no writes; the const_cast only satisfies the shared
    // run() signature.
    return const_cast<TemporalModel*>(this)->run(input, false, false, nullptr, nullptr,
                                                 madd_counter);
}

Tensor TemporalModel::forward_strided_single(const Tensor& input, uint64_t* madd_counter) const {
    return const_cast<TemporalModel*>(this)->run(input, false, true, nullptr, nullptr,
                                                 madd_counter);
}

Tensor TemporalModel::forward_train(const Tensor& input, bool strided, ModelTape& tape,
                                    Rng& dropout_rng) {
    return run(input, true, strided, &tape, &dropout_rng, nullptr);
}

ModelGrads TemporalModel::zero_grads() const {
    ModelGrads g;
    for (const ModelLayer& layer : layers_) {
        g.tensors.emplace_back(layer.weights.shape());
        if (!layer.bias.empty()) g.tensors.emplace_back(layer.bias.shape());
        if (layer.has_bn) {
            g.tensors.emplace_back(layer.bn.gamma.shape());
            g.tensors.emplace_back(layer.bn.beta.shape());
        }
    }
    return g;
}

ModelGrads TemporalModel::backward(const Tensor& grad_out, const ModelTape& tape) const {
    if (tape.layers.size() != layers_.size())
        throw ShapeError("model backward: tape does not match this model");
    ModelGrads grads = zero_grads();

    // Index of each layer's grad tensors within the flat list.
    std::vector<size_t> base(layers_.size());
    size_t cursor = 0;
    for (size_t i = 0; i < layers_.size(); ++i) {
        base[i] = cursor;
        cursor += 1 + (layers_[i].bias.empty() ? 0 : 1) + (layers_[i].has_bn ? 2 : 0);
    }

    const bool strided = tape.strided;
    const int W = config_.kernel_width;
    const int64_t res_start = config_.causal ? (W - 1) : (W - 1) / 2;

    auto layer_backward = [&](size_t idx, Tensor g) {
        const ModelLayer& layer = layers_[idx];
        const LayerTape& lt = tape.layers[idx];
        if (layer.has_act) {
            if (!lt.dropout_mask.empty()) g = dropout_backward(g, lt.dropout_mask);
            g = relu_backward(g, lt.act_in);
        }
        size_t slot = base[idx];
        if (layer.has_bn) {
            BatchNormGrads bg = batchnorm_backward(g, lt.bn_cache, layer.bn);
            g = std::move(bg.input);
            const size_t gamma_slot = slot + (layer.bias.empty() ? 1 : 2);
            grads.tensors[gamma_slot] = std::move(bg.gamma);
            grads.tensors[gamma_slot + 1] = std::move(bg.beta);
        }
        Conv1dGrads cg = conv1d_backward(g, lt.conv_in, layer.weights, layer_run_spec(idx, strided));
        grads.tensors[slot] = std::move(cg.weights);
        if (!layer.bias.empty()) grads.tensors[slot + 1] = std::move(cg.bias);
        return std::move(cg.input);
    };

    Tensor g = layer_backward(layers_.size() - 1, grad_out);
    for (int b = config_.blocks; b >= 1; --b) {
        // Residual branch: scatter the block-output gradient back into the
        // block-input positions it was sliced from.
        const Tensor& block_in = tape.layers[static_cast<size_t>(2 * b - 1)].conv_in;
        Tensor res_grad(block_in.shape());
        const int64_t N = g.dim(0), C = g.dim(1), out_len = g.dim(2);
        if (strided) {
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const float* src = &g(n, c, 0);
                    float* dst = &res_grad(n, c, 0);
                    for (int64_t t = 0; t < out_len; ++t) dst[res_start + t * W] += src[t];
                }
        } else {
            const int64_t trim = block_trim(config_, b);
            const int64_t off = config_.causal ? trim : trim / 2;
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const float* src = &g(n, c, 0);
                    float* dst = &res_grad(n, c, 0) + off;
                    for (int64_t t = 0; t < out_len; ++t) dst[t] += src[t];
                }
        }
        g = layer_backward(static_cast<size_t>(2 * b), std::move(g));
        g = layer_backward(static_cast<size_t>(2 * b - 1), std::move(g));
        float* acc = g.data();
        const float* r = res_grad.data();
        for (int64_t i = 0; i < g.size(); ++i) acc[i] += r[i];
    }
    layer_backward(0, std::move(g));
    return grads;
}

std::vector<ParamRef> TemporalModel::trainable_parameters() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const std::string prefix = "layers." + std::to_string(i);
        out.push_back({prefix + ".weight", &layers_[i].weights});
        if (!layers_[i].bias.empty()) out.push_back({prefix + ".bias", &layers_[i].bias});
        if (layers_[i].has_bn) {
            out.push_back({prefix + ".bn.gamma", &layers_[i].bn.gamma});
            out.push_back({prefix + ".bn.beta", &layers_[i].bn.beta});
        }
    }
    return out;
}

std::vector<ParamRef> TemporalModel::state_tensors() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].has_bn) continue;
        const std::string prefix = "layers." + std::to_string(i);
        out.push_back({prefix + ".bn.running_mean", &layers_[i].bn.running_mean});
        out.push_back({prefix + ".bn.running_var", &layers_[i].bn.running_var});
    }
    return out;
}

int64_t TemporalModel::num_trainable_floats() const {
    int64_t n = 0;
    for (const ModelLayer& layer : layers_) {
        n += layer.weights.size();
        if (!layer.bias.empty()) n += layer.bias.size();
        if (layer.has_bn) n += layer.bn.gamma.size() + layer.bn.beta.size();
    }
    return n;
}

void TemporalModel::set_bn_momentum(float momentum) {
    for (ModelLayer& layer : layers_)
        if (layer.has_bn) layer.bn.momentum = momentum;
}

Tensor frames_to_channels(const Tensor& frames) {
    if (frames.rank() != 3)
        throw ShapeError("frames_to_channels: expected [T,J,D], got " + frames.shape_str());
    const int64_t T = frames.dim(0), J = frames.dim(1), D = frames.dim(2);
    Tensor out({J * D, T});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t j = 0; j < J; ++j)
            for (int64_t d = 0; d < D; ++d) out(j * D + d, t) = frames(t, j, d);
    return out;
}

Tensor channels_to_frames(const Tensor& channels, int64_t joints, int64_t dims) {
    if (channels.rank() != 2 || channels.dim(0) != joints * dims)
        throw ShapeError("channels_to_frames: expected [" + std::to_string(joints * dims) +
                         ",T], got " + channels.shape_str());
    const int64_t T = channels.dim(1);
    Tensor out({T, joints, dims});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t j = 0; j < joints; ++j)
            for (int64_t d = 0; d < dims; ++d) out(t, j, d) = channels(j * dims + d, t);
    return out;
}

Tensor normalize_keypoints(const Tensor& frames_2d_px, float image_w, float image_h) {
    if (frames_2d_px.rank() != 3 || frames_2d_px.dim(2) != 2)
        throw ShapeError("normalize_keypoints: expected [T,J,2], got " + frames_2d_px.shape_str());
    if (!(image_w > 0.0f) || !(image_h > 0.0f))
        throw ConfigError("normalize_keypoints: image size must be positive");
    Tensor out = frames_2d_px;
    const float inv_w = 2.0f / image_w;
    const float y_off = image_h / image_w;
    float* p = out.data();
    const int64_t n = out.size() / 2;
    for (int64_t i = 0; i < n; ++i) {
        p[2 * i + 0] = p[2 * i + 0] * inv_w - 1.0f;
        p[2 * i + 1] = p[2 * i + 1] * inv_w - y_off;
    }
    return out;
}

void flip_channels_inplace(Tensor& channels, int64_t dims,
                           const std::vector<std::pair<int, int>>& left_right_pairs) {
    if (channels.rank() != 2)
        throw ShapeError("flip_channels: expected [C,T], got " + channels.shape_str());
    const int64_t C = channels.dim(0), T = channels.dim(1);
    if (C % dims != 0) throw ShapeError("flip_channels: channel count not divisible by dims");
    // Negate the x coordinate of every joint.
    for (int64_t j = 0; j < C / dims; ++j) {
        float* row = &channels(j * dims, 0);
        for (int64_t t = 0; t < T; ++t) row[t] = -row[t];
    }
    // Swap the left/right joint channel groups.
    for (const auto& [l, r] : left_right_pairs) {
        for (int64_t d = 0; d < dims; ++d) {
            float* lrow = &channels(l * dims + d, 0);
            float* rrow = &channels(r * dims + d, 0);
            for (int64_t t = 0; t < T; ++t) std::swap(lrow[t], rrow[t]);
        }
    }
}

Tensor predict_sequence(const TemporalModel& model, const Tensor& keypoints_px, float image_w,
                        float image_h, bool flip_augment,
                        const std::vector<std::pair<int, int>>& left_right_pairs) {
    if (keypoints_px.rank() != 3 || keypoints_px.dim(2) != 2)
        throw ShapeError("predict_sequence: expected keypoints [T,J,2], got " +
                         keypoints_px.shape_str());
    const ModelConfig& cfg = model.config();
    if (keypoints_px.dim(1) != cfg.num_joints)
        throw ShapeError("predict_sequence: sequence has " + std::to_string(keypoints_px.dim(1)) +
                         " joints, model expects " + std::to_string(cfg.num_joints));
    const int64_t T = keypoints_px.dim(0);
    const int64_t rf = model.receptive_field();
    const int64_t pad_left = cfg.causal ? rf - 1 : (rf - 1) / 2;
    const int64_t pad_right = rf - 1 - pad_left;

    Tensor norm = normalize_keypoints(keypoints_px, image_w, image_h);
    Tensor chans = frames_to_channels(norm); // [2J, T]

    auto run_once = [&](const Tensor& ch) {
        const int64_t C = ch.dim(0);
        Tensor padded({1, C, T + rf - 1});
        for (int64_t c = 0; c < C; ++c) {
            const float* src = &ch(c, 0);
            float* dst = &padded(0, c, 0);
            for (int64_t t = 0; t < T + rf - 1; ++t) {
                const int64_t s = std::clamp<int64_t>(t - pad_left, 0, T - 1);
                dst[t] = src[s];
            }
        }
        Tensor out = model.forward(padded); // [1, 3J, T]
        return out.reshaped({out.dim(1), out.dim(2)});
    };

    Tensor pred = run_once(chans);
    if (flip_augment) {
        Tensor flipped_in = chans;
        flip_channels_inplace(flipped_in, 2, left_right_pairs);
        Tensor pred_f = run_once(flipped_in);
        flip_channels_inplace(pred_f, 3, left_right_pairs); // un-flip the prediction
        float* a = pred.data();
        const float* b = pred_f.data();
        for (int64_t i = 0; i < pred.size(); ++i) a[i] = 0.5f * (a[i] + b[i]);
    }
    for (int64_t i = 0; i < pred.size(); ++i) pred[i] *= kPoseScaleMm;
    return channels_to_frames(pred, cfg.output_joints(), cfg.out_dims);
}

} // namespace poselift
