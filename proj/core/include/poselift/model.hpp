#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "poselift/nn.hpp"
#include "poselift/rng.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

/// Millimeters per model output unit: networks regress meter-scale values
/// (matching the weight initialization and optimizer step sizes), while every
/// public pose interface speaks millimeters.
constexpr float kPoseScaleMm = 1000.0f;

/// Architecture hyperparameters of the temporal convolutional lifter.
struct ModelConfig {
    int num_joints = 17;
    int in_dims = 2;  // input coordinates per joint
    int out_dims = 3; // output coordinates per joint
    /// Output joint count; -1 follows num_joints. The trajectory network sets
    /// this to 1 (one root position per frame).
    int out_joints = -1;
    int blocks = 4;       // residual blocks B
    int kernel_width = 3; // W (odd, or 1 for the single-frame baseline)
    int channels = 1024;  // C
    float dropout_p = 0.25f;
    bool causal = false;
    /// Ablation: replace each dilated convolution by a dense convolution of
    /// the same temporal span.
    bool dense_mode = false;

    void validate() const;

    /// Frames of input influencing one output frame; W^(B+1) for kernel
    /// width W (so 27/81/243 for B = 2/3/4 at W = 3).
    int64_t receptive_field() const;

    int in_channels() const { return num_joints * in_dims; }
    int output_joints() const { return out_joints > 0 ? out_joints : num_joints; }
    int out_channels() const { return output_joints() * out_dims; }
};

/// One convolutional stage: conv -> batchnorm -> relu -> dropout, except the
/// last layer which is a bare linear projection. Convolutions followed by
/// batch normalization carry no bias (the BN shift absorbs it).
struct ModelLayer {
    Conv1dSpec spec; // inference form: dilation set, stride 1
    Tensor weights;  // [C_out, C_in, W_eff]
    Tensor bias;     // empty unless final layer
    bool has_bn = true;
    bool has_act = true;
    BatchNormState bn;
};

struct LayerTape {
    Tensor conv_in;
    BatchNormCache bn_cache;
    Tensor act_in;       // batchnorm output = relu input
    Tensor dropout_mask; // empty when dropout was inert
};

/// Fixed-topology tape recorded by a training-mode forward pass.
struct ModelTape {
    bool strided = false;
    std::vector<LayerTape> layers;
};

/// Gradients aligned index-for-index with trainable_parameters().
struct ModelGrads {
    std::vector<Tensor> tensors;
};

struct ParamRef {
    std::string name;
    Tensor* tensor;
};

class TemporalModel {
public:
    /// Deterministic construction: fan-in-scaled uniform initialization drawn
    /// from `seed` in fixed layer order.
    static TemporalModel build(const ModelConfig& config, uint64_t seed);

    const ModelConfig& config() const { return config_; }
    int64_t receptive_field() const { return config_.receptive_field(); }
    const std::vector<ModelLayer>& layers() const { return layers_; }
    std::vector<ModelLayer>& layers() { return layers_; }

    /// Layer-by-layer inference over a full sequence.
    /// [N, 2J, T] -> [N, 3J, T - RF + 1]; eval-mode batchnorm, no dropout.
    Tensor forward(const Tensor& input, uint64_t* madd_counter = nullptr) const;

    /// Single-frame evaluation with dilations replaced by strides; the input
    /// must be exactly RF frames. Identical result to forward() restricted to
    /// one output frame, without computing unused intermediate states.
    Tensor forward_strided_single(const Tensor& input, uint64_t* madd_counter = nullptr) const;

    /// Training-mode pass: batch-statistics batchnorm (updates running stats),
    /// live dropout, and a tape for backward(). `strided` selects the
    /// single-frame training form.
    Tensor forward_train(const Tensor& input, bool strided, ModelTape& tape, Rng& dropout_rng);

    /// Manual reverse-mode pass over the recorded tape.
    ModelGrads backward(const Tensor& grad_out, const ModelTape& tape) const;

    std::vector<ParamRef> trainable_parameters();
    /// Running statistics (not trained, but checkpointed).
    std::vector<ParamRef> state_tensors();
    int64_t num_trainable_floats() const;

    /// Set the batchnorm momentum of every layer (scheduled during training).
    void set_bn_momentum(float momentum);

    ModelGrads zero_grads() const;

private:
    TemporalModel() = default;

    Tensor run(const Tensor& input, bool training, bool strided, ModelTape* tape, Rng* rng,
               uint64_t* madds);

    Conv1dSpec layer_run_spec(size_t idx, bool strided) const;

    ModelConfig config_;
    std::vector<ModelLayer> layers_;
};

/// [T, J, D] frames -> [J*D, T] channel-major layout (channel j*D+d holds
/// coordinate d of joint j).
Tensor frames_to_channels(const Tensor& frames);
/// Inverse of frames_to_channels.
Tensor channels_to_frames(const Tensor& channels, int64_t joints, int64_t dims);

/// Pixel keypoints [T, J, 2] -> width-normalized coordinates:
/// x' = 2x/w - 1, y' = 2y/w - h/w.
Tensor normalize_keypoints(const Tensor& frames_2d_px, float image_w, float image_h);

/// Horizontal flip in channel-major layout [C, T]: negates x channels and
/// swaps left/right joint channel groups. `dims` is 2 or 3.
void flip_channels_inplace(Tensor& channels, int64_t dims,
                           const std::vector<std::pair<int, int>>& left_right_pairs);

/// Full-sequence prediction with replication padding so the output has
/// exactly the input's frame count. `keypoints_px` is [T, J, 2] pixels;
/// the result is [T, J, 3] root-relative millimeters. With `flip_augment`
/// the prediction is averaged with the un-flipped prediction on the
/// horizontally flipped input.
Tensor predict_sequence(const TemporalModel& model, const Tensor& keypoints_px, float image_w,
                        float image_h, bool flip_augment,
                        const std::vector<std::pair<int, int>>& left_right_pairs);

} // namespace poselift
