#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "poselift/dataio.hpp"
#include "poselift/metrics.hpp"
#include "poselift/model.hpp"
#include "poselift/rng.hpp"

namespace poselift {

/// Optimizer, schedules, batching and augmentation settings for one run.
struct TrainPlan {
    int epochs = 80;
    float lr_init = 1e-3f;
    float lr_decay = 0.95f; // shrink factor applied each epoch
    int batch_frames = 128; // predicted frames per batch
    int chunk_size = 1;     // output frames per training sample (C)
    float bn_momentum_start = 0.1f;
    float bn_momentum_end = 0.001f;
    bool flip_train = false;
    bool flip_test = false;
    uint64_t seed = 0;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_epsilon = 1e-8f;
    bool amsgrad = true;
    /// Last fraction of each sequence held out from training targets.
    float holdout_fraction = 0.1f;

    void validate() const;
};

/// lr = lr_init * lr_decay^epoch.
double lr_schedule(const TrainPlan& plan, int epoch);

/// Exponential decay from `start` at epoch 0 to `end` at the last epoch.
double bn_momentum_schedule(double start, double end, int epoch, int total_epochs);

struct AmsgradState {
    std::vector<Tensor> m, v, vhat;
    int64_t step = 0;

    static AmsgradState make(const std::vector<ParamRef>& params);
    bool matches(const std::vector<ParamRef>& params) const;
};

/// One AMSGrad update (bias-corrected, with the max-of-second-moment
/// correction). Throws NumericError naming the parameter block on non-finite
/// gradients.
void amsgrad_step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
                  AmsgradState& state, double lr, const TrainPlan& plan);

/// One sequence prepared for training/evaluation: normalized channel-major
/// inputs, channel-major targets, and the raw pixels for reprojection.
struct TrainSequenceView {
    std::string id;
    CameraModel camera;
    Tensor input_px;      // [T, J, 2] pixels
    Tensor input_cm;      // [2J, T] normalized
    Tensor target_frames; // [T, J, 3] mm (labeled only)
    Tensor target_cm;     // [3J, T] (labeled only)
    Tensor traj_frames;   // [T, 3] mm (labeled only)
    Tensor traj_cm;       // [3, T] (labeled only)
    bool labeled = false;
    int64_t train_frames = 0; // targets are sampled from [0, train_frames)

    int64_t frames() const { return input_px.dim(0); }
};

struct TrainingSet {
    Skeleton skeleton;
    double fps = 50.0;
    std::vector<TrainSequenceView> sequences;

    int64_t total_train_frames() const;
};

/// Normalizes keypoints, packs channel-major views and applies the holdout
/// split. With `labeled_only`, unlabeled sequences are dropped.
TrainingSet make_training_set(const DatasetFile& ds, double holdout_fraction,
                              bool labeled_only = true);

/// One training sample: `length` target frames of one sequence, plus the
/// input window that predicts them.
struct Clip {
    int seq = 0;
    int64_t start = 0;  // first target frame
    int64_t length = 1; // target frames (chunk size, shorter for sequence tails)
    bool flipped = false;
};

/// Chunked clip sampling: every trainable ground-truth frame is targeted
/// exactly once per epoch, order is a seeded permutation, and all clips in a
/// batch share one length so they stack into a single tensor.
class ClipSampler {
public:
    ClipSampler(const TrainingSet& set, int64_t receptive_field, int chunk_size, bool causal);

    /// Batches of up to `batch_frames` predicted frames. Clip order draws
    /// from `order_rng`; the per-clip flip coins draw from `flip_rng` so that
    /// enabling augmentation does not disturb the batch order stream.
    std::vector<std::vector<Clip>> epoch_batches(int batch_frames, bool flip_train, Rng& order_rng,
                                                 Rng& flip_rng) const;

    /// Stacks a batch into input [N, 2J, RF+len-1] and target [N, 3J, len],
    /// replication-padded at the training-region boundaries.
    void materialize(const std::vector<Clip>& batch, Tensor& input, Tensor& target) const;

    /// Input window only (targets unavailable for unlabeled data).
    void materialize_inputs(const std::vector<Clip>& batch, Tensor& input) const;

    int64_t receptive_field() const { return rf_; }
    const TrainingSet& set() const { return *set_; }

private:
    const TrainingSet* set_;
    int64_t rf_;
    int chunk_;
    bool causal_;
};

/// Mean per-joint distance between channel-major batches [N, J*dims, L];
/// fills d(loss)/d(pred) when `grad` is given. This is the MPJPE training
/// loss evaluated without leaving the network's data layout.
double pose_loss_channels(const Tensor& pred_cm, const Tensor& target_cm, int64_t dims,
                          Tensor* grad = nullptr);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double eval_mpjpe = 0.0;
    double eval_pmpjpe = 0.0;
    double eval_mpjve = 0.0;
    double lr = 0.0;
    double bn_momentum = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    bool diverged = false;
    int epochs_completed = 0;
};

struct TrainerRngs {
    Rng sampler;
    Rng dropout;
    Rng flip;

    static TrainerRngs from_seed(uint64_t seed);
};

struct EvalReport {
    double mpjpe = 0.0;
    double p_mpjpe = 0.0;
    double n_mpjpe = 0.0;
    double mpjve = 0.0;
    int64_t frames = 0;
};

/// Full-sequence prediction for one record (replication padding, optional
/// test-time flip). Returns [T, J, 3].
Tensor predict_record(const TemporalModel& model, const TrainSequenceView& seq,
                      const Skeleton& skeleton, bool flip_test);

/// Metrics over the holdout tails (`holdout` true) or the training regions
/// of all labeled sequences.
EvalReport evaluate_split(const TemporalModel& model, const TrainingSet& set, bool holdout,
                          bool flip_test);

/// Supervised training: MPJPE loss, AMSGrad, lr and batchnorm-momentum
/// schedules, chunked batching with the strided single-frame path when
/// chunk_size == 1. Aborts on non-finite loss, restoring the last epoch-end
/// parameters. Deterministic given the plan seed.
TrainResult train_supervised(TemporalModel& model, const TrainingSet& data, const TrainPlan& plan,
                             AmsgradState* opt_state = nullptr, TrainerRngs* rngs = nullptr,
                             int start_epoch = 0, std::ostream* progress = nullptr);

/// Checkpoint carrying model, optimizer moments and rng streams, so a resumed
/// run continues bit-for-bit where an uninterrupted one would be.
Checkpoint make_training_checkpoint(TemporalModel& model, const AmsgradState& opt,
                                    const TrainerRngs& rngs, int epoch);

/// Restores the optimizer and rng streams saved by make_training_checkpoint;
/// the model itself comes from model_from_checkpoint.
void load_training_state(const Checkpoint& ck, const std::vector<ParamRef>& params,
                         AmsgradState& opt, TrainerRngs& rngs);

} // namespace poselift
