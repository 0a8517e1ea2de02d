#pragma once

#include "poselift/training.hpp"

namespace poselift {

/// Back-projection semi-supervised training settings.
struct SemiSupPlan {
    TrainPlan base;
    /// Epochs iterating only over labeled data before the unlabeled terms
    /// switch on.
    int warmup_epochs = 1;
    float bone_loss_weight = 10.0f;
    float reprojection_weight = 1.0f;
    float traj_loss_weight = 1.0f;

    void validate() const;
};

struct SemiEpochLog {
    int epoch = 0;
    double train_loss = 0.0; // labeled-half pose loss, mm
    double eval_mpjpe = 0.0;
    double eval_pmpjpe = 0.0;
    double eval_mpjve = 0.0;
    double lr = 0.0;
    double bn_momentum = 0.0;
    double reproj_loss = 0.0;   // width-normalized pixels
    double bone_loss = 0.0;
    double traj_wmpjpe = 0.0;
    int64_t labeled_frames = 0;
    int64_t unlabeled_frames = 0;
    int64_t skipped_frames = 0; // predicted subject behind the camera
};

struct SemiTrainResult {
    std::vector<SemiEpochLog> log;
    bool diverged = false;
    int epochs_completed = 0;
};

struct SemiRngs {
    TrainerRngs pose; // identical streams to a supervised run with the same seed
    Rng traj_dropout;
    Rng unlabeled_sampler;

    static SemiRngs from_seed(uint64_t seed);
};

/// Joint optimization of the pose and trajectory networks (disjoint
/// parameters, same architecture family). Each step consumes equal counts of
/// labeled and unlabeled predicted frames: the labeled half carries the MPJPE
/// pose loss and the depth-weighted trajectory loss; the unlabeled half is
/// projected back to 2-D through its sequence camera and penalized by the
/// reprojection loss against the input keypoints plus the bone-length
/// soft constraint against the labeled half. During warmup, and whenever the
/// unlabeled set is empty, only the labeled terms run — in that case the pose
/// network's updates reduce bitwise to train_supervised with the same seed.
SemiTrainResult train_semisupervised(TemporalModel& pose_model, TemporalModel& traj_model,
                                     const TrainingSet& labeled, const TrainingSet& unlabeled,
                                     const SemiSupPlan& plan, AmsgradState* pose_opt = nullptr,
                                     AmsgradState* traj_opt = nullptr, SemiRngs* rngs = nullptr,
                                     std::ostream* progress = nullptr);

/// Full-sequence trajectory regression: per-frame root position in camera
/// space, [T, 3] millimeters.
Tensor regress_trajectory(const TemporalModel& traj_model, const Tensor& keypoints_px,
                          float image_w, float image_h);

/// Depth-weighted trajectory loss on channel-major batches [N, 3, L]; mean
/// over N*L of |pred - target| / target_z. Fills d(loss)/d(pred).
double traj_loss_channels(const Tensor& pred_cm, const Tensor& target_cm, Tensor* grad = nullptr);

} // namespace poselift
