#pragma once

#include "poselift/skeleton.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

/// Protocol 1: mean Euclidean distance over all frames and joints.
/// `pred` and `gt` are [T, J, 3] in millimeters.
double mpjpe(const Tensor& pred, const Tensor& gt);

/// Gradient of mpjpe with respect to pred (used as the supervised loss).
Tensor mpjpe_backward(const Tensor& pred, const Tensor& gt);

/// Protocol 2: per-frame similarity (rotation + translation + uniform scale)
/// alignment of pred onto gt, least squares, then MPJPE. The rotation is a
/// proper rotation (determinant +1).
double p_mpjpe(const Tensor& pred, const Tensor& gt);

/// Protocol 3: per-frame optimal least-squares scale applied to pred, then
/// MPJPE. s* = <pred,gt> / <pred,pred> per frame.
double n_mpjpe(const Tensor& pred, const Tensor& gt);

/// Velocity error: MPJPE of the consecutive-frame differences. Reported per
/// frame step; `fps` is carried for presentation only and does not enter the
/// value.
double mpjve(const Tensor& pred, const Tensor& gt, double fps = 0.0);

/// Depth-weighted trajectory error: mean over frames of |pred - gt| / gt_z.
/// Trajectories are [T, 3] camera-space millimeters with gt_z > 0.
double wmpjpe(const Tensor& pred_traj, const Tensor& gt_traj);
Tensor wmpjpe_backward(const Tensor& pred_traj, const Tensor& gt_traj);

/// Euclidean length of each parent-child edge of `pose` [J, 3], ordered by
/// ascending child joint index.
Tensor bone_lengths(const Tensor& pose, const Skeleton& skeleton);

/// Squared L2 distance between the batch-mean bone-length vectors of the two
/// batches ([M, J, 3] and [L, J, 3]). Differentiable into the first batch
/// only; the labeled side is the target.
double bone_length_loss(const Tensor& unlabeled_batch, const Tensor& labeled_batch,
                        const Skeleton& skeleton);
Tensor bone_length_loss_backward(const Tensor& unlabeled_batch, const Tensor& labeled_batch,
                                 const Skeleton& skeleton);

/// Mean per-joint 2-D Euclidean distance between projected and input
/// keypoints, both [T, J, 2].
double reprojection_loss(const Tensor& projected_2d, const Tensor& input_2d);
Tensor reprojection_loss_backward(const Tensor& projected_2d, const Tensor& input_2d);

} // namespace poselift
