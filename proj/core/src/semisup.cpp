#include "poselift/semisup.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>

#include "poselift/camera.hpp"

namespace poselift {

void SemiSupPlan::validate() const {
    base.validate();
    if (base.chunk_size != 1)
        throw ConfigError("semisup: chunk_size must be 1 (single-frame batch halves)");
    if (base.batch_frames % 2 != 0)
        throw ConfigError("semisup: batch_frames must be even (labeled/unlabeled halves)");
    if (warmup_epochs < 0) throw ConfigError("semisup: warmup_epochs must be >= 0");
    if (bone_loss_weight < 0.0f || reprojection_weight < 0.0f || traj_loss_weight < 0.0f)
        throw ConfigError("semisup: loss weights must be >= 0");
}

SemiRngs SemiRngs::from_seed(uint64_t seed) {
    SemiRngs r{TrainerRngs::from_seed(seed), Rng(seed * 0x9E3779B97F4A7C15ULL + 3),
               Rng(seed * 0x9E3779B97F4A7C15ULL + 4)};
    return r;
}

double traj_loss_channels(const Tensor& pred_cm, const Tensor& target_cm, Tensor* grad) {
    if (pred_cm.rank() != 3 || pred_cm.dim(1) != 3 || !pred_cm.same_shape(target_cm))
        throw ShapeError("traj_loss: expected matching [N,3,L], got " + pred_cm.shape_str() +
                         " vs " + target_cm.shape_str());
    const int64_t N = pred_cm.dim(0), L = pred_cm.dim(2);
    const int64_t total = N * L;
    if (grad) *grad = Tensor(pred_cm.shape());
    double sum = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t l = 0; l < L; ++l) {
            const double z = target_cm(n, 2, l);
            if (!(z > 0.0))
                throw NumericError("traj_loss: non-positive target depth in batch row " +
                                   std::to_string(n));
            double d2 = 0.0;
            for (int64_t d = 0; d < 3; ++d) {
                const double e = static_cast<double>(pred_cm(n, d, l)) - target_cm(n, d, l);
                d2 += e * e;
            }
            const double norm = std::sqrt(d2);
            sum += norm / z;
            if (grad && norm > 1e-12) {
                const double s = 1.0 / (norm * z * static_cast<double>(total));
                for (int64_t d = 0; d < 3; ++d)
                    (*grad)(n, d, l) = static_cast<float>(
                        (static_cast<double>(pred_cm(n, d, l)) - target_cm(n, d, l)) * s);
            }
        }
    }
    return sum / static_cast<double>(total);
}

Tensor regress_trajectory(const TemporalModel& traj_model, const Tensor& keypoints_px,
                          float image_w, float image_h) {
    Tensor out = predict_sequence(traj_model, keypoints_px, image_w, image_h, false, {});
    return out.reshaped({out.dim(0), 3});
}

namespace {

/// Rows [n0, n1) of a channel-major batch [N, J*dims, L] as frames
/// [(n1-n0)*L, J, dims].
Tensor slice_channels_to_frames(const Tensor& cm, int64_t n0, int64_t n1, int64_t dims) {
    const int64_t J = cm.dim(1) / dims, L = cm.dim(2);
    Tensor out({(n1 - n0) * L, J, dims});
    for (int64_t n = n0; n < n1; ++n)
        for (int64_t l = 0; l < L; ++l)
            for (int64_t j = 0; j < J; ++j)
                for (int64_t d = 0; d < dims; ++d)
                    out((n - n0) * L + l, j, d) = cm(n, j * dims + d, l);
    return out;
}

/// Adds frame-layout gradients back into channel-major rows starting at n0.
void add_frames_to_channels(const Tensor& frames, Tensor& cm, int64_t n0, int64_t dims,
                            double weight) {
    const int64_t J = cm.dim(1) / dims, L = cm.dim(2);
    const int64_t count = frames.dim(0) / L;
    for (int64_t n = 0; n < count; ++n)
        for (int64_t l = 0; l < L; ++l)
            for (int64_t j = 0; j < J; ++j)
                for (int64_t d = 0; d < dims; ++d)
                    cm(n0 + n, j * dims + d, l) +=
                        static_cast<float>(weight * frames(n * L + l, j, d));
}

/// Trajectory-target windows for a labeled batch: [N, 3, L], with the x
/// coordinate negated for flipped clips.
Tensor gather_traj_targets(const TrainingSet& set, const std::vector<Clip>& batch) {
    const int64_t len = batch[0].length;
    Tensor out({static_cast<int64_t>(batch.size()), 3, len});
    for (size_t i = 0; i < batch.size(); ++i) {
        const Clip& c = batch[i];
        const TrainSequenceView& seq = set.sequences[static_cast<size_t>(c.seq)];
        for (int64_t l = 0; l < len; ++l) {
            const int64_t t = std::clamp<int64_t>(c.start + l, 0, seq.train_frames - 1);
            for (int64_t d = 0; d < 3; ++d) out(static_cast<int64_t>(i), d, l) = seq.traj_cm(d, t);
            if (c.flipped) out(static_cast<int64_t>(i), 0, l) = -out(static_cast<int64_t>(i), 0, l);
        }
    }
    return out;
}

std::vector<Tensor> snapshot(TemporalModel& m) {
    std::vector<Tensor> snap;
    for (const ParamRef& p : m.trainable_parameters()) snap.push_back(*p.tensor);
    for (const ParamRef& p : m.state_tensors()) snap.push_back(*p.tensor);
    return snap;
}

void restore(TemporalModel& m, const std::vector<Tensor>& snap) {
    size_t i = 0;
    for (const ParamRef& p : m.trainable_parameters()) *p.tensor = snap[i++];
    for (const ParamRef& p : m.state_tensors()) *p.tensor = snap[i++];
}

/// Deterministic clip feed over the labeled set that refills itself with
/// fresh seeded epochs as the unlabeled pass drains it.
class LabeledClipFeed {
public:
    LabeledClipFeed(const ClipSampler& sampler, int batch_frames, bool flip, Rng& order_rng,
                    Rng& flip_rng)
        : sampler_(&sampler), batch_frames_(batch_frames), flip_(flip), order_rng_(&order_rng),
          flip_rng_(&flip_rng) {}

    std::vector<Clip> take(size_t count) {
        std::vector<Clip> out;
        while (out.size() < count) {
            if (queue_.empty()) {
                for (const auto& batch :
                     sampler_->epoch_batches(batch_frames_, flip_, *order_rng_, *flip_rng_))
                    for (const Clip& c : batch) queue_.push_back(c);
            }
            out.push_back(queue_.front());
            queue_.pop_front();
        }
        return out;
    }

private:
    const ClipSampler* sampler_;
    int batch_frames_;
    bool flip_;
    Rng* order_rng_;
    Rng* flip_rng_;
    std::deque<Clip> queue_;
};

} // namespace

SemiTrainResult train_semisupervised(TemporalModel& pose_model, TemporalModel& traj_model,
                                     const TrainingSet& labeled, const TrainingSet& unlabeled,
                                     const SemiSupPlan& plan, AmsgradState* pose_opt,
                                     AmsgradState* traj_opt, SemiRngs* rngs,
                                     std::ostream* progress) {
    plan.validate();
    if (labeled.total_train_frames() < 1) throw DataError("semisup: no labeled training frames");
    if (pose_model.receptive_field() != traj_model.receptive_field())
        throw ConfigError("semisup: pose and trajectory models must share a receptive field");

    const auto pose_params = pose_model.trainable_parameters();
    const auto traj_params = traj_model.trainable_parameters();
    AmsgradState local_pose_opt = AmsgradState::make(pose_params);
    AmsgradState local_traj_opt = AmsgradState::make(traj_params);
    AmsgradState& popt = pose_opt ? *pose_opt : local_pose_opt;
    AmsgradState& topt = traj_opt ? *traj_opt : local_traj_opt;
    if (pose_opt && !pose_opt->matches(pose_params)) *pose_opt = AmsgradState::make(pose_params);
    if (traj_opt && !traj_opt->matches(traj_params)) *traj_opt = AmsgradState::make(traj_params);

    SemiRngs local_rngs = SemiRngs::from_seed(plan.base.seed);
    SemiRngs& rr = rngs ? *rngs : local_rngs;

    // Seed the trajectory head with the labeled mean position. Optimizer
    // steps are learning-rate-bounded, so regressing a meters-scale depth
    // from a zero-centered initialization would eat the whole training
    // budget before the back-projection terms mean anything.
    if (topt.step == 0 && !traj_model.layers().empty()) {
        ModelLayer& head = traj_model.layers().back();
        if (!head.bias.empty() && head.bias.size() == 3) {
            double mean[3] = {0.0, 0.0, 0.0};
            int64_t count = 0;
            for (const TrainSequenceView& seq : labeled.sequences) {
                if (!seq.labeled) continue;
                for (int64_t t = 0; t < seq.train_frames; ++t)
                    for (int d = 0; d < 3; ++d) mean[d] += seq.traj_cm(d, t);
                count += seq.train_frames;
            }
            if (count > 0)
                for (int d = 0; d < 3; ++d)
                    head.bias[d] += static_cast<float>(mean[d] / static_cast<double>(count));
        }
    }

    const bool use_strided = !pose_model.config().dense_mode && !traj_model.config().dense_mode;
    const int64_t rf = pose_model.receptive_field();
    ClipSampler labeled_sampler(labeled, rf, 1, pose_model.config().causal);
    const bool have_unlabeled = !unlabeled.sequences.empty();
    ClipSampler unlabeled_sampler(unlabeled, rf, 1, pose_model.config().causal);
    const Skeleton& skeleton = labeled.skeleton;
    const float bone_w = plan.bone_loss_weight;
    const float reproj_w = plan.reprojection_weight;
    const float traj_w = plan.traj_loss_weight;
    // Predictions live in model units; anything closer than 1 mm (or behind
    // the camera) is skipped rather than projected.
    constexpr double z_min_units = 1.0 / kPoseScaleMm;

    SemiTrainResult result;
    std::vector<Tensor> pose_snap = snapshot(pose_model);
    std::vector<Tensor> traj_snap = snapshot(traj_model);

    for (int epoch = 0; epoch < plan.base.epochs; ++epoch) {
        const double lr = lr_schedule(plan.base, epoch);
        const double mom = bn_momentum_schedule(plan.base.bn_momentum_start,
                                                plan.base.bn_momentum_end, epoch, plan.base.epochs);
        pose_model.set_bn_momentum(static_cast<float>(mom));
        traj_model.set_bn_momentum(static_cast<float>(mom));

        const bool warm = epoch < plan.warmup_epochs || !have_unlabeled;

        SemiEpochLog entry;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.bn_momentum = mom;
        double pose_loss_sum = 0.0, traj_loss_sum = 0.0, reproj_sum = 0.0, bone_sum = 0.0;
        int64_t pose_frames = 0, reproj_batches = 0;
        bool aborted = false;

        auto labeled_step = [&](const std::vector<Clip>& lbatch) {
            Tensor input, target;
            labeled_sampler.materialize(lbatch, input, target);
            // Pose network.
            ModelTape pose_tape;
            Tensor pose_out = pose_model.forward_train(input, use_strided, pose_tape, rr.pose.dropout);
            Tensor pose_grad;
            const double ploss = pose_loss_channels(pose_out, target, 3, &pose_grad);
            if (!std::isfinite(ploss)) return false;
            ModelGrads pg = pose_model.backward(pose_grad, pose_tape);
            amsgrad_step(pose_params, pg.tensors, popt, lr, plan.base);
            // Trajectory network on the same clips.
            ModelTape traj_tape;
            Tensor traj_out = traj_model.forward_train(input, use_strided, traj_tape, rr.traj_dropout);
            Tensor traj_targets = gather_traj_targets(labeled, lbatch);
            Tensor traj_grad;
            const double tloss = traj_loss_channels(traj_out, traj_targets, &traj_grad);
            if (!std::isfinite(tloss)) return false;
            if (traj_w > 0.0f) {
                float* g = traj_grad.data();
                for (int64_t i = 0; i < traj_grad.size(); ++i) g[i] *= traj_w;
                ModelGrads tg = traj_model.backward(traj_grad, traj_tape);
                amsgrad_step(traj_params, tg.tensors, topt, lr, plan.base);
            }
            pose_loss_sum += ploss * static_cast<double>(pose_out.dim(0));
            traj_loss_sum += tloss * static_cast<double>(pose_out.dim(0));
            pose_frames += pose_out.dim(0);
            entry.labeled_frames += pose_out.dim(0);
            return true;
        };

        auto joint_step = [&](const std::vector<Clip>& lbatch, const std::vector<Clip>& ubatch) {
            const int64_t Nl = static_cast<int64_t>(lbatch.size());
            const int64_t Nu = static_cast<int64_t>(ubatch.size());
            Tensor in_l, targ_l, in_u;
            labeled_sampler.materialize(lbatch, in_l, targ_l);
            unlabeled_sampler.materialize_inputs(ubatch, in_u);

            // Labeled half first, unlabeled second, one joint batch.
            Tensor input({Nl + Nu, in_l.dim(1), in_l.dim(2)});
            std::copy_n(in_l.data(), in_l.size(), input.data());
            std::copy_n(in_u.data(), in_u.size(), input.data() + in_l.size());

            ModelTape pose_tape, traj_tape;
            Tensor pose_out = pose_model.forward_train(input, use_strided, pose_tape, rr.pose.dropout);
            Tensor traj_out = traj_model.forward_train(input, use_strided, traj_tape, rr.traj_dropout);
            const int64_t L = pose_out.dim(2);
            const int64_t J = skeleton.num_joints();

            Tensor pose_grad(pose_out.shape());
            Tensor traj_grad(traj_out.shape());

            // Labeled half: supervised pose + depth-weighted trajectory loss.
            Tensor pose_out_l({Nl, pose_out.dim(1), L});
            std::copy_n(pose_out.data(), pose_out_l.size(), pose_out_l.data());
            Tensor pose_grad_l;
            const double ploss = pose_loss_channels(pose_out_l, targ_l, 3, &pose_grad_l);
            std::copy_n(pose_grad_l.data(), pose_grad_l.size(), pose_grad.data());

            Tensor traj_out_l({Nl, 3, L});
            std::copy_n(traj_out.data(), traj_out_l.size(), traj_out_l.data());
            Tensor traj_targets = gather_traj_targets(labeled, lbatch);
            Tensor traj_grad_l;
            const double tloss = traj_loss_channels(traj_out_l, traj_targets, &traj_grad_l);
            for (int64_t i = 0; i < traj_grad_l.size(); ++i)
                traj_grad[i] = traj_w * traj_grad_l[i];

            if (!std::isfinite(ploss) || !std::isfinite(tloss)) return false;

            // Unlabeled half: back-projection. Predicted pose + trajectory in
            // camera space, projected through each clip's camera, penalized in
            // width-normalized pixels against the input keypoints.
            Tensor pose_u = slice_channels_to_frames(pose_out, Nl, Nl + Nu, 3); // [Nu*L, J, 3]
            Tensor traj_u = slice_channels_to_frames(traj_out, Nl, Nl + Nu, 3); // [Nu*L, 1, 3]
            Tensor grad_pts({Nu * L, J, 3});
            double reproj_loss_sum = 0.0;
            int64_t kept_points = 0;
            std::vector<char> kept(static_cast<size_t>(Nu * L), 0);
            // First pass: which frames are projectable, and how many points.
            for (int64_t n = 0; n < Nu; ++n) {
                for (int64_t l = 0; l < L; ++l) {
                    const int64_t row = n * L + l;
                    bool ok = true;
                    for (int64_t j = 0; j < J && ok; ++j)
                        if (!(pose_u(row, j, 2) + traj_u(row, 0, 2) > z_min_units)) ok = false;
                    kept[static_cast<size_t>(row)] = ok ? 1 : 0;
                    if (ok)
                        kept_points += J;
                    else
                        ++entry.skipped_frames;
                }
            }
            if (kept_points > 0) {
                for (int64_t n = 0; n < Nu; ++n) {
                    const Clip& c = ubatch[static_cast<size_t>(n)];
                    const TrainSequenceView& seq =
                        unlabeled.sequences[static_cast<size_t>(c.seq)];
                    const CameraModel& cam = seq.camera;
                    for (int64_t l = 0; l < L; ++l) {
                        const int64_t row = n * L + l;
                        if (!kept[static_cast<size_t>(row)]) continue;
                        Tensor pts({J, 3});
                        for (int64_t j = 0; j < J; ++j)
                            for (int64_t d = 0; d < 3; ++d)
                                pts(j, d) =
                                    (pose_u(row, j, d) + traj_u(row, 0, d)) * kPoseScaleMm;
                        const Tensor px = project(pts, cam);
                        const int64_t t = std::min<int64_t>(c.start + l, seq.frames() - 1);
                        Tensor gpx({J, 2});
                        const double inv_w = 1.0 / static_cast<double>(cam.image_w);
                        for (int64_t j = 0; j < J; ++j) {
                            const double dx = static_cast<double>(px(j, 0)) - seq.input_px(t, j, 0);
                            const double dy = static_cast<double>(px(j, 1)) - seq.input_px(t, j, 1);
                            const double norm = std::sqrt(dx * dx + dy * dy);
                            reproj_loss_sum += norm * inv_w;
                            if (norm > 1e-12) {
                                const double s =
                                    inv_w / (norm * static_cast<double>(kept_points));
                                gpx(j, 0) = static_cast<float>(dx * s);
                                gpx(j, 1) = static_cast<float>(dy * s);
                            }
                        }
                        Tensor gp = project_backward(gpx, pts, cam);
                        // Chain through the unit change into model outputs.
                        for (int64_t j = 0; j < J; ++j)
                            for (int64_t d = 0; d < 3; ++d)
                                grad_pts(row, j, d) = gp(j, d) * kPoseScaleMm;
                    }
                }
            }
            const double reproj_loss_mean =
                kept_points > 0 ? reproj_loss_sum / static_cast<double>(kept_points) : 0.0;

            // Bone-length soft constraint: unlabeled predictions vs the mean
            // bone lengths of the labeled half's targets.
            Tensor labeled_target_frames = slice_channels_to_frames(
                targ_l.reshaped({Nl, targ_l.dim(1), L}), 0, Nl, 3);
            const double bl = bone_length_loss(pose_u, labeled_target_frames, skeleton);
            if (!std::isfinite(reproj_loss_mean) || !std::isfinite(bl)) return false;
            Tensor bone_grad = bone_length_loss_backward(pose_u, labeled_target_frames, skeleton);

            // Assemble the unlabeled half of the gradients.
            add_frames_to_channels(grad_pts, pose_grad, Nl, 3, reproj_w);
            add_frames_to_channels(bone_grad, pose_grad, Nl, 3, bone_w);
            // The trajectory receives the summed per-joint projection gradient.
            Tensor traj_grad_u({Nu * L, 1, 3});
            for (int64_t row = 0; row < Nu * L; ++row)
                for (int64_t j = 0; j < J; ++j)
                    for (int64_t d = 0; d < 3; ++d) traj_grad_u(row, 0, d) += grad_pts(row, j, d);
            add_frames_to_channels(traj_grad_u, traj_grad, Nl, 3, reproj_w);

            ModelGrads pg = pose_model.backward(pose_grad, pose_tape);
            amsgrad_step(pose_params, pg.tensors, popt, lr, plan.base);
            ModelGrads tg = traj_model.backward(traj_grad, traj_tape);
            amsgrad_step(traj_params, tg.tensors, topt, lr, plan.base);

            pose_loss_sum += ploss * static_cast<double>(Nl);
            traj_loss_sum += tloss * static_cast<double>(Nl);
            reproj_sum += reproj_loss_mean;
            bone_sum += bl;
            ++reproj_batches;
            pose_frames += Nl;
            entry.labeled_frames += Nl;
            entry.unlabeled_frames += Nu;
            return true;
        };

        try {
            if (warm) {
                const auto batches = labeled_sampler.epoch_batches(
                    plan.base.batch_frames, plan.base.flip_train, rr.pose.sampler, rr.pose.flip);
                for (const auto& batch : batches) {
                    if (!labeled_step(batch)) {
                        aborted = true;
                        break;
                    }
                }
            } else {
                const int half = plan.base.batch_frames / 2;
                LabeledClipFeed feed(labeled_sampler, half, plan.base.flip_train, rr.pose.sampler,
                                     rr.pose.flip);
                const auto ubatches = unlabeled_sampler.epoch_batches(half, false,
                                                                      rr.unlabeled_sampler,
                                                                      rr.unlabeled_sampler);
                for (const auto& ubatch : ubatches) {
                    const std::vector<Clip> lbatch = feed.take(ubatch.size());
                    if (!joint_step(lbatch, ubatch)) {
                        aborted = true;
                        break;
                    }
                }
            }
        } catch (const NumericError&) {
            aborted = true;
        }

        if (aborted) {
            restore(pose_model, pose_snap);
            restore(traj_model, traj_snap);
            result.diverged = true;
            break;
        }

        entry.train_loss =
            pose_frames ? pose_loss_sum / static_cast<double>(pose_frames) * kPoseScaleMm : 0.0;
        entry.traj_wmpjpe = pose_frames ? traj_loss_sum / static_cast<double>(pose_frames) : 0.0;
        entry.reproj_loss = reproj_batches ? reproj_sum / static_cast<double>(reproj_batches) : 0.0;
        entry.bone_loss = reproj_batches ? bone_sum / static_cast<double>(reproj_batches) : 0.0;
        const EvalReport ev = evaluate_split(pose_model, labeled, true, plan.base.flip_test);
        entry.eval_mpjpe = ev.mpjpe;
        entry.eval_pmpjpe = ev.p_mpjpe;
        entry.eval_mpjve = ev.mpjve;
        result.log.push_back(entry);
        result.epochs_completed = epoch + 1;
        pose_snap = snapshot(pose_model);
        traj_snap = snapshot(traj_model);
        if (progress)
            (*progress) << "epoch " << epoch << (warm ? " (warmup)" : "") << " pose_loss "
                        << entry.train_loss << " eval_mpjpe " << entry.eval_mpjpe << " reproj "
                        << entry.reproj_loss << "\n";
    }
    return result;
}

} // namespace poselift
