#include "poselift/training.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace poselift {

void TrainPlan::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr_init > 0.0f)) throw ConfigError("train: lr_init must be positive");
    if (!(lr_decay > 0.0f && lr_decay <= 1.0f))
        throw ConfigError("train: lr_decay must be in (0,1]");
    if (chunk_size < 1) throw ConfigError("train: chunk_size must be >= 1");
    if (batch_frames < 1 || batch_frames % chunk_size != 0)
        throw ConfigError("train: batch_frames must be a positive multiple of chunk_size");
    if (!(bn_momentum_start > 0.0f && bn_momentum_start <= 1.0f) ||
        !(bn_momentum_end > 0.0f && bn_momentum_end <= 1.0f))
        throw ConfigError("train: batchnorm momentum must be in (0,1]");
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f))
        throw ConfigError("train: optimizer betas must be in [0,1)");
    if (!(adam_epsilon > 0.0f)) throw ConfigError("train: adam_epsilon must be positive");
    if (holdout_fraction < 0.0f || holdout_fraction >= 1.0f)
        throw ConfigError("train: holdout_fraction must be in [0,1)");
}

double lr_schedule(const TrainPlan& plan, int epoch) {
    if (epoch < 0 || epoch >= plan.epochs)
        throw ConfigError("lr_schedule: epoch " + std::to_string(epoch) + " out of range");
    return static_cast<double>(plan.lr_init) * std::pow(static_cast<double>(plan.lr_decay), epoch);
}

double bn_momentum_schedule(double start, double end, int epoch, int total_epochs) {
    if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs)
        throw ConfigError("bn_momentum_schedule: epoch out of range");
    if (total_epochs == 1) return start;
    const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    return start * std::pow(end / start, frac);
}

AmsgradState AmsgradState::make(const std::vector<ParamRef>& params) {
    AmsgradState st;
    for (const ParamRef& p : params) {
        st.m.emplace_back(p.tensor->shape());
        st.v.emplace_back(p.tensor->shape());
        st.vhat.emplace_back(p.tensor->shape());
    }
    return st;
}

bool AmsgradState::matches(const std::vector<ParamRef>& params) const {
    if (m.size() != params.size()) return false;
    for (size_t i = 0; i < params.size(); ++i)
        if (m[i].shape() != params[i].tensor->shape()) return false;
    return true;
}

void amsgrad_step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
                  AmsgradState& state, double lr, const TrainPlan& plan) {
    if (params.size() != grads.size() || !state.matches(params))
        throw ShapeError("amsgrad: parameter/gradient/state block counts disagree");
    if (!(lr > 0.0)) throw ConfigError("amsgrad: lr must be positive");
    state.step += 1;
    const double b1 = plan.beta1, b2 = plan.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        const Tensor& g = grads[i];
        if (!p.same_shape(g))
            throw ShapeError("amsgrad: gradient shape " + g.shape_str() + " for block '" +
                             params[i].name + "' expected " + p.shape_str());
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        Tensor& vh = state.vhat[i];
        for (int64_t k = 0; k < p.size(); ++k) {
            const double gk = g[k];
            if (!std::isfinite(gk))
                throw NumericError("amsgrad: non-finite gradient in parameter block '" +
                                   params[i].name + "'");
            const double mk = b1 * m[k] + (1.0 - b1) * gk;
            const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            double denom_moment = vk;
            if (plan.amsgrad) {
                const double vhk = std::max(static_cast<double>(vh[k]), vk);
                vh[k] = static_cast<float>(vhk);
                denom_moment = vhk;
            }
            const double update =
                lr * (mk / c1) / (std::sqrt(denom_moment / c2) + plan.adam_epsilon);
            p[k] = static_cast<float>(p[k] - update);
        }
    }
}

int64_t TrainingSet::total_train_frames() const {
    int64_t n = 0;
    for (const TrainSequenceView& s : sequences)
        if (s.labeled) n += s.train_frames;
    return n;
}

TrainingSet make_training_set(const DatasetFile& ds, double holdout_fraction, bool labeled_only) {
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        throw ConfigError("make_training_set: holdout_fraction must be in [0,1)");
    ds.validate();
    TrainingSet set;
    set.skeleton = ds.skeleton;
    set.fps = ds.fps;
    for (const SequenceRecord& rec : ds.sequences) {
        if (labeled_only && !rec.labeled) continue;
        TrainSequenceView v;
        v.id = rec.id;
        v.camera = ds.camera_by_name(rec.camera);
        v.input_px = rec.frames_2d;
        v.input_cm = frames_to_channels(
            normalize_keypoints(rec.frames_2d, v.camera.image_w, v.camera.image_h));
        v.labeled = rec.labeled;
        const int64_t T = rec.frames();
        if (rec.labeled) {
            v.target_frames = rec.frames_3d;
            v.traj_frames = rec.trajectory;
            // Channel-major training targets are in model units (meters).
            Tensor scaled_pose = rec.frames_3d;
            for (int64_t i = 0; i < scaled_pose.size(); ++i) scaled_pose[i] /= kPoseScaleMm;
            v.target_cm = frames_to_channels(scaled_pose);
            Tensor scaled_traj = rec.trajectory;
            for (int64_t i = 0; i < scaled_traj.size(); ++i) scaled_traj[i] /= kPoseScaleMm;
            v.traj_cm = frames_to_channels(scaled_traj.reshaped({T, 1, 3}));
            const int64_t holdout = static_cast<int64_t>(
                std::floor(static_cast<double>(T) * holdout_fraction));
            v.train_frames = std::max<int64_t>(1, T - holdout);
        } else {
            v.train_frames = T;
        }
        set.sequences.push_back(std::move(v));
    }
    return set;
}

ClipSampler::ClipSampler(const TrainingSet& set, int64_t receptive_field, int chunk_size,
                         bool causal)
    : set_(&set), rf_(receptive_field), chunk_(chunk_size), causal_(causal) {
    if (rf_ < 1) throw ConfigError("sampler: receptive field must be >= 1");
    if (chunk_ < 1) throw ConfigError("sampler: chunk_size must be >= 1");
}

std::vector<std::vector<Clip>> ClipSampler::epoch_batches(int batch_frames, bool flip_train,
                                                          Rng& order_rng, Rng& flip_rng) const {
    if (batch_frames < 1 || batch_frames % chunk_ != 0)
        throw ConfigError("sampler: batch_frames must be a positive multiple of chunk_size");
    std::vector<Clip> clips;
    for (size_t s = 0; s < set_->sequences.size(); ++s) {
        const TrainSequenceView& seq = set_->sequences[s];
        for (int64_t start = 0; start < seq.train_frames; start += chunk_) {
            Clip c;
            c.seq = static_cast<int>(s);
            c.start = start;
            c.length = std::min<int64_t>(chunk_, seq.train_frames - start);
            clips.push_back(c);
        }
    }
    order_rng.shuffle(clips);
    if (flip_train)
        for (Clip& c : clips) c.flipped = flip_rng.bernoulli(0.5);

    // Clips of one batch must share a length to stack into one tensor; the
    // shorter sequence-tail chunks are batched among themselves.
    std::vector<std::vector<Clip>> batches;
    std::vector<std::vector<Clip>> by_length(static_cast<size_t>(chunk_) + 1);
    for (const Clip& c : clips) by_length[static_cast<size_t>(c.length)].push_back(c);
    for (int64_t len = chunk_; len >= 1; --len) {
        const auto& bucket = by_length[static_cast<size_t>(len)];
        if (bucket.empty()) continue;
        const int64_t per_batch = std::max<int64_t>(1, batch_frames / len);
        const size_t first_batch = batches.size();
        for (size_t i = 0; i < bucket.size(); i += static_cast<size_t>(per_batch)) {
            const size_t end = std::min(bucket.size(), i + static_cast<size_t>(per_batch));
            batches.emplace_back(bucket.begin() + static_cast<std::ptrdiff_t>(i),
                                 bucket.begin() + static_cast<std::ptrdiff_t>(end));
        }
        // A trailing one-clip batch would starve batch normalization of
        // samples; borrow a clip from the previous batch of this bucket.
        if (batches.back().size() == 1 && batches.size() > first_batch + 1) {
            auto& prev = batches[batches.size() - 2];
            batches.back().push_back(prev.back());
            prev.pop_back();
        }
    }
    return batches;
}

namespace {

/// Copies the input window of a clip with replication padding, clamping
/// source frames to [0, limit).
void copy_window(const Tensor& src_cm, int64_t first, int64_t count, int64_t limit, float* dst,
                 int64_t dst_stride) {
    const int64_t C = src_cm.dim(0);
    for (int64_t c = 0; c < C; ++c) {
        const float* row = &src_cm(c, 0);
        float* out = dst + c * dst_stride;
        for (int64_t t = 0; t < count; ++t) {
            const int64_t s = std::clamp<int64_t>(first + t, 0, limit - 1);
            out[t] = row[s];
        }
    }
}

} // namespace

void ClipSampler::materialize_inputs(const std::vector<Clip>& batch, Tensor& input) const {
    if (batch.empty()) throw ConfigError("sampler: empty batch");
    const int64_t len = batch[0].length;
    const int64_t in_len = rf_ + len - 1;
    const int64_t pad_left = causal_ ? rf_ - 1 : (rf_ - 1) / 2;
    const int64_t C_in = set_->sequences[static_cast<size_t>(batch[0].seq)].input_cm.dim(0);
    input = Tensor({static_cast<int64_t>(batch.size()), C_in, in_len});
    for (size_t i = 0; i < batch.size(); ++i) {
        const Clip& c = batch[i];
        if (c.length != len)
            throw ShapeError("sampler: mixed clip lengths in one batch");
        const TrainSequenceView& seq = set_->sequences[static_cast<size_t>(c.seq)];
        copy_window(seq.input_cm, c.start - pad_left, in_len, seq.train_frames,
                    &input(static_cast<int64_t>(i), 0, 0), in_len);
        if (c.flipped) {
            Tensor view = Tensor({C_in, in_len});
            std::copy_n(&input(static_cast<int64_t>(i), 0, 0), C_in * in_len, view.data());
            flip_channels_inplace(view, 2, set_->skeleton.left_right_pairs);
            std::copy_n(view.data(), C_in * in_len, &input(static_cast<int64_t>(i), 0, 0));
        }
    }
}

void ClipSampler::materialize(const std::vector<Clip>& batch, Tensor& input,
                              Tensor& target) const {
    materialize_inputs(batch, input);
    const int64_t len = batch[0].length;
    const int64_t C_out =
        set_->sequences[static_cast<size_t>(batch[0].seq)].target_cm.dim(0);
    target = Tensor({static_cast<int64_t>(batch.size()), C_out, len});
    for (size_t i = 0; i < batch.size(); ++i) {
        const Clip& c = batch[i];
        const TrainSequenceView& seq = set_->sequences[static_cast<size_t>(c.seq)];
        if (!seq.labeled)
            throw DataError("sampler: sequence '" + seq.id + "' has no targets");
        copy_window(seq.target_cm, c.start, len, seq.train_frames,
                    &target(static_cast<int64_t>(i), 0, 0), len);
        if (c.flipped) {
            Tensor view = Tensor({C_out, len});
            std::copy_n(&target(static_cast<int64_t>(i), 0, 0), C_out * len, view.data());
            flip_channels_inplace(view, 3, set_->skeleton.left_right_pairs);
            std::copy_n(view.data(), C_out * len, &target(static_cast<int64_t>(i), 0, 0));
        }
    }
}

double pose_loss_channels(const Tensor& pred_cm, const Tensor& target_cm, int64_t dims,
                          Tensor* grad) {
    if (pred_cm.rank() != 3 || !pred_cm.same_shape(target_cm))
        throw ShapeError("pose_loss: shape mismatch " + pred_cm.shape_str() + " vs " +
                         target_cm.shape_str());
    if (pred_cm.dim(1) % dims != 0)
        throw ShapeError("pose_loss: channel count not divisible by coordinate dims");
    const int64_t N = pred_cm.dim(0), J = pred_cm.dim(1) / dims, L = pred_cm.dim(2);
    const int64_t total = N * J * L;
    if (grad) *grad = Tensor(pred_cm.shape());
    double sum = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t j = 0; j < J; ++j) {
            for (int64_t l = 0; l < L; ++l) {
                double d2 = 0.0;
                for (int64_t d = 0; d < dims; ++d) {
                    const double e = static_cast<double>(pred_cm(n, j * dims + d, l)) -
                                     target_cm(n, j * dims + d, l);
                    d2 += e * e;
                }
                const double norm = std::sqrt(d2);
                sum += norm;
                if (grad && norm > 1e-12) {
                    const double s = 1.0 / (norm * static_cast<double>(total));
                    for (int64_t d = 0; d < dims; ++d)
                        (*grad)(n, j * dims + d, l) = static_cast<float>(
                            (static_cast<double>(pred_cm(n, j * dims + d, l)) -
                             target_cm(n, j * dims + d, l)) *
                            s);
                }
            }
        }
    }
    return sum / static_cast<double>(total);
}

TrainerRngs TrainerRngs::from_seed(uint64_t seed) {
    TrainerRngs r{Rng(seed * 0x9E3779B97F4A7C15ULL + 1), Rng(seed * 0x9E3779B97F4A7C15ULL + 2),
                  Rng(seed * 0x9E3779B97F4A7C15ULL + 5)};
    return r;
}

Tensor predict_record(const TemporalModel& model, const TrainSequenceView& seq,
                      const Skeleton& skeleton, bool flip_test) {
    return predict_sequence(model, seq.input_px, seq.camera.image_w, seq.camera.image_h, flip_test,
                            skeleton.left_right_pairs);
}

EvalReport evaluate_split(const TemporalModel& model, const TrainingSet& set, bool holdout,
                          bool flip_test) {
    EvalReport rep;
    double sum_mpjpe = 0.0, sum_pmpjpe = 0.0, sum_nmpjpe = 0.0, sum_mpjve = 0.0;
    int64_t frames = 0, vel_frames = 0;
    for (const TrainSequenceView& seq : set.sequences) {
        if (!seq.labeled) continue;
        const int64_t T = seq.frames();
        const int64_t begin = holdout ? seq.train_frames : 0;
        const int64_t end = holdout ? T : seq.train_frames;
        const int64_t n = end - begin;
        if (n < 1) continue;
        const Tensor pred_full = predict_record(model, seq, set.skeleton, flip_test);
        const int64_t J = pred_full.dim(1);
        Tensor pred({n, J, 3}), gt({n, J, 3});
        std::copy_n(&pred_full(begin, 0, 0), n * J * 3, pred.data());
        std::copy_n(&seq.target_frames(begin, 0, 0), n * J * 3, gt.data());
        sum_mpjpe += mpjpe(pred, gt) * static_cast<double>(n);
        sum_pmpjpe += p_mpjpe(pred, gt) * static_cast<double>(n);
        sum_nmpjpe += n_mpjpe(pred, gt) * static_cast<double>(n);
        frames += n;
        if (n >= 2) {
            sum_mpjve += mpjve(pred, gt, set.fps) * static_cast<double>(n - 1);
            vel_frames += n - 1;
        }
    }
    rep.frames = frames;
    if (frames > 0) {
        rep.mpjpe = sum_mpjpe / static_cast<double>(frames);
        rep.p_mpjpe = sum_pmpjpe / static_cast<double>(frames);
        rep.n_mpjpe = sum_nmpjpe / static_cast<double>(frames);
    }
    if (vel_frames > 0) rep.mpjve = sum_mpjve / static_cast<double>(vel_frames);
    return rep;
}

namespace {

std::vector<Tensor> snapshot_model(TemporalModel& model) {
    std::vector<Tensor> snap;
    for (const ParamRef& p : model.trainable_parameters()) snap.push_back(*p.tensor);
    for (const ParamRef& p : model.state_tensors()) snap.push_back(*p.tensor);
    return snap;
}

void restore_model(TemporalModel& model, const std::vector<Tensor>& snap) {
    size_t i = 0;
    for (const ParamRef& p : model.trainable_parameters()) *p.tensor = snap[i++];
    for (const ParamRef& p : model.state_tensors()) *p.tensor = snap[i++];
}

} // namespace

Checkpoint make_training_checkpoint(TemporalModel& model, const AmsgradState& opt,
                                    const TrainerRngs& rngs, int epoch) {
    Checkpoint ck = make_model_checkpoint(model, epoch);
    const auto params = model.trainable_parameters();
    for (size_t i = 0; i < params.size(); ++i) {
        ck.blobs.emplace_back("opt.m." + params[i].name, opt.m[i]);
        ck.blobs.emplace_back("opt.v." + params[i].name, opt.v[i]);
        ck.blobs.emplace_back("opt.vhat." + params[i].name, opt.vhat[i]);
    }
    ck.annotations["opt.step"] = std::to_string(opt.step);
    ck.rng_states["sampler"] = rngs.sampler.save_state();
    ck.rng_states["dropout"] = rngs.dropout.save_state();
    ck.rng_states["flip"] = rngs.flip.save_state();
    return ck;
}

void load_training_state(const Checkpoint& ck, const std::vector<ParamRef>& params,
                         AmsgradState& opt, TrainerRngs& rngs) {
    opt = AmsgradState::make(params);
    for (size_t i = 0; i < params.size(); ++i) {
        for (const auto& [prefix, dst] :
             std::initializer_list<std::pair<const char*, Tensor*>>{
                 {"opt.m.", &opt.m[i]}, {"opt.v.", &opt.v[i]}, {"opt.vhat.", &opt.vhat[i]}}) {
            const Tensor* blob = ck.find_blob(prefix + params[i].name);
            if (!blob)
                throw DataError("checkpoint: missing optimizer blob '" + std::string(prefix) +
                                params[i].name + "'");
            if (blob->shape() != dst->shape())
                throw DataError("checkpoint: optimizer blob '" + std::string(prefix) +
                                params[i].name + "' has shape " + blob->shape_str());
            *dst = *blob;
        }
    }
    opt.step = std::stoll(ck.annotations.at("opt.step"));
    rngs.sampler.load_state(ck.rng_states.at("sampler"));
    rngs.dropout.load_state(ck.rng_states.at("dropout"));
    rngs.flip.load_state(ck.rng_states.at("flip"));
}

TrainResult train_supervised(TemporalModel& model, const TrainingSet& data, const TrainPlan& plan,
                             AmsgradState* opt_state, TrainerRngs* rngs, int start_epoch,
                             std::ostream* progress) {
    plan.validate();
    if (data.total_train_frames() < 1) throw DataError("train: no labeled training frames");

    const auto params = model.trainable_parameters();
    AmsgradState local_opt = AmsgradState::make(params);
    AmsgradState& opt = opt_state ? *opt_state : local_opt;
    if (opt_state && !opt_state->matches(params)) *opt_state = AmsgradState::make(params);

    TrainerRngs local_rngs = TrainerRngs::from_seed(plan.seed);
    TrainerRngs& rr = rngs ? *rngs : local_rngs;

    const bool use_strided = plan.chunk_size == 1 && !model.config().dense_mode;
    ClipSampler sampler(data, model.receptive_field(), plan.chunk_size, model.config().causal);

    TrainResult result;
    std::vector<Tensor> last_good = snapshot_model(model);

    for (int epoch = start_epoch; epoch < plan.epochs; ++epoch) {
        const double lr = lr_schedule(plan, epoch);
        const double mom =
            bn_momentum_schedule(plan.bn_momentum_start, plan.bn_momentum_end, epoch, plan.epochs);
        model.set_bn_momentum(static_cast<float>(mom));

        double loss_sum = 0.0;
        int64_t loss_frames = 0;
        bool aborted = false;
        const auto batches =
            sampler.epoch_batches(plan.batch_frames, plan.flip_train, rr.sampler, rr.flip);
        for (const auto& batch : batches) {
            Tensor input, target;
            sampler.materialize(batch, input, target);
            ModelTape tape;
            Tensor pred = model.forward_train(input, use_strided, tape, rr.dropout);
            Tensor grad;
            const double loss = pose_loss_channels(pred, target, 3, &grad);
            const int64_t frames_here = pred.dim(0) * pred.dim(2);
            if (!std::isfinite(loss)) {
                aborted = true;
                break;
            }
            try {
                ModelGrads grads = model.backward(grad, tape);
                amsgrad_step(params, grads.tensors, opt, lr, plan);
            } catch (const NumericError&) {
                aborted = true;
                break;
            }
            loss_sum += loss * static_cast<double>(frames_here);
            loss_frames += frames_here;
        }
        if (aborted) {
            restore_model(model, last_good);
            result.diverged = true;
            break;
        }

        EpochLog entry;
        entry.epoch = epoch;
        // The network trains in model units; the log speaks millimeters.
        entry.train_loss =
            loss_frames ? loss_sum / static_cast<double>(loss_frames) * kPoseScaleMm : 0.0;
        const EvalReport ev = evaluate_split(model, data, true, plan.flip_test);
        entry.eval_mpjpe = ev.mpjpe;
        entry.eval_pmpjpe = ev.p_mpjpe;
        entry.eval_mpjve = ev.mpjve;
        entry.lr = lr;
        entry.bn_momentum = mom;
        result.log.push_back(entry);
        result.epochs_completed = epoch + 1;
        last_good = snapshot_model(model);
        if (progress)
            (*progress) << "epoch " << epoch << " train_loss " << entry.train_loss << " eval_mpjpe "
                        << entry.eval_mpjpe << "\n";
    }
    return result;
}

} // namespace poselift
