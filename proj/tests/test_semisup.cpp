#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <set>

#include "helpers.hpp"
#include "poselift/semisup.hpp"

using namespace poselift;

namespace {

ModelConfig tiny_config(int out_joints = -1) {
    ModelConfig cfg;
    cfg.num_joints = 17;
    cfg.out_joints = out_joints;
    cfg.blocks = 1;
    cfg.kernel_width = 3;
    cfg.channels = 16;
    cfg.dropout_p = 0.1f;
    return cfg;
}

SemiSupPlan tiny_plan(int epochs, uint64_t seed, int warmup = 0) {
    SemiSupPlan plan;
    plan.base.epochs = epochs;
    plan.base.batch_frames = 32;
    plan.base.seed = seed;
    plan.warmup_epochs = warmup;
    return plan;
}

DatasetFile mixed_dataset(int frames, int sequences, int labeled, uint64_t seed) {
    SynthSpec spec;
    spec.num_sequences = sequences;
    spec.frames_per_sequence = frames;
    spec.num_cameras = 2;
    spec.num_labeled = labeled;
    spec.seed = seed;
    return generate_synthetic(spec);
}

bool params_equal(TemporalModel& a, TemporalModel& b) {
    auto pa = a.trainable_parameters();
    auto pb = b.trainable_parameters();
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i)
        if (std::memcmp(pa[i].tensor->data(), pb[i].tensor->data(),
                        static_cast<size_t>(pa[i].tensor->size()) * sizeof(float)) != 0)
            return false;
    return true;
}

} // namespace

TEST_CASE("plan validation") {
    SemiSupPlan plan = tiny_plan(1, 1);
    plan.base.chunk_size = 2;
    plan.base.batch_frames = 32;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan = tiny_plan(1, 1);
    plan.base.batch_frames = 33;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan = tiny_plan(1, 1);
    plan.bone_loss_weight = -1.0f;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
}

TEST_CASE("pose and trajectory parameter sets are disjoint") {
    TemporalModel pose = TemporalModel::build(tiny_config(), 1);
    TemporalModel traj = TemporalModel::build(tiny_config(1), 2);
    std::set<const Tensor*> seen;
    for (const ParamRef& p : pose.trainable_parameters()) seen.insert(p.tensor);
    for (const ParamRef& p : traj.trainable_parameters()) CHECK(seen.count(p.tensor) == 0);
}

TEST_CASE("ground-truth pose plus trajectory reprojects onto the input keypoints") {
    DatasetFile ds = mixed_dataset(60, 2, 2, 11);
    for (const SequenceRecord& rec : ds.sequences) {
        const CameraModel& cam = ds.camera_by_name(rec.camera);
        const int64_t T = rec.frames(), J = ds.skeleton.num_joints();
        Tensor pts({T, J, 3});
        for (int64_t t = 0; t < T; ++t)
            for (int64_t j = 0; j < J; ++j)
                for (int64_t d = 0; d < 3; ++d)
                    pts(t, j, d) = rec.frames_3d(t, j, d) + rec.trajectory(t, d);
        const Tensor px = project(pts, cam);
        CHECK(reprojection_loss(px, rec.frames_2d) < 1e-4);
    }
}

TEST_CASE("empty unlabeled set reduces to supervised training bit for bit") {
    DatasetFile ds = mixed_dataset(80, 2, 2, 13);
    TrainingSet labeled = make_training_set(ds, 0.1, true);
    TrainingSet unlabeled;
    unlabeled.skeleton = ds.skeleton;

    SemiSupPlan plan = tiny_plan(3, 21, 0);
    TemporalModel pose = TemporalModel::build(tiny_config(), 5);
    TemporalModel traj = TemporalModel::build(tiny_config(1), 6);
    const SemiTrainResult res =
        train_semisupervised(pose, traj, labeled, unlabeled, plan, nullptr, nullptr);
    CHECK(res.epochs_completed == 3);
    for (const SemiEpochLog& e : res.log) {
        CHECK(e.unlabeled_frames == 0);
        CHECK(e.reproj_loss == 0.0);
    }

    TemporalModel supervised = TemporalModel::build(tiny_config(), 5);
    TrainPlan sup_plan = plan.base;
    train_supervised(supervised, labeled, sup_plan);
    CHECK(params_equal(pose, supervised));
}

TEST_CASE("warmup epochs run labeled-only, then the halves balance") {
    DatasetFile ds = mixed_dataset(60, 4, 1, 17);
    TrainingSet labeled = make_training_set(ds, 0.1, true);
    TrainingSet all = make_training_set(ds, 0.0, false);
    TrainingSet unlabeled;
    unlabeled.skeleton = ds.skeleton;
    unlabeled.fps = ds.fps;
    for (TrainSequenceView& seq : all.sequences)
        if (!seq.labeled) unlabeled.sequences.push_back(std::move(seq));
    REQUIRE(unlabeled.sequences.size() == 3);

    SemiSupPlan plan = tiny_plan(3, 23, 1);
    TemporalModel pose = TemporalModel::build(tiny_config(), 7);
    TemporalModel traj = TemporalModel::build(tiny_config(1), 8);
    const SemiTrainResult res =
        train_semisupervised(pose, traj, labeled, unlabeled, plan, nullptr, nullptr);
    REQUIRE(res.epochs_completed == 3);
    CHECK(res.log[0].unlabeled_frames == 0); // warmup
    for (size_t e = 1; e < res.log.size(); ++e) {
        CHECK(res.log[e].unlabeled_frames > 0);
        CHECK(res.log[e].labeled_frames == res.log[e].unlabeled_frames);
        CHECK(std::isfinite(res.log[e].reproj_loss));
        CHECK(std::isfinite(res.log[e].bone_loss));
        CHECK(res.log[e].reproj_loss >= 0.0);
    }
}

TEST_CASE("labeled-path losses are blind to the unlabeled data") {
    DatasetFile ds = mixed_dataset(50, 3, 1, 29);
    TrainingSet labeled = make_training_set(ds, 0.1, true);
    TrainingSet all = make_training_set(ds, 0.0, false);
    TrainingSet unl_a, unl_b;
    unl_a.skeleton = unl_b.skeleton = ds.skeleton;
    for (const TrainSequenceView& seq : all.sequences) {
        if (seq.labeled) continue;
        unl_a.sequences.push_back(seq);
        TrainSequenceView scrambled = seq;
        for (int64_t i = 0; i < scrambled.input_cm.size(); ++i)
            scrambled.input_cm[i] = -scrambled.input_cm[i];
        unl_b.sequences.push_back(std::move(scrambled));
    }

    // Same seeds, different unlabeled inputs: during warmup the entire run is
    // labeled-only, so the pose nets must agree exactly.
    SemiSupPlan plan = tiny_plan(2, 31, 2);
    TemporalModel pose_a = TemporalModel::build(tiny_config(), 9);
    TemporalModel traj_a = TemporalModel::build(tiny_config(1), 10);
    TemporalModel pose_b = TemporalModel::build(tiny_config(), 9);
    TemporalModel traj_b = TemporalModel::build(tiny_config(1), 10);
    const SemiTrainResult ra =
        train_semisupervised(pose_a, traj_a, labeled, unl_a, plan, nullptr, nullptr);
    const SemiTrainResult rb =
        train_semisupervised(pose_b, traj_b, labeled, unl_b, plan, nullptr, nullptr);
    CHECK(params_equal(pose_a, pose_b));
    for (size_t e = 0; e < ra.log.size(); ++e)
        CHECK(ra.log[e].train_loss == rb.log[e].train_loss);
}

TEST_CASE("trajectory regression improves with training") {
    DatasetFile ds = mixed_dataset(120, 2, 2, 37);
    TrainingSet labeled = make_training_set(ds, 0.1, true);
    TrainingSet unlabeled;
    unlabeled.skeleton = ds.skeleton;

    SemiSupPlan plan = tiny_plan(10, 39, 0);
    TemporalModel pose = TemporalModel::build(tiny_config(), 11);
    TemporalModel traj = TemporalModel::build(tiny_config(1), 12);
    const SemiTrainResult res =
        train_semisupervised(pose, traj, labeled, unlabeled, plan, nullptr, nullptr);
    REQUIRE(res.epochs_completed == 10);
    // Depth-weighted trajectory error decreases monotonically (smoothed) and
    // materially over the run.
    for (size_t e = 1; e < res.log.size(); ++e)
        CHECK(res.log[e].traj_wmpjpe <= res.log[e - 1].traj_wmpjpe * 1.02);
    CHECK(res.log.back().traj_wmpjpe < 0.85 * res.log.front().traj_wmpjpe);

    // Full-sequence regression has the right shape and units.
    const TrainSequenceView& seq = labeled.sequences[0];
    Tensor t = regress_trajectory(traj, seq.input_px, seq.camera.image_w, seq.camera.image_h);
    CHECK(t.shape() == std::vector<int64_t>({seq.frames(), 3}));
}

TEST_CASE("joint semi-supervised steps stay finite and update both nets") {
    DatasetFile ds = mixed_dataset(60, 4, 1, 41);
    TrainingSet labeled = make_training_set(ds, 0.1, true);
    TrainingSet all = make_training_set(ds, 0.0, false);
    TrainingSet unlabeled;
    unlabeled.skeleton = ds.skeleton;
    for (TrainSequenceView& seq : all.sequences)
        if (!seq.labeled) unlabeled.sequences.push_back(std::move(seq));

    SemiSupPlan plan = tiny_plan(2, 43, 0);
    TemporalModel pose = TemporalModel::build(tiny_config(), 13);
    TemporalModel traj = TemporalModel::build(tiny_config(1), 14);
    TemporalModel pose_before = pose;
    TemporalModel traj_before = traj;
    const SemiTrainResult res =
        train_semisupervised(pose, traj, labeled, unlabeled, plan, nullptr, nullptr);
    CHECK_FALSE(res.diverged);
    CHECK_FALSE(params_equal(pose, pose_before));
    CHECK_FALSE(params_equal(traj, traj_before));
    for (const SemiEpochLog& e : res.log) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(std::isfinite(e.eval_mpjpe));
        CHECK(e.skipped_frames >= 0);
    }
}
