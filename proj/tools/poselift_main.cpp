#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "poselift/complexity.hpp"
#include "poselift/dataio.hpp"
#include "poselift/semisup.hpp"
#include "poselift/training.hpp"

using namespace poselift;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

fs::path make_run_dir(std::string out, uint64_t seed) {
    if (out.empty()) out = "runs/" + timestamp_utc() + "-seed" + std::to_string(seed);
    fs::create_directories(out);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write '" + path.string() + "'");
    os << text;
}

struct ModelFlags {
    int joints = 17;
    int blocks = 2;
    int kernel_width = 3;
    int channels = 128;
    float dropout = 0.25f;
    bool causal = false;
    bool dense = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--joints", joints, "Joints per pose");
        cmd->add_option("--blocks", blocks, "Residual blocks B");
        cmd->add_option("--kernel-width", kernel_width, "Kernel width W");
        cmd->add_option("--channels", channels, "Hidden channels C");
        cmd->add_option("--dropout", dropout, "Dropout probability");
        cmd->add_flag("--causal", causal, "Causal (past-only) convolutions");
        cmd->add_flag("--dense", dense, "Dense convolutions instead of dilated");
    }

    ModelConfig config() const {
        ModelConfig cfg;
        cfg.num_joints = joints;
        cfg.blocks = blocks;
        cfg.kernel_width = kernel_width;
        cfg.channels = channels;
        cfg.dropout_p = dropout;
        cfg.causal = causal;
        cfg.dense_mode = dense;
        return cfg;
    }
};

struct PlanFlags {
    int epochs = 80;
    float lr = 1e-3f;
    float lr_decay = 0.95f;
    int batch_frames = 128;
    int chunk_size = 1;
    float bn_momentum_start = 0.1f;
    float bn_momentum_end = 0.001f;
    bool flip_train = false;
    bool flip_test = false;
    float holdout = 0.1f;
    uint64_t seed = 0;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "Training epochs");
        cmd->add_option("--lr", lr, "Initial learning rate");
        cmd->add_option("--lr-decay", lr_decay, "Per-epoch learning-rate shrink factor");
        cmd->add_option("--batch-frames", batch_frames, "Predicted frames per batch");
        cmd->add_option("--chunk-size", chunk_size, "Output frames per training sample");
        cmd->add_option("--bn-momentum-start", bn_momentum_start, "Batchnorm momentum at epoch 0");
        cmd->add_option("--bn-momentum-end", bn_momentum_end, "Batchnorm momentum at the last epoch");
        cmd->add_flag("--flip-train", flip_train, "Horizontal flip augmentation during training");
        cmd->add_flag("--flip-test", flip_test, "Test-time flip averaging");
        cmd->add_option("--holdout", holdout, "Held-out tail fraction per sequence");
        cmd->add_option("--seed", seed, "Run seed");
    }

    TrainPlan plan() const {
        TrainPlan p;
        p.epochs = epochs;
        p.lr_init = lr;
        p.lr_decay = lr_decay;
        p.batch_frames = batch_frames;
        p.chunk_size = chunk_size;
        p.bn_momentum_start = bn_momentum_start;
        p.bn_momentum_end = bn_momentum_end;
        p.flip_train = flip_train;
        p.flip_test = flip_test;
        p.holdout_fraction = holdout;
        p.seed = seed;
        return p;
    }
};

std::string csv_header_supervised() {
    return "epoch,train_loss,eval_mpjpe,eval_pmpjpe,eval_mpjve,lr,bn_momentum\n";
}

std::string csv_row(const EpochLog& e) {
    std::ostringstream os;
    os << e.epoch << ',' << e.train_loss << ',' << e.eval_mpjpe << ',' << e.eval_pmpjpe << ','
       << e.eval_mpjve << ',' << e.lr << ',' << e.bn_momentum << '\n';
    return os.str();
}

std::string csv_header_semisup() {
    return "epoch,train_loss,eval_mpjpe,eval_pmpjpe,eval_mpjve,lr,bn_momentum,"
           "reproj_loss,bone_loss,traj_wmpjpe,labeled_frames,unlabeled_frames\n";
}

std::string csv_row(const SemiEpochLog& e) {
    std::ostringstream os;
    os << e.epoch << ',' << e.train_loss << ',' << e.eval_mpjpe << ',' << e.eval_pmpjpe << ','
       << e.eval_mpjve << ',' << e.lr << ',' << e.bn_momentum << ',' << e.reproj_loss << ','
       << e.bone_loss << ',' << e.traj_wmpjpe << ',' << e.labeled_frames << ','
       << e.unlabeled_frames << '\n';
    return os.str();
}

int cmd_synth(const std::string& out, const SynthSpec& spec) {
    DatasetFile ds = generate_synthetic(spec);
    save_dataset(ds, out);
    int64_t frames = 0, labeled = 0;
    for (const SequenceRecord& s : ds.sequences) {
        frames += s.frames();
        if (s.labeled) ++labeled;
    }
    std::cout << "wrote " << out << ": " << ds.sequences.size() << " sequences (" << labeled
              << " labeled), " << frames << " frames, " << ds.cameras.size() << " cameras, noise "
              << spec.noise_std_px << " px, seed " << spec.seed << "\n";
    return kExitOk;
}

int cmd_train(const std::string& dataset_path, const std::string& out, const ModelFlags& mf,
              const PlanFlags& pf, const std::string& resume, const std::string& config_echo) {
    const DatasetFile ds = load_dataset(dataset_path);
    const TrainingSet set = make_training_set(ds, pf.holdout, true);
    const TrainPlan plan = pf.plan();
    plan.validate();

    const fs::path run_dir = make_run_dir(out, plan.seed);
    write_text(run_dir / "config.cfg", config_echo);

    TemporalModel model = TemporalModel::build(mf.config(), plan.seed);
    auto params = model.trainable_parameters();
    AmsgradState opt = AmsgradState::make(params);
    TrainerRngs rngs = TrainerRngs::from_seed(plan.seed);
    int start_epoch = 0;
    if (!resume.empty()) {
        const Checkpoint ck = load_checkpoint(resume);
        model = model_from_checkpoint(ck);
        params = model.trainable_parameters();
        load_training_state(ck, params, opt, rngs);
        start_epoch = ck.epoch;
        std::cout << "resuming from " << resume << " at epoch " << start_epoch << "\n";
    }

    std::ofstream log(run_dir / "log.csv", start_epoch > 0 ? std::ios::app : std::ios::out);
    if (start_epoch == 0) log << csv_header_supervised();

    const fs::path ck_path = run_dir / "checkpoint.plck";
    for (int epoch = start_epoch; epoch < plan.epochs; ++epoch) {
        TrainPlan stage = plan;
        stage.epochs = epoch + 1;
        const TrainResult res = train_supervised(model, set, stage, &opt, &rngs, epoch);
        if (res.diverged) {
            std::cerr << "training diverged at epoch " << epoch
                      << "; last good checkpoint kept at " << ck_path << "\n";
            return kExitNumeric;
        }
        const EpochLog& e = res.log.back();
        log << csv_row(e);
        log.flush();
        std::cout << "epoch " << e.epoch << " train_loss " << std::fixed << std::setprecision(2)
                  << e.train_loss << " mm, eval_mpjpe " << e.eval_mpjpe << " mm\n";
        Checkpoint ck = make_training_checkpoint(model, opt, rngs, epoch + 1);
        save_checkpoint(ck, ck_path.string());
    }
    std::cout << "done; checkpoint at " << ck_path << "\n";
    return kExitOk;
}

int cmd_train_semisup(const std::string& dataset_path, const std::string& out,
                      const ModelFlags& mf, const PlanFlags& pf, int warmup, float bone_w,
                      float reproj_w, float traj_w, const std::string& config_echo) {
    const DatasetFile ds = load_dataset(dataset_path);
    const TrainingSet labeled = make_training_set(ds, pf.holdout, true);
    TrainingSet all = make_training_set(ds, 0.0, false);
    TrainingSet unlabeled;
    unlabeled.skeleton = ds.skeleton;
    unlabeled.fps = ds.fps;
    for (TrainSequenceView& seq : all.sequences)
        if (!seq.labeled) unlabeled.sequences.push_back(std::move(seq));
    if (unlabeled.sequences.empty())
        std::cout << "warning: no unlabeled sequences; training reduces to supervised\n";

    SemiSupPlan plan;
    plan.base = pf.plan();
    plan.warmup_epochs = warmup;
    plan.bone_loss_weight = bone_w;
    plan.reprojection_weight = reproj_w;
    plan.traj_loss_weight = traj_w;
    plan.validate();

    const fs::path run_dir = make_run_dir(out, plan.base.seed);
    write_text(run_dir / "config.cfg", config_echo);

    TemporalModel pose = TemporalModel::build(mf.config(), plan.base.seed);
    ModelConfig traj_cfg = mf.config();
    traj_cfg.out_joints = 1;
    TemporalModel traj = TemporalModel::build(traj_cfg, plan.base.seed + 1);

    std::ofstream log(run_dir / "log.csv");
    log << csv_header_semisup();
    const SemiTrainResult res =
        train_semisupervised(pose, traj, labeled, unlabeled, plan, nullptr, nullptr, nullptr,
                             &std::cout);
    for (const SemiEpochLog& e : res.log) log << csv_row(e);
    Checkpoint pose_ck = make_model_checkpoint(pose, res.epochs_completed);
    save_checkpoint(pose_ck, (run_dir / "checkpoint.plck").string());
    Checkpoint traj_ck = make_model_checkpoint(traj, res.epochs_completed);
    save_checkpoint(traj_ck, (run_dir / "trajectory.plck").string());
    if (res.diverged) {
        std::cerr << "training diverged; checkpoints hold the last good state\n";
        return kExitNumeric;
    }
    std::cout << "done; checkpoints in " << run_dir << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& ck_path, const std::string& dataset_path,
             const std::string& protocol, bool flip_test, const std::string& out_csv) {
    const Checkpoint ck = load_checkpoint(ck_path);
    const TemporalModel model = model_from_checkpoint(ck);
    const DatasetFile ds = load_dataset(dataset_path);
    if (ds.skeleton.num_joints() != model.config().num_joints)
        throw DataError("eval: dataset has " + std::to_string(ds.skeleton.num_joints()) +
                        " joints, checkpoint expects " +
                        std::to_string(model.config().num_joints));
    const TrainingSet set = make_training_set(ds, 0.0, true);
    if (set.sequences.empty()) throw DataError("eval: dataset has no labeled sequences");

    std::string metric_name;
    std::ostringstream csv;
    double weighted = 0.0;
    int64_t total_frames = 0;
    csv << "sequence,frames,value\n";
    for (const TrainSequenceView& seq : set.sequences) {
        const Tensor pred = predict_record(model, seq, set.skeleton, flip_test);
        double value = 0.0;
        if (protocol == "1") {
            metric_name = "mpjpe_mm";
            value = mpjpe(pred, seq.target_frames);
        } else if (protocol == "2") {
            metric_name = "p_mpjpe_mm";
            value = p_mpjpe(pred, seq.target_frames);
        } else if (protocol == "3") {
            metric_name = "n_mpjpe_mm";
            value = n_mpjpe(pred, seq.target_frames);
        } else if (protocol == "velocity") {
            metric_name = "mpjve_mm";
            value = mpjve(pred, seq.target_frames, set.fps);
        } else {
            throw ConfigError("eval: unknown protocol '" + protocol + "'");
        }
        csv << seq.id << ',' << seq.frames() << ',' << value << '\n';
        weighted += value * static_cast<double>(seq.frames());
        total_frames += seq.frames();
    }
    const double aggregate = weighted / static_cast<double>(total_frames);
    csv << "ALL," << total_frames << ',' << aggregate << '\n';
    std::cout << "protocol " << protocol << " (" << metric_name << ")\n" << csv.str();
    if (!out_csv.empty()) write_text(out_csv, csv.str());
    return kExitOk;
}

int cmd_predict(const std::string& ck_path, const std::string& dataset_path,
                const std::string& out_path, bool flip_test) {
    const Checkpoint ck = load_checkpoint(ck_path);
    const TemporalModel model = model_from_checkpoint(ck);
    const DatasetFile ds = load_dataset(dataset_path);
    if (ds.skeleton.num_joints() != model.config().num_joints)
        throw DataError("predict: dataset/checkpoint joint counts differ");

    DatasetFile out = ds;
    out.annotations["generator"] = "poselift predict";
    out.annotations["causal"] = model.config().causal ? "true" : "false";
    out.annotations["source_checkpoint"] = ck_path;
    const TrainingSet set = make_training_set(ds, 0.0, false);
    for (size_t i = 0; i < out.sequences.size(); ++i) {
        SequenceRecord& rec = out.sequences[i];
        const Tensor pred = predict_record(model, set.sequences[i], set.skeleton, flip_test);
        rec.frames_3d = pred;
        rec.trajectory = Tensor({rec.frames(), 3});
        rec.labeled = true;
    }
    save_dataset(out, out_path);
    std::cout << "wrote predictions for " << out.sequences.size() << " sequences to " << out_path
              << "\n";
    return kExitOk;
}

int cmd_flops(const ModelFlags& mf, const std::string& out_csv) {
    const CostReport rep = estimate(mf.config());
    const auto mflops = rep.layer_mflops_rounded();
    std::ostringstream csv;
    csv << "layer,name,kernel_width,in_channels,out_channels,flops_per_frame,mflops,params\n";
    std::printf("%-5s %-14s %2s %6s %6s %14s %8s %10s\n", "layer", "name", "W", "C_in", "C_out",
                "FLOPs/frame", "MFLOPs", "params");
    for (size_t i = 0; i < rep.layers.size(); ++i) {
        const LayerCost& lc = rep.layers[i];
        std::printf("%-5d %-14s %2d %6d %6d %14lld %8.3f %10lld\n", lc.index, lc.name.c_str(),
                    lc.kernel_width, lc.in_channels, lc.out_channels,
                    static_cast<long long>(lc.flops_per_frame), mflops[i],
                    static_cast<long long>(lc.params));
        csv << lc.index << ',' << lc.name << ',' << lc.kernel_width << ',' << lc.in_channels
            << ',' << lc.out_channels << ',' << lc.flops_per_frame << ',' << std::fixed
            << std::setprecision(3) << mflops[i] << ',' << lc.params << '\n';
    }
    std::printf("total per-frame cost: %.3f MFLOPs (itemized), exact %lld FLOPs (%.2f MFLOPs)\n",
                rep.total_mflops_rounded(), static_cast<long long>(rep.total_flops_per_frame),
                static_cast<double>(rep.total_flops_per_frame) / 1e6);
    std::printf("parameters: %lld (%.2fM)\n", static_cast<long long>(rep.total_params),
                static_cast<double>(rep.total_params) / 1e6);
    if (!out_csv.empty()) write_text(out_csv, csv.str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"poselift: temporal-convolution 3D pose lifting"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI-style config file");
    app.allow_config_extras(false);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic motion-capture dataset");
    std::string synth_out = "synthetic.plds";
    SynthSpec spec;
    synth->add_option("--out", synth_out, "Output dataset path");
    synth->add_option("--sequences", spec.num_sequences, "Number of sequences");
    synth->add_option("--frames", spec.frames_per_sequence, "Frames per sequence");
    synth->add_option("--cameras", spec.num_cameras, "Number of cameras");
    synth->add_option("--labeled", spec.num_labeled, "Sequences with 3-D labels (-1: all)");
    synth->add_option("--fps", spec.fps, "Frames per second");
    synth->add_option("--noise-std", spec.noise_std_px, "Keypoint noise sigma, px");
    synth->add_option("--motion-scale", spec.motion_scale, "Joint-angle swing amplitude scale");
    synth->add_option("--seed", spec.seed, "Generator seed");

    // train
    auto* train = app.add_subcommand("train", "Supervised training");
    std::string train_ds, train_out, train_resume;
    ModelFlags train_mf;
    PlanFlags train_pf;
    train->add_option("--dataset", train_ds, "Dataset path")->required();
    train->add_option("--out", train_out, "Run directory (default runs/<timestamp>-seed<seed>)");
    train->add_option("--resume", train_resume, "Checkpoint to resume from");
    train_mf.add_to(train);
    train_pf.add_to(train);

    // train-semisup
    auto* semi = app.add_subcommand("train-semisup", "Semi-supervised back-projection training");
    std::string semi_ds, semi_out;
    ModelFlags semi_mf;
    PlanFlags semi_pf;
    int warmup = 1;
    float bone_w = 10.0f, reproj_w = 1.0f, traj_w = 1.0f;
    semi->add_option("--dataset", semi_ds, "Dataset path")->required();
    semi->add_option("--out", semi_out, "Run directory");
    semi->add_option("--warmup", warmup, "Labeled-only warmup epochs");
    semi->add_option("--bone-weight", bone_w, "Bone-length loss weight");
    semi->add_option("--reproj-weight", reproj_w, "Reprojection loss weight");
    semi->add_option("--traj-weight", traj_w, "Trajectory loss weight");
    semi_mf.add_to(semi);
    semi_pf.add_to(semi);

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_ck, eval_ds, eval_protocol = "1", eval_out;
    bool eval_flip = false;
    eval->add_option("--checkpoint", eval_ck, "Checkpoint path")->required();
    eval->add_option("--dataset", eval_ds, "Dataset path")->required();
    eval->add_option("--protocol", eval_protocol, "1 (MPJPE), 2 (P-MPJPE), 3 (N-MPJPE), velocity");
    eval->add_flag("--flip-test", eval_flip, "Test-time flip averaging");
    eval->add_option("--out", eval_out, "Write the metric CSV here");

    // predict
    auto* predict = app.add_subcommand("predict", "Lift a dataset's keypoints to 3-D poses");
    std::string pred_ck, pred_ds, pred_out = "predictions.plds";
    bool pred_flip = false;
    predict->add_option("--checkpoint", pred_ck, "Checkpoint path")->required();
    predict->add_option("--dataset", pred_ds, "Dataset path")->required();
    predict->add_option("--out", pred_out, "Output dataset path");
    predict->add_flag("--flip-test", pred_flip, "Test-time flip averaging");

    // flops
    auto* flops = app.add_subcommand("flops", "Analytic per-layer cost table");
    ModelFlags flops_mf;
    flops_mf.channels = 1024;
    std::string flops_csv;
    flops_mf.add_to(flops);
    flops->add_option("--csv", flops_csv, "Write the table as CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(synth_out, spec);
        if (*train)
            return cmd_train(train_ds, train_out, train_mf, train_pf, train_resume,
                             train->config_to_str(true, true));
        if (*semi)
            return cmd_train_semisup(semi_ds, semi_out, semi_mf, semi_pf, warmup, bone_w, reproj_w,
                                     traj_w, semi->config_to_str(true, true));
        if (*eval) return cmd_eval(eval_ck, eval_ds, eval_protocol, eval_flip, eval_out);
        if (*predict) return cmd_predict(pred_ck, pred_ds, pred_out, pred_flip);
        if (*flops) return cmd_flops(flops_mf, flops_csv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
