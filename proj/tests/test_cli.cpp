#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "poselift/dataio.hpp"

using namespace poselift;
namespace fs = std::filesystem;

namespace {

#ifndef POSELIFT_CLI_PATH
#error "POSELIFT_CLI_PATH must point at the built binary"
#endif

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    const fs::path out_file = fs::temp_directory_path() / "poselift_cli_out.txt";
    const std::string cmd = std::string(POSELIFT_CLI_PATH) + " " + args + " > " +
                            out_file.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(raw);
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    return r;
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "poselift_cli_test";
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

double parse_aggregate(const std::string& output) {
    // Last line of the CSV block: "ALL,<frames>,<value>".
    const size_t pos = output.rfind("ALL,");
    REQUIRE(pos != std::string::npos);
    const size_t comma = output.find(',', pos + 4);
    return std::stod(output.substr(comma + 1));
}

} // namespace

TEST_CASE("flops prints the itemized 27-frame table and a parseable CSV") {
    const fs::path csv = work_dir() / "flops.csv";
    const RunResult r = run_cli("flops --blocks 2 --channels 1024 --joints 17 --csv " +
                                csv.string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("17.089 MFLOPs") != std::string::npos);
    CHECK(r.output.find("17.09 MFLOPs") != std::string::npos);
    CHECK(r.output.find("8.56M") != std::string::npos);

    std::ifstream is(csv);
    std::string line;
    std::getline(is, line); // header
    int64_t flops_sum = 0, layers = 0;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        REQUIRE(fields.size() == 8);
        flops_sum += std::stoll(fields[5]);
        ++layers;
    }
    CHECK(layers == 6);
    CHECK(flops_sum == 17090560);

    const RunResult big = run_cli("flops --blocks 4 --channels 1024 --joints 17");
    CHECK(big.output.find("33.87 MFLOPs") != std::string::npos);
    CHECK(big.output.find("16.95M") != std::string::npos);
}

TEST_CASE("synth is seeded, loadable and echoes the noise parameter") {
    const fs::path dir = work_dir();
    const fs::path a = dir / "a.plds", b = dir / "b.plds";
    CHECK(run_cli("synth --out " + a.string() +
                  " --sequences 2 --frames 30 --seed 11 --noise-std 2.0")
              .exit_code == 0);
    CHECK(run_cli("synth --out " + b.string() +
                  " --sequences 2 --frames 30 --seed 11 --noise-std 2.0")
              .exit_code == 0);
    CHECK(file_bytes(a) == file_bytes(b));

    const DatasetFile ds = load_dataset(a.string());
    CHECK(ds.noise_std_px == 2.0);
    CHECK(ds.sequences.size() == 2);
    CHECK(ds.sequences[0].frames() == 30);
}

TEST_CASE("train, resume, eval and predict round trip") {
    const fs::path dir = work_dir();
    const fs::path data = dir / "train.plds";
    REQUIRE(run_cli("synth --out " + data.string() +
                    " --sequences 2 --frames 60 --cameras 2 --seed 3")
                .exit_code == 0);

    const std::string model_flags = " --blocks 1 --channels 16 --kernel-width 3 ";
    const fs::path run_a = dir / "run_a";
    const RunResult full =
        run_cli("train --dataset " + data.string() + " --out " + run_a.string() + model_flags +
                "--epochs 4 --batch-frames 16 --seed 5");
    CHECK(full.exit_code == 0);
    CHECK(fs::exists(run_a / "checkpoint.plck"));
    CHECK(fs::exists(run_a / "config.cfg"));
    {
        std::ifstream log(run_a / "log.csv");
        std::string header;
        std::getline(log, header);
        CHECK(header == "epoch,train_loss,eval_mpjpe,eval_pmpjpe,eval_mpjve,lr,bn_momentum");
        int rows = 0;
        std::string line;
        while (std::getline(log, line)) ++rows;
        CHECK(rows == 4);
    }

    // Two-epoch run, then resume for the remaining two: identical checkpoint.
    const fs::path run_b = dir / "run_b";
    REQUIRE(run_cli("train --dataset " + data.string() + " --out " + run_b.string() + model_flags +
                    "--epochs 2 --batch-frames 16 --seed 5")
                .exit_code == 0);
    const RunResult resumed =
        run_cli("train --dataset " + data.string() + " --out " + run_b.string() + model_flags +
                "--epochs 4 --batch-frames 16 --seed 5 --resume " +
                (run_b / "checkpoint.plck").string());
    CHECK(resumed.exit_code == 0);
    CHECK(resumed.output.find("resuming") != std::string::npos);
    CHECK(file_bytes(run_a / "checkpoint.plck") == file_bytes(run_b / "checkpoint.plck"));

    // Evaluation: every protocol runs; the alignment family ordering holds.
    const std::string ck = (run_a / "checkpoint.plck").string();
    const RunResult p1 =
        run_cli("eval --checkpoint " + ck + " --dataset " + data.string() + " --protocol 1");
    const RunResult p2 =
        run_cli("eval --checkpoint " + ck + " --dataset " + data.string() + " --protocol 2");
    const RunResult p3 =
        run_cli("eval --checkpoint " + ck + " --dataset " + data.string() + " --protocol 3");
    const RunResult vel =
        run_cli("eval --checkpoint " + ck + " --dataset " + data.string() + " --protocol velocity");
    CHECK(p1.exit_code == 0);
    CHECK(p2.exit_code == 0);
    CHECK(p3.exit_code == 0);
    CHECK(vel.exit_code == 0);
    const double m1 = parse_aggregate(p1.output);
    const double m2 = parse_aggregate(p2.output);
    const double m3 = parse_aggregate(p3.output);
    CHECK(m2 <= m3 * (1.0 + 1e-9));
    CHECK(m3 <= m1 * (1.0 + 1e-9));

    // Prediction writes a loadable dataset with matching frame counts and
    // provenance annotations.
    const fs::path pred = dir / "pred.plds";
    CHECK(run_cli("predict --checkpoint " + ck + " --dataset " + data.string() + " --out " +
                  pred.string())
              .exit_code == 0);
    const DatasetFile out = load_dataset(pred.string());
    REQUIRE(out.sequences.size() == 2);
    CHECK(out.sequences[0].frames_3d.dim(0) == out.sequences[0].frames());
    CHECK(out.annotations.at("causal") == "false");
    CHECK(out.annotations.at("source_checkpoint") == ck);
}

TEST_CASE("semisupervised command reduces gracefully and logs its extra columns") {
    const fs::path dir = work_dir();
    const fs::path data = dir / "semi.plds";
    REQUIRE(run_cli("synth --out " + data.string() +
                    " --sequences 3 --frames 40 --labeled 1 --seed 7")
                .exit_code == 0);
    const fs::path run = dir / "runsemi";
    const RunResult r = run_cli("train-semisup --dataset " + data.string() + " --out " +
                                run.string() +
                                " --blocks 1 --channels 16 --epochs 2 --batch-frames 16 "
                                "--warmup 1 --seed 9");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(run / "checkpoint.plck"));
    CHECK(fs::exists(run / "trajectory.plck"));
    std::ifstream log(run / "log.csv");
    std::string header;
    std::getline(log, header);
    CHECK(header.find("reproj_loss,bone_loss,traj_wmpjpe,labeled_frames,unlabeled_frames") !=
          std::string::npos);

    // All-labeled dataset: warns and reduces to supervised.
    const fs::path data2 = dir / "alllabeled.plds";
    REQUIRE(run_cli("synth --out " + data2.string() + " --sequences 2 --frames 40 --seed 8")
                .exit_code == 0);
    const RunResult r2 = run_cli("train-semisup --dataset " + data2.string() + " --out " +
                                 (dir / "runsemi2").string() +
                                 " --blocks 1 --channels 16 --epochs 1 --batch-frames 16 --seed 9");
    CHECK(r2.exit_code == 0);
    CHECK(r2.output.find("reduces to supervised") != std::string::npos);
}

TEST_CASE("exit codes distinguish usage, data and numerical failures") {
    const fs::path dir = work_dir();
    CHECK(run_cli("definitely-not-a-command").exit_code == 1);
    CHECK(run_cli("train").exit_code == 1); // missing required --dataset
    CHECK(run_cli("eval --checkpoint missing.plck --dataset missing.plds").exit_code == 2);

    // Unknown keys in a config file are errors, not warnings.
    const fs::path cfg = dir / "bad.cfg";
    std::ofstream(cfg) << "definitely_unknown_key=1\n";
    CHECK(run_cli("flops --config " + cfg.string()).exit_code == 1);

    // Invalid hyperparameters: configuration error.
    const fs::path data = dir / "codes.plds";
    REQUIRE(run_cli("synth --out " + data.string() + " --sequences 1 --frames 30 --seed 1")
                .exit_code == 0);
    CHECK(run_cli("train --dataset " + data.string() + " --out " + (dir / "codes_run").string() +
                  " --blocks 1 --channels 8 --epochs 1 --lr -5")
              .exit_code == 1);
}
