#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "poselift/camera.hpp"
#include "poselift/model.hpp"
#include "poselift/skeleton.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

/// One motion sequence. 3-D poses are camera-space millimeters relative to
/// the root joint; the trajectory is the camera-space root position, so
/// project(frames_3d + trajectory) reproduces frames_2d for noiseless data.
struct SequenceRecord {
    std::string id;
    std::string camera; // name of a declared camera
    Tensor frames_2d;   // [T, J, 2] pixels
    Tensor frames_3d;   // [T, J, 3] mm, empty when unlabeled
    Tensor trajectory;  // [T, 3] mm, empty when unlabeled
    bool labeled = false;

    int64_t frames() const { return frames_2d.empty() ? 0 : frames_2d.dim(0); }
};

/// On-disk dataset: an NDJSON header (format line, cameras, sequence index)
/// followed by length-prefixed raw float32 blocks. See docs/formats.md.
struct DatasetFile {
    int format_version = 1;
    double fps = 50.0;
    double noise_std_px = 0.0;
    Skeleton skeleton;
    std::vector<CameraModel> cameras;
    std::vector<SequenceRecord> sequences;
    /// Free-form provenance fields echoed into the header (e.g. the causal
    /// flag of the checkpoint that produced predicted poses).
    std::map<std::string, std::string> annotations;

    const CameraModel& camera_by_name(const std::string& name) const;
    void validate() const;
};

struct SynthSpec {
    int num_sequences = 4;
    int frames_per_sequence = 500;
    int num_cameras = 2;
    /// Sequences [0, num_labeled) carry 3-D ground truth; the rest only 2-D.
    int num_labeled = -1; // -1: all labeled
    double fps = 50.0;
    double noise_std_px = 0.0;
    /// Scales the joint-angle swing amplitudes. Smaller values keep limbs
    /// away from image-plane crossings, making the 2-D -> 3-D inverse
    /// problem better conditioned (useful for controlled overfit studies).
    double motion_scale = 1.0;
    uint64_t seed = 0;

    void validate() const;
};

/// Procedural motion-capture data: a 17-joint skeleton with per-subject bone
/// lengths held exactly constant over time, smooth sinusoidal joint motion,
/// randomized cameras, and 2-D keypoints that are exact projections of the
/// stored 3-D poses plus optional isotropic pixel noise.
DatasetFile generate_synthetic(const SynthSpec& spec);

void save_dataset(const DatasetFile& ds, const std::string& path);
DatasetFile load_dataset(const std::string& path);

/// Maximal contiguous valid runs become independent sequences.
std::vector<SequenceRecord> split_corrupted(const SequenceRecord& sequence,
                                            const std::vector<bool>& valid_mask);

/// Checkpoint container: model configuration echo, scalar metadata, and named
/// float32 blobs (parameters, batchnorm statistics, optimizer moments).
struct Checkpoint {
    ModelConfig config;
    int epoch = 0;
    std::map<std::string, std::string> rng_states;
    std::map<std::string, std::string> annotations;
    std::vector<std::pair<std::string, Tensor>> blobs;

    const Tensor* find_blob(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of a model's parameters and batchnorm statistics.
Checkpoint make_model_checkpoint(TemporalModel& model, int epoch = 0);

/// Rebuild a model from a checkpoint. Every parameter and statistic must be
/// present with its exact shape; a mismatched blob is an error naming the
/// parameter, never a silent reshape.
TemporalModel model_from_checkpoint(const Checkpoint& ck);

} // namespace poselift
