#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poselift/model.hpp"

namespace poselift {

/// Analytic cost of one convolutional layer, amortized per output frame over
/// an infinitely long sequence (padding disregarded). Only multiply-add work
/// from the convolutions is counted, at 2 FLOPs per multiply-add.
struct LayerCost {
    int index = 0;
    std::string name;
    int kernel_width = 1;
    int in_channels = 0;
    int out_channels = 0;
    int64_t flops_per_frame = 0; // 2 * W * C_in * C_out
    int64_t params = 0;          // conv weights (+ bias) + batchnorm affine
};

struct CostReport {
    std::vector<LayerCost> layers;
    int64_t total_params = 0;
    int64_t total_flops_per_frame = 0;

    /// Per-layer MFLOPs rounded to three decimals, and their sum: the
    /// presentation used by the itemized cost breakdown.
    std::vector<double> layer_mflops_rounded() const;
    double total_mflops_rounded() const;
};

/// Parameter and FLOP accounting straight from the architecture arithmetic,
/// without building or running a model. Parameters count conv weights,
/// the final-layer bias and batchnorm gamma/beta; batchnorm running
/// statistics are not parameters.
CostReport estimate(const ModelConfig& config);

struct LayerParamDiff {
    std::string name;
    int64_t estimated = 0;
    int64_t actual = 0;
};

struct VerifyReport {
    int64_t estimated_params = 0;
    int64_t model_params = 0;
    bool params_match = false;
    std::vector<LayerParamDiff> per_layer_params;

    int64_t estimated_flops_per_frame = 0;
    double instrumented_flops_per_frame = 0.0; // 2 * counted madds / input frames
    double flops_rel_err = 0.0;
    bool flops_match = false; // within 1% amortization slack
    bool flops_exact = false; // exact equality (single-frame models)
};

/// Cross-check of the estimator against a built model: exact trainable-float
/// count, and an instrumented forward pass over `probe_frames` input frames.
VerifyReport verify_against_model(const TemporalModel& model, int64_t probe_frames = 10000,
                                  uint64_t seed = 0);

} // namespace poselift
