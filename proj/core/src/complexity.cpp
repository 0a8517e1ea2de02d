#include "poselift/complexity.hpp"

#include <cmath>

namespace poselift {

std::vector<double> CostReport::layer_mflops_rounded() const {
    std::vector<double> out;
    out.reserve(layers.size());
    for (const LayerCost& lc : layers)
        out.push_back(std::round(static_cast<double>(lc.flops_per_frame) / 1e6 * 1000.0) / 1000.0);
    return out;
}

double CostReport::total_mflops_rounded() const {
    double total = 0.0;
    for (double v : layer_mflops_rounded()) total += v;
    return std::round(total * 1000.0) / 1000.0;
}

CostReport estimate(const ModelConfig& config) {
    config.validate();
    CostReport report;
    const int W = config.kernel_width;
    const int C = config.channels;

    auto add_layer = [&](std::string name, int width, int in_ch, int out_ch, bool has_bias,
                         bool has_bn) {
        LayerCost lc;
        lc.index = static_cast<int>(report.layers.size()) + 1;
        lc.name = std::move(name);
        lc.kernel_width = width;
        lc.in_channels = in_ch;
        lc.out_channels = out_ch;
        lc.flops_per_frame = 2LL * width * in_ch * out_ch;
        lc.params = static_cast<int64_t>(width) * in_ch * out_ch + (has_bias ? out_ch : 0) +
                    (has_bn ? 2LL * out_ch : 0);
        report.layers.push_back(lc);
        report.total_params += lc.params;
        report.total_flops_per_frame += lc.flops_per_frame;
    };

    add_layer("in", W, config.in_channels(), C, false, true);
    int64_t dilation = W;
    for (int b = 1; b <= config.blocks; ++b) {
        const std::string prefix = "b" + std::to_string(b);
        if (config.dense_mode) {
            const int dense_width = static_cast<int>((W - 1) * dilation) + 1;
            add_layer(prefix + ".dense", dense_width, C, C, false, true);
        } else {
            add_layer(prefix + ".dilated", W, C, C, false, true);
        }
        add_layer(prefix + ".pointwise", 1, C, C, false, true);
        dilation *= W;
    }
    add_layer("out", 1, C, config.out_channels(), true, false);
    return report;
}

VerifyReport verify_against_model(const TemporalModel& model, int64_t probe_frames,
                                  uint64_t seed) {
    const ModelConfig& cfg = model.config();
    const CostReport est = estimate(cfg);

    VerifyReport rep;
    rep.estimated_params = est.total_params;
    rep.model_params = model.num_trainable_floats();
    rep.params_match = rep.estimated_params == rep.model_params;

    const auto& layers = model.layers();
    for (size_t i = 0; i < layers.size() && i < est.layers.size(); ++i) {
        LayerParamDiff d;
        d.name = est.layers[i].name;
        d.estimated = est.layers[i].params;
        d.actual = layers[i].weights.size() + (layers[i].bias.empty() ? 0 : layers[i].bias.size()) +
                   (layers[i].has_bn ? layers[i].bn.gamma.size() + layers[i].bn.beta.size() : 0);
        rep.per_layer_params.push_back(d);
    }

    rep.estimated_flops_per_frame = est.total_flops_per_frame;
    const int64_t rf = model.receptive_field();
    const int64_t frames = std::max<int64_t>(probe_frames, rf);
    Rng rng(seed);
    Tensor input({1, cfg.in_channels(), frames});
    for (int64_t i = 0; i < input.size(); ++i)
        input[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    uint64_t madds = 0;
    (void)model.forward(input, &madds);
    rep.instrumented_flops_per_frame =
        2.0 * static_cast<double>(madds) / static_cast<double>(frames);
    rep.flops_rel_err = std::abs(rep.instrumented_flops_per_frame -
                                 static_cast<double>(rep.estimated_flops_per_frame)) /
                        static_cast<double>(rep.estimated_flops_per_frame);
    rep.flops_match = rep.flops_rel_err <= 0.01;
    rep.flops_exact =
        2 * madds == static_cast<uint64_t>(rep.estimated_flops_per_frame) * static_cast<uint64_t>(frames);
    return rep;
}

} // namespace poselift
