#pragma once

#include <string>

#include "dualdetr/data.hpp"
#include "dualdetr/model.hpp"

namespace dualdetr {

// Flat key=value run configuration. Unknown keys are errors; the canonical
// echo() text reproduces every setting and is embedded in checkpoints,
// reports, and manifests.
struct RunConfig {
    ModelConfig model;

    // data
    std::string data_dir;  // empty: train/eval on synthetic data from `synth`
    int window = 256;
    double train_stride_ratio = 0.75;
    double infer_stride_ratio = 0.25;
    double frame_rate = 1.0;  // frames per second for segmentation scoring
    SynthParams synth;

    // optimization
    double lr = 2e-4;
    double weight_decay = 0.05;
    int epochs = 30;
    int lr_drop_epochs = 3;
    double lr_drop_factor = 0.1;
    double clip_norm = 1.0;
    bool ema = true;
    double ema_decay = 0.999;
    int batch_size = 8;
    uint64_t seed = 42;

    // matching / loss weights
    CostWeights cost_w;
    LossWeights loss_w;
    FocalParams focal;

    static RunConfig from_text(const std::string& text);
    static RunConfig load(const std::string& path);
    std::string echo() const;
    void validate() const;
};

std::string level_name(QueryLevel level);
std::string init_name(InitMode mode);
std::string refine_name(RefineMode mode);

}  // namespace dualdetr
