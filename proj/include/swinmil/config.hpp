#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "swinmil/model.hpp"

namespace swinmil {

struct TrainConfig {
    // Desk-scale defaults, tuned on the synthetic task (random init, CPU);
    // the paper_faithful preset restores the published settings.
    double lr = 2e-4;
    double side_lr_ratio = 0.1;    // side-output layers train at lr * ratio
    double weight_decay = 1e-2;
    double grad_clip_norm = 10.0;  // global-norm clip; 0 disables
    int batch_size = 4;
    int epochs = 12;
    std::uint64_t seed = 0;

    void validate() const {
        // lr 0 is legal: it pins every parameter, which the tests rely on.
        if (lr < 0 || side_lr_ratio <= 0 || weight_decay < 0 || grad_clip_norm < 0) {
            throw std::invalid_argument("TrainConfig: rates must be non-negative");
        }
        if (batch_size < 1 || epochs < 1) {
            throw std::invalid_argument("TrainConfig: batch_size and epochs must be >= 1");
        }
    }
};

/// Everything a run needs, serializable as a flat key=value block (the
/// config-file format, also embedded in checkpoints).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    double threshold = 0.5;

    void validate() const {
        model.validate();
        train.validate();
        if (threshold <= 0 || threshold >= 1) {
            throw std::invalid_argument("RunConfig: threshold must lie in (0, 1)");
        }
    }

    /// CPU-sized default: 64x64 inputs, embed 24, depths 2/2/2, window 2.
    static RunConfig desk();

    /// Published settings: Swin-T encoder, lr 1e-6, wd 5e-4, batch 4,
    /// 60 epochs, r 4, weights 0.3/0.4/0.3. Expects 224-multiple inputs.
    static RunConfig paper_faithful();

    /// Applies one `key = value` assignment; unknown keys are rejected.
    void set_key(const std::string& key, const std::string& value);

    std::string to_key_values() const;
    static RunConfig from_key_values(const std::string& text);
};

/// Reads a line-oriented `key = value` file ('#' comments and blank lines
/// allowed) on top of the desk defaults.
RunConfig load_config_file(const std::filesystem::path& path);

/// Reconfigures the stage count (the ablation axis): depths of 2 per stage,
/// heads 3/6/12/24 prefix, uniform fusion weights except the 3-stage
/// 0.3/0.4/0.3 default.
void set_stage_count(RunConfig& cfg, int stages);

}  // namespace swinmil
