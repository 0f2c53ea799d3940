// swin_mil: batch workflow for the weakly-supervised segmentation pipeline.
// Subcommands: gen-data, train, eval, predict. Exit codes: 0 success,
// 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "swinmil/checkpoint.hpp"
#include "swinmil/config.hpp"
#include "swinmil/data.hpp"
#include "swinmil/eval.hpp"
#include "swinmil/metrics.hpp"
#include "swinmil/model.hpp"
#include "swinmil/tensor_io.hpp"
#include "swinmil/train.hpp"

namespace fs = std::filesystem;
using namespace swinmil;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The generator's sizes must satisfy the encoder ladder: divisible by
// patch_size * 2^(stages-1) so every stage grid halves cleanly.
void check_gen_size(Index size) {
    constexpr Index kLadder = 16;  // patch 4 * 2^2 for the 3-stage default
    if (size < 16 || size % kLadder != 0) {
        throw UsageError("--size " + std::to_string(size) +
                         " violates the ladder: must be a positive multiple of " +
                         std::to_string(kLadder));
    }
}

int cmd_gen_data(const fs::path& out, int num_pos, int num_neg, int test_pos, int test_neg,
                 Index size, std::uint64_t seed) {
    check_gen_size(size);
    GenConfig cfg;
    cfg.out_dir = out;
    cfg.num_pos = num_pos;
    cfg.num_neg = num_neg;
    cfg.test_pos = test_pos;
    cfg.test_neg = test_neg;
    cfg.size = size;
    cfg.seed = seed;
    generate_synthetic(cfg);
    std::cout << (out / "manifest.tsv").string() << "\n";
    return 0;
}

RunConfig resolve_config(const std::string& config_file, bool paper_faithful, int stages,
                         const std::vector<std::string>& overrides) {
    RunConfig cfg = paper_faithful ? RunConfig::paper_faithful() : RunConfig::desk();
    if (!config_file.empty()) {
        RunConfig from_file = load_config_file(config_file);
        cfg = from_file;  // file replaces the preset wholesale
        if (paper_faithful) {
            throw UsageError("--config and --paper-faithful are mutually exclusive");
        }
    }
    if (stages > 0) set_stage_count(cfg, stages);
    for (const auto& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + kv);
        cfg.set_key(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

int cmd_train(const fs::path& data, const fs::path& out, const std::string& config_file,
              bool paper_faithful, int stages, std::int64_t seed,
              const std::vector<std::string>& overrides) {
    RunConfig cfg = resolve_config(config_file, paper_faithful, stages, overrides);
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
    cfg.validate();

    DatasetManifest manifest = load_manifest(data / "manifest.tsv");
    std::vector<TrainBag> bags = load_training_split(manifest, "train");
    if (bags.empty()) throw std::runtime_error("train: no bags in the train split");

    fs::create_directories(out);
    SwinMIL<float> model(cfg.model, cfg.train.seed);
    Trainer trainer(model, std::move(bags), cfg);

    std::ofstream csv(out / "loss_log.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("train: cannot write loss log in " + out.string());
    csv << "epoch,step";
    for (Index t = 0; t < cfg.model.encoder.stages(); ++t) csv << ",l_mil_" << (t + 1);
    csv << ",l_fuse,l_total\n";

    for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
        double epoch_total = 0;
        for (const StepLog& log : trainer.run_epoch()) {
            csv << log.epoch << "," << log.step;
            for (double v : log.l_mil) csv << "," << v;
            csv << "," << log.l_fuse << "," << log.l_total << "\n";
            epoch_total += log.l_total;
        }
        char name[64];
        std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.smc", epoch);
        save_checkpoint(out / name, trainer.make_checkpoint());
        std::cout << "epoch " << epoch << " total_loss " << epoch_total << "\n";
    }
    save_checkpoint(out / "final.smc", trainer.make_checkpoint());
    std::cout << (out / "final.smc").string() << "\n";
    return 0;
}

SwinMIL<float> model_from_checkpoint(const fs::path& path, RunConfig& cfg_out) {
    Checkpoint ckpt = load_checkpoint(path);
    cfg_out = RunConfig::from_key_values(ckpt.config_text);
    SwinMIL<float> model(cfg_out.model, cfg_out.train.seed);
    model.visit_params([&](const std::string& name, Tensor<float>& t, ParamGroup) {
        const Tensor<float>* src = ckpt.find(name);
        if (!src) throw std::runtime_error("checkpoint lacks parameter " + name);
        if (src->shape() != t.shape()) {
            throw std::runtime_error("checkpoint parameter " + name + " has shape " +
                                     shape_str(src->shape()) + ", expected " +
                                     shape_str(t.shape()));
        }
        t.values() = src->values();
    });
    return model;
}

int parse_side(const std::string& side, Index stages) {
    if (side == "fuse") return kFusedSide;
    try {
        const int s = std::stoi(side);
        if (s >= 1 && s <= stages) return s;
    } catch (const std::exception&) {
    }
    throw UsageError("--side must be 'fuse' or a stage number 1.." + std::to_string(stages));
}

void apply_threshold(RunConfig& cfg, double threshold) {
    if (threshold == 0) return;  // flag not given
    if (threshold <= 0 || threshold >= 1) {
        throw UsageError("--threshold must lie strictly inside (0, 1)");
    }
    cfg.threshold = threshold;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data, const std::string& split,
             const std::string& side, double threshold, const fs::path& report_path) {
    RunConfig cfg;
    SwinMIL<float> model = model_from_checkpoint(checkpoint, cfg);
    apply_threshold(cfg, threshold);

    DatasetManifest manifest = load_manifest(data / "manifest.tsv");
    std::vector<EvalBag> bags = load_eval_split(manifest, split);
    if (bags.empty()) throw std::runtime_error("eval: split '" + split + "' is empty");

    EvalReport rep = evaluate(model, bags, cfg.threshold,
                              parse_side(side, cfg.model.encoder.stages()));
    write_report(report_path, rep);
    std::cout << format_report(rep);
    return 0;
}

int cmd_predict(const fs::path& checkpoint, const fs::path& image_path, const std::string& prefix,
                double threshold, bool dump_sides) {
    RunConfig cfg;
    SwinMIL<float> model = model_from_checkpoint(checkpoint, cfg);
    apply_threshold(cfg, threshold);

    Tensor<float> image = load_pgm(image_path);
    SideOutputs<float> out = model.forward(image);
    save_smt1(prefix + "_fused.smt1", out.fused);
    save_pgm_mask(prefix + "_mask.pgm", predict_mask(out.fused, cfg.threshold));
    if (dump_sides) {
        for (std::size_t t = 0; t < out.per_stage.size(); ++t) {
            save_smt1(prefix + "_side" + std::to_string(t + 1) + ".smt1", out.per_stage[t]);
        }
    }
    std::cout << prefix << "_mask.pgm\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weakly-supervised segmentation: shifted-window encoder with "
                 "generalized-mean MIL pooling"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a seeded synthetic dataset");
    std::string gen_out;
    int num_pos = 0, num_neg = 0, test_pos = 0, test_neg = 0;
    std::int64_t gen_size = 64, gen_seed = 0;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--num-pos", num_pos, "Training positives")->required();
    gen->add_option("--num-neg", num_neg, "Training negatives")->required();
    gen->add_option("--test-pos", test_pos, "Test positives");
    gen->add_option("--test-neg", test_neg, "Test negatives");
    gen->add_option("--size", gen_size, "Image side (multiple of 16)");
    gen->add_option("--seed", gen_seed, "RNG seed");

    // train
    auto* train = app.add_subcommand("train", "Train on a generated dataset");
    std::string train_data, train_out, train_config;
    std::int64_t train_seed = -1;
    int train_stages = 0;
    bool paper_faithful = false;
    std::vector<std::string> train_overrides;
    train->add_option("--data", train_data, "Dataset directory (with manifest.tsv)")->required();
    train->add_option("--out", train_out, "Output directory for checkpoints and logs")
        ->required();
    train->add_option("--config", train_config, "key = value config file");
    train->add_option("--seed", train_seed, "Seed override");
    train->add_option("--stages", train_stages, "Stage-count ablation (2, 3, or 4)")
        ->check(CLI::Range(2, 4));
    train->add_flag("--paper-faithful", paper_faithful,
                    "Published hyperparameters (Swin-T encoder, lr 1e-6)");
    train->add_option("--set", train_overrides, "Extra key=value overrides");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a split");
    std::string eval_ckpt, eval_data, eval_split = "test", eval_side = "fuse", eval_report;
    double eval_threshold = 0;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
    eval_cmd->add_option("--split", eval_split, "Manifest split name");
    eval_cmd->add_option("--side", eval_side, "Map to score: fuse or 1..stages");
    eval_cmd->add_option("--threshold", eval_threshold, "Binarization threshold in (0,1)");
    eval_cmd->add_option("--report", eval_report, "Report output file")->required();

    // predict
    auto* predict = app.add_subcommand("predict", "Predict masks for one image");
    std::string pred_ckpt, pred_image, pred_prefix;
    double pred_threshold = 0;
    bool dump_sides = false;
    predict->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
    predict->add_option("--image", pred_image, "Input PGM image")->required();
    predict->add_option("--out", pred_prefix, "Output path prefix")->required();
    predict->add_option("--threshold", pred_threshold, "Binarization threshold in (0,1)");
    predict->add_flag("--dump-sides", dump_sides, "Also write the per-stage maps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen_data(gen_out, num_pos, num_neg, test_pos, test_neg, gen_size,
                                static_cast<std::uint64_t>(gen_seed));
        }
        if (train->parsed()) {
            return cmd_train(train_data, train_out, train_config, paper_faithful, train_stages,
                             train_seed, train_overrides);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_ckpt, eval_data, eval_split, eval_side, eval_threshold,
                            eval_report);
        }
        if (predict->parsed()) {
            return cmd_predict(pred_ckpt, pred_image, pred_prefix, pred_threshold, dump_sides);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
