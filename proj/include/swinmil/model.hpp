#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "swinmil/mil.hpp"
#include "swinmil/rng.hpp"
#include "swinmil/swin.hpp"
#include "swinmil/tensor.hpp"

namespace swinmil {

struct ModelConfig {
    EncoderConfig encoder;
    HeadConfig head;

    void validate() const {
        encoder.validate();
        head.validate(encoder.stages());
    }

    /// 64x64-input configuration that trains on a CPU in minutes.
    static ModelConfig desk() { return {}; }

    /// Swin-T-sized encoder (embed 96, depths 2/2/6, window 7). Needs
    /// 224-multiple inputs.
    static ModelConfig swin_t() {
        ModelConfig cfg;
        cfg.encoder.embed_dim = 96;
        cfg.encoder.depths = {2, 2, 6};
        cfg.encoder.num_heads = {3, 6, 12};
        cfg.encoder.window_size = 7;
        return cfg;
    }
};

template <typename S>
struct SideOutputs {
    std::vector<Tensor<S>> per_stage;  // each [H, W] in (0, 1)
    Tensor<S> fused;                   // [H, W], convex combination
};

enum class ParamGroup { encoder, side_output };

/// The full model: hierarchical encoder plus one 1x1-conv decoder per stage
/// and the fixed fusion. Parameters are named for checkpoints and grouped
/// for the optimizer's per-group learning rates.
template <typename S>
class SwinMIL {
public:
    SwinMIL(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        init(seed);
    }

    const ModelConfig& config() const { return cfg_; }
    const EncoderConfig& encoder_config() const { return cfg_.encoder; }
    const EncoderParams<S>& encoder_params() const { return enc_; }

    StageFeatures<S> encode_features(const Tensor<S>& image) const {
        return encode(image, cfg_.encoder, enc_);
    }

    SideOutputs<S> forward(const Tensor<S>& image) const {
        const Index h = image.dim(0), w = image.dim(1);
        StageFeatures<S> feats = encode_features(image);
        SideOutputs<S> out;
        out.per_stage.reserve(feats.size());
        for (std::size_t t = 0; t < feats.size(); ++t) {
            out.per_stage.push_back(side_output(feats[t], side_w_[t], side_b_[t], h, w));
        }
        out.fused = fuse(out.per_stage, cfg_.head.fusion_weights);
        return out;
    }

    /// Visits every parameter in a fixed order (checkpoint order).
    template <typename Fn>
    void visit_params(Fn&& fn) {
        fn("patch_embed.w", enc_.embed_w, ParamGroup::encoder);
        fn("patch_embed.b", enc_.embed_b, ParamGroup::encoder);
        for (Index t = 0; t < cfg_.encoder.stages(); ++t) {
            const std::string st = "stage" + std::to_string(t + 1) + ".";
            auto& stage = enc_.stages[static_cast<std::size_t>(t)];
            if (t > 0) {
                fn(st + "merge.norm.g", stage.merge_norm_g, ParamGroup::encoder);
                fn(st + "merge.norm.b", stage.merge_norm_b, ParamGroup::encoder);
                fn(st + "merge.w", stage.merge_w, ParamGroup::encoder);
            }
            for (std::size_t i = 0; i < stage.blocks.size(); ++i) {
                const std::string bk = st + "block" + std::to_string(i + 1) + ".";
                auto& b = stage.blocks[i];
                fn(bk + "norm1.g", b.norm1_g, ParamGroup::encoder);
                fn(bk + "norm1.b", b.norm1_b, ParamGroup::encoder);
                fn(bk + "attn.qkv.w", b.qkv_w, ParamGroup::encoder);
                fn(bk + "attn.qkv.b", b.qkv_b, ParamGroup::encoder);
                fn(bk + "attn.proj.w", b.proj_w, ParamGroup::encoder);
                fn(bk + "attn.proj.b", b.proj_b, ParamGroup::encoder);
                if (b.rel_bias.defined()) {
                    fn(bk + "attn.rel_bias", b.rel_bias, ParamGroup::encoder);
                }
                fn(bk + "norm2.g", b.norm2_g, ParamGroup::encoder);
                fn(bk + "norm2.b", b.norm2_b, ParamGroup::encoder);
                fn(bk + "mlp.w1", b.mlp_w1, ParamGroup::encoder);
                fn(bk + "mlp.b1", b.mlp_b1, ParamGroup::encoder);
                fn(bk + "mlp.w2", b.mlp_w2, ParamGroup::encoder);
                fn(bk + "mlp.b2", b.mlp_b2, ParamGroup::encoder);
            }
        }
        for (Index t = 0; t < cfg_.encoder.stages(); ++t) {
            const std::string sd = "side" + std::to_string(t + 1) + ".";
            fn(sd + "w", side_w_[static_cast<std::size_t>(t)], ParamGroup::side_output);
            fn(sd + "b", side_b_[static_cast<std::size_t>(t)], ParamGroup::side_output);
        }
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        visit_params([&](const std::string& name, Tensor<S>& t, ParamGroup) {
            out.emplace_back(name, t);
        });
        return out;
    }

    Index param_count() {
        Index n = 0;
        visit_params([&](const std::string&, Tensor<S>& t, ParamGroup) { n += t.size(); });
        return n;
    }

    void set_requires_grad(bool enable) {
        visit_params([&](const std::string&, Tensor<S>& t, ParamGroup) {
            t.set_requires_grad(enable);
        });
    }

    void zero_grad() {
        visit_params([](const std::string&, Tensor<S>& t, ParamGroup) { t.zero_grad(); });
    }

private:
    // Truncated-normal (0.02) encoder weights, unit norm scales, zero
    // biases; Xavier for the side-output squeezes. The patch embedding is
    // also Xavier: with random (non-pretrained) weights a 0.02-std embedding
    // leaves stage-1 features far smaller than the merge-normed later
    // stages, starving the stage-1 decoder.
    void init(std::uint64_t seed) {
        SplitMix64 rng(SplitMix64::mix(seed, 0x1217));
        const EncoderConfig& e = cfg_.encoder;
        constexpr double kStd = 0.02;

        enc_.embed_w = xavier_uniform<S>(
            {e.patch_size * e.patch_size * e.in_channels, e.embed_dim}, rng);
        enc_.embed_b = Tensor<S>(Shape{e.embed_dim});
        enc_.stages.resize(static_cast<std::size_t>(e.stages()));
        for (Index t = 0; t < e.stages(); ++t) {
            auto& stage = enc_.stages[static_cast<std::size_t>(t)];
            const Index d = e.stage_dim(t);
            if (t > 0) {
                stage.merge_norm_g = Tensor<S>(Shape{2 * d}, S(1));
                stage.merge_norm_b = Tensor<S>(Shape{2 * d});
                stage.merge_w = trunc_normal_init<S>({2 * d, d}, kStd, rng);
            }
            stage.blocks.resize(static_cast<std::size_t>(e.depths[t]));
            for (auto& b : stage.blocks) {
                b.norm1_g = Tensor<S>(Shape{d}, S(1));
                b.norm1_b = Tensor<S>(Shape{d});
                b.qkv_w = trunc_normal_init<S>({d, 3 * d}, kStd, rng);
                b.qkv_b = Tensor<S>(Shape{3 * d});
                b.proj_w = trunc_normal_init<S>({d, d}, kStd, rng);
                b.proj_b = Tensor<S>(Shape{d});
                if (e.use_relative_position_bias) {
                    const Index span = 2 * e.window_size - 1;
                    b.rel_bias = trunc_normal_init<S>({span * span, e.num_heads[t]}, kStd, rng);
                }
                b.norm2_g = Tensor<S>(Shape{d}, S(1));
                b.norm2_b = Tensor<S>(Shape{d});
                const Index hid = e.mlp_hidden(t);
                b.mlp_w1 = trunc_normal_init<S>({d, hid}, kStd, rng);
                b.mlp_b1 = Tensor<S>(Shape{hid});
                b.mlp_w2 = trunc_normal_init<S>({hid, d}, kStd, rng);
                b.mlp_b2 = Tensor<S>(Shape{d});
            }
        }
        side_w_.clear();
        side_b_.clear();
        for (Index t = 0; t < e.stages(); ++t) {
            side_w_.push_back(xavier_uniform<S>({e.stage_dim(t), 1}, rng));
            side_b_.push_back(Tensor<S>(Shape{1}));
        }
        set_requires_grad(true);
    }

    ModelConfig cfg_;
    EncoderParams<S> enc_;
    std::vector<Tensor<S>> side_w_, side_b_;
};

}  // namespace swinmil
