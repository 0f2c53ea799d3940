#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "swin_ref.hpp"
#include "swinmil/model.hpp"
#include "swinmil/swin.hpp"
#include "test_util.hpp"

using namespace swinmil;
using testutil::max_grad_err;
using testutil::random_tensor;

namespace {

template <typename S>
EncoderParams<S> make_params(const EncoderConfig& cfg, std::uint64_t seed) {
    SwinMIL<S> model(ModelConfig{cfg, HeadConfig{}}, seed);
    return model.encoder_params();
}

}  // namespace

TEST_CASE("patch_embed token grids") {
    EncoderConfig cfg;
    EncoderParams<float> params = make_params<float>(cfg, 1);

    Tensor<float> img64(Shape{64, 64, 1}, 0.3f);
    Tensor<float> tok64 = patch_embed(img64, cfg, params);
    CHECK(tok64.shape() == Shape{16, 16, 24});

    Tensor<float> img256(Shape{256, 256, 1}, 0.3f);
    CHECK(patch_embed(img256, cfg, params).shape() == Shape{64, 64, 24});

    Tensor<float> odd(Shape{63, 64, 1});
    CHECK_THROWS_WITH_AS(patch_embed(odd, cfg, params), doctest::Contains("not divisible"),
                         std::invalid_argument);
}

TEST_CASE("patch_embed identity projection returns raw patches") {
    // ch * p^2 == C with identity weights: tokens are the flattened patches
    EncoderConfig cfg;
    cfg.embed_dim = 16;
    cfg.num_heads = {2, 2, 2};
    EncoderParams<double> params;
    params.embed_w = Tensor<double>(Shape{16, 16});
    for (Index i = 0; i < 16; ++i) params.embed_w.values()[i * 16 + i] = 1.0;
    params.embed_b = Tensor<double>(Shape{16});

    SplitMix64 rng(2);
    Tensor<double> img = random_tensor<double>({8, 8, 1}, rng);
    Tensor<double> tokens = patch_embed(img, cfg, params);
    Tensor<double> raw = patchify(img, 4);
    CHECK(tokens.shape() == raw.shape());
    for (Index i = 0; i < tokens.size(); ++i) CHECK(tokens.data()[i] == raw.data()[i]);
}

TEST_CASE("window partition counts, identity, round trip") {
    SplitMix64 rng(3);
    Tensor<double> x = random_tensor<double>({8, 8, 3}, rng);
    Tensor<double> parts = window_partition(x, 4);
    CHECK(parts.shape() == Shape{4, 16, 3});

    // single window preserves token order
    Tensor<double> tiny = random_tensor<double>({4, 4, 2}, rng);
    Tensor<double> one = window_partition(tiny, 4);
    CHECK(one.shape() == Shape{1, 16, 2});
    for (Index i = 0; i < tiny.size(); ++i) CHECK(one.data()[i] == tiny.data()[i]);

    Tensor<double> back = window_reverse(parts, 8, 8, 4);
    for (Index i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);

    CHECK_THROWS_AS(window_partition(x, 3), std::invalid_argument);
}

TEST_CASE("cyclic shift examples and round trip") {
    SplitMix64 rng(5);
    Tensor<double> x = random_tensor<double>({6, 7, 2}, rng);
    Tensor<double> id = cyclic_shift(x, 0, 0);
    for (Index i = 0; i < x.size(); ++i) CHECK(id.data()[i] == x.data()[i]);

    // 4x4 grid of linear indices, shift (-2,-2): position (0,0) holds 10
    std::vector<double> lin(16);
    for (int i = 0; i < 16; ++i) lin[static_cast<std::size_t>(i)] = i;
    Tensor<double> grid(Shape{4, 4, 1}, lin);
    Tensor<double> rolled = cyclic_shift(grid, -2, -2);
    CHECK(rolled(0, 0, 0) == 10.0);
    CHECK(rolled(3, 3, 0) == 5.0);

    Tensor<double> round = cyclic_shift(cyclic_shift(x, -3, 2), 3, -2);
    for (Index i = 0; i < x.size(); ++i) CHECK(round.data()[i] == x.data()[i]);
}

TEST_CASE("merge_2x2 gathers neighborhoods in document order") {
    // linear-index oracle: out(i,j,q*C+c) == in(2i + q/2, 2j + q%2, c)
    SplitMix64 rng(7);
    Tensor<double> x = random_tensor<double>({6, 4, 3}, rng);
    Tensor<double> m = merge_2x2(x);
    CHECK(m.shape() == Shape{3, 2, 12});
    for (Index i = 0; i < 3; ++i) {
        for (Index j = 0; j < 2; ++j) {
            for (Index q = 0; q < 4; ++q) {
                for (Index ch = 0; ch < 3; ++ch) {
                    CHECK(m(i, j, q * 3 + ch) == x(2 * i + q / 2, 2 * j + q % 2, ch));
                }
            }
        }
    }
    Tensor<double> odd(Shape{3, 4, 1});
    CHECK_THROWS_AS(merge_2x2(odd), std::invalid_argument);
}

TEST_CASE("patch_merging shape and constant-selector case") {
    StageParams<double> p;
    p.merge_norm_g = Tensor<double>(Shape{96}, 1.0);
    p.merge_norm_b = Tensor<double>(Shape{96});
    p.merge_w = Tensor<double>(Shape{96, 48});
    SplitMix64 rng(11);
    Tensor<double> x = random_tensor<double>({16, 16, 24}, rng);
    CHECK(patch_merging(x, p, 1e-5).shape() == Shape{8, 8, 48});

    // first-2C-columns selector on a constant input stays constant
    for (Index i = 0; i < 48; ++i) p.merge_w.values()[i * 48 + i] = 1.0;
    Tensor<double> constant(Shape{4, 4, 24}, 0.8);
    Tensor<double> out = patch_merging(constant, p, 1e-5);
    CHECK(out.shape() == Shape{2, 2, 48});
    for (Index i = 1; i < out.size(); ++i) {
        CHECK(out.data()[i] == doctest::Approx(out.data()[0]).epsilon(1e-12));
    }
}

TEST_CASE("window_attention single token: weight exactly 1, output = proj(v)") {
    SplitMix64 rng(13);
    const Index c = 6, heads = 2;
    BlockParams<double> p;
    p.qkv_w = random_tensor<double>({c, 3 * c}, rng);
    p.qkv_b = random_tensor<double>({3 * c}, rng);
    p.proj_w = random_tensor<double>({c, c}, rng);
    p.proj_b = random_tensor<double>({c}, rng);
    p.rel_bias = random_tensor<double>({1, heads}, rng);  // table for ws = 1

    Tensor<double> win = random_tensor<double>({3, 1, c}, rng);
    Tensor<double> out = window_attention(win, p, heads);
    CHECK(out.shape() == Shape{3, 1, c});

    // with one token, softmax is 1 regardless of bias: out = proj(v) + b
    for (Index n = 0; n < 3; ++n) {
        std::vector<double> v(static_cast<std::size_t>(c));
        for (Index d = 0; d < c; ++d) {
            double s = p.qkv_b(2 * c + d);
            for (Index e = 0; e < c; ++e) s += win(n, 0, e) * p.qkv_w(e, 2 * c + d);
            v[static_cast<std::size_t>(d)] = s;
        }
        for (Index e = 0; e < c; ++e) {
            double s = p.proj_b(e);
            for (Index f = 0; f < c; ++f) s += v[static_cast<std::size_t>(f)] * p.proj_w(f, e);
            CHECK(out(n, 0, e) == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("window_attention with identical keys averages the values") {
    SplitMix64 rng(17);
    const Index c = 4, heads = 2, t = 9;
    BlockParams<double> p;
    p.qkv_w = random_tensor<double>({c, 3 * c}, rng);
    // zero the key block: all keys equal the key bias, scores uniform
    for (Index e = 0; e < c; ++e) {
        for (Index d = 0; d < c; ++d) p.qkv_w.values()[e * 3 * c + c + d] = 0.0;
    }
    p.qkv_b = random_tensor<double>({3 * c}, rng);
    p.proj_w = Tensor<double>(Shape{c, c});
    for (Index i = 0; i < c; ++i) p.proj_w.values()[i * c + i] = 1.0;  // identity projection
    p.proj_b = Tensor<double>(Shape{c});

    Tensor<double> win = random_tensor<double>({1, t, c}, rng);
    Tensor<double> out = window_attention(win, p, heads);

    // mean of V rows, computed by hand
    std::vector<double> mean_v(static_cast<std::size_t>(c), 0.0);
    for (Index a = 0; a < t; ++a) {
        for (Index d = 0; d < c; ++d) {
            double s = p.qkv_b(2 * c + d);
            for (Index e = 0; e < c; ++e) s += win(0, a, e) * p.qkv_w(e, 2 * c + d);
            mean_v[static_cast<std::size_t>(d)] += s / static_cast<double>(t);
        }
    }
    for (Index a = 0; a < t; ++a) {
        for (Index d = 0; d < c; ++d) {
            CHECK(out(0, a, d) ==
                  doctest::Approx(mean_v[static_cast<std::size_t>(d)]).epsilon(1e-9));
        }
    }
}

TEST_CASE("window_attention matches the dense loop oracle") {
    SplitMix64 rng(19);
    const Index c = 4, heads = 2, ws = 4, t = ws * ws;
    BlockParams<double> p;
    p.qkv_w = random_tensor<double>({c, 3 * c}, rng);
    p.qkv_b = random_tensor<double>({3 * c}, rng);
    p.proj_w = random_tensor<double>({c, c}, rng);
    p.proj_b = random_tensor<double>({c}, rng);
    p.rel_bias = random_tensor<double>({(2 * ws - 1) * (2 * ws - 1), heads}, rng);

    swinref::BlockRef ref = swinref::BlockRef::from(p, heads, ws, 1e-5);
    Tensor<double> wins = random_tensor<double>({4, t, c}, rng);
    Tensor<double> out = window_attention(wins, p, heads);
    for (Index win = 0; win < 4; ++win) {
        std::vector<double> xw(wins.data() + win * t * c, wins.data() + (win + 1) * t * c);
        std::vector<double> yw = swinref::attention_window_ref(xw, t, ref, {});
        for (Index i = 0; i < t * c; ++i) {
            CHECK(std::abs(out.data()[win * t * c + i] - yw[static_cast<std::size_t>(i)]) < 1e-5);
        }
    }

    BlockParams<double> bad = p;
    CHECK_THROWS_AS(window_attention(wins, bad, 3), std::invalid_argument);
}

TEST_CASE("attention rows sum to one even under seam masks") {
    SplitMix64 rng(23);
    const Index c = 4, heads = 2, ws = 4, t = 16, h = 8, w = 8;
    BlockParams<double> p;
    p.qkv_w = random_tensor<double>({c, 3 * c}, rng);
    p.qkv_b = random_tensor<double>({3 * c}, rng);
    // all-ones V through an identity projection: attention output == row sums
    for (Index e = 0; e < c; ++e) {
        for (Index d = 0; d < c; ++d) p.qkv_w.values()[e * 3 * c + 2 * c + d] = 0.0;
    }
    for (Index d = 0; d < c; ++d) p.qkv_b.values()[2 * c + d] = 1.0;
    p.proj_w = Tensor<double>(Shape{c, c});
    for (Index i = 0; i < c; ++i) p.proj_w.values()[i * c + i] = 1.0;
    p.proj_b = Tensor<double>(Shape{c});

    auto mvec = swinmil::detail::shift_mask<double>(h, w, ws, 2);
    Tensor<double> mask(Shape{4, t, t}, std::vector<double>(*mvec));
    Tensor<double> wins = random_tensor<double>({4, t, c}, rng);
    Tensor<double> out = window_attention(wins, p, heads, mask);
    for (Index i = 0; i < out.size(); ++i) {
        CHECK(out.data()[i] == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("window permutation consistency") {
    SplitMix64 rng(29);
    const Index c = 6, heads = 3, t = 16, n = 4;
    BlockParams<double> p;
    p.qkv_w = random_tensor<double>({c, 3 * c}, rng);
    p.qkv_b = random_tensor<double>({3 * c}, rng);
    p.proj_w = random_tensor<double>({c, c}, rng);
    p.proj_b = random_tensor<double>({c}, rng);

    Tensor<double> wins = random_tensor<double>({n, t, c}, rng);
    Tensor<double> direct = window_attention(wins, p, heads);

    // reverse window order, attend, un-reverse
    std::vector<double> rev(static_cast<std::size_t>(wins.size()));
    for (Index win = 0; win < n; ++win) {
        std::copy_n(wins.data() + win * t * c, t * c, rev.data() + (n - 1 - win) * t * c);
    }
    Tensor<double> out_rev = window_attention(Tensor<double>(Shape{n, t, c}, rev), p, heads);
    for (Index win = 0; win < n; ++win) {
        for (Index i = 0; i < t * c; ++i) {
            CHECK(direct.data()[win * t * c + i] == out_rev.data()[(n - 1 - win) * t * c + i]);
        }
    }
}

TEST_CASE("swin_block: zero residual branches reduce to identity") {
    SplitMix64 rng(31);
    const Index c = 4, heads = 2;
    BlockParams<double> p;
    p.norm1_g = Tensor<double>(Shape{c}, 1.0);
    p.norm1_b = Tensor<double>(Shape{c});
    p.qkv_w = random_tensor<double>({c, 3 * c}, rng);
    p.qkv_b = random_tensor<double>({3 * c}, rng);
    p.proj_w = Tensor<double>(Shape{c, c});  // zero: attention branch contributes nothing
    p.proj_b = Tensor<double>(Shape{c});
    p.norm2_g = Tensor<double>(Shape{c}, 1.0);
    p.norm2_b = Tensor<double>(Shape{c});
    p.mlp_w1 = random_tensor<double>({c, 8}, rng);
    p.mlp_b1 = random_tensor<double>({8}, rng);
    p.mlp_w2 = Tensor<double>(Shape{8, c});  // zero
    p.mlp_b2 = Tensor<double>(Shape{c});

    Tensor<double> x = random_tensor<double>({8, 8, c}, rng);
    Tensor<double> out = swin_block(x, p, heads, 4, 0, 1e-5);
    for (Index i = 0; i < x.size(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("shifted swin_block on constant input stays constant") {
    SplitMix64 rng(37);
    const Index c = 4, heads = 2;
    BlockParams<double> p;
    p.norm1_g = Tensor<double>(Shape{c}, 1.0);
    p.norm1_b = Tensor<double>(Shape{c});
    p.qkv_w = random_tensor<double>({c, 3 * c}, rng);
    p.qkv_b = random_tensor<double>({3 * c}, rng);
    p.proj_w = random_tensor<double>({c, c}, rng);
    p.proj_b = random_tensor<double>({c}, rng);
    p.rel_bias = random_tensor<double>({49, heads}, rng);
    p.norm2_g = Tensor<double>(Shape{c}, 1.0);
    p.norm2_b = Tensor<double>(Shape{c});
    p.mlp_w1 = random_tensor<double>({c, 8}, rng);
    p.mlp_b1 = random_tensor<double>({8}, rng);
    p.mlp_w2 = random_tensor<double>({8, c}, rng);
    p.mlp_b2 = random_tensor<double>({c}, rng);

    Tensor<double> x(Shape{8, 8, c});
    for (Index i = 0; i < 64; ++i) {
        for (Index ch = 0; ch < c; ++ch) x.values()[i * c + ch] = 0.3 + 0.1 * ch;
    }
    Tensor<double> out = swin_block(x, p, heads, 4, 2, 1e-5);
    for (Index i = 0; i < 64; ++i) {
        for (Index ch = 0; ch < c; ++ch) {
            CHECK(out(i / 8, i % 8, ch) == doctest::Approx(out(0, 0, ch)).epsilon(1e-12));
        }
    }
}

TEST_CASE("shifted swin_block matches the composed scalar oracle") {
    SplitMix64 rng(41);
    const Index c = 4, heads = 2, ws = 4;
    BlockParams<double> p;
    p.norm1_g = random_tensor<double>({c}, rng, 0.5, 1.5);
    p.norm1_b = random_tensor<double>({c}, rng, -0.2, 0.2);
    p.qkv_w = random_tensor<double>({c, 3 * c}, rng);
    p.qkv_b = random_tensor<double>({3 * c}, rng);
    p.proj_w = random_tensor<double>({c, c}, rng);
    p.proj_b = random_tensor<double>({c}, rng);
    p.rel_bias = random_tensor<double>({49, heads}, rng);
    p.norm2_g = random_tensor<double>({c}, rng, 0.5, 1.5);
    p.norm2_b = random_tensor<double>({c}, rng, -0.2, 0.2);
    p.mlp_w1 = random_tensor<double>({c, 16}, rng);
    p.mlp_b1 = random_tensor<double>({16}, rng);
    p.mlp_w2 = random_tensor<double>({16, c}, rng);
    p.mlp_b2 = random_tensor<double>({c}, rng);

    swinref::BlockRef ref = swinref::BlockRef::from(p, heads, ws, 1e-5);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor<double> x = random_tensor<double>({8, 8, c}, rng);
        for (Index shift : {Index(0), Index(2)}) {
            Tensor<double> out = swin_block(x, p, heads, ws, shift, 1e-5);
            std::vector<double> expect =
                swinref::swin_block_ref(std::vector<double>(x.values()), 8, 8, ref, ws, shift);
            for (Index i = 0; i < out.size(); ++i) {
                CHECK(std::abs(out.data()[i] - expect[static_cast<std::size_t>(i)]) < 1e-5);
            }
        }
    }
}

TEST_CASE("encode shape ladders") {
    SwinMIL<float> desk(ModelConfig::desk(), 3);
    Tensor<float> img(Shape{64, 64, 1}, 0.4f);
    StageFeatures<float> feats = desk.encode_features(img);
    REQUIRE(feats.size() == 3);
    CHECK(feats[0].shape() == Shape{16, 16, 24});
    CHECK(feats[1].shape() == Shape{8, 8, 48});
    CHECK(feats[2].shape() == Shape{4, 4, 96});

    // Swin-T dims on 256x256: 64x64x96, 32x32x192, 16x16x384
    ModelConfig big = ModelConfig::swin_t();
    big.encoder.window_size = 4;  // 256 is not a 224 multiple; window 4 divides its ladder
    SwinMIL<float> swin_t(big, 3);
    Tensor<float> img256(Shape{256, 256, 1}, 0.4f);
    StageFeatures<float> f256 = swin_t.encode_features(img256);
    CHECK(f256[0].shape() == Shape{64, 64, 96});
    CHECK(f256[1].shape() == Shape{32, 32, 192});
    CHECK(f256[2].shape() == Shape{16, 16, 384});
}

TEST_CASE("encode reports the exact failing constraint") {
    SwinMIL<float> desk(ModelConfig::desk(), 3);
    Tensor<float> bad(Shape{60, 60, 1});
    CHECK_THROWS_WITH_AS(desk.encode_features(bad), doctest::Contains("not divisible"),
                         std::invalid_argument);
    Tensor<float> rect(Shape{64, 32, 1});
    CHECK_THROWS_AS(desk.encode_features(rect), std::invalid_argument);
}

TEST_CASE("stage-count ablations build and run") {
    for (Index stages : {Index(2), Index(3), Index(4)}) {
        ModelConfig cfg = ModelConfig::desk();
        cfg.encoder.depths.assign(static_cast<std::size_t>(stages), 2);
        std::vector<Index> heads{3, 6, 12, 24};
        cfg.encoder.num_heads.assign(heads.begin(), heads.begin() + stages);
        cfg.head.fusion_weights.assign(static_cast<std::size_t>(stages),
                                       1.0 / static_cast<double>(stages));
        if (stages == 3) cfg.head.fusion_weights = {0.3, 0.4, 0.3};
        SwinMIL<float> model(cfg, 5);
        Tensor<float> img(Shape{64, 64, 1}, 0.5f);
        StageFeatures<float> feats = model.encode_features(img);
        REQUIRE(static_cast<Index>(feats.size()) == stages);
        for (Index t = 0; t < stages; ++t) {
            const Index side = 16 >> t;
            CHECK(feats[static_cast<std::size_t>(t)].shape() == Shape{side, side, 24 << t});
        }
    }
}

TEST_CASE("zero residual branches reduce encode to embed + merging chain") {
    ModelConfig cfg = ModelConfig::desk();
    SwinMIL<double> model(cfg, 7);
    model.visit_params([](const std::string& name, Tensor<double>& t, ParamGroup) {
        if (name.find("attn.proj.") != std::string::npos ||
            name.find("mlp.w2") != std::string::npos ||
            name.find("mlp.b2") != std::string::npos) {
            std::fill(t.values().begin(), t.values().end(), 0.0);
        }
    });
    SplitMix64 rng(43);
    Tensor<double> img = random_tensor<double>({64, 64, 1}, rng, 0, 1);
    StageFeatures<double> feats = model.encode_features(img);

    const EncoderParams<double>& p = model.encoder_params();
    Tensor<double> x = patch_embed(img, cfg.encoder, p);
    for (Index i = 0; i < x.size(); ++i) CHECK(feats[0].data()[i] == x.data()[i]);
    x = patch_merging(x, p.stages[1], 1e-5);
    for (Index i = 0; i < x.size(); ++i) CHECK(feats[1].data()[i] == x.data()[i]);
    x = patch_merging(x, p.stages[2], 1e-5);
    for (Index i = 0; i < x.size(); ++i) CHECK(feats[2].data()[i] == x.data()[i]);
}

TEST_CASE("small encoder end-to-end gradient check") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.encoder.embed_dim = 6;
    cfg.encoder.depths = {1, 1};
    cfg.encoder.num_heads = {2, 3};
    cfg.head.fusion_weights = {0.5, 0.5};
    SwinMIL<double> model(cfg, 11);

    SplitMix64 rng(47);
    Tensor<double> img = random_tensor<double>({16, 16, 1}, rng, 0, 1);

    std::vector<Tensor<double>> probes;
    model.visit_params([&](const std::string& name, Tensor<double>& t, ParamGroup) {
        if (name == "patch_embed.w" || name == "stage1.block1.attn.qkv.w" ||
            name == "stage2.merge.w" || name == "stage1.block1.norm1.g") {
            probes.push_back(t);
        }
    });
    REQUIRE(probes.size() == 4);
    auto fwd = [&] {
        StageFeatures<double> feats = model.encode_features(img);
        Tensor<double> acc = mean(feats[0]);
        for (std::size_t i = 1; i < feats.size(); ++i) acc = add(acc, mean(feats[i]));
        return acc;
    };
    CHECK(max_grad_err(fwd, probes) < 1e-6);
}
