#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "swinmil/checkpoint.hpp"
#include "swinmil/train.hpp"
#include "test_util.hpp"

using namespace swinmil;
using testutil::random_tensor;

namespace {

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// Tiny in-memory bags: positives carry a bright speckled square on a smooth
// background, negatives just the background.
TrainBag make_bag(int label, std::uint64_t seed, Index size = 32) {
    SplitMix64 rng(seed);
    TrainBag bag;
    bag.label = label;
    bag.image = Tensor<float>(Shape{size, size, 1});
    for (Index i = 0; i < size; ++i) {
        for (Index j = 0; j < size; ++j) {
            float v = 0.3f + static_cast<float>(rng.uniform(-0.05, 0.05));
            if (label == 1 && i >= size / 4 && i < 3 * size / 4 && j >= size / 4 &&
                j < 3 * size / 4) {
                v += 0.35f + static_cast<float>(rng.uniform(-0.1, 0.1));
            }
            bag.image.values()[static_cast<std::size_t>(i * size + j)] = v;
        }
    }
    bag.id = (label ? "pos" : "neg") + std::to_string(seed);
    return bag;
}

std::vector<TrainBag> four_bags() {
    return {make_bag(1, 1), make_bag(1, 2), make_bag(0, 3), make_bag(0, 4)};
}

RunConfig small_run(double lr) {
    RunConfig cfg;
    cfg.model.encoder.embed_dim = 12;
    cfg.model.encoder.depths = {1, 1, 1};
    cfg.model.encoder.num_heads = {2, 4, 4};
    cfg.train.lr = lr;
    cfg.train.side_lr_ratio = 1.0;
    cfg.train.epochs = 1;
    cfg.train.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("xavier_uniform bounds, variance, determinism") {
    SplitMix64 rng(1);
    Tensor<double> one = xavier_uniform<double>({1, 1}, rng);
    CHECK(std::abs(one.item()) <= std::sqrt(3.0));

    // empirical variance of 10000 samples within 10% of 2/(fan_in+fan_out)
    SplitMix64 rng2(2);
    Tensor<double> big = xavier_uniform<double>({100, 100}, rng2);
    double mean = 0;
    for (Index i = 0; i < big.size(); ++i) mean += big.data()[i];
    mean /= static_cast<double>(big.size());
    double var = 0;
    for (Index i = 0; i < big.size(); ++i) {
        const double d = big.data()[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(big.size());
    const double expect = 2.0 / 200.0;
    CHECK(var == doctest::Approx(expect).epsilon(0.10));
    const double a = std::sqrt(6.0 / 200.0);
    for (Index i = 0; i < big.size(); ++i) {
        CHECK(std::abs(big.data()[i]) <= a);
    }

    // same seed, same tensor
    SplitMix64 ra(7), rb(7);
    Tensor<double> ta = xavier_uniform<double>({5, 3}, ra);
    Tensor<double> tb = xavier_uniform<double>({5, 3}, rb);
    for (Index i = 0; i < ta.size(); ++i) CHECK(ta.data()[i] == tb.data()[i]);

    SplitMix64 rc(9);
    CHECK_THROWS_AS(xavier_uniform<double>({0, 4}, rc), std::invalid_argument);
    CHECK_THROWS_AS(xavier_uniform<double>({4}, rc), std::invalid_argument);
}

TEST_CASE("adam_step first-step oracle and zero-gradient fixpoint") {
    AdamConfig cfg;
    // zero gradient, zero weight decay: parameters unchanged
    Tensor<float> p(Shape{3}, 1.25f);
    Tensor<float> m(Shape{3}), v(Shape{3});
    adam_step<float>(p, {0, 0, 0}, m, v, 1, 1e-3, 0.0, cfg);
    for (Index i = 0; i < 3; ++i) CHECK(p.data()[i] == 1.25f);

    // g = 1, wd = 0, defaults, lr = 1e-6: delta ~ -1e-6
    Tensor<double> q(Shape{1}, 0.5);
    Tensor<double> qm(Shape{1}), qv(Shape{1});
    adam_step<double>(q, {1.0}, qm, qv, 1, 1e-6, 0.0, cfg);
    CHECK(q.item() == doctest::Approx(0.5 - 1e-6).epsilon(1e-9));
    CHECK(qm.item() == doctest::Approx(0.1));
    CHECK(qv.item() == doctest::Approx(0.001));
}

TEST_CASE("two parameter groups: update magnitudes scale exactly with lr") {
    AdamConfig cfg;
    Tensor<double> a(Shape{1}, 1.0), am(Shape{1}), av(Shape{1});
    Tensor<double> b(Shape{1}, 1.0), bm(Shape{1}), bv(Shape{1});
    const double g = 0.37;
    adam_step<double>(a, {g}, am, av, 1, 1e-3, 0.0, cfg);
    adam_step<double>(b, {g}, bm, bv, 1, 1e-5, 0.0, cfg);
    const double da = 1.0 - a.item(), db = 1.0 - b.item();
    CHECK(da / db == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("adam rejects NaN gradients with the parameter name") {
    AdamConfig cfg;
    Tensor<float> p(Shape{2}, 1.0f);
    Tensor<float> m(Shape{2}), v(Shape{2});
    CHECK_THROWS_WITH_AS(
        adam_step<float>(p, {0.0f, std::nanf("")}, m, v, 1, 1e-3, 0.0, cfg, "stage1.block1.w"),
        doctest::Contains("stage1.block1.w"), std::runtime_error);
}

TEST_CASE("adam with constant positive gradient strictly decreases the parameter") {
    AdamConfig cfg;
    Tensor<double> p(Shape{1}, 2.0);
    Tensor<double> m(Shape{1}), v(Shape{1});
    double prev = p.item();
    for (std::uint64_t step = 1; step <= 25; ++step) {
        adam_step<double>(p, {0.8}, m, v, step, 1e-3, 0.0, cfg);
        CHECK(p.item() < prev);
        prev = p.item();
    }
}

TEST_CASE("trainer determinism: same seed gives byte-identical checkpoints") {
    auto run_once = [](const char* name) {
        RunConfig cfg = small_run(1e-3);
        SwinMIL<float> model(cfg.model, cfg.train.seed);
        Trainer trainer(model, four_bags(), cfg);
        trainer.run_epoch();
        const auto path = temp_file(name);
        save_checkpoint(path, trainer.make_checkpoint());
        return file_bytes(path);
    };
    const std::string a = run_once("det_a.smc");
    const std::string b = run_once("det_b.smc");
    CHECK(a.size() > 0);
    CHECK(a == b);
    std::filesystem::remove(temp_file("det_a.smc"));
    std::filesystem::remove(temp_file("det_b.smc"));
}

TEST_CASE("lr = 0 leaves every parameter fixed") {
    RunConfig cfg = small_run(0.0);
    SwinMIL<float> model(cfg.model, 3);
    std::vector<std::vector<float>> before;
    model.visit_params([&](const std::string&, Tensor<float>& t, ParamGroup) {
        before.push_back(t.values());
    });
    Trainer trainer(model, four_bags(), cfg);
    trainer.run_epoch();
    std::size_t k = 0;
    model.visit_params([&](const std::string&, Tensor<float>& t, ParamGroup) {
        CHECK(t.values() == before[k++]);
    });
}

TEST_CASE("checkpoint save/load round trip is bit exact") {
    RunConfig cfg = small_run(1e-3);
    SwinMIL<float> model(cfg.model, cfg.train.seed);
    Trainer trainer(model, four_bags(), cfg);
    trainer.run_epoch();
    Checkpoint ckpt = trainer.make_checkpoint();

    const auto p1 = temp_file("rt1.smc");
    const auto p2 = temp_file("rt2.smc");
    save_checkpoint(p1, ckpt);
    Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(p2, loaded);
    CHECK(file_bytes(p1) == file_bytes(p2));

    CHECK(loaded.step == ckpt.step);
    CHECK(loaded.rng_state == ckpt.rng_state);
    CHECK(loaded.config_text == ckpt.config_text);
    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        CHECK(loaded.tensors[i].first == ckpt.tensors[i].first);
        CHECK(loaded.tensors[i].second.values() == ckpt.tensors[i].second.values());
    }
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("checkpoint rejects corruption") {
    const auto path = temp_file("bad.smc");
    {
        std::ofstream os(path, std::ios::binary);
        os << "XMC1" << std::string(32, '\0');
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad SMC1 magic"),
                         std::runtime_error);
    {
        std::ofstream os(path, std::ios::binary);
        os << "SMC1";  // truncated
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("offset"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("resume from checkpoint equals uninterrupted training bitwise") {
    // batch_size == dataset size, so each epoch is exactly one step
    RunConfig cfg = small_run(1e-3);

    // uninterrupted: two epochs
    SwinMIL<float> model_a(cfg.model, cfg.train.seed);
    Trainer trainer_a(model_a, four_bags(), cfg);
    trainer_a.run_epoch();
    Checkpoint mid = trainer_a.make_checkpoint();
    trainer_a.run_epoch();
    Checkpoint full = trainer_a.make_checkpoint();

    // resumed: fresh trainer with a different init seed, restore, one epoch
    RunConfig cfg_b = cfg;
    cfg_b.train.seed = 999;
    SwinMIL<float> model_b(cfg_b.model, cfg_b.train.seed);
    Trainer trainer_b(model_b, four_bags(), cfg_b);
    trainer_b.restore(mid);
    CHECK(trainer_b.epoch() == 1);
    trainer_b.run_epoch();
    Checkpoint resumed = trainer_b.make_checkpoint();

    CHECK(resumed.step == full.step);
    CHECK(resumed.rng_state == full.rng_state);
    REQUIRE(resumed.tensors.size() == full.tensors.size());
    for (std::size_t i = 0; i < full.tensors.size(); ++i) {
        CHECK(resumed.tensors[i].first == full.tensors[i].first);
        CHECK(resumed.tensors[i].second.values() == full.tensors[i].second.values());
    }
}

TEST_CASE("config key=value round trip and validation") {
    RunConfig cfg = RunConfig::desk();
    cfg.model.encoder.embed_dim = 48;
    cfg.model.encoder.depths = {2, 2, 6};
    cfg.model.head.fusion_weights = {0.25, 0.5, 0.25};
    cfg.train.lr = 3.5e-4;
    cfg.train.seed = 99;
    RunConfig back = RunConfig::from_key_values(cfg.to_key_values());
    CHECK(back.to_key_values() == cfg.to_key_values());
    CHECK(back.model.encoder.embed_dim == 48);
    CHECK(back.model.encoder.depths == std::vector<Index>{2, 2, 6});
    CHECK(back.train.lr == cfg.train.lr);

    CHECK_THROWS_WITH_AS(RunConfig::from_key_values("definitely_unknown = 1\n"),
                         doctest::Contains("unknown key"), std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::from_key_values("no equals sign here\n"), std::invalid_argument);

    // comments and blank lines are fine
    RunConfig commented = RunConfig::from_key_values("# comment\n\nembed_dim = 12\n");
    CHECK(commented.model.encoder.embed_dim == 12);

    for (int stages : {2, 3, 4}) {
        RunConfig ab = RunConfig::desk();
        set_stage_count(ab, stages);
        ab.validate();
        CHECK(static_cast<int>(ab.model.encoder.depths.size()) == stages);
        CHECK(static_cast<int>(ab.model.head.fusion_weights.size()) == stages);
    }
    RunConfig bad = RunConfig::desk();
    CHECK_THROWS_AS(set_stage_count(bad, 5), std::invalid_argument);
}

TEST_CASE("a single positive bag overfits to a confident score") {
    RunConfig cfg;  // desk preset
    cfg.train.seed = 5;
    SwinMIL<float> model(cfg.model, 17);
    std::vector<TrainBag> bags{make_bag(1, 1)};
    Trainer trainer(model, bags, cfg);
    for (int step = 0; step < 120; ++step) trainer.run_epoch();
    SideOutputs<float> out = model.forward(bags[0].image);
    const double score = gm_pool(out.fused, cfg.model.head.r, cfg.model.head.clamp_eps).item();
    CAPTURE(score);
    CHECK(score > 0.9);
}

TEST_CASE("overfit: 4-bag loss drops below 25% of its initial value") {
    RunConfig cfg;  // the desk preset as shipped
    cfg.train.seed = 5;
    SwinMIL<float> model(cfg.model, 11);
    Trainer trainer(model, four_bags(), cfg);
    double initial = -1, last = -1;
    for (int step = 0; step < 200; ++step) {
        const auto logs = trainer.run_epoch();  // one step per epoch here
        if (initial < 0) initial = logs.front().l_total;
        last = logs.back().l_total;
    }
    CAPTURE(initial);
    CAPTURE(last);
    CHECK(last < 0.25 * initial);
}
