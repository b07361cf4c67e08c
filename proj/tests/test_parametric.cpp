#include <doctest.h>

#include <cmath>
#include <fstream>

#include "gradcheck.hpp"
#include "knnfuse/checkpoint.hpp"
#include "knnfuse/error.hpp"
#include "knnfuse/parametric.hpp"
#include "knnfuse/synthetic.hpp"
#include "oracle.hpp"
#include "tempdir.hpp"

using namespace knnfuse;

namespace {

FeatureBank two_blobs(std::size_t n, std::uint64_t seed) {
    const std::array<double, 2> centers[] = {{-2.0, 0.0}, {2.0, 0.0}};
    const std::uint32_t labels[] = {0, 1};
    return gaussian_blobs(n, centers, labels, 2, 0.5, seed, "b");
}

double train_accuracy(const Model& m, const FeatureBank& bank) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < bank.size(); ++i) ok += argmax(forward(m, bank.row(i)).probs) == bank.label(i);
    return static_cast<double>(ok) / static_cast<double>(bank.size());
}

}  // namespace

TEST_CASE("init_model") {
    const std::vector<std::size_t> none;
    const auto m = init_model(5, 3, none, 1);
    REQUIRE(m.layers.size() == 1);
    CHECK(m.layers[0].in == 5);
    CHECK(m.layers[0].out == 3);
    for (double b : m.layers[0].bias) CHECK(b == doctest::Approx(-std::log(99.0)).epsilon(1e-15));
    CHECK(m.layers[0].bias[0] == doctest::Approx(-4.59512).epsilon(1e-6));
    for (double w : m.layers[0].weights) CHECK(std::abs(w) <= 1.0 / std::sqrt(5.0));
    CHECK(init_model(5, 3, none, 1) == m);
    CHECK_FALSE(init_model(5, 3, none, 2) == m);

    const std::vector<std::size_t> hidden{7, 4};
    const auto mlp = init_model(5, 3, hidden, 1);
    CHECK(mlp.hidden() == hidden);
    CHECK(mlp.parameter_count() == (5 * 7 + 7) + (7 * 4 + 4) + (4 * 3 + 3));
}

TEST_CASE("softmax examples") {
    const double flat[] = {2.5, 2.5, 2.5, 2.5};
    for (double p : softmax(flat)) CHECK(p == 0.25);

    Model m{{Layer{2, 2, {0, 0, 0, 0}, {0, 5}}}};
    const double x[] = {0.3, -1.0};
    const auto p = forward(m, std::span<const double>(x)).probs;
    CHECK(p[1] == doctest::Approx(1.0 / (1.0 + std::exp(-5.0))).epsilon(1e-15));
    CHECK(p[0] == doctest::Approx(0.0067).epsilon(1e-2));
    CHECK(p[1] == doctest::Approx(0.9933).epsilon(1e-4));

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> z(6), shifted(6);
        const double c = rng.uniform(-50, 50);
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = rng.uniform(-10, 10);
            shifted[i] = z[i] + c;
        }
        const auto a = softmax(z);
        const auto b = softmax(shifted);
        CHECK(argmax(a) == argmax(b));
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
    }
}

TEST_CASE("forward rejects bad input") {
    const auto m = init_model(2, 2, {}, 0);
    const double wrong[] = {1.0};
    CHECK_THROWS_AS(forward(m, std::span<const double>(wrong)), Error);
    const double inf[] = {INFINITY, 0.0};
    try {
        forward(m, std::span<const double>(inf));
        FAIL("expected NonFiniteActivation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFiniteActivation);
    }
}

TEST_CASE("modulating factor examples") {
    const LossConfig nll{0.01, Factor::Nll, 2.0};
    const LossConfig focal{0.01, Factor::Focal, 2.0};
    CHECK(modulating_factor(1.0, nll) == 0.0);
    CHECK(modulating_factor(0.0, nll) == 100.0);
    CHECK(modulating_factor(0.5, focal) == 0.25);
    CHECK(modulating_factor(std::exp(-1.0), nll) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("joint loss examples") {
    const double e2 = std::exp(-2.0);
    const double dist[] = {e2, 1.0 - e2};
    const LossConfig cfg{0.01, Factor::Nll};
    CHECK(joint_loss(dist, 0, std::exp(-1.0), cfg) == doctest::Approx(2.02).epsilon(1e-14));
    const LossConfig plain{0.0, Factor::Nll};
    CHECK(joint_loss(dist, 0, 0.3, plain) == -std::log(e2));
    CHECK(joint_loss(dist, 0, 1.0, cfg) == -std::log(e2));
}

TEST_CASE("hardness weighting is monotone and never shrinks the loss") {
    for (Factor f : {Factor::Nll, Factor::Focal}) {
        for (double gamma : {0.5, 1.0, 2.0, 5.0}) {
            const LossConfig cfg{0.01, f, gamma};
            double prev = INFINITY;
            for (int i = 0; i <= 1000; ++i) {
                const double p = i / 1000.0;
                const double m = modulating_factor(p, cfg);
                CHECK(m >= 0.0);
                CHECK(m <= prev);
                prev = m;
                const double dist[] = {0.3, 0.7};
                CHECK(joint_loss(dist, 1, p, cfg) >= -std::log(0.7));
            }
        }
    }
}

TEST_CASE("learning rate schedule") {
    OptimizerConfig cfg;
    cfg.base_lr = 0.1;
    cfg.batch_size = 384;
    CHECK(effective_lr(cfg) == doctest::Approx(0.15).epsilon(1e-15));
    cfg.warmup_epochs = 2;
    cfg.total_epochs = 10;
    CHECK(lr_at(0, cfg, 5) == 0.0);
    CHECK(lr_at(10, cfg, 5) == effective_lr(cfg));
    CHECK(lr_at(5, cfg, 5) == doctest::Approx(effective_lr(cfg) / 2));
    double prev = effective_lr(cfg);
    for (std::size_t s = 11; s < 50; ++s) {
        const double lr = lr_at(s, cfg, 5);
        CHECK(lr < prev);
        CHECK(lr > 0.0);
        prev = lr;
    }
    CHECK(lr_at(50, cfg, 5) == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
    Rng rng(17);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t dim = 1 + rng.below(8);
        const auto classes = static_cast<std::uint32_t>(2 + rng.below(4));
        std::vector<std::size_t> hidden;
        if (trial % 3 == 2) hidden.push_back(2 + rng.below(5));
        auto model = init_model(dim, classes, hidden, rng.next(), 0.2);
        const std::size_t n = 6;
        std::vector<float> x(n * dim);
        for (auto& v : x) v = static_cast<float>(rng.normal());
        std::vector<std::uint32_t> labels(n);
        std::vector<double> weights(n);
        const LossConfig loss{trial % 2 ? 0.01 : 0.0, trial % 4 < 2 ? Factor::Nll : Factor::Focal, 2.0};
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<std::uint32_t>(rng.below(classes));
            weights[i] = sample_weight(rng.uniform(), loss);
        }
        const auto r = gradcheck::check(model, x, n, labels, weights);
        CHECK(r.checked == model.parameter_count());
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("training a linear probe on separable blobs") {
    const auto bank = two_blobs(200, 5);
    OptimizerConfig opt;
    opt.base_lr = 0.5;
    opt.batch_size = 32;
    opt.total_epochs = 50;
    opt.warmup_epochs = 5;
    opt.weight_decay = 1e-4;
    const std::vector<double> p_gt(bank.size(), 1.0);
    const auto init = init_model(2, 2, {}, 1);
    const auto r = train(init, bank, p_gt, LossConfig{}, opt);
    CHECK(r.log.size() == 50);
    CHECK(r.log.back().train_loss < r.log.front().train_loss);
    CHECK(train_accuracy(r.model, bank) == 1.0);

    SUBCASE("alpha = 0 ignores p_gt") {
        std::vector<double> other(bank.size());
        Rng rng(2);
        for (auto& v : other) v = rng.uniform();
        CHECK(train(init, bank, other, LossConfig{0.0, Factor::Nll}, opt).model == r.model);
        CHECK(train(init, bank, p_gt, LossConfig{}, opt).model == r.model);
    }
    SUBCASE("k-NN weighting changes the trajectory") {
        std::vector<double> other(bank.size(), 0.5);
        CHECK_FALSE(train(init, bank, other, LossConfig{0.01, Factor::Nll}, opt).model == r.model);
    }
}

TEST_CASE("per-epoch validation accuracy is logged") {
    const auto bank = two_blobs(64, 1);
    const auto val = two_blobs(20, 2);
    OptimizerConfig opt;
    opt.total_epochs = 3;
    opt.warmup_epochs = 1;
    opt.batch_size = 10;
    const auto r = train(init_model(2, 2, {}, 0), bank, std::vector<double>(64, 1.0), LossConfig{}, opt, &val);
    for (const auto& e : r.log) CHECK(e.val_top1.has_value());
}

TEST_CASE("diverging runs are reported") {
    const auto bank = two_blobs(64, 1);
    OptimizerConfig opt;
    opt.base_lr = 1e308;
    opt.total_epochs = 5;
    opt.warmup_epochs = 0;
    try {
        train(init_model(2, 2, {}, 0), bank, std::vector<double>(64, 1.0), LossConfig{}, opt);
        FAIL("expected DivergedLoss");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DivergedLoss);
    }
}

TEST_CASE("checkpoint round-trip") {
    testutil::TempDir dir("ckpt");
    const std::vector<std::size_t> hidden{3};
    const auto model = init_model(4, 3, hidden, 9);
    Checkpoint ck{model, PreprocessStats{{0.1, 0.2, 0.3, 0.4}, Recipe::L2ThenCenter}, {{"alpha", 0.01}}, 77};
    write_checkpoint(ck, dir / "m.ckpt");
    const auto back = read_checkpoint(dir / "m.ckpt");
    CHECK(back.seed == 77);
    CHECK(back.config["alpha"] == 0.01);
    CHECK(back.preprocess == ck.preprocess);
    REQUIRE(back.model.layers.size() == model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        for (std::size_t i = 0; i < model.layers[l].weights.size(); ++i) {
            CHECK(back.model.layers[l].weights[i] == static_cast<double>(static_cast<float>(model.layers[l].weights[i])));
        }
        for (std::size_t i = 0; i < model.layers[l].bias.size(); ++i) {
            CHECK(back.model.layers[l].bias[i] == static_cast<double>(static_cast<float>(model.layers[l].bias[i])));
        }
    }
    // Writing the reloaded checkpoint reproduces the file byte for byte.
    write_checkpoint(back, dir / "m2.ckpt");
    std::ifstream a(dir / "m.ckpt", std::ios::binary), b(dir / "m2.ckpt", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

    {
        std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
        bad << "NOPE";
    }
    try {
        read_checkpoint(dir / "bad.ckpt");
        FAIL("expected MalformedHeader");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MalformedHeader);
    }
}
