#include "doctest.h"

#include "semap/error.hpp"
#include "semap/evaluator.hpp"
#include "semap/trainer.hpp"

#include <cmath>

using namespace semap;

namespace {

BenchmarkConfig small_config(std::uint64_t seed) {
    BenchmarkConfig c;
    c.seed = seed;
    c.per_class = 8;
    c.test_per_class = 4;
    return c;
}

const SyntheticBenchmark& shared_bench() {
    static const SyntheticBenchmark b = make_synthetic_benchmark(small_config(1));
    return b;
}

MappingTable semantic_table(const SyntheticBenchmark& b) {
    return semap_a(build_profiles(b.downstream_embeddings, b.pretrained_embeddings), kDefaultEpsilon,
                   kDefaultGamma, kDefaultCap);
}

// Loss-only oracle for the composite: plain log-sum-exp over mapped scores.
double composite_loss(const FrozenBackbone& b, const MappingTable& t, const Prompt& p,
                      std::span<const float> img, std::size_t side, std::size_t label) {
    const auto y = apply_mapping(t, forward(b, compose(img, side, p)));
    double mx = y[0];
    for (double v : y) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : y) s += std::exp(v - mx);
    return mx + std::log(s) - y[label];
}

Prompt random_prompt(Rng& rng, std::size_t side, std::size_t pad, double lo, double hi) {
    auto p = Prompt::padding(side, pad);
    std::vector<double> v(side * side);
    for (double& x : v) x = rng.uniform(lo, hi);
    p.set_values(v);
    return p;
}

} // namespace

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.learning_rate = -1;
    CHECK_THROWS_AS(c.validate(), InvalidInputError);
    c.learning_rate = 0;
    CHECK_NOTHROW(c.validate(true));
    CHECK_THROWS_AS(c.validate(false), InvalidInputError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), InvalidInputError);
    c = TrainConfig{};
    c.momentum = 1.0;
    CHECK_THROWS_AS(c.validate(), InvalidInputError);
}

TEST_CASE("identity table reproduces the unmapped gradient") {
    Rng rng(1);
    const auto b = make_backbone(2, 8, 10, 5);
    const auto table = rm_map(5, 5);
    const auto p = random_prompt(rng, 8, 2, 0.1, 0.9);
    std::vector<float> img(16);
    for (float& x : img) x = static_cast<float>(rng.uniform());
    const auto lg = loss_and_grad(b, table, p, img, 4, 3);
    const auto y = forward(b, compose(img, 4, p));
    const auto ce = cross_entropy(y, 3);
    CHECK(lg.loss == doctest::Approx(ce.loss).epsilon(1e-14));
    const auto g = grad_prompt(b, img, 4, p, ce.grad_scores);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(lg.grad[i] == doctest::Approx(g[i]).epsilon(1e-12).scale(1e-15));
}

TEST_CASE("composite gradient matches central differences") {
    Rng rng(2);
    MappingTable table;
    table.strategy = Strategy::semap_a;
    table.m = 2;
    table.n = 4;
    table.hyper.cap = 2;
    table.assignments = {{1, 3}, {0}};
    const double h = 1e-3;
    std::size_t checked = 0;
    for (int t = 0; t < 10; ++t) {
        const auto b = make_backbone(rng.next_u64(), 6, 12, 4);
        const auto p = random_prompt(rng, 6, 1, 0.1, 0.9);
        std::vector<float> img(16);
        for (float& x : img) x = static_cast<float>(rng.uniform());
        const std::size_t label = rng.below(2);
        const auto lg = loss_and_grad(b, table, p, img, 4, label);
        CHECK(lg.loss == doctest::Approx(composite_loss(b, table, p, img, 4, label)).epsilon(1e-12));
        for (std::size_t i = 0; i < 36; ++i) {
            if (!p.mask()[i]) continue;
            std::vector<double> vp(p.values().begin(), p.values().end()), vm = vp;
            vp[i] += h;
            vm[i] -= h;
            auto pp = p, pm = p;
            pp.set_values(vp);
            pm.set_values(vm);
            // Compare only where the ReLU pattern is the same at both points.
            const auto pre = [&](const Prompt& q) {
                const auto c = compose(img, 4, q).canvas;
                return affine(b.hidden_weights(), b.hidden_bias(), c);
            };
            const auto a0 = pre(p), a1 = pre(pp), a2 = pre(pm);
            bool kink = false;
            for (std::size_t j = 0; j < a0.size(); ++j)
                if ((a0[j] > 0) != (a1[j] > 0) || (a0[j] > 0) != (a2[j] > 0)) kink = true;
            if (kink) continue;
            const double fd = (composite_loss(b, table, pp, img, 4, label) - composite_loss(b, table, pm, img, 4, label)) / (2 * h);
            const double denom = std::max({std::abs(fd), std::abs(lg.grad[i]), 1e-6});
            CHECK(std::abs(fd - lg.grad[i]) / denom < 1e-4);
            ++checked;
        }
    }
    CHECK(checked > 150);
}

TEST_CASE("a small step along the gradient lowers the loss") {
    int passed = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        const auto b = make_backbone(seed, 8, 16, 6);
        const auto table = rm_map(3, 6);
        auto p = random_prompt(rng, 8, 2, 0.2, 0.8);
        std::vector<float> img(16);
        for (float& x : img) x = static_cast<float>(rng.uniform());
        const std::size_t label = rng.below(3);
        const auto lg = loss_and_grad(b, table, p, img, 4, label);
        std::vector<double> step(lg.grad.size());
        for (std::size_t i = 0; i < step.size(); ++i) step[i] = 1e-3 * lg.grad[i];
        p.subtract(step);
        if (loss_and_grad(b, table, p, img, 4, label).loss < lg.loss) ++passed;
    }
    CHECK(passed >= 19);
}

TEST_CASE("label out of range") {
    const auto b = make_backbone(1, 4, 3, 3);
    CHECK_THROWS_AS(loss_and_grad(b, rm_map(2, 3), Prompt::padding(4, 1), std::vector<float>(4), 2, 2), IndexError);
}

TEST_CASE("zero learning rate keeps the prompt") {
    const auto& bench = shared_bench();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 0.0;
    Rng rng(3);
    auto init = random_prompt(rng, bench.config.side, bench.config.padding_width(), -0.1, 0.1);
    const auto report = train(bench.backbone, semantic_table(bench), bench.train, init, cfg);
    CHECK(report.final_prompt == init);
    CHECK(report.final_loss == report.initial_loss);
}

TEST_CASE("training is deterministic and leaves the backbone alone") {
    const auto& bench = shared_bench();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 7;
    cfg.seed = 5;
    const auto before = bench.backbone.checksum();
    const auto a = train(bench.backbone, rm_map(4, 20), bench.train, bench.zero_prompt(), cfg);
    cfg.threads = 3;
    const auto b = train(bench.backbone, rm_map(4, 20), bench.train, bench.zero_prompt(), cfg);
    CHECK(a.epochs == b.epochs);
    CHECK(a.final_prompt == b.final_prompt);
    CHECK(a.final_loss == b.final_loss);
    CHECK(a.backbone_checksum == before);
    CHECK(bench.backbone.checksum() == before);
    const auto mask = a.final_prompt.mask();
    const auto vals = a.final_prompt.values();
    bool moved = false;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (!mask[i]) CHECK(vals[i] == 0.0);
        moved = moved || vals[i] != 0.0;
    }
    CHECK(moved);
    CHECK(a.epochs.size() == 3);
    CHECK(a.to_text().find("epoch,mean_loss,accuracy") != std::string::npos);
}

TEST_CASE("training lowers the loss") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto bench = make_synthetic_benchmark(small_config(seed));
        TrainConfig cfg;
        cfg.epochs = 5;
        cfg.batch_size = 8;
        cfg.seed = seed;
        const auto r = train(bench.backbone, rm_map(4, 20), bench.train, bench.zero_prompt(), cfg);
        CHECK(r.final_loss < r.initial_loss);
        CHECK(std::isfinite(r.final_loss));
    }
}

TEST_CASE("full-batch steps at small learning rate rarely raise the loss") {
    std::size_t steps = 0, ok = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto bench = make_synthetic_benchmark(small_config(seed));
        const auto table = rm_map(4, 20);
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = bench.train.count;
        cfg.learning_rate = 1e-3;
        cfg.momentum = 0.0;
        cfg.seed = seed;
        Prompt p = bench.zero_prompt();
        double prev = dataset_loss(bench.backbone, table, p, bench.train).mean_loss;
        for (int s = 0; s < 10; ++s) {
            const auto r = train(bench.backbone, table, bench.train, p, cfg);
            p = r.final_prompt;
            ++steps;
            if (r.final_loss <= prev) ++ok;
            prev = r.final_loss;
        }
    }
    CHECK(ok * 10 >= steps * 9);
}

TEST_CASE("random patch prompts train and stay inside their mask") {
    const auto& bench = shared_bench();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    const auto p = Prompt::random_patch(bench.config.side, 6);
    // Random-patch prompts see the downstream image at full canvas size.
    const auto r = train(bench.backbone, rm_map(4, 20), bench.train, p, cfg);
    CHECK(r.final_prompt.variant() == PromptVariant::random_patch);
    const auto mask = r.final_prompt.mask();
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask[i]) CHECK(r.final_prompt.values()[i] == 0.0);
    CHECK(std::isfinite(r.final_loss));
}

TEST_CASE("diverging updates raise a numeric error") {
    // Large weights make the prompt gradient big enough for lr * grad to overflow.
    Rng rng(4);
    Matrix w1(6, 16), w2(3, 6);
    for (float& x : w1.data()) x = static_cast<float>(rng.uniform(-1e3, 1e3));
    for (float& x : w2.data()) x = static_cast<float>(rng.uniform(-1e3, 1e3));
    const FrozenBackbone b(4, w1, std::vector<float>(6, 1.0f), w2, std::vector<float>(3, 0.0f));
    ImageSet data{4, 2, std::vector<float>(16, 0.5f), {0, 1, 2, 0}};
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e307;
    CHECK_THROWS_WITH_AS(train(b, rm_map(3, 3), data, Prompt::padding(4, 1), cfg), doctest::Contains("epoch 0"),
                         NumericError);
}

TEST_CASE("train rejects bad inputs") {
    const auto& bench = shared_bench();
    TrainConfig cfg;
    ImageSet empty{0, bench.train.side, {}, {}};
    CHECK_THROWS_AS(train(bench.backbone, rm_map(4, 20), empty, bench.zero_prompt(), cfg), InvalidInputError);
    CHECK_THROWS_AS(train(bench.backbone, rm_map(3, 20), bench.train, bench.zero_prompt(), cfg), IndexError);
    CHECK_THROWS_AS(train(bench.backbone, rm_map(4, 19), bench.train, bench.zero_prompt(), cfg), ShapeError);
}
