#include "doctest.h"

#include "semap/error.hpp"
#include "semap/evaluator.hpp"
#include "test_support.hpp"

#include <cmath>
#include <numeric>

using namespace semap;

namespace {

MappingTable two_class_table() {
    MappingTable t;
    t.strategy = Strategy::semap_k;
    t.m = 2;
    t.n = 3;
    t.hyper.k = 1;
    t.assignments = {{0}, {1}};
    return t;
}

BenchmarkConfig quick(std::uint64_t seed) {
    BenchmarkConfig c;
    c.seed = seed;
    c.per_class = 25;
    c.test_per_class = 25;
    return c;
}

} // namespace

TEST_CASE("predict_zero_shot argmax and tie rule") {
    const auto t = two_class_table();
    CHECK(predict_zero_shot(t, std::vector<double>{2.0, 1.0, 9.0}) == 0);
    CHECK(predict_zero_shot(t, std::vector<double>{1.0, 1.0, 9.0}) == 0);
    CHECK(predict_zero_shot(t, std::vector<float>{0.5f, 1.0f, 0.0f}) == 1);
    CHECK_THROWS_AS(predict_zero_shot(t, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("predict_zero_shot matches sum-then-scan") {
    Rng rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(20), m = 1 + rng.below(6);
        MappingTable t;
        t.strategy = Strategy::semap_a;
        t.m = m;
        t.n = n;
        t.hyper.cap = static_cast<std::uint32_t>(n);
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<std::uint32_t> pool(n);
            std::iota(pool.begin(), pool.end(), 0u);
            rng.shuffle(std::span<std::uint32_t>(pool));
            pool.resize(1 + rng.below(n));
            t.assignments.push_back(pool);
        }
        std::vector<float> logits(n);
        for (float& x : logits) x = static_cast<float>(rng.normal());
        std::size_t best = 0;
        double best_v = -INFINITY;
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (auto j : t.assignments[i]) s += logits[j];
            if (s > best_v) {
                best_v = s;
                best = i;
            }
        }
        CHECK(predict_zero_shot(t, logits) == best);
    }
}

TEST_CASE("evaluate counts by hand") {
    const auto t = two_class_table();
    // Row r predicts class 0 if logit 0 is larger.
    LogitBatch b;
    b.count = 10;
    b.width = 3;
    const int pred[10] = {0, 0, 1, 1, 0, 1, 0, 1, 1, 0};
    const std::uint32_t labels[10] = {1, 0, 1, 0, 1, 1, 0, 0, 1, 1};
    for (int r = 0; r < 10; ++r) {
        b.scores.push_back(pred[r] == 0 ? 1.0f : 0.0f);
        b.scores.push_back(pred[r] == 1 ? 1.0f : 0.0f);
        b.scores.push_back(0.0f);
    }
    b.labels = std::vector<std::uint32_t>(labels, labels + 10);
    const auto r = evaluate(t, b, "hand");
    // Matches at rows 1, 2, 5, 6, 8.
    CHECK(r.correct == 5);
    CHECK(r.count == 10);
    CHECK(r.accuracy == 0.5);
    CHECK(r.class_total == std::vector<std::size_t>{4, 6});
    CHECK(r.class_correct == std::vector<std::size_t>{2, 3});
    CHECK(r.class_accuracy[0] == 0.5);
    CHECK(r.dataset == "hand");
    CHECK(r.to_text().find("accuracy") != std::string::npos);

    b.labels.reset();
    CHECK_THROWS_AS(evaluate(t, b), InvalidInputError);
}

TEST_CASE("evaluate is invariant to row order") {
    Rng rng(2);
    const auto t = two_class_table();
    LogitBatch b{50, 3, {}, std::vector<std::uint32_t>(50)};
    for (std::size_t i = 0; i < 150; ++i) b.scores.push_back(static_cast<float>(rng.normal()));
    for (auto& l : *b.labels) l = static_cast<std::uint32_t>(rng.below(2));
    const auto base = evaluate(t, b);
    std::vector<std::size_t> perm(50);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    LogitBatch shuffled{50, 3, {}, std::vector<std::uint32_t>(50)};
    for (std::size_t r = 0; r < 50; ++r) {
        for (std::size_t j = 0; j < 3; ++j) shuffled.scores.push_back(b.scores[perm[r] * 3 + j]);
        (*shuffled.labels)[r] = (*b.labels)[perm[r]];
    }
    const auto s = evaluate(t, shuffled);
    CHECK(s.correct == base.correct);
    CHECK(s.class_correct == base.class_correct);
}

TEST_CASE("random guessing lands near 1/m") {
    const std::size_t m = 5, N = 2000;
    std::vector<std::uint32_t> labels(N);
    for (std::size_t i = 0; i < N; ++i) labels[i] = static_cast<std::uint32_t>(i % m);
    double total = 0.0;
    const int trials = 20;
    for (int s = 0; s < trials; ++s) total += random_guess_report(labels, m, s).accuracy;
    const double mean = total / trials;
    const double sigma = std::sqrt(0.2 * 0.8 / (N * trials));
    CHECK(std::abs(mean - 0.2) < 3 * sigma);
}

TEST_CASE("benchmark regenerates bitwise and recovers its planted alignment") {
    const auto a = make_synthetic_benchmark(quick(3));
    const auto b = make_synthetic_benchmark(quick(3));
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.train_logits == b.train_logits);
    CHECK(a.downstream_embeddings == b.downstream_embeddings);
    CHECK(a.backbone.checksum() == b.backbone.checksum());
    CHECK(a.planted == b.planted);
    const auto c = make_synthetic_benchmark(quick(4));
    CHECK_FALSE(a.train == c.train);

    for (auto idx : a.planted) CHECK(idx >= a.config.m);
    const auto t = semap1(build_profiles(a.downstream_embeddings, a.pretrained_embeddings));
    for (std::size_t i = 0; i < a.config.m; ++i) CHECK(t.assignments[i] == std::vector<std::uint32_t>{a.planted[i]});
}

TEST_CASE("clean templates classify perfectly under the planted map") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto bench = make_synthetic_benchmark(quick(seed));
        const auto t = semap1(build_profiles(bench.downstream_embeddings, bench.pretrained_embeddings));
        const auto r = evaluate_prompted(bench.backbone, t, bench.zero_prompt(), bench.templates);
        CHECK(r.accuracy == 1.0);
    }
}

TEST_CASE("rm is at chance on the adversarial benchmark") {
    std::size_t correct = 0, total = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto bench = make_synthetic_benchmark(quick(seed));
        const auto r = evaluate(rm_map(4, 20), bench.test_logits);
        correct += r.correct;
        total += r.count;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(total);
    const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(total));
    CHECK(std::abs(acc - 0.25) < 3 * sigma);
}

TEST_CASE("a single downstream class is always right") {
    auto cfg = quick(5);
    cfg.m = 1;
    const auto bench = make_synthetic_benchmark(cfg);
    const auto inputs = compare_inputs(bench);
    const std::vector<StrategySpec> specs{{Strategy::rm}, {Strategy::fm}, {Strategy::semap1}, {Strategy::semap_a}};
    for (const auto& r : compare_strategies(inputs, specs, CompareConfig{})) CHECK(r.accuracy == 1.0);
}

TEST_CASE("compare produces one report per strategy and mode") {
    const auto bench = make_synthetic_benchmark(quick(6));
    const auto inputs = compare_inputs(bench);
    const std::vector<StrategySpec> specs{{Strategy::rm}, {Strategy::semap1}, {Strategy::semap_a}};
    CompareConfig cfg;
    cfg.prompted = true;
    cfg.train.epochs = 2;
    const auto reports = compare_strategies(inputs, specs, cfg);
    REQUIRE(reports.size() == 6);
    CHECK(reports[0].strategy == "rm");
    CHECK(reports[0].mode == EvalMode::zero_shot);
    CHECK(reports[3].mode == EvalMode::prompted);
    const auto csv = comparison_to_csv(reports);
    CHECK(csv.rfind("strategy,mode,dataset,n_examples,accuracy,epsilon,gamma,cap,k\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK_FALSE(comparison_to_text(reports).empty());
}

TEST_CASE("benchmark config validation") {
    BenchmarkConfig c;
    c.m = 21;
    CHECK_THROWS_AS(make_synthetic_benchmark(c), CapacityError);
    c = BenchmarkConfig{};
    c.side = 4;
    c.padding = 2;
    CHECK_THROWS_AS(make_synthetic_benchmark(c), InvalidInputError);
}

TEST_CASE("write_benchmark emits every manifest file") {
    TempDir tmp;
    const auto bench = make_synthetic_benchmark(quick(7));
    write_benchmark(tmp.path(), bench);
    for (const auto& f : benchmark_files()) CHECK(std::filesystem::exists(tmp / f));
    CHECK(std::filesystem::exists(tmp / "MANIFEST.txt"));
    CHECK(load_images(tmp / "train_images.bin") == bench.train);
    CHECK(load_backbone_descriptor(tmp / "backbone.txt").checksum() == bench.backbone.checksum());
}
