// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include "semap/backbone.hpp"
#include "semap/embedding_io.hpp"
#include "semap/error.hpp"
#include "semap/evaluator.hpp"
#include "semap/mapping.hpp"
#include "semap/similarity.hpp"
#include "semap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <unistd.h>

using namespace semap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Sorted profile with clustered gaps so the reachability walk stops at
// varied depths; a few exact ties are mixed in.
SimilarityProfile clustered_profile(Rng& rng, std::uint32_t i, std::size_t n) {
    std::vector<double> sims(n);
    double v = rng.uniform(0.3, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
        sims[j] = v;
        const double u = rng.uniform();
        if (u < 0.05) continue;
        v -= u < 0.75 ? rng.uniform(0.0, 0.01) : rng.uniform(0.0, 0.1);
        v = std::max(v, -1.0);
    }
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    rng.shuffle(std::span<std::uint32_t>(idx));
    SimilarityProfile p;
    p.downstream_index = i;
    for (std::size_t j = 0; j < n; ++j) p.entries.push_back({idx[j], sims[j]});
    sort_profile_entries(p.entries);
    return p;
}

// threshold[j - 1] guards the step from entry j to j + 1 (1-based).
std::vector<double> thresholds(double eps, double gamma, std::size_t count) {
    std::vector<double> t(count);
    for (std::size_t j = 1; j <= count; ++j) t[j - 1] = std::pow(gamma, static_cast<double>(j - 1)) * eps;
    return t;
}

// Tries every prefix length and checks its gaps one by one.
std::size_t oracle_k(const SimilarityProfile& p, const std::vector<double>& threshold, std::size_t cap) {
    const std::size_t limit = std::min(cap, p.entries.size());
    std::size_t best = 1;
    for (std::size_t len = 2; len <= limit; ++len) {
        bool ok = true;
        for (std::size_t j = 1; j < len && ok; ++j) {
            ok = p.entries[j - 1].similarity - p.entries[j].similarity < threshold[j - 1];
        }
        if (ok) best = len;
    }
    return best;
}

std::size_t constant_threshold_k(const SimilarityProfile& p, double eps, std::size_t cap) {
    std::size_t k = 1;
    while (k < std::min(cap, p.entries.size()) && p.entries[k - 1].similarity - p.entries[k].similarity < eps) ++k;
    return k;
}

Outcome semap_a_oracle() {
    const auto t0 = Clock::now();
    Rng rng(1001);
    std::vector<SimilarityProfile> profiles;
    for (std::uint32_t i = 0; i < 1000; ++i) profiles.push_back(clustered_profile(rng, i, 1000));

    const double eps_grid[10] = {0.0, 0.001, 0.003, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 1.0};
    const std::pair<double, std::uint32_t> gc_grid[5] = {{0.5, 50}, {0.9, 50}, {1.0, 1000}, {0.9, 5}, {0.99, 200}};
    std::size_t combos = 0, mismatches = 0, max_k = 0;
    for (double eps : eps_grid) {
        for (auto [gamma, cap] : gc_grid) {
            ++combos;
            const auto table = semap_a(profiles, eps, gamma, cap);
            const auto threshold = thresholds(eps, gamma, 1000);
            for (std::size_t i = 0; i < profiles.size(); ++i) {
                const std::size_t want = oracle_k(profiles[i], threshold, cap);
                const auto& got = table.assignments[i];
                max_k = std::max(max_k, got.size());
                bool same = got.size() == want;
                for (std::size_t j = 0; same && j < want; ++j) same = got[j] == profiles[i].entries[j].pretrained_index;
                if (!same) ++mismatches;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && combos == 50 && secs < 10.0,
            fmt("%zu profiles x %zu combos, %zu mismatches, max k %zu, %.2fs (limit 10s)", profiles.size(), combos,
                mismatches, max_k, secs)};
}

Outcome semap_a_boundaries() {
    std::size_t eps0_bad = 0, gamma1_bad = 0, mono_bad = 0, profiles_seen = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng local(seed * 7919 + 3);
        for (int t = 0; t < 100; ++t) {
            const auto p = clustered_profile(local, 0, 1 + local.below(300));
            ++profiles_seen;
            const double gamma = local.uniform(0.05, 1.0);
            const auto cap = static_cast<std::uint32_t>(1 + local.below(300));
            if (adaptive_prefix_length(p, 0.0, gamma, cap) != 1) ++eps0_bad;
            const double eps = local.uniform(0.0, 0.1);
            if (adaptive_prefix_length(p, eps, 1.0, cap) != constant_threshold_k(p, eps, cap)) ++gamma1_bad;
            std::size_t prev = 0;
            for (int s = 0; s < 20; ++s) {
                const double e = 0.2 * s / 19.0;
                const std::size_t k = adaptive_prefix_length(p, e, gamma, cap);
                if (k < prev) ++mono_bad;
                prev = k;
            }
        }
    }
    const SimilarityProfile hand{0, {{0, 0.90}, {1, 0.88}, {2, 0.87}, {3, 0.70}}};
    const std::size_t hand_k = adaptive_prefix_length(hand, 0.05, 0.9, 50);
    return {eps0_bad == 0 && gamma1_bad == 0 && mono_bad == 0 && hand_k == 3,
            fmt("%zu profiles: eps=0 violations %zu, gamma=1 mismatches %zu, eps-sweep decreases %zu; hand k=%zu "
                "(want 3)",
                profiles_seen, eps0_bad, gamma1_bad, mono_bad, hand_k)};
}

double composite_loss(const FrozenBackbone& b, const MappingTable& t, const Prompt& p, std::span<const float> img,
                      std::size_t side, std::size_t label) {
    const auto y = apply_mapping(t, forward(b, compose(img, side, p)));
    const double mx = *std::max_element(y.begin(), y.end());
    double s = 0.0;
    for (double v : y) s += std::exp(v - mx);
    return mx + std::log(s) - y[label];
}

Outcome gradient_check() {
    const auto t0 = Clock::now();
    Rng rng(1003);
    const double h = 1e-3, margin = 1e-6;
    double worst = 0.0;
    std::size_t pixels = 0, failures = 0;
    for (int triple = 0; triple < 100; ++triple) {
        const std::size_t d = 6, n = 6, m = 3;
        const auto b = make_backbone(rng.next_u64(), d, 8, n);
        std::vector<SimilarityProfile> prof;
        for (std::uint32_t i = 0; i < m; ++i) prof.push_back(clustered_profile(rng, i, n));
        const auto table = triple % 2 ? semap_k(prof, 1 + rng.below(3)) : semap1(prof);
        Prompt p = triple % 3 == 2 ? Prompt::fixed_patch(d, 3, rng.below(4), rng.below(4)) : Prompt::padding(d, 1);
        std::vector<double> v(d * d);
        for (double& x : v) x = rng.uniform(0.05, 0.9);
        p.set_values(v);
        std::vector<float> img(p.image_side() * p.image_side());
        for (float& x : img) x = static_cast<float>(rng.uniform(0.0, 0.1));
        const std::size_t label = rng.below(m);
        const auto lg = loss_and_grad(b, table, p, img, p.image_side(), label);
        const auto raw = compose_unclamped(img, p.image_side(), p);
        const auto pre = [&](const Prompt& q) {
            return affine(b.hidden_weights(), b.hidden_bias(), compose(img, p.image_side(), q).canvas);
        };
        const auto a0 = pre(p);
        for (std::size_t i = 0; i < d * d; ++i) {
            if (!p.mask()[i]) continue;
            if (raw[i] - h <= margin || raw[i] + h >= 1.0 - margin) continue;
            std::vector<double> vp(p.values().begin(), p.values().end()), vm = vp;
            vp[i] += h;
            vm[i] -= h;
            Prompt pp = p, pm = p;
            pp.set_values(vp);
            pm.set_values(vm);
            const auto a1 = pre(pp), a2 = pre(pm);
            bool kink = false;
            for (std::size_t j = 0; j < a0.size() && !kink; ++j) {
                kink = std::abs(a0[j]) < margin || (a0[j] > 0) != (a1[j] > 0) || (a0[j] > 0) != (a2[j] > 0);
            }
            if (kink) continue;
            const double fd = (composite_loss(b, table, pp, img, p.image_side(), label) -
                               composite_loss(b, table, pm, img, p.image_side(), label)) /
                              (2 * h);
            const double rel = std::abs(fd - lg.grad[i]) / std::max({std::abs(fd), std::abs(lg.grad[i]), 1e-8});
            worst = std::max(worst, rel);
            ++pixels;
            if (!(rel < 1e-4)) ++failures;
        }
    }
    const double secs = seconds_since(t0);
    return {failures == 0 && pixels > 1000 && secs < 30.0,
            fmt("100 triples, %zu pixels checked, max rel err %.2e (limit 1e-4), %.2fs (limit 30s)", pixels, worst,
                secs)};
}

BenchmarkConfig bench_config(std::uint64_t seed) {
    BenchmarkConfig c;
    c.seed = seed;
    c.m = 4;
    c.n = 20;
    c.embedding_noise = 0.01;
    return c;
}

struct SeedRun {
    SyntheticBenchmark bench;
    MappingTable rm, s1, sa;
};

double g_generation_seconds = 0.0;
double g_training_seconds = 0.0;

std::vector<SeedRun>& seed_runs() {
    static std::vector<SeedRun> runs = [] {
        const auto t0 = Clock::now();
        std::vector<SeedRun> out;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            auto bench = make_synthetic_benchmark(bench_config(seed));
            const auto prof = build_profiles(bench.downstream_embeddings, bench.pretrained_embeddings);
            auto s1 = semap1(prof);
            auto sa = semap_a(prof, kDefaultEpsilon, kDefaultGamma, kDefaultCap);
            out.push_back({std::move(bench), rm_map(4, 20), std::move(s1), std::move(sa)});
        }
        g_generation_seconds = seconds_since(t0);
        return out;
    }();
    return runs;
}

Outcome planted_recovery() {
    std::size_t recovered = 0, clean_perfect = 0;
    for (const auto& r : seed_runs()) {
        bool ok = true;
        for (std::size_t i = 0; i < 4; ++i) ok = ok && r.s1.assignments[i] == std::vector<std::uint32_t>{r.bench.planted[i]};
        recovered += ok;
        const auto clean = evaluate_prompted(r.bench.backbone, r.s1, r.bench.zero_prompt(), r.bench.templates);
        clean_perfect += clean.accuracy == 1.0;
    }
    return {recovered == 10 && clean_perfect == 10,
            fmt("m=4 n=20 noise=0.01: planted map recovered %zu/10, clean-template accuracy 1.0 in %zu/10", recovered,
                clean_perfect)};
}

Outcome qualitative_ordering() {
    const auto t0 = Clock::now();
    std::size_t ordered = 0, rm_correct = 0, rm_total = 0;
    std::ostringstream per_seed;
    for (const auto& r : seed_runs()) {
        const double a_rm = evaluate(r.rm, r.bench.test_logits).accuracy;
        const double a_s1 = evaluate(r.s1, r.bench.test_logits).accuracy;
        const double a_sa = evaluate(r.sa, r.bench.test_logits).accuracy;
        const auto rep = evaluate(r.rm, r.bench.test_logits);
        rm_correct += rep.correct;
        rm_total += rep.count;
        ordered += (a_sa >= a_s1 && a_s1 > a_rm);
        per_seed << fmt(" %.2f/%.2f/%.2f", a_sa, a_s1, a_rm);
    }
    const double p = 0.25;
    const double rm_acc = static_cast<double>(rm_correct) / static_cast<double>(rm_total);
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(rm_total));
    const bool chance = std::abs(rm_acc - p) <= 3 * sigma;
    // Benchmark generation is shared with the recovery check; count it here.
    const double secs = seconds_since(t0) + g_generation_seconds;
    return {ordered >= 8 && chance && secs < 120.0,
            fmt("semap_a>=semap1>rm in %zu/10 (need 8); rm pooled %.4f vs 1/m=0.25, |diff| %.4f <= 3sigma %.4f; "
                "%.2fs (limit 120s); a/1/rm:",
                ordered, rm_acc, std::abs(rm_acc - p), 3 * sigma, secs) +
                per_seed.str()};
}

struct TrainingResult {
    std::size_t loss_down = 0, not_worse = 0, runs = 0;
    bool frozen = true, off_mask_zero = true;
    std::string detail;
};

TrainConfig acceptance_train_config(std::uint64_t seed) {
    TrainConfig cfg;  // library defaults: 30 epochs, batch 64, lr 0.1, momentum 0.9
    cfg.seed = seed;
    return cfg;
}

void check_prompt(const Prompt& p, bool& off_mask_zero) {
    for (std::size_t i = 0; i < p.values().size(); ++i)
        if (!p.mask()[i] && p.values()[i] != 0.0) off_mask_zero = false;
}

TrainingResult& training_runs() {
    static TrainingResult res = [] {
        TrainingResult r;
        const auto t0 = Clock::now();
        std::size_t strategy_ok[3] = {0, 0, 0}, loss_ok[3] = {0, 0, 0};
        for (auto& run : seed_runs()) {
            const auto& b = run.bench;
            const MappingTable* tables[3] = {&run.rm, &run.s1, &run.sa};
            for (int k = 0; k < 3; ++k) {
                const auto before = b.backbone.checksum();
                const auto rep = train(b.backbone, *tables[k], b.train, b.zero_prompt(), acceptance_train_config(b.config.seed));
                r.frozen = r.frozen && before == b.backbone.checksum() && rep.backbone_checksum == before;
                check_prompt(rep.final_prompt, r.off_mask_zero);
                const double zs = evaluate(*tables[k], b.test_logits).accuracy;
                const double pr = evaluate_prompted(b.backbone, *tables[k], rep.final_prompt, b.test).accuracy;
                loss_ok[k] += rep.final_loss < rep.initial_loss;
                strategy_ok[k] += pr >= zs - 0.02;
            }
        }
        r.runs = 10;
        r.loss_down = std::min({loss_ok[0], loss_ok[1], loss_ok[2]});
        r.not_worse = std::min({strategy_ok[0], strategy_ok[1], strategy_ok[2]});
        r.detail = fmt("rm/semap1/semap_a: loss decreased %zu/%zu/%zu of 10, prompted >= zero-shot - 0.02 in "
                       "%zu/%zu/%zu of 10",
                       loss_ok[0], loss_ok[1], loss_ok[2], strategy_ok[0], strategy_ok[1], strategy_ok[2]);
        g_training_seconds = seconds_since(t0);
        r.detail += fmt(", 30 training runs in %.1fs", g_training_seconds);
        return r;
    }();
    return res;
}

Outcome training_progress() {
    const auto& r = training_runs();
    return {r.loss_down == 10 && r.not_worse >= 9, r.detail + " (need 10 and 9)"};
}

Outcome frozen_backbone() {
    const auto& r = training_runs();
    bool frozen = r.frozen, zero = r.off_mask_zero;
    // One patch run on top of the padding runs.
    const auto& b = seed_runs().front().bench;
    const auto before = b.backbone.checksum();
    TrainConfig cfg;
    cfg.epochs = 5;
    const auto rep = train(b.backbone, seed_runs().front().sa, b.train, Prompt::random_patch(b.config.side, 8), cfg);
    frozen = frozen && before == b.backbone.checksum() && rep.backbone_checksum == before;
    check_prompt(rep.final_prompt, zero);
    return {frozen && zero, fmt("31 training runs: weights checksum unchanged %s, off-mask prompt entries all zero %s",
                                frozen ? "yes" : "no", zero ? "yes" : "no")};
}

struct ScratchDir {
    fs::path path = fs::temp_directory_path() / ("semap_acceptance_" + std::to_string(::getpid()));
    ScratchDir() { fs::create_directories(path); }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

Outcome format_round_trips() {
    ScratchDir dir;
    Rng rng(1004);
    std::size_t cases = 0, failures = 0;
    auto same_bytes = [&](const fs::path& a, const fs::path& b) { return detail::read_file(a) == detail::read_file(b); };
    for (int t = 0; t < 50; ++t) {
        // Labels.
        LabelSet labels;
        labels.role = LabelRole::pretrained;
        const std::size_t count = 1 + rng.below(40);
        for (std::size_t i = 0; i < count; ++i) labels.names.push_back("label " + std::to_string(rng.below(1000000)) + "_" + std::to_string(i));
        write_labels(dir.path / "l1.txt", labels);
        const auto l2 = load_labels(dir.path / "l1.txt", LabelRole::pretrained);
        write_labels(dir.path / "l2.txt", l2);
        failures += !(l2 == labels && same_bytes(dir.path / "l1.txt", dir.path / "l2.txt"));

        // Embeddings.
        Matrix e(1 + rng.below(30), 1 + rng.below(20));
        for (float& x : e.data()) x = static_cast<float>(rng.normal());
        for (std::size_t r = 0; r < e.rows(); ++r) e(r, 0) = 1.0f;
        const EmbeddingMatrix emb{e};
        write_embeddings(dir.path / "e1.bin", emb);
        const auto e2 = load_embeddings(dir.path / "e1.bin");
        write_embeddings(dir.path / "e2.bin", e2);
        failures += !(e2 == emb && same_bytes(dir.path / "e1.bin", dir.path / "e2.bin"));

        // Logits, with and without labels.
        LogitBatch lb;
        lb.count = static_cast<std::uint32_t>(rng.below(20));
        lb.width = static_cast<std::uint32_t>(1 + rng.below(30));
        for (std::size_t i = 0; i < std::size_t{lb.count} * lb.width; ++i) lb.scores.push_back(static_cast<float>(rng.normal() * 20));
        if (t % 2) {
            lb.labels.emplace(lb.count);
            for (auto& l : *lb.labels) l = static_cast<std::uint32_t>(rng.below(10));
        }
        write_logits(dir.path / "g1.bin", lb);
        const auto g2 = load_logits(dir.path / "g1.bin");
        write_logits(dir.path / "g2.bin", g2);
        failures += !(g2 == lb && same_bytes(dir.path / "g1.bin", dir.path / "g2.bin"));

        // Mapping tables of every strategy.
        const std::size_t n = 2 + rng.below(40), m = 1 + rng.below(std::min<std::size_t>(n, 8));
        std::vector<SimilarityProfile> prof;
        for (std::uint32_t i = 0; i < m; ++i) prof.push_back(clustered_profile(rng, i, n));
        const MappingTable tables[4] = {rm_map(m, n), semap1(prof), semap_k(prof, 1 + rng.below(n)),
                                        semap_a(prof, rng.uniform(0, 0.2), rng.uniform(0.01, 1.0),
                                                static_cast<std::uint32_t>(1 + rng.below(60)))};
        for (const auto& table : tables) {
            write_mapping(dir.path / "m1.txt", table);
            const auto m2 = load_mapping(dir.path / "m1.txt");
            write_mapping(dir.path / "m2.txt", m2);
            failures += !(m2 == table && same_bytes(dir.path / "m1.txt", dir.path / "m2.txt"));
        }
        cases += 7;
    }
    return {failures == 0, fmt("%zu randomized label/embedding/logit/mapping files, %zu failures", cases, failures)};
}

Outcome scaling_invariance() {
    Rng rng(1005);
    std::size_t changed = 0;
    for (int c = 0; c < 1000; ++c) {
        const std::size_t n = 2 + rng.below(50), m = 1 + rng.below(std::min<std::size_t>(n, 10));
        std::vector<SimilarityProfile> prof;
        for (std::uint32_t i = 0; i < m; ++i) prof.push_back(clustered_profile(rng, i, n));
        MappingTable table;
        switch (c % 4) {
        case 0: table = rm_map(m, n); break;
        case 1: table = semap1(prof); break;
        case 2: table = semap_k(prof, 1 + rng.below(n)); break;
        default: table = semap_a(prof, 0.05, 0.9, 50); break;
        }
        // Logits originate as 32-bit reals, as loaded from a logit file.
        std::vector<double> logits(n);
        for (double& x : logits) x = static_cast<float>(rng.normal() * 5);
        const std::size_t base = predict_zero_shot(table, std::span<const double>(logits));
        for (double alpha : {0.5, 2.0, 10.0}) {
            std::vector<double> scaled(n);
            for (std::size_t j = 0; j < n; ++j) scaled[j] = alpha * logits[j];
            changed += predict_zero_shot(table, std::span<const double>(scaled)) != base;
        }
    }
    return {changed == 0, fmt("1000 cases x alpha in {0.5, 2, 10}: %zu prediction changes", changed)};
}

} // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
    };
    const Criterion criteria[] = {
        {"semap-a oracle equivalence", semap_a_oracle},
        {"semap-a boundary laws", semap_a_boundaries},
        {"gradient correctness", gradient_check},
        {"planted-alignment recovery", planted_recovery},
        {"qualitative ordering", qualitative_ordering},
        {"training progress", training_progress},
        {"frozen-backbone invariant", frozen_backbone},
        {"format round-trips", format_round_trips},
        {"scaling-argmax invariance", scaling_invariance},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << o.detail << std::endl;
    }
    std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : "acceptance: all criteria passed")
              << std::endl;
    return failed ? 1 : 0;
}
