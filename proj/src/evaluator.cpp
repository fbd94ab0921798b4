#include "semap/evaluator.hpp"

#include "semap/error.hpp"
#include "semap/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace semap {

namespace fs = std::filesystem;

namespace {

// Template search settings. A template is accepted once the planted output
// leads every other output by kPlantedMargin and, with decoys, output r leads
// the rest of [0, m) by kDecoyMargin.
constexpr double kPlantedMargin = 0.5;
constexpr double kDecoyMargin = 0.25;
constexpr std::size_t kTemplateSteps = 600;
constexpr double kTemplateStep = 0.5;

std::string real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string short_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string hyper_text(const Hyperparams& h) {
    std::string out;
    auto add = [&](const std::string& s) { out += (out.empty() ? "" : " ") + s; };
    if (h.epsilon) add("epsilon=" + short_real(*h.epsilon));
    if (h.gamma) add("gamma=" + short_real(*h.gamma));
    if (h.cap) add("cap=" + std::to_string(*h.cap));
    if (h.k) add("k=" + std::to_string(*h.k));
    return out.empty() ? "-" : out;
}

double margin_over(std::span<const double> z, std::size_t winner, std::size_t begin, std::size_t end) {
    double best_other = -std::numeric_limits<double>::infinity();
    for (std::size_t j = begin; j < end; ++j) {
        if (j != winner) best_other = std::max(best_other, z[j]);
    }
    return z[winner] - best_other;
}

struct TemplateTarget {
    std::size_t planted;
    std::optional<std::size_t> decoy;
    std::size_t m;
};

// Canvas for an inner image placed at the centre of a zero border.
std::vector<double> centered_canvas(std::span<const double> inner, std::size_t inner_side, std::size_t side,
                                    std::size_t pad) {
    std::vector<double> canvas(side * side, 0.0);
    for (std::size_t r = 0; r < inner_side; ++r) {
        for (std::size_t c = 0; c < inner_side; ++c) canvas[(r + pad) * side + c + pad] = inner[r * inner_side + c];
    }
    return canvas;
}

bool template_ok(const FrozenBackbone& backbone, std::span<const double> z, const TemplateTarget& t) {
    if (margin_over(z, t.planted, 0, backbone.classes()) < kPlantedMargin) return false;
    if (t.decoy && t.m > 1 && margin_over(z, *t.decoy, 0, t.m) < kDecoyMargin) return false;
    return true;
}

// Projected gradient descent on the inner pixels of a template. Returns the
// template (rounded to 32-bit) when the margins are met, otherwise nothing.
std::optional<std::vector<float>> search_template(const FrozenBackbone& backbone, std::size_t pad,
                                                  const TemplateTarget& target, Rng& rng) {
    const std::size_t side = backbone.side();
    const std::size_t inner_side = side - 2 * pad;
    std::vector<double> inner(inner_side * inner_side);
    for (double& x : inner) x = rng.uniform(0.4, 0.6);

    auto rounded = [&] {
        std::vector<float> out(inner.size());
        for (std::size_t i = 0; i < inner.size(); ++i) out[i] = static_cast<float>(inner[i]);
        return out;
    };
    auto accepted = [&] {
        const auto f = rounded();
        std::vector<double> as_double(f.begin(), f.end());
        const auto z = backbone.forward(centered_canvas(as_double, inner_side, side, pad));
        return template_ok(backbone, z, target);
    };

    for (std::size_t step = 0; step < kTemplateSteps; ++step) {
        const auto canvas = centered_canvas(inner, inner_side, side, pad);
        const auto z = backbone.forward(canvas);
        if (template_ok(backbone, z, target) && accepted()) return rounded();

        auto upstream = softmax(z);
        upstream[target.planted] -= 1.0;
        if (target.decoy && target.m > 1) {
            auto sub = softmax(std::span<const double>(z).first(target.m));
            sub[*target.decoy] -= 1.0;
            for (std::size_t j = 0; j < target.m; ++j) upstream[j] += sub[j];
        }
        const auto g = backbone.input_gradient(canvas, upstream);
        double norm2 = 0.0;
        for (std::size_t r = 0; r < inner_side; ++r) {
            for (std::size_t c = 0; c < inner_side; ++c) {
                const double v = g[(r + pad) * side + c + pad];
                norm2 += v * v;
            }
        }
        if (norm2 == 0.0) break;
        // Normalised step: every iteration moves the template by the same L2 distance.
        const double scale = kTemplateStep / std::sqrt(norm2);
        for (std::size_t r = 0; r < inner_side; ++r) {
            for (std::size_t c = 0; c < inner_side; ++c) {
                double& x = inner[r * inner_side + c];
                x = std::clamp(x - scale * g[(r + pad) * side + c + pad], 0.0, 1.0);
            }
        }
    }
    if (accepted()) return rounded();
    return std::nullopt;
}

EmbeddingMatrix random_unit_rows(Rng& rng, std::size_t rows, std::size_t dim) {
    Matrix out(rows, dim);
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<double> v(dim);
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (double& x : v) {
                x = rng.normal();
                norm2 += x * x;
            }
        } while (norm2 == 0.0);
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t c = 0; c < dim; ++c) out(r, c) = static_cast<float>(v[c] * inv);
    }
    return EmbeddingMatrix{std::move(out)};
}

LabelSet numbered_labels(const std::string& prefix, std::size_t count, LabelRole role) {
    LabelSet out;
    out.role = role;
    const int width = static_cast<int>(std::to_string(count > 0 ? count - 1 : 0).size());
    for (std::size_t i = 0; i < count; ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s_%0*zu", prefix.c_str(), width, i);
        out.names.emplace_back(buf);
    }
    return out;
}

LogitBatch unprompted_logits(const FrozenBackbone& backbone, const Prompt& zero, const ImageSet& data) {
    LogitBatch b;
    b.count = data.count;
    b.width = static_cast<std::uint32_t>(backbone.classes());
    b.scores.reserve(std::size_t{b.count} * b.width);
    for (std::size_t i = 0; i < data.count; ++i) {
        for (double z : forward(backbone, compose(data.image(i), data.side, zero))) {
            b.scores.push_back(static_cast<float>(z));
        }
    }
    b.labels = data.labels;
    return b;
}

ImageSet sample_images(const ImageSet& templates, std::size_t m, std::size_t variants, std::size_t per_class,
                       double noise, Rng& rng) {
    ImageSet out;
    out.side = templates.side;
    out.count = static_cast<std::uint32_t>(m * per_class);
    const std::size_t pixels = std::size_t{out.side} * out.side;
    out.pixels.reserve(out.count * pixels);
    for (std::size_t c = 0; c < m; ++c) {
        for (std::size_t e = 0; e < per_class; ++e) {
            const std::size_t v = variants > 1 ? static_cast<std::size_t>(rng.below(variants)) : 0;
            const auto tpl = templates.image(c * variants + v);
            for (std::size_t p = 0; p < pixels; ++p) {
                const double x = static_cast<double>(tpl[p]) + noise * rng.normal();
                out.pixels.push_back(static_cast<float>(std::clamp(x, 0.0, 1.0)));
            }
            out.labels.push_back(static_cast<std::uint32_t>(c));
        }
    }
    return out;
}

} // namespace

std::string_view to_string(EvalMode mode) noexcept {
    return mode == EvalMode::zero_shot ? "zero_shot" : "prompted";
}

std::string EvalReport::to_text() const {
    std::ostringstream out;
    out << "# semap eval report v1\n";
    out << "strategy: " << strategy << "\n";
    out << "hyperparams: " << hyper_text(hyper) << "\n";
    out << "dataset: " << (dataset.empty() ? "-" : dataset) << "\n";
    out << "mode: " << to_string(mode) << "\n";
    out << "n_examples: " << count << "\n";
    out << "correct: " << correct << "\n";
    out << "accuracy: " << real(accuracy) << "\n";
    out << "class,total,correct,accuracy\n";
    for (std::size_t i = 0; i < class_total.size(); ++i) {
        out << i << "," << class_total[i] << "," << class_correct[i] << "," << real(class_accuracy[i]) << "\n";
    }
    return out.str();
}

std::size_t predict_zero_shot(const MappingTable& table, std::span<const float> logits) {
    const auto mapped = apply_mapping(table, logits);
    return argmax(std::span<const double>(mapped));
}

std::size_t predict_zero_shot(const MappingTable& table, std::span<const double> logits) {
    const auto mapped = apply_mapping(table, logits);
    return argmax(std::span<const double>(mapped));
}

EvalReport make_report(std::span<const std::size_t> predicted, std::span<const std::uint32_t> labels,
                       std::size_t m) {
    if (predicted.size() != labels.size()) throw ShapeError("make_report: predictions and labels differ in length");
    EvalReport r;
    r.count = labels.size();
    r.class_total.assign(m, 0);
    r.class_correct.assign(m, 0);
    r.class_accuracy.assign(m, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= m) throw IndexError("label " + std::to_string(labels[i]) + " is not below m");
        ++r.class_total[labels[i]];
        if (predicted[i] == labels[i]) {
            ++r.correct;
            ++r.class_correct[labels[i]];
        }
    }
    r.accuracy = r.count ? static_cast<double>(r.correct) / static_cast<double>(r.count) : 0.0;
    for (std::size_t c = 0; c < m; ++c) {
        if (r.class_total[c]) {
            r.class_accuracy[c] = static_cast<double>(r.class_correct[c]) / static_cast<double>(r.class_total[c]);
        }
    }
    return r;
}

EvalReport evaluate(const MappingTable& table, const LogitBatch& batch, const std::string& dataset) {
    if (!batch.labels) throw InvalidInputError("evaluate: logit batch has no labels");
    if (batch.width != table.n) {
        throw ShapeError("evaluate: logits have width " + std::to_string(batch.width) + " but table has n = " +
                         std::to_string(table.n));
    }
    check_logit_labels(batch, table.m);
    std::vector<std::size_t> predicted(batch.count);
    for (std::size_t i = 0; i < batch.count; ++i) predicted[i] = predict_zero_shot(table, batch.row(i));
    auto r = make_report(predicted, *batch.labels, table.m);
    r.strategy = std::string(to_string(table.strategy));
    r.hyper = table.hyper;
    r.dataset = dataset;
    r.mode = EvalMode::zero_shot;
    return r;
}

EvalReport evaluate_prompted(const FrozenBackbone& backbone, const MappingTable& table, const Prompt& prompt,
                             const ImageSet& data, const std::string& dataset) {
    if (table.n != backbone.classes()) throw ShapeError("evaluate_prompted: table n does not match backbone");
    std::vector<std::size_t> predicted(data.count);
    for (std::size_t i = 0; i < data.count; ++i) {
        predicted[i] = predict_zero_shot(table, forward(backbone, compose(data.image(i), data.side, prompt)));
    }
    auto r = make_report(predicted, data.labels, table.m);
    r.strategy = std::string(to_string(table.strategy));
    r.hyper = table.hyper;
    r.dataset = dataset;
    r.mode = EvalMode::prompted;
    return r;
}

EvalReport random_guess_report(std::span<const std::uint32_t> labels, std::size_t m, std::uint64_t seed,
                               const std::string& dataset) {
    if (m == 0) throw InvalidInputError("random_guess_report: m must be positive");
    Rng rng(seed);
    std::vector<std::size_t> predicted(labels.size());
    for (auto& p : predicted) p = static_cast<std::size_t>(rng.below(m));
    auto r = make_report(predicted, labels, m);
    r.strategy = "random";
    r.dataset = dataset;
    return r;
}

void BenchmarkConfig::validate() const {
    if (m == 0 || n == 0) throw InvalidInputError("benchmark: m and n must be positive");
    if (m > n) throw CapacityError("benchmark: m must not exceed n");
    if (side == 0 || hidden == 0 || embedding_dim == 0) throw InvalidInputError("benchmark: sizes must be positive");
    if (per_class == 0 || test_per_class == 0) throw InvalidInputError("benchmark: per-class counts must be positive");
    if (2 * padding_width() >= side) throw InvalidInputError("benchmark: padding leaves no image area");
    if (!(embedding_noise >= 0.0) || !(pixel_noise >= 0.0)) throw InvalidInputError("benchmark: noise must be >= 0");
}

SyntheticBenchmark make_synthetic_benchmark(const BenchmarkConfig& config) {
    config.validate();
    const std::size_t m = config.m, n = config.n;
    const std::size_t pad = config.padding_width();
    const std::size_t inner_side = config.side - 2 * pad;

    std::uint64_t seeder = config.seed;
    Rng emb_rng(splitmix64(seeder));
    const std::uint64_t backbone_seed = splitmix64(seeder);
    Rng plant_rng(splitmix64(seeder));
    Rng template_rng(splitmix64(seeder));
    Rng train_rng(splitmix64(seeder));
    Rng test_rng(splitmix64(seeder));

    auto pre_emb = random_unit_rows(emb_rng, n, config.embedding_dim);
    auto backbone = make_backbone(backbone_seed, config.side, config.hidden, n);

    // Candidates outside [0, m) first so that a prefix mapping misses the planted outputs.
    const bool decoys = n >= 2 * m && m > 1;
    std::vector<std::uint32_t> outside, inside;
    for (std::uint32_t j = 0; j < n; ++j) (j < m ? inside : outside).push_back(j);
    plant_rng.shuffle(std::span<std::uint32_t>(outside));
    plant_rng.shuffle(std::span<std::uint32_t>(inside));
    std::vector<std::uint32_t> candidates = outside;
    if (!decoys) candidates.insert(candidates.end(), inside.begin(), inside.end());

    const std::size_t variants = decoys ? m : 1;
    ImageSet templates;
    templates.side = static_cast<std::uint32_t>(inner_side);
    std::vector<std::uint32_t> planted;
    std::vector<char> used(n, 0);
    for (std::size_t c = 0; c < m; ++c) {
        bool placed = false;
        for (auto cand : candidates) {
            if (used[cand]) continue;
            std::vector<std::vector<float>> family;
            for (std::size_t v = 0; v < variants; ++v) {
                TemplateTarget target{cand, decoys ? std::optional<std::size_t>(v) : std::nullopt, m};
                auto tpl = search_template(backbone, pad, target, template_rng);
                if (!tpl) break;
                family.push_back(std::move(*tpl));
            }
            if (family.size() != variants) continue;
            used[cand] = 1;
            planted.push_back(cand);
            for (auto& t : family) {
                templates.pixels.insert(templates.pixels.end(), t.begin(), t.end());
                templates.labels.push_back(static_cast<std::uint32_t>(c));
            }
            placed = true;
            break;
        }
        if (!placed) {
            throw InvalidInputError("benchmark: no pre-trained output could be planted for class " +
                                    std::to_string(c) + " (seed " + std::to_string(config.seed) + ")");
        }
    }
    templates.count = static_cast<std::uint32_t>(templates.labels.size());

    Matrix down(m, config.embedding_dim);
    for (std::size_t c = 0; c < m; ++c) {
        for (std::size_t k = 0; k < config.embedding_dim; ++k) {
            down(c, k) = static_cast<float>(pre_emb.rows(planted[c], k) + config.embedding_noise * emb_rng.normal());
        }
    }

    auto train = sample_images(templates, m, variants, config.per_class, config.pixel_noise, train_rng);
    auto test = sample_images(templates, m, variants, config.test_per_class, config.pixel_noise, test_rng);
    const Prompt zero = Prompt::padding(config.side, pad);
    auto train_logits = unprompted_logits(backbone, zero, train);
    auto test_logits = unprompted_logits(backbone, zero, test);

    return SyntheticBenchmark{config,
                              numbered_labels("pretrained", n, LabelRole::pretrained),
                              numbered_labels("downstream", m, LabelRole::downstream),
                              std::move(pre_emb),
                              EmbeddingMatrix{std::move(down)},
                              std::move(backbone),
                              std::move(planted),
                              std::move(templates),
                              std::move(train),
                              std::move(test),
                              std::move(train_logits),
                              std::move(test_logits)};
}

const std::vector<std::string>& benchmark_files() {
    static const std::vector<std::string> files = {
        "pretrained_labels.txt", "downstream_labels.txt", "pretrained_emb.bin", "downstream_emb.bin",
        "backbone.txt",          "train_images.bin",      "test_images.bin",    "train_logits.bin",
        "test_logits.bin",       "planted.txt",
    };
    return files;
}

void write_benchmark(const fs::path& dir, const SyntheticBenchmark& b) {
    fs::create_directories(dir);
    write_labels(dir / "pretrained_labels.txt", b.pretrained_labels);
    write_labels(dir / "downstream_labels.txt", b.downstream_labels);
    write_embeddings(dir / "pretrained_emb.bin", b.pretrained_embeddings);
    write_embeddings(dir / "downstream_emb.bin", b.downstream_embeddings);
    write_backbone_descriptor(dir / "backbone.txt", b.backbone);
    write_images(dir / "train_images.bin", b.train);
    write_images(dir / "test_images.bin", b.test);
    write_logits(dir / "train_logits.bin", b.train_logits);
    write_logits(dir / "test_logits.bin", b.test_logits);

    MappingTable planted;
    planted.strategy = Strategy::semap1;
    planted.m = b.config.m;
    planted.n = b.config.n;
    for (auto p : b.planted) planted.assignments.push_back({p});
    write_mapping(dir / "planted.txt", planted);

    std::ostringstream manifest;
    manifest << "# semap toy benchmark v1\n";
    manifest << "seed: " << b.config.seed << "\n";
    manifest << "m: " << b.config.m << "\n";
    manifest << "n: " << b.config.n << "\n";
    manifest << "side: " << b.config.side << "\n";
    manifest << "padding: " << b.config.padding_width() << "\n";
    manifest << "per_class: " << b.config.per_class << "\n";
    manifest << "test_per_class: " << b.config.test_per_class << "\n";
    for (const auto& f : benchmark_files()) manifest << "file: " << f << "\n";
    detail::write_file(dir / "MANIFEST.txt", manifest.str());
}

CompareInputs compare_inputs(const SyntheticBenchmark& b) {
    CompareInputs in;
    in.dataset = "toy-seed-" + std::to_string(b.config.seed);
    in.m = b.config.m;
    in.n = b.config.n;
    in.pretrained_embeddings = &b.pretrained_embeddings;
    in.downstream_embeddings = &b.downstream_embeddings;
    in.fm_logits = &b.train_logits;
    in.eval_logits = &b.test_logits;
    in.backbone = &b.backbone;
    in.train_images = &b.train;
    in.test_images = &b.test;
    in.padding = b.config.padding_width();
    return in;
}

MappingTable build_table(const StrategySpec& spec, const CompareInputs& in, unsigned threads) {
    switch (spec.strategy) {
    case Strategy::rm: return rm_map(in.m, in.n);
    case Strategy::fm:
        if (!in.fm_logits) throw InvalidInputError("fm needs labelled unprompted logits");
        return fm_map(*in.fm_logits, in.m, in.n);
    default: break;
    }
    if (!in.pretrained_embeddings || !in.downstream_embeddings) {
        throw InvalidInputError(std::string(to_string(spec.strategy)) + " needs label embeddings");
    }
    if (in.pretrained_embeddings->count() != in.n || in.downstream_embeddings->count() != in.m) {
        throw ShapeError("embedding row counts do not match m and n");
    }
    const auto profiles = build_profiles(*in.downstream_embeddings, *in.pretrained_embeddings, threads);
    switch (spec.strategy) {
    case Strategy::semap1: return semap1(profiles);
    case Strategy::semap_k: return semap_k(profiles, spec.k);
    case Strategy::semap_a: return semap_a(profiles, spec.epsilon, spec.gamma, spec.cap);
    default: break;
    }
    throw InvalidInputError("unsupported strategy");
}

std::vector<EvalReport> compare_strategies(const CompareInputs& in, std::span<const StrategySpec> strategies,
                                           const CompareConfig& cfg) {
    std::vector<MappingTable> tables;
    for (const auto& s : strategies) tables.push_back(build_table(s, in, cfg.threads));

    std::vector<EvalReport> reports;
    if (cfg.zero_shot) {
        if (!in.eval_logits) throw InvalidInputError("zero-shot comparison needs evaluation logits");
        for (const auto& t : tables) reports.push_back(evaluate(t, *in.eval_logits, in.dataset));
    }
    if (cfg.prompted) {
        if (!in.backbone || !in.train_images || !in.test_images) {
            throw InvalidInputError("prompted comparison needs a backbone and train/test images");
        }
        TrainConfig tc = cfg.train;
        tc.threads = cfg.threads;
        for (const auto& t : tables) {
            const auto report = train(*in.backbone, t, *in.train_images, Prompt::padding(in.backbone->side(), in.padding), tc);
            reports.push_back(evaluate_prompted(*in.backbone, t, report.final_prompt, *in.test_images, in.dataset));
        }
    }
    return reports;
}

std::string comparison_to_text(std::span<const EvalReport> reports) {
    std::ostringstream out;
    out << "# semap comparison v1\n";
    out << "strategy,mode,dataset,n_examples,accuracy,hyperparams\n";
    for (const auto& r : reports) {
        out << r.strategy << "," << to_string(r.mode) << "," << (r.dataset.empty() ? "-" : r.dataset) << ","
            << r.count << "," << real(r.accuracy) << "," << hyper_text(r.hyper) << "\n";
    }
    return out.str();
}

std::string comparison_to_csv(std::span<const EvalReport> reports) {
    std::ostringstream out;
    out << "strategy,mode,dataset,n_examples,accuracy,epsilon,gamma,cap,k\n";
    auto opt = [](const auto& o) { return o ? std::to_string(*o) : std::string(); };
    for (const auto& r : reports) {
        out << r.strategy << "," << to_string(r.mode) << "," << r.dataset << "," << r.count << "," << real(r.accuracy)
            << "," << (r.hyper.epsilon ? real(*r.hyper.epsilon) : "") << ","
            << (r.hyper.gamma ? real(*r.hyper.gamma) : "") << "," << opt(r.hyper.cap) << "," << opt(r.hyper.k)
            << "\n";
    }
    return out.str();
}

} // namespace semap
