// semap command-line front end. Every subcommand is a thin wrapper over the
// library; data goes to stdout, diagnostics to stderr.
//
// Exit codes: 0 success, 1 usage error, 2 data or format error.

#include "semap/backbone.hpp"
#include "semap/embedding_io.hpp"
#include "semap/error.hpp"
#include "semap/evaluator.hpp"
#include "semap/mapping.hpp"
#include "semap/similarity.hpp"
#include "semap/trainer.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace semap;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const char* kFormats = R"(File formats (all integers and reals little-endian):
  labels      UTF-8 text, one label per line
  embeddings  "SEMAPEMB" u32 rows u32 dim, rows*dim f32
  logits      "SEMAPLGT" u32 N u32 n u8 has_labels, N*n f32, [N u32 labels]
  images      "SEMAPIMG" u32 N u32 side, N*side*side f32 in [0,1], N u32 labels
  prompt      "SEMAPPRM" u32 d u32 variant, d*d f32
  mapping     text: "# semap mapping table v1", strategy/m/n/hyperparameter lines,
              then "i: [a, b, ...]" per downstream class
  backbone    text: "# semap backbone v1", seed/side/hidden/classes lines)";

unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

void require(const std::optional<std::string>& value, const std::string& flag, const std::string& why) {
    if (!value) throw UsageError(flag + " is required " + why);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw FormatError("write failed: " + path.string());
}

std::string k_histogram(const MappingTable& t) {
    std::map<std::size_t, std::size_t> hist;
    for (const auto& list : t.assignments) ++hist[list.size()];
    std::ostringstream out;
    out << "k_i histogram:\n";
    for (const auto& [k, count] : hist) out << "  k=" << k << ": " << count << "\n";
    return out.str();
}

std::string table_summary(const MappingTable& t) {
    std::ostringstream out;
    out << "strategy: " << to_string(t.strategy) << "\n";
    out << "m: " << t.m << "\n";
    out << "n: " << t.n << "\n";
    if (t.hyper.epsilon) out << "epsilon: " << *t.hyper.epsilon << "\n";
    if (t.hyper.gamma) out << "gamma: " << *t.hyper.gamma << "\n";
    if (t.hyper.cap) out << "cap: " << *t.hyper.cap << "\n";
    if (t.hyper.k) out << "k: " << *t.hyper.k << "\n";
    std::size_t total = 0;
    for (const auto& list : t.assignments) total += list.size();
    out << "mapped_indices: " << total << "\n";
    out << k_histogram(t);
    return out.str();
}

void check_hyperparams(double eps, double gamma, std::uint32_t cap) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw UsageError("--epsilon must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw UsageError("--gamma must lie in (0, 1]");
    if (cap < 1) throw UsageError("--cap must be >= 1");
}

// ---- build-map ----------------------------------------------------------

struct BuildMapArgs {
    std::string strategy;
    std::optional<std::string> pre_labels, down_labels, pre_emb, down_emb, logits;
    std::size_t k = 1;
    double epsilon = kDefaultEpsilon;
    double gamma = kDefaultGamma;
    std::uint32_t cap = kDefaultCap;
    std::string out;
};

int run_build_map(const BuildMapArgs& a, unsigned threads) {
    const Strategy s = [&] {
        try {
            return parse_strategy(a.strategy);
        } catch (const InvalidInputError& e) {
            throw UsageError(e.what());
        }
    }();
    const bool semantic = s == Strategy::semap1 || s == Strategy::semap_k || s == Strategy::semap_a;
    if (semantic) {
        const std::string why = "for strategy " + a.strategy;
        require(a.pre_emb, "--pre-emb", why);
        require(a.down_emb, "--down-emb", why);
    } else {
        require(a.pre_labels, "--pre-labels", "to size the table for strategy " + a.strategy);
        require(a.down_labels, "--down-labels", "to size the table for strategy " + a.strategy);
    }
    if (s == Strategy::fm) require(a.logits, "--logits", "for strategy fm");
    if (s == Strategy::semap_a) check_hyperparams(a.epsilon, a.gamma, a.cap);

    std::optional<LabelSet> pre_labels, down_labels;
    if (a.pre_labels) pre_labels = load_labels(*a.pre_labels, LabelRole::pretrained);
    if (a.down_labels) down_labels = load_labels(*a.down_labels, LabelRole::downstream);

    MappingTable table;
    if (semantic) {
        const auto pre = load_embeddings(*a.pre_emb);
        const auto down = load_embeddings(*a.down_emb);
        if (pre_labels) check_embeddings_match(pre, *pre_labels);
        if (down_labels) check_embeddings_match(down, *down_labels);
        const auto profiles = build_profiles(down, pre, threads);
        switch (s) {
        case Strategy::semap1: table = semap1(profiles); break;
        case Strategy::semap_k:
            if (a.k < 1 || a.k > pre.count()) {
                throw UsageError("--k must lie in [1, " + std::to_string(pre.count()) + "]");
            }
            table = semap_k(profiles, a.k);
            break;
        default: table = semap_a(profiles, a.epsilon, a.gamma, a.cap); break;
        }
    } else if (s == Strategy::rm) {
        table = rm_map(down_labels->size(), pre_labels->size());
    } else {
        const auto batch = load_logits(*a.logits);
        table = fm_map(batch, down_labels->size(), pre_labels->size());
    }
    write_mapping(a.out, table);
    std::cout << table_summary(table) << "wrote: " << a.out << "\n";
    return 0;
}

// ---- eval-zeroshot ------------------------------------------------------

int run_eval(const std::string& map_path, const std::string& logits_path, std::string dataset) {
    const auto table = load_mapping(map_path);
    const auto batch = load_logits(logits_path);
    if (dataset.empty()) dataset = fs::path(logits_path).stem().string();
    std::cout << evaluate(table, batch, dataset).to_text();
    return 0;
}

// ---- train-prompt -------------------------------------------------------

struct TrainArgs {
    std::string map, backbone, data, out;
    std::optional<std::string> report;
    TrainConfig cfg;
    std::string variant = "padding";
    std::size_t patch = 0;
    std::size_t patch_row = 0;
    std::size_t patch_col = 0;
};

Prompt initial_prompt(const TrainArgs& a, std::size_t side, std::size_t image_side) {
    PromptVariant v;
    try {
        v = parse_prompt_variant(a.variant);
    } catch (const InvalidInputError& e) {
        throw UsageError(e.what());
    }
    if (v == PromptVariant::padding) {
        if (image_side > side || (side - image_side) % 2 != 0) {
            throw ShapeError("images of side " + std::to_string(image_side) + " cannot be centred on a " +
                             std::to_string(side) + " canvas");
        }
        return Prompt::padding(side, (side - image_side) / 2);
    }
    const std::size_t patch = a.patch ? a.patch : std::max<std::size_t>(1, side / 4);
    if (patch > side) throw UsageError("--patch-size exceeds the canvas side");
    if (v == PromptVariant::fixed_patch) return Prompt::fixed_patch(side, patch, a.patch_row, a.patch_col);
    return Prompt::random_patch(side, patch, a.patch_row, a.patch_col);
}

int run_train(TrainArgs a, unsigned threads) {
    a.cfg.threads = threads;
    try {
        a.cfg.validate(true);
    } catch (const InvalidInputError& e) {
        throw UsageError(e.what());
    }
    const auto table = load_mapping(a.map);
    const auto backbone = load_backbone_descriptor(a.backbone);
    const auto data = load_images(a.data);
    const auto prompt = initial_prompt(a, backbone.side(), data.side);
    const auto report = train(backbone, table, data, prompt, a.cfg);
    write_prompt(a.out, to_prompt_file(report.final_prompt));
    const auto text = report.to_text();
    if (a.report) write_text(*a.report, text);
    std::cout << text;
    return 0;
}

// ---- gen-toy ------------------------------------------------------------

int run_gen_toy(const BenchmarkConfig& cfg, const std::string& dir) {
    try {
        cfg.validate();
    } catch (const CapacityError& e) {
        throw UsageError(e.what());
    } catch (const InvalidInputError& e) {
        throw UsageError(e.what());
    }
    const auto bench = make_synthetic_benchmark(cfg);
    write_benchmark(dir, bench);
    std::cout << "wrote benchmark to " << dir << "\n";
    for (const auto& f : benchmark_files()) std::cout << "  " << f << "\n";
    std::cout << "  MANIFEST.txt\n";
    return 0;
}

// ---- inspect-map --------------------------------------------------------

int run_inspect(const std::string& map_path, const std::optional<std::string>& pre_path,
                const std::optional<std::string>& down_path) {
    const auto table = load_mapping(map_path);
    std::optional<LabelSet> pre, down;
    if (pre_path) {
        pre = load_labels(*pre_path, LabelRole::pretrained);
        if (pre->size() != table.n) throw ShapeError("pre-trained labels do not match table n");
    }
    if (down_path) {
        down = load_labels(*down_path, LabelRole::downstream);
        if (down->size() != table.m) throw ShapeError("downstream labels do not match table m");
    }
    std::cout << table_summary(table);
    for (std::size_t i = 0; i < table.m; ++i) {
        std::cout << i;
        if (down) std::cout << " (" << down->names[i] << ")";
        std::cout << " <-";
        for (auto j : table.assignments[i]) {
            std::cout << " " << j;
            if (pre) std::cout << " (" << pre->names[j] << ")";
        }
        std::cout << "\n";
    }
    return 0;
}

// ---- compare ------------------------------------------------------------

struct CompareArgs {
    std::optional<std::string> data_dir;
    BenchmarkConfig toy;
    std::string strategies = "rm,fm,semap1,semap-a";
    std::size_t k = 3;
    double epsilon = kDefaultEpsilon;
    double gamma = kDefaultGamma;
    std::uint32_t cap = kDefaultCap;
    bool prompted = false;
    TrainConfig train;
    std::optional<std::string> csv;
};

std::vector<StrategySpec> parse_specs(const CompareArgs& a) {
    std::vector<StrategySpec> specs;
    std::stringstream in(a.strategies);
    std::string name;
    while (std::getline(in, name, ',')) {
        if (name.empty()) continue;
        StrategySpec spec;
        try {
            spec.strategy = parse_strategy(name);
        } catch (const InvalidInputError& e) {
            throw UsageError(e.what());
        }
        spec.k = a.k;
        spec.epsilon = a.epsilon;
        spec.gamma = a.gamma;
        spec.cap = a.cap;
        specs.push_back(spec);
    }
    if (specs.empty()) throw UsageError("--strategies lists no strategy");
    return specs;
}

int run_compare(CompareArgs a, unsigned threads) {
    const auto specs = parse_specs(a);
    check_hyperparams(a.epsilon, a.gamma, a.cap);
    a.train.threads = threads;
    CompareConfig cfg;
    cfg.prompted = a.prompted;
    cfg.train = a.train;
    cfg.threads = threads;

    std::vector<EvalReport> reports;
    if (a.data_dir) {
        const fs::path dir = *a.data_dir;
        const auto pre_labels = load_labels(dir / "pretrained_labels.txt", LabelRole::pretrained);
        const auto down_labels = load_labels(dir / "downstream_labels.txt", LabelRole::downstream);
        const auto pre = load_embeddings(dir / "pretrained_emb.bin");
        const auto down = load_embeddings(dir / "downstream_emb.bin");
        check_embeddings_match(pre, pre_labels);
        check_embeddings_match(down, down_labels);
        const auto train_logits = load_logits(dir / "train_logits.bin");
        const auto test_logits = load_logits(dir / "test_logits.bin");
        CompareInputs in;
        in.dataset = dir.filename().string();
        if (in.dataset.empty()) in.dataset = dir.parent_path().filename().string();
        in.m = down_labels.size();
        in.n = pre_labels.size();
        in.pretrained_embeddings = &pre;
        in.downstream_embeddings = &down;
        in.fm_logits = &train_logits;
        in.eval_logits = &test_logits;
        std::optional<FrozenBackbone> backbone;
        std::optional<ImageSet> train_images, test_images;
        if (a.prompted) {
            backbone = load_backbone_descriptor(dir / "backbone.txt");
            train_images = load_images(dir / "train_images.bin");
            test_images = load_images(dir / "test_images.bin");
            if (train_images->side > backbone->side() || (backbone->side() - train_images->side) % 2) {
                throw ShapeError("image side does not centre on the backbone canvas");
            }
            in.backbone = &*backbone;
            in.train_images = &*train_images;
            in.test_images = &*test_images;
            in.padding = (backbone->side() - train_images->side) / 2;
        }
        reports = compare_strategies(in, specs, cfg);
    } else {
        const auto bench = make_synthetic_benchmark(a.toy);
        reports = compare_strategies(compare_inputs(bench), specs, cfg);
    }
    std::cout << comparison_to_text(reports);
    if (a.csv) write_text(*a.csv, comparison_to_csv(reports));
    return 0;
}

void add_train_options(CLI::App* sub, TrainConfig& cfg) {
    sub->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    sub->add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
    sub->add_option("--momentum", cfg.momentum, "SGD momentum in [0, 1)")->capture_default_str();
    sub->add_option("--batch-size", cfg.batch_size, "Mini-batch size")->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semap: output mapping for visual prompt learning"};
    app.footer(kFormats);
    app.require_subcommand(1);
    app.fallthrough();
    unsigned threads_flag = 0;
    app.add_option("--threads", threads_flag, "Worker threads (0 = all cores)")
        ->envname("SEMAP_THREADS")
        ->capture_default_str();

    const std::string hyper_help = "Defaults: epsilon=0.05, gamma=0.9, cap=50.";

    BuildMapArgs bm;
    auto* build = app.add_subcommand("build-map", "Build a mapping table from labels, embeddings or logits");
    build->footer(hyper_help + "\nrm and fm need --pre-labels and --down-labels; semantic strategies need "
                               "--pre-emb and --down-emb; fm also needs --logits with labels.");
    build->add_option("--strategy", bm.strategy, "rm | fm | semap1 | semap-k | semap-a")->required();
    build->add_option("--pre-labels", bm.pre_labels, "Pre-trained label file");
    build->add_option("--down-labels", bm.down_labels, "Downstream label file");
    build->add_option("--pre-emb", bm.pre_emb, "Pre-trained label embeddings");
    build->add_option("--down-emb", bm.down_emb, "Downstream label embeddings");
    build->add_option("--logits", bm.logits, "Labelled unprompted logits (fm)");
    build->add_option("--k", bm.k, "Indices per class for semap-k")->capture_default_str();
    build->add_option("--epsilon", bm.epsilon, "semap-a base gap threshold")->capture_default_str();
    build->add_option("--gamma", bm.gamma, "semap-a threshold decay in (0, 1]")->capture_default_str();
    build->add_option("--cap", bm.cap, "semap-a maximum indices per class")->capture_default_str();
    build->add_option("--out", bm.out, "Output mapping table")->required();

    std::string ev_map, ev_logits, ev_dataset;
    auto* eval = app.add_subcommand("eval-zeroshot", "Zero-shot accuracy of a mapping table on logits");
    eval->add_option("--map", ev_map, "Mapping table")->required();
    eval->add_option("--logits", ev_logits, "Labelled logits")->required();
    eval->add_option("--dataset", ev_dataset, "Dataset name in the report (default: logits file stem)");

    TrainArgs ta;
    auto* trainc = app.add_subcommand("train-prompt", "Train a visual prompt through a fixed mapping");
    trainc->footer("The prompt starts at zero. Padding prompts take their width from the canvas and image "
                   "sides; patch prompts default to a side/4 patch.");
    trainc->add_option("--map", ta.map, "Mapping table")->required();
    trainc->add_option("--backbone", ta.backbone, "Backbone descriptor")->required();
    trainc->add_option("--data", ta.data, "Labelled training images")->required();
    add_train_options(trainc, ta.cfg);
    trainc->add_option("--seed", ta.cfg.seed, "Shuffle seed")->capture_default_str();
    trainc->add_option("--variant", ta.variant, "padding | fixed-patch | random-patch")->capture_default_str();
    trainc->add_option("--patch-size", ta.patch, "Patch side (0 = side/4)");
    trainc->add_option("--patch-row", ta.patch_row, "Patch top row");
    trainc->add_option("--patch-col", ta.patch_col, "Patch left column");
    trainc->add_option("--out", ta.out, "Output prompt file")->required();
    trainc->add_option("--report", ta.report, "Also write the training report here");

    BenchmarkConfig toy;
    std::string toy_dir;
    auto* gen = app.add_subcommand("gen-toy", "Write a synthetic benchmark with a planted label alignment");
    gen->add_option("--seed", toy.seed, "Benchmark seed")->capture_default_str();
    gen->add_option("--m", toy.m, "Downstream classes")->capture_default_str();
    gen->add_option("--n", toy.n, "Pre-trained classes")->capture_default_str();
    gen->add_option("--d", toy.side, "Canvas side")->capture_default_str();
    gen->add_option("--per-class", toy.per_class, "Training images per class")->capture_default_str();
    gen->add_option("--test-per-class", toy.test_per_class, "Test images per class")->capture_default_str();
    gen->add_option("--hidden", toy.hidden, "Backbone hidden width")->capture_default_str();
    gen->add_option("--pixel-noise", toy.pixel_noise, "Per-pixel noise std")->capture_default_str();
    gen->add_option("--embedding-noise", toy.embedding_noise, "Label embedding noise std")->capture_default_str();
    gen->add_option("--out-dir", toy_dir, "Output directory")->required();

    std::string in_map;
    std::optional<std::string> in_pre, in_down;
    auto* inspect = app.add_subcommand("inspect-map", "Print a mapping table summary");
    inspect->add_option("--map", in_map, "Mapping table")->required();
    inspect->add_option("--pre-labels", in_pre, "Pre-trained labels for names");
    inspect->add_option("--down-labels", in_down, "Downstream labels for names");

    CompareArgs ca;
    auto* cmp = app.add_subcommand("compare", "Compare mapping strategies zero-shot and optionally prompted");
    cmp->footer(hyper_help + "\nWithout --data-dir a benchmark is generated in memory from the toy options.");
    cmp->add_option("--data-dir", ca.data_dir, "Directory written by gen-toy");
    cmp->add_option("--strategies", ca.strategies, "Comma-separated strategy list")->capture_default_str();
    cmp->add_option("--k", ca.k, "semap-k indices per class")->capture_default_str();
    cmp->add_option("--epsilon", ca.epsilon, "semap-a base gap threshold")->capture_default_str();
    cmp->add_option("--gamma", ca.gamma, "semap-a threshold decay")->capture_default_str();
    cmp->add_option("--cap", ca.cap, "semap-a cap")->capture_default_str();
    cmp->add_flag("--prompted", ca.prompted, "Also train a prompt per strategy and evaluate it");
    add_train_options(cmp, ca.train);
    cmp->add_option("--train-seed", ca.train.seed, "Training shuffle seed")->capture_default_str();
    cmp->add_option("--seed", ca.toy.seed, "Generated benchmark seed")->capture_default_str();
    cmp->add_option("--m", ca.toy.m, "Generated benchmark m")->capture_default_str();
    cmp->add_option("--n", ca.toy.n, "Generated benchmark n")->capture_default_str();
    cmp->add_option("--per-class", ca.toy.per_class, "Generated training images per class")->capture_default_str();
    cmp->add_option("--csv", ca.csv, "Also write a CSV table here");

    // Every subcommand's help ends with the file format reference.
    for (auto* sub : app.get_subcommands({})) {
        const std::string own = sub->get_footer();
        sub->footer(own.empty() ? std::string(kFormats) : own + "\n\n" + kFormats);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    const unsigned threads = resolve_threads(threads_flag);
    try {
        if (*build) return run_build_map(bm, threads);
        if (*eval) return run_eval(ev_map, ev_logits, ev_dataset);
        if (*trainc) return run_train(ta, threads);
        if (*gen) return run_gen_toy(toy, toy_dir);
        if (*inspect) return run_inspect(in_map, in_pre, in_down);
        if (*cmp) return run_compare(ca, threads);
    } catch (const UsageError& e) {
        std::cerr << "semap: usage error: " << e.what() << "\n";
        return 1;
    } catch (const HyperparameterError& e) {
        std::cerr << "semap: usage error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "semap: error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "semap: error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
