#pragma once

#include "semap/backbone.hpp"
#include "semap/embedding_io.hpp"
#include "semap/mapping.hpp"
#include "semap/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace semap {

enum class EvalMode { zero_shot, prompted };

std::string_view to_string(EvalMode mode) noexcept;

struct EvalReport {
    std::string strategy;
    Hyperparams hyper;
    std::string dataset;
    EvalMode mode = EvalMode::zero_shot;
    std::size_t count = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    /// Per downstream class; classes without examples report 0 with total 0.
    std::vector<std::size_t> class_total;
    std::vector<std::size_t> class_correct;
    std::vector<double> class_accuracy;

    std::string to_text() const;
};

/// Argmax over apply_mapping(table, logits); ties go to the smaller class.
std::size_t predict_zero_shot(const MappingTable& table, std::span<const float> logits);
std::size_t predict_zero_shot(const MappingTable& table, std::span<const double> logits);

/// Builds a report from predictions and ground truth.
EvalReport make_report(std::span<const std::size_t> predicted, std::span<const std::uint32_t> labels,
                       std::size_t m);

EvalReport evaluate(const MappingTable& table, const LogitBatch& batch, const std::string& dataset = "");

EvalReport evaluate_prompted(const FrozenBackbone& backbone, const MappingTable& table, const Prompt& prompt,
                             const ImageSet& data, const std::string& dataset = "");

/// Uniform random predictions, the chance baseline.
EvalReport random_guess_report(std::span<const std::uint32_t> labels, std::size_t m, std::uint64_t seed,
                               const std::string& dataset = "");

struct BenchmarkConfig {
    std::uint64_t seed = 0;
    std::size_t m = 4;
    std::size_t n = 20;
    std::size_t side = 32;
    std::size_t per_class = 50;
    std::size_t test_per_class = 50;
    std::size_t hidden = 64;
    std::size_t embedding_dim = 32;
    /// Per-coordinate std of the noise added to planted embeddings.
    double embedding_noise = 0.01;
    /// Per-pixel std of the Gaussian noise added to templates.
    double pixel_noise = 0.1;
    /// 0 selects side / 4.
    std::size_t padding = 0;

    void validate() const;
    std::size_t padding_width() const noexcept { return padding ? padding : side / 4; }
};

/// Desk-scale task with a known label alignment. Downstream class c is planted
/// on pre-trained index planted[c]: its label embedding is a slightly perturbed
/// copy of that pre-trained embedding, and its images are templates on which
/// the frozen backbone's top output is planted[c]. When n >= 2m the planted
/// indices avoid [0, m) and every class owns m template variants; variant r
/// also makes output r the strongest among outputs [0, m), and examples draw r
/// uniformly, so a prefix (rm) mapping is independent of the true class.
struct SyntheticBenchmark {
    BenchmarkConfig config;
    LabelSet pretrained_labels;
    LabelSet downstream_labels;
    EmbeddingMatrix pretrained_embeddings;
    EmbeddingMatrix downstream_embeddings;
    FrozenBackbone backbone;
    std::vector<std::uint32_t> planted;
    /// Clean templates, labelled by class.
    ImageSet templates;
    ImageSet train;
    ImageSet test;
    /// Unprompted backbone scores on train / test, with labels.
    LogitBatch train_logits;
    LogitBatch test_logits;

    Prompt zero_prompt() const { return Prompt::padding(config.side, config.padding_width()); }
};

SyntheticBenchmark make_synthetic_benchmark(const BenchmarkConfig& config);

/// File names written by write_benchmark, in manifest order.
const std::vector<std::string>& benchmark_files();
void write_benchmark(const std::filesystem::path& dir, const SyntheticBenchmark& bench);

struct StrategySpec {
    Strategy strategy = Strategy::semap1;
    std::size_t k = 1;
    double epsilon = kDefaultEpsilon;
    double gamma = kDefaultGamma;
    std::uint32_t cap = kDefaultCap;
};

/// Everything compare_strategies may need. Zero-shot evaluation needs
/// eval_logits; semantic strategies need both embeddings; fm needs fm_logits;
/// prompted mode needs the backbone and both image sets.
struct CompareInputs {
    std::string dataset;
    std::size_t m = 0;
    std::size_t n = 0;
    const EmbeddingMatrix* pretrained_embeddings = nullptr;
    const EmbeddingMatrix* downstream_embeddings = nullptr;
    const LogitBatch* fm_logits = nullptr;
    const LogitBatch* eval_logits = nullptr;
    const FrozenBackbone* backbone = nullptr;
    const ImageSet* train_images = nullptr;
    const ImageSet* test_images = nullptr;
    std::size_t padding = 0;
};

CompareInputs compare_inputs(const SyntheticBenchmark& bench);

struct CompareConfig {
    bool zero_shot = true;
    bool prompted = false;
    TrainConfig train;
    unsigned threads = 1;
};

MappingTable build_table(const StrategySpec& spec, const CompareInputs& inputs, unsigned threads = 1);

/// One report per strategy and mode, strategies in the given order, zero-shot first.
std::vector<EvalReport> compare_strategies(const CompareInputs& inputs, std::span<const StrategySpec> strategies,
                                           const CompareConfig& cfg);

std::string comparison_to_text(std::span<const EvalReport> reports);
/// strategy,mode,dataset,n_examples,accuracy,epsilon,gamma,cap,k
std::string comparison_to_csv(std::span<const EvalReport> reports);

} // namespace semap
