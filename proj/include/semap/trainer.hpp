#pragma once

#include "semap/backbone.hpp"
#include "semap/embedding_io.hpp"
#include "semap/mapping.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace semap {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    /// Throws InvalidInputError on lr <= 0, batch < 1 or momentum outside [0, 1).
    /// `allow_zero_lr` admits lr = 0 (a no-op run).
    void validate(bool allow_zero_lr = true) const;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double accuracy = 0.0;

    bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
    /// Mean loss and accuracy over the whole dataset before the first update.
    double initial_loss = 0.0;
    double initial_accuracy = 0.0;
    /// Same, evaluated with the final prompt.
    double final_loss = 0.0;
    double final_accuracy = 0.0;
    std::vector<EpochStats> epochs;
    Prompt final_prompt;
    std::uint64_t backbone_checksum = 0;
    double wall_seconds = 0.0;

    /// Structured text, one row per epoch. Wall time is reported on its own line.
    std::string to_text() const;
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
    std::size_t predicted = 0;
};

/// Cross-entropy of softmax(apply_mapping(table, forward(compose(image, prompt))))
/// against `label`, and its gradient with respect to the prompt values.
LossGrad loss_and_grad(const FrozenBackbone& backbone, const MappingTable& table, const Prompt& prompt,
                       std::span<const float> image, std::size_t image_side, std::size_t label);

struct DatasetLoss {
    double mean_loss = 0.0;
    double accuracy = 0.0;
};

/// Mean loss and accuracy of the prompted pipeline over every image.
DatasetLoss dataset_loss(const FrozenBackbone& backbone, const MappingTable& table, const Prompt& prompt,
                         const ImageSet& data);

/// SGD with momentum on the prompt values. Batches come from a seeded shuffle
/// every epoch; the batch gradient is the mean of per-example gradients reduced
/// in example order. Random-patch prompts are relocated before every batch.
TrainReport train(const FrozenBackbone& backbone, const MappingTable& table, const ImageSet& data,
                  Prompt initial, const TrainConfig& cfg);

} // namespace semap
