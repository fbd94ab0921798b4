#include "semap/trainer.hpp"

#include "semap/error.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <limits>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

namespace semap {

namespace {

void check_dataset(const FrozenBackbone& backbone, const MappingTable& table, const Prompt& prompt,
                   const ImageSet& data) {
    if (data.count == 0) throw InvalidInputError("train: dataset is empty");
    if (table.n != backbone.classes()) {
        throw ShapeError("mapping table expects n = " + std::to_string(table.n) + " but backbone has " +
                         std::to_string(backbone.classes()) + " classes");
    }
    if (prompt.side() != backbone.side()) throw ShapeError("prompt side does not match backbone side");
    for (std::size_t i = 0; i < data.count; ++i) {
        if (data.labels[i] >= table.m) {
            throw IndexError("example " + std::to_string(i) + ": label " + std::to_string(data.labels[i]) +
                             " is not below m = " + std::to_string(table.m));
        }
    }
}

// Runs fn(i) for i in [0, count) over up to `threads` workers. Each index is
// handled by exactly one worker; callers write results to per-index slots.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w * chunk; i < std::min(count, (w + 1) * chunk); ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    pool.clear();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// Moves a square block of a side*side buffer, zeroing everything else.
void move_block(std::vector<double>& buf, std::size_t side, std::size_t patch, std::size_t from_r,
                std::size_t from_c, std::size_t to_r, std::size_t to_c) {
    std::vector<double> moved(buf.size(), 0.0);
    for (std::size_t r = 0; r < patch; ++r) {
        for (std::size_t c = 0; c < patch; ++c) {
            moved[(to_r + r) * side + to_c + c] = buf[(from_r + r) * side + from_c + c];
        }
    }
    buf = std::move(moved);
}

} // namespace

void TrainConfig::validate(bool allow_zero_lr) const {
    if (!(learning_rate > 0.0 || (allow_zero_lr && learning_rate == 0.0)) || !std::isfinite(learning_rate)) {
        throw InvalidInputError("learning rate must be > 0");
    }
    if (batch_size < 1) throw InvalidInputError("batch size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInputError("momentum must lie in [0, 1)");
}

std::string TrainReport::to_text() const {
    std::ostringstream out;
    out.precision(9);
    out << "# semap train report v1\n";
    out << "initial_loss: " << initial_loss << "\n";
    out << "initial_accuracy: " << initial_accuracy << "\n";
    out << "final_loss: " << final_loss << "\n";
    out << "final_accuracy: " << final_accuracy << "\n";
    out << "backbone_checksum: " << backbone_checksum << "\n";
    out << "prompt_variant: " << to_string(final_prompt.variant()) << "\n";
    out << "wall_seconds: " << wall_seconds << "\n";
    out << "epoch,mean_loss,accuracy\n";
    for (const auto& e : epochs) out << e.epoch << "," << e.mean_loss << "," << e.accuracy << "\n";
    return out.str();
}

LossGrad loss_and_grad(const FrozenBackbone& backbone, const MappingTable& table, const Prompt& prompt,
                       std::span<const float> image, std::size_t image_side, std::size_t label) {
    if (label >= table.m) {
        throw IndexError("label " + std::to_string(label) + " is not below m = " + std::to_string(table.m));
    }
    const auto canvas = compose(image, image_side, prompt);
    const auto logits = forward(backbone, canvas);
    const auto mapped = apply_mapping(table, logits);
    LossGrad out;
    out.predicted = argmax(std::span<const double>(mapped));
    if (!std::all_of(mapped.begin(), mapped.end(), [](double x) { return std::isfinite(x); })) {
        out.loss = std::numeric_limits<double>::quiet_NaN();
        out.grad.assign(prompt.values().size(), 0.0);
        return out;
    }
    auto ce = cross_entropy(mapped, label);
    const auto upstream = scatter_mapping_grad(table, ce.grad_scores);
    out.loss = ce.loss;
    out.grad = grad_prompt(backbone, image, image_side, prompt, upstream);
    return out;
}

DatasetLoss dataset_loss(const FrozenBackbone& backbone, const MappingTable& table, const Prompt& prompt,
                         const ImageSet& data) {
    check_dataset(backbone, table, prompt, data);
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.count; ++i) {
        const auto canvas = compose(data.image(i), data.side, prompt);
        const auto mapped = apply_mapping(table, forward(backbone, canvas));
        if (!std::all_of(mapped.begin(), mapped.end(), [](double x) { return std::isfinite(x); })) {
            return {std::numeric_limits<double>::quiet_NaN(), 0.0};
        }
        total += cross_entropy(mapped, data.labels[i]).loss;
        if (argmax(std::span<const double>(mapped)) == data.labels[i]) ++correct;
    }
    return {total / static_cast<double>(data.count),
            static_cast<double>(correct) / static_cast<double>(data.count)};
}

TrainReport train(const FrozenBackbone& backbone, const MappingTable& table, const ImageSet& data,
                  Prompt initial, const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(backbone, table, initial, data);
    const auto start = std::chrono::steady_clock::now();

    TrainReport report;
    report.backbone_checksum = backbone.checksum();
    {
        const auto before = dataset_loss(backbone, table, initial, data);
        report.initial_loss = before.mean_loss;
        report.initial_accuracy = before.accuracy;
        if (!std::isfinite(report.initial_loss)) throw NumericError("non-finite loss before training");
    }

    Prompt prompt = std::move(initial);
    const std::size_t pixels = prompt.side() * prompt.side();
    std::vector<double> velocity(pixels, 0.0);
    std::vector<std::size_t> order(data.count);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::uint64_t seeder = cfg.seed;
    Rng shuffle_rng(splitmix64(seeder));
    Rng patch_rng(splitmix64(seeder));

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < data.count; begin += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min<std::size_t>(data.count, begin + cfg.batch_size);
            if (prompt.variant() == PromptVariant::random_patch) {
                const std::size_t span = prompt.side() - prompt.patch_side() + 1;
                const auto row = static_cast<std::size_t>(patch_rng.below(span));
                const auto col = static_cast<std::size_t>(patch_rng.below(span));
                move_block(velocity, prompt.side(), prompt.patch_side(), prompt.patch_row(), prompt.patch_col(),
                           row, col);
                prompt.move_patch(row, col);
            }

            std::vector<LossGrad> results(end - begin);
            parallel_for(results.size(), cfg.threads, [&](std::size_t k) {
                const std::size_t idx = order[begin + k];
                results[k] = loss_and_grad(backbone, table, prompt, data.image(idx), data.side, data.labels[idx]);
            });

            std::vector<double> grad(pixels, 0.0);
            for (std::size_t k = 0; k < results.size(); ++k) {
                const auto& r = results[k];
                if (!std::isfinite(r.loss)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index));
                }
                loss_sum += r.loss;
                if (r.predicted == data.labels[order[begin + k]]) ++correct;
                for (std::size_t p = 0; p < pixels; ++p) grad[p] += r.grad[p];
            }
            const double scale = 1.0 / static_cast<double>(results.size());
            std::vector<double> step(pixels);
            for (std::size_t p = 0; p < pixels; ++p) {
                velocity[p] = cfg.momentum * velocity[p] + grad[p] * scale;
                step[p] = cfg.learning_rate * velocity[p];
            }
            prompt.subtract(step);
            for (double v : prompt.values()) {
                if (!std::isfinite(v)) {
                    throw NumericError("non-finite prompt value after update at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(batch_index));
                }
            }
        }
        report.epochs.push_back({epoch, loss_sum / static_cast<double>(data.count),
                                 static_cast<double>(correct) / static_cast<double>(data.count)});
    }

    const auto after = dataset_loss(backbone, table, prompt, data);
    report.final_loss = after.mean_loss;
    report.final_accuracy = after.accuracy;
    report.final_prompt = std::move(prompt);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace semap
