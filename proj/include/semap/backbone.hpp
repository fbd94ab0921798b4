#pragma once

#include "semap/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace semap {

/// Frozen toy classifier: d*d canvas -> affine -> ReLU -> affine -> n scores.
/// Weights never change after construction.
class FrozenBackbone {
public:
    /// Test hook: explicit weights. hidden_weights is h x d^2, output_weights n x h.
    FrozenBackbone(std::size_t side, Matrix hidden_weights, std::vector<float> hidden_bias,
                   Matrix output_weights, std::vector<float> output_bias, std::uint64_t seed = 0);

    std::size_t side() const noexcept { return side_; }
    std::size_t hidden() const noexcept { return w1_.rows(); }
    std::size_t classes() const noexcept { return w2_.rows(); }
    std::uint64_t seed() const noexcept { return seed_; }

    const Matrix& hidden_weights() const noexcept { return w1_; }
    std::span<const float> hidden_bias() const noexcept { return b1_; }
    const Matrix& output_weights() const noexcept { return w2_; }
    std::span<const float> output_bias() const noexcept { return b2_; }

    /// FNV-1a over the bit patterns of every weight and bias.
    std::uint64_t checksum() const noexcept;

    /// Pre-softmax scores for a d*d canvas.
    std::vector<double> forward(std::span<const double> canvas) const;

    /// Gradient of dot(upstream, forward(canvas)) with respect to the canvas.
    /// The ReLU subgradient at exactly 0 is taken as 0.
    std::vector<double> input_gradient(std::span<const double> canvas,
                                       std::span<const double> upstream) const;

private:
    std::size_t side_;
    Matrix w1_;
    std::vector<float> b1_;
    Matrix w2_;
    std::vector<float> b2_;
    std::uint64_t seed_;
};

/// Glorot-uniform weights and biases, a = sqrt(6 / (fan_in + fan_out)) per
/// layer, drawn in the order W1, b1, W2, b2 from Rng(seed).
FrozenBackbone make_backbone(std::uint64_t seed, std::size_t side, std::size_t hidden,
                             std::size_t classes);

/// Text descriptor: the backbone is regenerated from seed and sizes.
///
///   # semap backbone v1
///   seed: 42
///   side: 16
///   hidden: 64
///   classes: 20
void write_backbone_descriptor(const std::filesystem::path& path, const FrozenBackbone& backbone);
FrozenBackbone load_backbone_descriptor(const std::filesystem::path& path);

enum class PromptVariant : std::uint32_t { padding = 0, fixed_patch = 1, random_patch = 2 };

std::string_view to_string(PromptVariant v) noexcept;
PromptVariant parse_prompt_variant(std::string_view name);

/// Trainable perturbation on a d*d canvas. Values are zero wherever the mask
/// is off. Padding prompts cover a border band of width p around a centered
/// (d-2p)-sided image; patch prompts cover a square at (row, col) on top of an
/// image that fills the canvas.
class Prompt {
public:
    Prompt() = default;

    static Prompt padding(std::size_t side, std::size_t width);
    static Prompt fixed_patch(std::size_t side, std::size_t patch, std::size_t row = 0,
                              std::size_t col = 0);
    static Prompt random_patch(std::size_t side, std::size_t patch, std::size_t row = 0,
                               std::size_t col = 0);

    PromptVariant variant() const noexcept { return variant_; }
    std::size_t side() const noexcept { return side_; }
    std::size_t padding_width() const noexcept { return padding_; }
    std::size_t patch_side() const noexcept { return patch_; }
    std::size_t patch_row() const noexcept { return row_; }
    std::size_t patch_col() const noexcept { return col_; }

    /// Side of the downstream images this prompt expects.
    std::size_t image_side() const noexcept;

    std::span<const double> values() const noexcept { return values_; }
    std::span<const std::uint8_t> mask() const noexcept { return mask_; }

    /// Overwrites the values, then zeroes them off-mask.
    void set_values(std::span<const double> values);
    /// values -= step, then zero off-mask.
    void subtract(std::span<const double> step);

    /// Random-patch prompts only: moves the patch (mask and values) to a new corner.
    void move_patch(std::size_t row, std::size_t col);

    bool operator==(const Prompt&) const = default;

private:
    Prompt(PromptVariant variant, std::size_t side, std::size_t padding, std::size_t patch,
           std::size_t row, std::size_t col);
    void rebuild_mask();
    void remask() noexcept;

    PromptVariant variant_ = PromptVariant::padding;
    std::size_t side_ = 0;
    std::size_t padding_ = 0;
    std::size_t patch_ = 0;
    std::size_t row_ = 0;
    std::size_t col_ = 0;
    std::vector<double> values_;
    std::vector<std::uint8_t> mask_;
};

/// d*d canvas in [0, 1].
struct PromptedImage {
    std::size_t side = 0;
    std::vector<double> canvas;
};

/// Places the image per the prompt geometry, adds mask * values, and clamps to [0, 1].
/// Patch prompts upscale smaller images to d*d by nearest neighbour.
PromptedImage compose(std::span<const float> image, std::size_t image_side, const Prompt& prompt);

/// Same as compose but without the final clamp.
std::vector<double> compose_unclamped(std::span<const float> image, std::size_t image_side,
                                      const Prompt& prompt);

std::vector<double> forward(const FrozenBackbone& backbone, const PromptedImage& image);
std::vector<std::vector<double>> forward_batch(const FrozenBackbone& backbone,
                                               std::span<const PromptedImage> images);

/// Gradient of dot(upstream, forward(compose(image, prompt))) with respect to
/// the prompt values: backprop to the canvas, times the clamp subgradient
/// (1 where the unclamped value lies in [0, 1], else 0), times the mask.
std::vector<double> grad_prompt(const FrozenBackbone& backbone, std::span<const float> image,
                                std::size_t image_side, const Prompt& prompt,
                                std::span<const double> upstream);

/// Prompt file: "SEMAPPRM", u32 d, u32 variant tag, then d*d little-endian f32.
struct PromptFile {
    std::uint32_t side = 0;
    PromptVariant variant = PromptVariant::padding;
    std::vector<float> values;

    bool operator==(const PromptFile&) const = default;
};

PromptFile to_prompt_file(const Prompt& prompt);
void write_prompt(const std::filesystem::path& path, const PromptFile& prompt);
PromptFile load_prompt(const std::filesystem::path& path);

} // namespace semap
