#include "semap/backbone.hpp"

#include "semap/embedding_io.hpp"
#include "semap/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>

namespace semap {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kBackboneHeader = "# semap backbone v1";
constexpr std::string_view kPromptMagic = "SEMAPPRM";

void fnv_mix(std::uint64_t& h, std::span<const float> xs) noexcept {
    for (float x : xs) {
        auto bits = std::bit_cast<std::uint32_t>(x);
        for (int i = 0; i < 4; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    }
}

std::vector<float> uniform_floats(Rng& rng, std::size_t count, double a) {
    std::vector<float> out(count);
    for (float& x : out) x = static_cast<float>(rng.uniform(-a, a));
    return out;
}

} // namespace

FrozenBackbone::FrozenBackbone(std::size_t side, Matrix hidden_weights, std::vector<float> hidden_bias,
                               Matrix output_weights, std::vector<float> output_bias, std::uint64_t seed)
    : side_(side), w1_(std::move(hidden_weights)), b1_(std::move(hidden_bias)),
      w2_(std::move(output_weights)), b2_(std::move(output_bias)), seed_(seed) {
    if (side_ == 0 || w1_.rows() == 0 || w2_.rows() == 0) throw InvalidInputError("backbone sizes must be >= 1");
    if (w1_.cols() != side_ * side_ || b1_.size() != w1_.rows() || w2_.cols() != w1_.rows() ||
        b2_.size() != w2_.rows()) {
        throw ShapeError("backbone layer shapes are inconsistent");
    }
}

std::uint64_t FrozenBackbone::checksum() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    fnv_mix(h, w1_.data());
    fnv_mix(h, b1_);
    fnv_mix(h, w2_.data());
    fnv_mix(h, b2_);
    return h;
}

std::vector<double> FrozenBackbone::forward(std::span<const double> canvas) const {
    if (canvas.size() != side_ * side_) {
        throw ShapeError("forward: canvas has " + std::to_string(canvas.size()) + " pixels, expected " +
                         std::to_string(side_ * side_));
    }
    auto hidden = affine(w1_, b1_, canvas);
    for (double& x : hidden) x = x > 0.0 ? x : 0.0;
    return affine(w2_, b2_, hidden);
}

std::vector<double> FrozenBackbone::input_gradient(std::span<const double> canvas,
                                                   std::span<const double> upstream) const {
    if (upstream.size() != classes()) {
        throw ShapeError("input_gradient: upstream has " + std::to_string(upstream.size()) +
                         " entries, expected " + std::to_string(classes()));
    }
    if (canvas.size() != side_ * side_) throw ShapeError("input_gradient: canvas size mismatch");
    const auto pre = affine(w1_, b1_, canvas);

    // Back through the output layer and the ReLU.
    std::vector<double> g_hidden(hidden(), 0.0);
    for (std::size_t k = 0; k < classes(); ++k) {
        const auto row = w2_.row(k);
        for (std::size_t j = 0; j < hidden(); ++j) g_hidden[j] += upstream[k] * static_cast<double>(row[j]);
    }
    for (std::size_t j = 0; j < hidden(); ++j) {
        if (!(pre[j] > 0.0)) g_hidden[j] = 0.0;
    }

    std::vector<double> g_canvas(canvas.size(), 0.0);
    for (std::size_t j = 0; j < hidden(); ++j) {
        if (g_hidden[j] == 0.0) continue;
        const auto row = w1_.row(j);
        for (std::size_t p = 0; p < canvas.size(); ++p) g_canvas[p] += g_hidden[j] * static_cast<double>(row[p]);
    }
    return g_canvas;
}

FrozenBackbone make_backbone(std::uint64_t seed, std::size_t side, std::size_t hidden, std::size_t classes) {
    if (side == 0 || hidden == 0 || classes == 0) throw InvalidInputError("make_backbone: sizes must be >= 1");
    Rng rng(seed);
    const std::size_t inputs = side * side;
    const double a1 = std::sqrt(6.0 / static_cast<double>(inputs + hidden));
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + classes));
    auto w1 = uniform_floats(rng, hidden * inputs, a1);
    auto b1 = uniform_floats(rng, hidden, a1);
    auto w2 = uniform_floats(rng, classes * hidden, a2);
    auto b2 = uniform_floats(rng, classes, a2);
    return FrozenBackbone(side, Matrix(hidden, inputs, std::move(w1)), std::move(b1),
                          Matrix(classes, hidden, std::move(w2)), std::move(b2), seed);
}

void write_backbone_descriptor(const fs::path& path, const FrozenBackbone& backbone) {
    std::string out(kBackboneHeader);
    out += "\nseed: " + std::to_string(backbone.seed());
    out += "\nside: " + std::to_string(backbone.side());
    out += "\nhidden: " + std::to_string(backbone.hidden());
    out += "\nclasses: " + std::to_string(backbone.classes());
    out += '\n';
    detail::write_file(path, out);
}

FrozenBackbone load_backbone_descriptor(const fs::path& path) {
    const std::string text = detail::read_file(path);
    const std::string origin = path.string();
    std::vector<std::string> lines;
    for (std::size_t pos = 0; pos < text.size();) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        lines.push_back(text.substr(pos, end - pos));
        pos = end + 1;
    }
    if (lines.empty() || lines[0] != kBackboneHeader) {
        throw FormatError(origin + ": line 1: expected header '" + std::string(kBackboneHeader) + "'");
    }
    const char* keys[] = {"seed", "side", "hidden", "classes"};
    std::uint64_t values[4];
    bool have[4] = {false, false, false, false};
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const auto& line = lines[li];
        const auto colon = line.find(": ");
        const std::string where = origin + ": line " + std::to_string(li + 1) + ": ";
        if (colon == std::string::npos) throw FormatError(where + "expected 'key: value'");
        const std::string key = line.substr(0, colon);
        const std::string value = line.substr(colon + 2);
        auto it = std::find(std::begin(keys), std::end(keys), key);
        if (it == std::end(keys)) throw FormatError(where + "unknown field '" + key + "'");
        const auto k = static_cast<std::size_t>(it - std::begin(keys));
        if (have[k]) throw FormatError(where + "duplicate field '" + key + "'");
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), values[k]);
        if (ec != std::errc{} || ptr != value.data() + value.size()) {
            throw FormatError(where + "bad integer '" + value + "'");
        }
        have[k] = true;
    }
    for (std::size_t k = 0; k < 4; ++k) {
        if (!have[k]) throw FormatError(origin + ": missing field '" + keys[k] + "'");
    }
    if (values[1] == 0 || values[2] == 0 || values[3] == 0) throw FormatError(origin + ": sizes must be >= 1");
    return make_backbone(values[0], values[1], values[2], values[3]);
}

std::string_view to_string(PromptVariant v) noexcept {
    switch (v) {
    case PromptVariant::padding: return "padding";
    case PromptVariant::fixed_patch: return "fixed_patch";
    case PromptVariant::random_patch: return "random_patch";
    }
    return "?";
}

PromptVariant parse_prompt_variant(std::string_view name) {
    if (name == "padding") return PromptVariant::padding;
    if (name == "fixed_patch" || name == "fixed-patch") return PromptVariant::fixed_patch;
    if (name == "random_patch" || name == "random-patch") return PromptVariant::random_patch;
    throw InvalidInputError("unknown prompt variant '" + std::string(name) + "'");
}

Prompt::Prompt(PromptVariant variant, std::size_t side, std::size_t padding, std::size_t patch,
               std::size_t row, std::size_t col)
    : variant_(variant), side_(side), padding_(padding), patch_(patch), row_(row), col_(col),
      values_(side * side, 0.0), mask_(side * side, 0) {
    if (side == 0) throw ShapeError("prompt side must be >= 1");
    if (variant == PromptVariant::padding) {
        if (2 * padding >= side) {
            throw ShapeError("padding width " + std::to_string(padding) + " leaves no room in side " +
                             std::to_string(side));
        }
    } else if (patch == 0 || row + patch > side || col + patch > side) {
        throw ShapeError("patch of side " + std::to_string(patch) + " at (" + std::to_string(row) + ", " +
                         std::to_string(col) + ") does not fit side " + std::to_string(side));
    }
    rebuild_mask();
}

Prompt Prompt::padding(std::size_t side, std::size_t width) {
    return Prompt(PromptVariant::padding, side, width, 0, 0, 0);
}

Prompt Prompt::fixed_patch(std::size_t side, std::size_t patch, std::size_t row, std::size_t col) {
    return Prompt(PromptVariant::fixed_patch, side, 0, patch, row, col);
}

Prompt Prompt::random_patch(std::size_t side, std::size_t patch, std::size_t row, std::size_t col) {
    return Prompt(PromptVariant::random_patch, side, 0, patch, row, col);
}

std::size_t Prompt::image_side() const noexcept {
    return variant_ == PromptVariant::padding ? side_ - 2 * padding_ : side_;
}

void Prompt::rebuild_mask() {
    for (std::size_t r = 0; r < side_; ++r) {
        for (std::size_t c = 0; c < side_; ++c) {
            bool on;
            if (variant_ == PromptVariant::padding) {
                on = r < padding_ || c < padding_ || r >= side_ - padding_ || c >= side_ - padding_;
            } else {
                on = r >= row_ && r < row_ + patch_ && c >= col_ && c < col_ + patch_;
            }
            mask_[r * side_ + c] = on ? 1 : 0;
        }
    }
}

void Prompt::remask() noexcept {
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!mask_[i]) values_[i] = 0.0;
    }
}

void Prompt::set_values(std::span<const double> values) {
    if (values.size() != values_.size()) throw ShapeError("prompt values size mismatch");
    std::copy(values.begin(), values.end(), values_.begin());
    remask();
}

void Prompt::subtract(std::span<const double> step) {
    if (step.size() != values_.size()) throw ShapeError("prompt step size mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= step[i];
    remask();
}

void Prompt::move_patch(std::size_t row, std::size_t col) {
    if (variant_ != PromptVariant::random_patch) throw InvalidInputError("only random-patch prompts move");
    if (row + patch_ > side_ || col + patch_ > side_) throw ShapeError("patch location out of bounds");
    std::vector<double> block(patch_ * patch_);
    for (std::size_t r = 0; r < patch_; ++r) {
        for (std::size_t c = 0; c < patch_; ++c) block[r * patch_ + c] = values_[(row_ + r) * side_ + col_ + c];
    }
    std::fill(values_.begin(), values_.end(), 0.0);
    row_ = row;
    col_ = col;
    for (std::size_t r = 0; r < patch_; ++r) {
        for (std::size_t c = 0; c < patch_; ++c) values_[(row_ + r) * side_ + col_ + c] = block[r * patch_ + c];
    }
    rebuild_mask();
}

std::vector<double> compose_unclamped(std::span<const float> image, std::size_t image_side,
                                      const Prompt& prompt) {
    const std::size_t d = prompt.side();
    if (image.size() != image_side * image_side) throw ShapeError("compose: image data does not match its side");
    std::vector<double> canvas(d * d, 0.0);
    if (prompt.variant() == PromptVariant::padding) {
        if (image_side != prompt.image_side()) {
            throw ShapeError("compose: image side " + std::to_string(image_side) + " but padding prompt expects " +
                             std::to_string(prompt.image_side()));
        }
        const std::size_t p = prompt.padding_width();
        for (std::size_t r = 0; r < image_side; ++r) {
            for (std::size_t c = 0; c < image_side; ++c) canvas[(r + p) * d + c + p] = image[r * image_side + c];
        }
    } else {
        if (image_side == 0 || image_side > d) {
            throw ShapeError("compose: image side " + std::to_string(image_side) + " does not fit canvas " +
                             std::to_string(d));
        }
        for (std::size_t r = 0; r < d; ++r) {
            const std::size_t sr = r * image_side / d;
            for (std::size_t c = 0; c < d; ++c) canvas[r * d + c] = image[sr * image_side + c * image_side / d];
        }
    }
    const auto values = prompt.values();
    const auto mask = prompt.mask();
    for (std::size_t i = 0; i < canvas.size(); ++i) {
        if (mask[i]) canvas[i] += values[i];
    }
    return canvas;
}

PromptedImage compose(std::span<const float> image, std::size_t image_side, const Prompt& prompt) {
    PromptedImage out{prompt.side(), compose_unclamped(image, image_side, prompt)};
    for (double& x : out.canvas) x = std::clamp(x, 0.0, 1.0);
    return out;
}

std::vector<double> forward(const FrozenBackbone& backbone, const PromptedImage& image) {
    if (image.side != backbone.side()) {
        throw ShapeError("forward: image side " + std::to_string(image.side) + " != backbone side " +
                         std::to_string(backbone.side()));
    }
    return backbone.forward(image.canvas);
}

std::vector<std::vector<double>> forward_batch(const FrozenBackbone& backbone,
                                               std::span<const PromptedImage> images) {
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(forward(backbone, img));
    return out;
}

std::vector<double> grad_prompt(const FrozenBackbone& backbone, std::span<const float> image,
                                std::size_t image_side, const Prompt& prompt,
                                std::span<const double> upstream) {
    if (prompt.side() != backbone.side()) throw ShapeError("grad_prompt: prompt side != backbone side");
    for (double g : upstream) {
        if (!std::isfinite(g)) throw InvalidInputError("grad_prompt: non-finite upstream gradient");
    }
    auto raw = compose_unclamped(image, image_side, prompt);
    std::vector<double> canvas(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) canvas[i] = std::clamp(raw[i], 0.0, 1.0);
    auto g = backbone.input_gradient(canvas, upstream);
    const auto mask = prompt.mask();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const bool pass = raw[i] >= 0.0 && raw[i] <= 1.0;
        if (!mask[i] || !pass) g[i] = 0.0;
    }
    return g;
}

PromptFile to_prompt_file(const Prompt& prompt) {
    PromptFile f;
    f.side = static_cast<std::uint32_t>(prompt.side());
    f.variant = prompt.variant();
    f.values.reserve(prompt.values().size());
    for (double v : prompt.values()) f.values.push_back(static_cast<float>(v));
    return f;
}

void write_prompt(const fs::path& path, const PromptFile& prompt) {
    if (prompt.values.size() != std::size_t{prompt.side} * prompt.side) {
        throw ShapeError("prompt values do not match side");
    }
    std::string out(kPromptMagic);
    detail::put_u32(out, prompt.side);
    detail::put_u32(out, static_cast<std::uint32_t>(prompt.variant));
    for (float v : prompt.values) detail::put_f32(out, v);
    detail::write_file(path, out);
}

PromptFile load_prompt(const fs::path& path) {
    const std::string bytes = detail::read_file(path);
    const std::string origin = path.string();
    if (bytes.size() < 8 || bytes.compare(0, 8, kPromptMagic) != 0) {
        throw FormatError(origin + ": byte 0: magic mismatch, expected SEMAPPRM");
    }
    if (bytes.size() < 16) throw FormatError(origin + ": byte " + std::to_string(bytes.size()) + ": truncated header");
    PromptFile f;
    f.side = detail::get_u32(bytes, 8);
    const auto tag = detail::get_u32(bytes, 12);
    if (tag > 2) throw FormatError(origin + ": byte 12: unknown variant tag " + std::to_string(tag));
    f.variant = static_cast<PromptVariant>(tag);
    const std::uint64_t expected = 16 + 4 * std::uint64_t{f.side} * f.side;
    if (bytes.size() != expected) {
        throw FormatError(origin + ": byte " + std::to_string(std::min<std::uint64_t>(bytes.size(), expected)) +
                          ": size mismatch, expected " + std::to_string(expected) + " bytes");
    }
    f.values.resize(std::size_t{f.side} * f.side);
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        f.values[i] = detail::get_f32(bytes, 16 + 4 * i);
        if (!std::isfinite(f.values[i])) throw FormatError(origin + ": byte " + std::to_string(16 + 4 * i) + ": non-finite value");
    }
    return f;
}

} // namespace semap
