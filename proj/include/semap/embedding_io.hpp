#pragma once

// File formats shared with external exporters. All binary formats are
// little-endian with 32-bit IEEE-754 reals.
//
// Embedding file:
//   "SEMAPEMB"                8 bytes
//   rows                      u32
//   dim                       u32
//   rows * dim reals          f32, row-major
//
// Logit file:
//   "SEMAPLGT"                8 bytes
//   N                         u32
//   n                         u32
//   label flag                u8 (0 = no labels, 1 = labels follow)
//   N * n scores              f32, row-major
//   N labels                  u32 (only when flag = 1)
//
// Image file (labeled downstream images, written by gen-toy):
//   "SEMAPIMG"                8 bytes
//   N                         u32
//   side                      u32
//   N * side * side pixels    f32 in [0, 1], row-major per image
//   N labels                  u32
//
// Label file: UTF-8 text, one label per line, each line terminated by '\n'.
//
// Mapping tables use a line-oriented text format documented next to
// write_mapping in mapping_io below.

#include "semap/mapping.hpp"
#include "semap/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace semap {

enum class LabelRole { pretrained, downstream };

struct LabelSet {
    std::vector<std::string> names;
    LabelRole role = LabelRole::downstream;

    std::size_t size() const noexcept { return names.size(); }
    bool operator==(const LabelSet&) const = default;
};

/// One embedding row per label, matched to labels by position.
struct EmbeddingMatrix {
    Matrix rows;

    std::size_t count() const noexcept { return rows.rows(); }
    std::size_t dim() const noexcept { return rows.cols(); }
    bool operator==(const EmbeddingMatrix&) const = default;
};

struct LogitBatch {
    std::uint32_t count = 0;
    std::uint32_t width = 0;
    std::vector<float> scores;
    std::optional<std::vector<std::uint32_t>> labels;

    std::span<const float> row(std::size_t i) const noexcept {
        return {scores.data() + i * width, width};
    }
    bool operator==(const LogitBatch&) const = default;
};

/// Labeled square images with 32-bit pixel storage.
struct ImageSet {
    std::uint32_t count = 0;
    std::uint32_t side = 0;
    std::vector<float> pixels;
    std::vector<std::uint32_t> labels;

    std::span<const float> image(std::size_t i) const noexcept {
        return {pixels.data() + i * side * side, std::size_t{side} * side};
    }
    bool operator==(const ImageSet&) const = default;
};

LabelSet load_labels(const std::filesystem::path& path, LabelRole role);
void write_labels(const std::filesystem::path& path, const LabelSet& labels);

/// Throws ShapeError unless the matrix has exactly one row per label.
void check_embeddings_match(const EmbeddingMatrix& emb, const LabelSet& labels);

EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& emb);

LogitBatch load_logits(const std::filesystem::path& path);
void write_logits(const std::filesystem::path& path, const LogitBatch& batch);

/// Throws unless labels are present and every label is < m.
void check_logit_labels(const LogitBatch& batch, std::size_t m);

ImageSet load_images(const std::filesystem::path& path);
void write_images(const std::filesystem::path& path, const ImageSet& images);

/// Mapping table text format, one field per line:
///
///   # semap mapping table v1
///   strategy: semap_a
///   m: 2
///   n: 4
///   epsilon: 0.05        (optional)
///   gamma: 0.9           (optional)
///   cap: 50              (optional)
///   k: 3                 (optional)
///   0: [1, 3]
///   1: [0]
///
/// Class lines appear in ascending order, one per downstream class. Reals are
/// written in shortest round-trip form.
std::string format_mapping(const MappingTable& table);
MappingTable parse_mapping(const std::string& text, const std::string& origin = "<string>");
void write_mapping(const std::filesystem::path& path, const MappingTable& table);
MappingTable load_mapping(const std::filesystem::path& path);

// Shared byte-level helpers for the binary formats above.
namespace detail {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(const std::string& in, std::size_t offset);
float get_f32(const std::string& in, std::size_t offset);

} // namespace detail

} // namespace semap
