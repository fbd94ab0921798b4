#pragma once

#include "semap/numerics.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace semap {

struct EmbeddingMatrix;

struct ProfileEntry {
    std::uint32_t pretrained_index = 0;
    double similarity = 0.0;

    bool operator==(const ProfileEntry&) const = default;
};

/// All pre-trained indices for one downstream class, sorted by similarity
/// descending with ties broken by ascending pre-trained index.
struct SimilarityProfile {
    std::uint32_t downstream_index = 0;
    std::vector<ProfileEntry> entries;

    bool operator==(const SimilarityProfile&) const = default;
};

/// a.b / (|a| |b|) accumulated in 64-bit and clamped to [-1, 1].
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Sorts entries in place by the profile ordering rule.
void sort_profile_entries(std::vector<ProfileEntry>& entries);

/// One profile per downstream row. Rows are processed independently across
/// up to `threads` workers; output order is always by downstream index.
std::vector<SimilarityProfile> build_profiles(const EmbeddingMatrix& downstream,
                                              const EmbeddingMatrix& pretrained,
                                              unsigned threads = 1);

} // namespace semap
