#pragma once

#include "semap/similarity.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semap {

struct LogitBatch;

enum class Strategy { rm, fm, semap1, semap_k, semap_a };

std::string_view to_string(Strategy s) noexcept;
/// Accepts the table tags (`semap_a`) and the CLI spelling (`semap-a`).
Strategy parse_strategy(std::string_view name);

struct Hyperparams {
    std::optional<double> epsilon;
    std::optional<double> gamma;
    std::optional<std::uint32_t> cap;
    std::optional<std::uint32_t> k;

    bool operator==(const Hyperparams&) const = default;
};

/// Output mapping from n pre-trained scores to m downstream scores. Class i
/// receives the sum of the scores at assignments[i].
struct MappingTable {
    std::size_t m = 0;
    std::size_t n = 0;
    Strategy strategy = Strategy::rm;
    Hyperparams hyper;
    std::vector<std::vector<std::uint32_t>> assignments;

    /// Checks structural and strategy-specific invariants; throws
    /// InvalidInputError describing the first violation.
    void validate() const;

    bool operator==(const MappingTable&) const = default;
};

// Defaults used when hyperparameters are not supplied.
inline constexpr double kDefaultEpsilon = 0.05;
inline constexpr double kDefaultGamma = 0.9;
inline constexpr std::uint32_t kDefaultCap = 50;

/// Class i -> pre-trained index i; the remaining n - m outputs are unused.
MappingTable rm_map(std::size_t m, std::size_t n);

/// Frequency mapping from unprompted backbone logits. Each class takes the
/// most frequent argmax among its examples; classes are resolved in ascending
/// order and a class whose choice is taken falls back to its next most
/// frequent index. Frequency ties go to the smaller pre-trained index, which
/// also orders the never-predicted indices at the tail of each fallback list.
MappingTable fm_map(const LogitBatch& batch, std::size_t m, std::size_t n);

/// One-to-one semantic mapping with greedy collision fallback.
MappingTable semap1(std::span<const SimilarityProfile> profiles);

/// Top-k profile indices per class; classes may share indices.
MappingTable semap_k(std::span<const SimilarityProfile> profiles, std::size_t k);

/// Adaptive-k mapping: keeps the maximal prefix of each profile connected to
/// its first entry, where the step from entry j to j+1 (1-based) is reachable
/// iff v_j - v_{j+1} < gamma^(j-1) * epsilon, and at most `cap` entries are kept.
MappingTable semap_a(std::span<const SimilarityProfile> profiles, double epsilon, double gamma,
                     std::uint32_t cap);

/// Number of leading profile entries semap_a keeps for one class.
std::size_t adaptive_prefix_length(const SimilarityProfile& profile, double epsilon,
                                   double gamma, std::uint32_t cap);

std::vector<double> apply_mapping(const MappingTable& table, std::span<const double> logits);
std::vector<double> apply_mapping(const MappingTable& table, std::span<const float> logits);

/// Adjoint of apply_mapping: scatters an m-vector back onto the n outputs.
std::vector<double> scatter_mapping_grad(const MappingTable& table,
                                         std::span<const double> upstream);

} // namespace semap
