#include "semap/mapping.hpp"

#include "semap/embedding_io.hpp"
#include "semap/error.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace semap {

namespace {

// Validates a profile list and returns the shared pre-trained class count.
std::size_t checked_width(std::span<const SimilarityProfile> profiles) {
    if (profiles.empty()) throw InvalidInputError("no downstream classes");
    const std::size_t n = profiles[0].entries.size();
    if (n == 0) throw InvalidInputError("empty similarity profile");
    std::vector<char> seen(n);
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        const auto& p = profiles[i];
        if (p.downstream_index != i) {
            throw InvalidInputError("profile " + std::to_string(i) + " carries downstream index " +
                                    std::to_string(p.downstream_index));
        }
        if (p.entries.size() != n) throw InvalidInputError("profiles have differing lengths");
        std::fill(seen.begin(), seen.end(), 0);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& e = p.entries[j];
            if (e.pretrained_index >= n || seen[e.pretrained_index]) {
                throw InvalidInputError("profile " + std::to_string(i) + " is not a permutation of [0, n)");
            }
            seen[e.pretrained_index] = 1;
            if (j > 0 && e.similarity > p.entries[j - 1].similarity) {
                throw InvalidInputError("profile " + std::to_string(i) + " is not sorted");
            }
        }
    }
    return n;
}

MappingTable empty_table(Strategy s, std::size_t m, std::size_t n) {
    MappingTable t;
    t.strategy = s;
    t.m = m;
    t.n = n;
    t.assignments.resize(m);
    return t;
}

} // namespace

std::string_view to_string(Strategy s) noexcept {
    switch (s) {
    case Strategy::rm: return "rm";
    case Strategy::fm: return "fm";
    case Strategy::semap1: return "semap1";
    case Strategy::semap_k: return "semap_k";
    case Strategy::semap_a: return "semap_a";
    }
    return "?";
}

Strategy parse_strategy(std::string_view name) {
    if (name == "rm") return Strategy::rm;
    if (name == "fm") return Strategy::fm;
    if (name == "semap1") return Strategy::semap1;
    if (name == "semap_k" || name == "semap-k") return Strategy::semap_k;
    if (name == "semap_a" || name == "semap-a") return Strategy::semap_a;
    throw InvalidInputError("unknown strategy '" + std::string(name) + "'");
}

void MappingTable::validate() const {
    if (m == 0 || n == 0) throw InvalidInputError("mapping table needs m >= 1 and n >= 1");
    if (assignments.size() != m) {
        throw InvalidInputError("mapping table has " + std::to_string(assignments.size()) +
                                " class entries for m = " + std::to_string(m));
    }
    const bool one_to_one =
        strategy == Strategy::rm || strategy == Strategy::fm || strategy == Strategy::semap1;
    std::vector<char> used(n, 0);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& list = assignments[i];
        const std::string where = "class " + std::to_string(i);
        if (list.empty()) throw InvalidInputError(where + " has no indices");
        for (std::size_t a = 0; a < list.size(); ++a) {
            if (list[a] >= n) throw InvalidInputError(where + ": index " + std::to_string(list[a]) + " >= n");
            for (std::size_t b = 0; b < a; ++b) {
                if (list[a] == list[b]) throw InvalidInputError(where + ": duplicate index");
            }
        }
        if (one_to_one) {
            if (list.size() != 1) throw InvalidInputError(where + ": one-to-one strategy needs one index");
            if (used[list[0]]) throw InvalidInputError(where + ": index shared with another class");
            used[list[0]] = 1;
        }
        if (strategy == Strategy::semap_a && hyper.cap && list.size() > *hyper.cap) {
            throw InvalidInputError(where + ": more indices than cap");
        }
        if (strategy == Strategy::semap_k && hyper.k && list.size() != *hyper.k) {
            throw InvalidInputError(where + ": list length differs from k");
        }
    }
}

MappingTable rm_map(std::size_t m, std::size_t n) {
    if (m == 0 || n == 0) throw InvalidInputError("rm_map: m and n must be positive");
    if (m > n) {
        throw CapacityError("rm_map: " + std::to_string(m) + " downstream classes exceed " +
                            std::to_string(n) + " outputs");
    }
    auto t = empty_table(Strategy::rm, m, n);
    for (std::size_t i = 0; i < m; ++i) t.assignments[i] = {static_cast<std::uint32_t>(i)};
    return t;
}

MappingTable fm_map(const LogitBatch& batch, std::size_t m, std::size_t n) {
    if (m == 0 || n == 0) throw InvalidInputError("fm_map: m and n must be positive");
    if (batch.width != n) {
        throw ShapeError("fm_map: logits have width " + std::to_string(batch.width) + ", expected " +
                         std::to_string(n));
    }
    check_logit_labels(batch, m);
    if (m > n) {
        throw CapacityError("fm_map: " + std::to_string(m) + " downstream classes exceed " +
                            std::to_string(n) + " outputs");
    }

    std::vector<std::unordered_map<std::uint32_t, std::size_t>> counts(m);
    for (std::size_t r = 0; r < batch.count; ++r) {
        const auto top = static_cast<std::uint32_t>(argmax(batch.row(r)));
        ++counts[(*batch.labels)[r]][top];
    }

    auto t = empty_table(Strategy::fm, m, n);
    std::vector<char> taken(n, 0);
    for (std::size_t i = 0; i < m; ++i) {
        if (counts[i].empty()) {
            throw CoverageError("fm_map: downstream class " + std::to_string(i) + " has no examples");
        }
        std::vector<std::pair<std::uint32_t, std::size_t>> ranked(counts[i].begin(), counts[i].end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::optional<std::uint32_t> pick;
        for (const auto& [idx, cnt] : ranked) {
            if (!taken[idx]) {
                pick = idx;
                break;
            }
        }
        // Never-predicted indices all have frequency 0 and follow in index order.
        for (std::uint32_t j = 0; !pick && j < n; ++j) {
            if (!taken[j] && !counts[i].contains(j)) pick = j;
        }
        if (!pick) throw CapacityError("fm_map: no free pre-trained index left for class " + std::to_string(i));
        taken[*pick] = 1;
        t.assignments[i] = {*pick};
    }
    return t;
}

MappingTable semap1(std::span<const SimilarityProfile> profiles) {
    const std::size_t n = checked_width(profiles);
    const std::size_t m = profiles.size();
    if (m > n) {
        throw CapacityError("semap1: " + std::to_string(m) + " downstream classes exceed " +
                            std::to_string(n) + " pre-trained labels");
    }
    auto t = empty_table(Strategy::semap1, m, n);
    std::vector<char> taken(n, 0);
    for (std::size_t i = 0; i < m; ++i) {
        for (const auto& e : profiles[i].entries) {
            if (!taken[e.pretrained_index]) {
                taken[e.pretrained_index] = 1;
                t.assignments[i] = {e.pretrained_index};
                break;
            }
        }
    }
    return t;
}

MappingTable semap_k(std::span<const SimilarityProfile> profiles, std::size_t k) {
    const std::size_t n = checked_width(profiles);
    if (k < 1 || k > n) {
        throw InvalidInputError("semap_k: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }
    auto t = empty_table(Strategy::semap_k, profiles.size(), n);
    t.hyper.k = static_cast<std::uint32_t>(k);
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) t.assignments[i].push_back(profiles[i].entries[j].pretrained_index);
    }
    return t;
}

std::size_t adaptive_prefix_length(const SimilarityProfile& profile, double epsilon, double gamma,
                                   std::uint32_t cap) {
    const auto& e = profile.entries;
    std::size_t len = 1;
    // len is the 1-based position of the last included entry.
    while (len < cap && len < e.size()) {
        const double gap = e[len - 1].similarity - e[len].similarity;
        const double threshold = std::pow(gamma, static_cast<double>(len - 1)) * epsilon;
        if (!(gap < threshold)) break;
        ++len;
    }
    return len;
}

MappingTable semap_a(std::span<const SimilarityProfile> profiles, double epsilon, double gamma,
                     std::uint32_t cap) {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
        throw HyperparameterError("semap_a: epsilon must be finite and >= 0");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) throw HyperparameterError("semap_a: gamma must lie in (0, 1]");
    if (cap < 1) throw HyperparameterError("semap_a: cap must be >= 1");
    const std::size_t n = checked_width(profiles);

    auto t = empty_table(Strategy::semap_a, profiles.size(), n);
    t.hyper.epsilon = epsilon;
    t.hyper.gamma = gamma;
    t.hyper.cap = cap;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        const std::size_t k = adaptive_prefix_length(profiles[i], epsilon, gamma, cap);
        for (std::size_t j = 0; j < k; ++j) t.assignments[i].push_back(profiles[i].entries[j].pretrained_index);
    }
    return t;
}

namespace {

template <typename T>
std::vector<double> apply_impl(const MappingTable& table, std::span<const T> logits) {
    if (logits.size() != table.n) {
        throw ShapeError("apply_mapping: " + std::to_string(logits.size()) + " logits for n = " +
                         std::to_string(table.n));
    }
    std::vector<double> out(table.m, 0.0);
    for (std::size_t i = 0; i < table.m; ++i) {
        double acc = 0.0;
        for (auto j : table.assignments[i]) acc += static_cast<double>(logits[j]);
        out[i] = acc;
    }
    return out;
}

} // namespace

std::vector<double> apply_mapping(const MappingTable& table, std::span<const double> logits) {
    return apply_impl(table, logits);
}

std::vector<double> apply_mapping(const MappingTable& table, std::span<const float> logits) {
    return apply_impl(table, logits);
}

std::vector<double> scatter_mapping_grad(const MappingTable& table, std::span<const double> upstream) {
    if (upstream.size() != table.m) {
        throw ShapeError("scatter_mapping_grad: " + std::to_string(upstream.size()) +
                         " values for m = " + std::to_string(table.m));
    }
    std::vector<double> out(table.n, 0.0);
    for (std::size_t i = 0; i < table.m; ++i) {
        for (auto j : table.assignments[i]) out[j] += upstream[i];
    }
    return out;
}

} // namespace semap
