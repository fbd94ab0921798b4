#include "semap/similarity.hpp"

#include "semap/embedding_io.hpp"
#include "semap/error.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace semap {

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_similarity: dimensions " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) throw InvalidInputError("cosine_similarity: zero-norm vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

void sort_profile_entries(std::vector<ProfileEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const ProfileEntry& x, const ProfileEntry& y) {
        if (x.similarity != y.similarity) return x.similarity > y.similarity;
        return x.pretrained_index < y.pretrained_index;
    });
}

std::vector<SimilarityProfile> build_profiles(const EmbeddingMatrix& downstream,
                                              const EmbeddingMatrix& pretrained, unsigned threads) {
    if (downstream.dim() != pretrained.dim()) {
        throw ShapeError("build_profiles: downstream dim " + std::to_string(downstream.dim()) +
                         " != pre-trained dim " + std::to_string(pretrained.dim()));
    }
    const std::size_t m = downstream.count();
    const std::size_t n = pretrained.count();
    // Reject zero-norm rows up front so worker threads never throw.
    auto check_rows = [](const EmbeddingMatrix& e, const char* which) {
        for (std::size_t r = 0; r < e.count(); ++r) {
            const auto row = e.rows.row(r);
            if (std::all_of(row.begin(), row.end(), [](float x) { return x == 0.0f; })) {
                throw InvalidInputError(std::string("build_profiles: zero-norm ") + which + " row " +
                                        std::to_string(r));
            }
        }
    };
    check_rows(downstream, "downstream");
    check_rows(pretrained, "pre-trained");

    std::vector<SimilarityProfile> out(m);

    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto& p = out[i];
            p.downstream_index = static_cast<std::uint32_t>(i);
            p.entries.resize(n);
            for (std::size_t j = 0; j < n; ++j) {
                p.entries[j] = {static_cast<std::uint32_t>(j),
                                cosine_similarity(downstream.rows.row(i), pretrained.rows.row(j))};
            }
            sort_profile_entries(p.entries);
        }
    };

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(m, 1));
    if (workers == 1) {
        work(0, m);
        return out;
    }
    {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (m + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(m, begin + chunk);
            if (begin < end) pool.emplace_back(work, begin, end);
        }
    }
    return out;
}

} // namespace semap
