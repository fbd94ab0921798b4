#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace semap {

/// Deterministic PRNG: xoshiro256** whose 256-bit state is filled by four
/// successive SplitMix64 outputs of the seed. Identical seeds yield identical
/// sequences on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;

    /// Uniform double in [0, 1) built from the top 53 bits.
    double uniform() noexcept;
    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) noexcept;
    /// Standard normal via Box-Muller (one draw per call, the pair's second
    /// value is discarded so the stream position depends only on call count).
    double normal() noexcept;
    /// Unbiased integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept;

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
};

/// One step of SplitMix64. Exposed for deriving independent sub-seeds.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Row-major dense matrix with 32-bit storage. Products accumulate in 64-bit.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// y = W x + bias, accumulated left to right in 64-bit per output row.
std::vector<double> affine(const Matrix& weights, std::span<const float> bias,
                           std::span<const double> x);

/// Stable softmax (max subtraction).
std::vector<double> softmax(std::span<const double> v);

struct CrossEntropy {
    double loss = 0.0;
    std::vector<double> grad_scores;
};

/// loss = -log softmax(scores)[target]; grad = softmax(scores) - onehot(target).
CrossEntropy cross_entropy(std::span<const double> scores, std::size_t target);

/// Index of the largest value; ties resolve to the smallest index.
std::size_t argmax(std::span<const double> v) noexcept;
std::size_t argmax(std::span<const float> v) noexcept;

} // namespace semap
