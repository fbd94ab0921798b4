#include "semap/numerics.hpp"

#include "semap/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace semap {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
}

template <typename T>
std::size_t argmax_impl(std::span<const T> v) noexcept {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

void require_finite(std::span<const double> v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw InvalidInputError(std::string(what) + ": non-finite value at index " +
                                    std::to_string(i));
        }
    }
}

} // namespace

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() noexcept {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
    // Rejection on the top of the range keeps the result unbiased.
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % bound);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (float x : data_) {
        if (!std::isfinite(x)) throw InvalidInputError("matrix entries must be finite");
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
            }
            out(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

std::vector<double> affine(const Matrix& weights, std::span<const float> bias,
                           std::span<const double> x) {
    if (weights.cols() != x.size() || weights.rows() != bias.size()) {
        throw ShapeError("affine: weights " + std::to_string(weights.rows()) + "x" +
                         std::to_string(weights.cols()) + ", input " + std::to_string(x.size()) +
                         ", bias " + std::to_string(bias.size()));
    }
    std::vector<double> y(weights.rows());
    for (std::size_t r = 0; r < weights.rows(); ++r) {
        const auto w = weights.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) acc += static_cast<double>(w[c]) * x[c];
        y[r] = acc + static_cast<double>(bias[r]);
    }
    return y;
}

std::vector<double> softmax(std::span<const double> v) {
    if (v.empty()) throw InvalidInputError("softmax: empty input");
    require_finite(v, "softmax");
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

CrossEntropy cross_entropy(std::span<const double> scores, std::size_t target) {
    if (target >= scores.size()) {
        throw IndexError("cross_entropy: target " + std::to_string(target) +
                         " out of range for " + std::to_string(scores.size()) + " scores");
    }
    require_finite(scores, "cross_entropy");
    const std::size_t top = argmax(scores);
    const double mx = scores[top];

    // log-sum-exp written as mx + log1p(sum of the non-max terms) so that a
    // dominant target logit yields a loss that is small but not rounded to 0.
    std::vector<double> ex(scores.size());
    double rest = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        ex[i] = std::exp(scores[i] - mx);
        if (i != top) rest += ex[i];
    }
    const double lse = std::log1p(rest);
    const double total = 1.0 + rest;

    CrossEntropy out;
    out.loss = lse - (scores[target] - mx);
    out.grad_scores.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out.grad_scores[i] = ex[i] / total;
    out.grad_scores[target] -= 1.0;
    return out;
}

std::size_t argmax(std::span<const double> v) noexcept { return argmax_impl(v); }
std::size_t argmax(std::span<const float> v) noexcept { return argmax_impl(v); }

} // namespace semap
