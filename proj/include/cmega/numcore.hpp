// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace cmega {

/// Dense row-major matrix of doubles.
///
/// Feature grids (G x d), adapter weights and score maps all live in this
/// type. Values read from interchange files are exactly representable as
/// 32-bit floats; arithmetic is carried out in 64 bits.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Mat identity(std::size_t n);
    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    Mat transposed() const;
    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    Mat& operator+=(const Mat& o);
    Mat& operator-=(const Mat& o);
    Mat& operator*=(double s);

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(double s, Mat a);

/// a * b with row-major, left-to-right accumulation.
Mat matmul(const Mat& a, const Mat& b);
/// a * b^T without materializing the transpose.
Mat matmul_bt(const Mat& a, const Mat& b);
/// a^T * b without materializing the transpose.
Mat matmul_at(const Mat& a, const Mat& b);

double frobenius_norm(const Mat& m);
double sum(const Mat& m);
double max_abs_diff(const Mat& a, const Mat& b);

/// Counter-based SplitMix64 stream.
///
/// Draw k returns mix(seed + k * golden_gamma). A uniform consumes one raw
/// output; a Gaussian consumes two (Box-Muller, cosine branch only).
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed = 0) : seed_(seed) {}

    /// Independent stream keyed by a label. Distinct labels give distinct
    /// seeds; the parent is not advanced.
    RandomStream derive(std::string_view label) const;
    RandomStream derive(std::uint64_t index) const;

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);
    double gaussian();

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

/// n i.i.d. draws from N(0, sigma^2).
std::vector<double> gaussian_of(RandomStream& stream, std::size_t n, double sigma);

/// Align-corners bilinear resampling to (out_h, out_w); out dims must be >= input dims.
Mat bilinear_upsample(const Mat& map, std::size_t out_h, std::size_t out_w);

/// Normalized 1-D Gaussian taps of radius ceil(3 * sigma_px).
std::vector<double> gaussian_kernel(double sigma_px);

/// Reflect-padding index (edge sample repeated: d c b a | a b c d | d c b a).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

/// Separable Gaussian blur with reflect padding; sigma_px == 0 returns the input.
Mat gaussian_blur(const Mat& map, double sigma_px);

}  // namespace cmega
