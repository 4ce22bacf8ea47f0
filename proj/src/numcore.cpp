// SPDX-License-Identifier: Apache-2.0
#include "cmega/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cmega/errors.hpp"

namespace cmega {

using detail::require;

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, "Mat: data length does not match rows*cols");
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        require(row.size() == c, "Mat::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Mat(r, c, std::move(data));
}

Mat Mat::transposed() const {
    Mat t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

bool Mat::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mat& Mat::operator+=(const Mat& o) {
    require(same_shape(o), "Mat +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Mat& Mat::operator-=(const Mat& o) {
    require(same_shape(o), "Mat -=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Mat& Mat::operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(double s, Mat a) { return a *= s; }

Mat matmul(const Mat& a, const Mat& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                      " vs " + std::to_string(b.rows()) + ")");
    Mat out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

Mat matmul_bt(const Mat& a, const Mat& b) {
    require(a.cols() == b.cols(), "matmul_bt: inner dimensions differ");
    Mat out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ar = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const auto br = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
            out(i, j) = acc;
        }
    }
    return out;
}

Mat matmul_at(const Mat& a, const Mat& b) {
    require(a.rows() == b.rows(), "matmul_at: inner dimensions differ");
    Mat out(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) acc += a(k, i) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

double frobenius_norm(const Mat& m) {
    double acc = 0.0;
    for (double v : m.data()) acc += v * v;
    return std::sqrt(acc);
}

double sum(const Mat& m) {
    double acc = 0.0;
    for (double v : m.data()) acc += v;
    return acc;
}

double max_abs_diff(const Mat& a, const Mat& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

// ---------------------------------------------------------------------------
// RandomStream

namespace {

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

RandomStream RandomStream::derive(std::string_view label) const {
    return RandomStream(mix64(seed_ ^ mix64(fnv1a(label) + kGoldenGamma)));
}

RandomStream RandomStream::derive(std::uint64_t index) const {
    return derive("#" + std::to_string(index));
}

std::uint64_t RandomStream::next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * kGoldenGamma);
}

double RandomStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t RandomStream::below(std::size_t n) {
    require(n > 0, "RandomStream::below: n must be positive");
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

double RandomStream::gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> gaussian_of(RandomStream& stream, std::size_t n, double sigma) {
    require(sigma > 0.0 && std::isfinite(sigma), "gaussian_of: sigma must be positive");
    std::vector<double> out(n);
    for (auto& v : out) v = sigma * stream.gaussian();
    return out;
}

// ---------------------------------------------------------------------------
// Image-space operations

Mat bilinear_upsample(const Mat& map, std::size_t out_h, std::size_t out_w) {
    require(!map.empty(), "bilinear_upsample: empty map");
    require(out_h > 0 && out_w > 0, "bilinear_upsample: zero output dimension");
    require(out_h >= map.rows() && out_w >= map.cols(),
            "bilinear_upsample: output smaller than input");
    const std::size_t in_h = map.rows();
    const std::size_t in_w = map.cols();
    if (in_h == out_h && in_w == out_w) return map;

    auto axis = [](std::size_t out_i, std::size_t out_n, std::size_t in_n) {
        if (out_n == 1 || in_n == 1) return std::pair<std::size_t, double>{0, 0.0};
        const double pos = static_cast<double>(out_i) * static_cast<double>(in_n - 1) /
                           static_cast<double>(out_n - 1);
        auto lo = static_cast<std::size_t>(std::floor(pos));
        if (lo >= in_n - 1) lo = in_n - 2;
        return std::pair<std::size_t, double>{lo, pos - static_cast<double>(lo)};
    };

    Mat out(out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto [y0, fy] = axis(y, out_h, in_h);
        const std::size_t y1 = in_h == 1 ? 0 : y0 + 1;
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto [x0, fx] = axis(x, out_w, in_w);
            const std::size_t x1 = in_w == 1 ? 0 : x0 + 1;
            const double top = (1.0 - fx) * map(y0, x0) + fx * map(y0, x1);
            const double bot = (1.0 - fx) * map(y1, x0) + fx * map(y1, x1);
            out(y, x) = (1.0 - fy) * top + fy * bot;
        }
    }
    return out;
}

std::vector<double> gaussian_kernel(double sigma_px) {
    require(sigma_px >= 0.0 && std::isfinite(sigma_px), "gaussian_kernel: sigma must be >= 0");
    if (sigma_px == 0.0) return {1.0};
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma_px));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma_px * sigma_px));
        taps[static_cast<std::size_t>(k + radius)] = v;
        total += v;
    }
    for (auto& t : taps) t /= total;
    return taps;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    const auto period = static_cast<std::ptrdiff_t>(2 * n);
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<std::ptrdiff_t>(n)) m = period - 1 - m;
    return static_cast<std::size_t>(m);
}

Mat gaussian_blur(const Mat& map, double sigma_px) {
    const auto taps = gaussian_kernel(sigma_px);
    if (taps.size() == 1) return map;
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    const std::size_t h = map.rows();
    const std::size_t w = map.cols();

    Mat horiz(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k)
                acc += taps[static_cast<std::size_t>(k + radius)] *
                       map(y, reflect_index(static_cast<std::ptrdiff_t>(x) + k, w));
            horiz(y, x) = acc;
        }
    }
    Mat out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k)
                acc += taps[static_cast<std::size_t>(k + radius)] *
                       horiz(reflect_index(static_cast<std::ptrdiff_t>(y) + k, h), x);
            out(y, x) = acc;
        }
    }
    return out;
}

}  // namespace cmega
