// SPDX-License-Identifier: Apache-2.0
// Independent oracles and fixtures shared by the unit tests and the acceptance binary.
// Nothing here calls the library routine it is meant to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "cmega/adapters.hpp"
#include "cmega/featio.hpp"
#include "cmega/numcore.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("cmega_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Pair-counting AUROC: P(score_pos > score_neg) + 0.5 P(tie).
inline double auroc_pairs(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1.0;
                if (s[i] > s[j]) wins += 1.0;
                else if (s[i] == s[j]) wins += 0.5;
            }
    return wins / pairs;
}

/// AP by enumerating one PR point per distinct threshold:
/// sum over thresholds t (descending) of (R(t) - R(prev)) * Prec(t).
inline double ap_enumerate(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
    std::set<double, std::greater<>> thresholds(s.begin(), s.end());
    double positives = 0.0;
    for (auto v : y) positives += v;
    double ap = 0.0, prev_recall = 0.0;
    for (double t : thresholds) {
        double tp = 0.0, pred = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] >= t) {
                pred += 1.0;
                tp += y[i];
            }
        const double recall = tp / positives;
        ap += (recall - prev_recall) * (tp / pred);
        prev_recall = recall;
    }
    return ap;
}

/// Mirror of index i into [0, n) with the edge sample repeated.
inline std::size_t mirror(long i, long n) {
    const long period = 2 * n;
    long m = ((i % period) + period) % period;
    return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

/// Dense 2-D Gaussian blur from an outer-product kernel, built without the library kernel.
inline cmega::Mat blur_dense(const cmega::Mat& in, double sigma) {
    const long r = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> k1;
    double total = 0.0;
    for (long i = -r; i <= r; ++i) {
        k1.push_back(std::exp(-0.5 * double(i * i) / (sigma * sigma)));
        total += k1.back();
    }
    for (auto& v : k1) v /= total;
    const long h = static_cast<long>(in.rows()), w = static_cast<long>(in.cols());
    cmega::Mat out(in.rows(), in.cols());
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long dy = -r; dy <= r; ++dy)
                for (long dx = -r; dx <= r; ++dx)
                    acc += k1[dy + r] * k1[dx + r] * in(mirror(y + dy, h), mirror(x + dx, w));
            out(y, x) = acc;
        }
    return out;
}

inline double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Random f32-representable matrix with entries in [lo, hi).
inline cmega::Mat random_mat(cmega::RandomStream& rng, std::size_t r, std::size_t c, double lo = -1.0,
                             double hi = 1.0) {
    cmega::Mat m(r, c);
    for (auto& v : m.data()) v = f32(rng.uniform(lo, hi));
    return m;
}

inline std::vector<double> unit_vector(cmega::RandomStream& rng, std::size_t d) {
    std::vector<double> v(d);
    double n = 0.0;
    for (auto& x : v) {
        x = rng.gaussian();
        n += x * x;
    }
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

inline cmega::TextBank random_text_bank(cmega::RandomStream& rng, std::size_t d) {
    cmega::TextBank t;
    t.normal_vec = unit_vector(rng, d);
    t.anomaly_vec = unit_vector(rng, d);
    return t;
}

/// Sample with four equally shaped stages of random features.
inline cmega::FeatureSample random_sample(cmega::RandomStream& rng, std::size_t gh, std::size_t gw,
                                          std::size_t d, cmega::Label label) {
    cmega::FeatureSample s;
    s.sample_id = "s";
    s.class_id = "c";
    s.label = label;
    for (std::size_t l = 0; l < cmega::kStageCount; ++l) {
        s.stages[l].height = gh;
        s.stages[l].width = gw;
        s.stages[l].features = random_mat(rng, gh * gw, d);
    }
    if (label == cmega::Label::anomalous) {
        cmega::PixelMask m(gh, gw);
        for (auto& v : m.values) v = rng.uniform() < 0.4 ? 1 : 0;
        m.values[0] = 1;
        s.mask = m;
    }
    return s;
}

/// Adapter set with weights of comparable magnitude in both matrices.
inline cmega::AdapterSet random_set(cmega::RandomStream& rng, std::size_t d, std::size_t h,
                                    double scale = 0.5) {
    cmega::AdapterSet set;
    for (std::size_t l = 0; l < cmega::kStageCount; ++l) {
        set[l].stage = l + 1;
        set[l].w1 = random_mat(rng, h, d, -scale, scale);
        set[l].w2 = random_mat(rng, d, h, -scale, scale);
    }
    return set;
}

/// Naive triple loop, k innermost.
inline cmega::Mat matmul_oracle(const cmega::Mat& a, const cmega::Mat& b) {
    cmega::Mat c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

}  // namespace testsupport
