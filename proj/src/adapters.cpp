// SPDX-License-Identifier: Apache-2.0
#include "cmega/adapters.hpp"

#include <cmath>
#include <string>

#include "binary_io.hpp"

namespace cmega {

using detail::require;

void Adapter::check_shapes() const {
    require(w1.rows() >= 1 && w1.cols() >= 1, "adapter: empty w1");
    require(w2.rows() == w1.cols() && w2.cols() == w1.rows(),
            "adapter: w2 must be d x h for w1 of shape h x d");
}

std::size_t default_hidden_width(std::size_t d) { return std::max<std::size_t>(1, d / 4); }

bool AdapterSet::shape_compatible(const AdapterSet& o) const {
    for (std::size_t l = 0; l < kStageCount; ++l)
        if (!adapters[l].w1.same_shape(o.adapters[l].w1) ||
            !adapters[l].w2.same_shape(o.adapters[l].w2))
            return false;
    return true;
}

void AdapterBank::push_task(AdapterSet set) {
    require(base.has_value(), "AdapterBank: base set must exist before task sets");
    require(base->shape_compatible(set), "AdapterBank: task set shapes differ from base");
    tasks.push_back(std::move(set));
}

Mat adapter_forward(const Adapter& a, const Mat& features) {
    require(features.cols() == a.dim(),
            "adapter_forward: feature dim " + std::to_string(features.cols()) +
                " != adapter dim " + std::to_string(a.dim()));
    // (w2 (w1 F^T))^T == (F w1^T) w2^T
    return matmul_bt(matmul_bt(features, a.w1), a.w2);
}

Mat residual_blend(const Mat& features, const Mat& adapted, double alpha) {
    require(features.same_shape(adapted), "residual_blend: shape mismatch");
    require(alpha >= 0.0 && alpha <= 1.0, "residual_blend: alpha outside [0, 1]");
    if (alpha == 1.0) return features;
    Mat out(features.rows(), features.cols());
    auto o = out.data();
    const auto f = features.data();
    const auto g = adapted.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * f[i] + (1.0 - alpha) * g[i];
    return out;
}

Mat draw_synthetic_noise(const Mat& features, RandomStream& stream, double beta) {
    require(beta >= 0.0 && std::isfinite(beta), "synthetic noise: beta must be >= 0");
    Mat noise(features.rows(), features.cols());
    if (beta == 0.0 || features.empty()) return noise;
    const double n = static_cast<double>(features.size());
    const double mean = sum(features) / n;
    double var = 0.0;
    for (double v : features.data()) var += (v - mean) * (v - mean);
    const double sigma = beta * std::sqrt(var / n);
    if (sigma == 0.0) return noise;
    const auto draws = gaussian_of(stream, features.size(), sigma);
    std::copy(draws.begin(), draws.end(), noise.data().begin());
    return noise;
}

Mat synthesize_with_noise(const Adapter& a, const Mat& features, const Mat& noise) {
    require(features.same_shape(noise), "synthesize: noise shape mismatch");
    return adapter_forward(a, features + noise);
}

Mat synthesize_anomaly(const Adapter& a, const Mat& features, RandomStream& stream, double beta) {
    return synthesize_with_noise(a, features, draw_synthetic_noise(features, stream, beta));
}

AdapterSet average_bank(const AdapterBank& bank) {
    require(bank.base.has_value(), "average_bank: bank has no base set");
    if (bank.tasks.empty()) return *bank.base;
    for (const auto& t : bank.tasks)
        require(bank.base->shape_compatible(t), "average_bank: inconsistent shapes");

    AdapterSet avg = *bank.base;
    avg.task = bank.tasks.size();
    const double scale = 1.0 / static_cast<double>(bank.tasks.size() + 1);
    for (std::size_t l = 0; l < kStageCount; ++l) {
        for (Mat Adapter::*w : {&Adapter::w1, &Adapter::w2}) {
            Mat& acc = avg[l].*w;
            for (const auto& t : bank.tasks) acc += t[l].*w;
            acc *= scale;
        }
    }
    return avg;
}

Adapter init_adapter(std::size_t d, std::size_t h, std::size_t stage, RandomStream& stream) {
    require(d >= 1 && h >= 1, "init_adapter: d and h must be >= 1");
    Adapter a;
    a.stage = stage;
    a.w1 = Mat(h, d);
    a.w2 = Mat(d, h);
    const double r1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double r2 = 1e-3 / std::sqrt(static_cast<double>(h));
    for (auto& v : a.w1.data()) v = stream.uniform(-r1, r1);
    for (auto& v : a.w2.data()) v = stream.uniform(-r2, r2);
    return a;
}

AdapterSet init_adapter_set(const std::array<std::size_t, kStageCount>& dims,
                            RandomStream& stream, std::size_t task) {
    AdapterSet set;
    set.task = task;
    for (std::size_t l = 0; l < kStageCount; ++l)
        set[l] = init_adapter(dims[l], default_hidden_width(dims[l]), l + 1, stream);
    return set;
}

// ---------------------------------------------------------------------------
// Checkpoint

void write_bank(const AdapterBank& bank, const std::filesystem::path& path) {
    require(bank.base.has_value(), "write_bank: bank has no base set");
    detail::ByteWriter w;
    w.magic("CMAB");
    w.u32(1);
    for (const auto& a : bank.base->adapters) {
        a.check_shapes();
        w.u32(static_cast<std::uint32_t>(a.dim()));
        w.u32(static_cast<std::uint32_t>(a.hidden()));
    }
    w.u32(static_cast<std::uint32_t>(bank.tasks.size()));
    auto put_set = [&](const AdapterSet& s) {
        require(bank.base->shape_compatible(s), "write_bank: inconsistent shapes");
        for (const auto& a : s.adapters) {
            for (double v : a.w1.data()) w.f32(v);
            for (double v : a.w2.data()) w.f32(v);
        }
    };
    put_set(*bank.base);
    for (const auto& t : bank.tasks) put_set(t);
    w.save(path);
}

AdapterBank read_bank(const std::filesystem::path& path) {
    auto r = detail::ByteReader::open(path);
    r.expect_magic("CMAB");
    r.expect_version(1);
    std::array<std::size_t, kStageCount> d{};
    std::array<std::size_t, kStageCount> h{};
    std::size_t per_set = 0;
    for (std::size_t l = 0; l < kStageCount; ++l) {
        d[l] = r.u32();
        h[l] = r.u32();
        if (d[l] == 0 || h[l] == 0) r.fail(FormatErrorCode::bad_value, "zero adapter extent");
        per_set += 2 * d[l] * h[l];
    }
    const std::size_t n_tasks = r.u32();
    if (r.remaining() / 4 / per_set < n_tasks + 1)
        r.fail(FormatErrorCode::truncated, "weight payload shorter than header declares");

    auto get_set = [&](std::size_t task) {
        AdapterSet s;
        s.task = task;
        for (std::size_t l = 0; l < kStageCount; ++l) {
            s[l].stage = l + 1;
            s[l].w1 = Mat(h[l], d[l]);
            s[l].w2 = Mat(d[l], h[l]);
            for (auto& v : s[l].w1.data()) v = r.f32();
            for (auto& v : s[l].w2.data()) v = r.f32();
        }
        return s;
    };
    AdapterBank bank;
    bank.base = get_set(0);
    for (std::size_t n = 1; n <= n_tasks; ++n) bank.tasks.push_back(get_set(n));
    r.expect_end();
    return bank;
}

}  // namespace cmega
