// SPDX-License-Identifier: Apache-2.0
#include "cmega/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "binary_io.hpp"

namespace cmega {

using detail::require;

const std::array<std::string, 10> kNormalPrompts = {
    "This is an example of a normal object",
    "This is a typical appearance of the object",
    "This is what a normal object looks like",
    "A photo of a normal object",
    "This is not an anomaly",
    "This is an example of a standard object",
    "This is the standard appearance of the object",
    "This is what a standard object looks like",
    "A photo of a standard object",
    "This object meets standard characteristics",
};

const std::array<std::string, 10> kAnomalyPrompts = {
    "This is an example of an anomalous object",
    "This is not the typical appearance of the object",
    "This is what an anomaly looks like",
    "A photo of an anomalous object",
    "This is an example of an abnormal object",
    "This is an example of an abnormal object",
    "This is not the usual appearance of the object",
    "This is what an abnormal object looks like",
    "A photo of an abnormal object",
    "An abnormality detected in this object",
};

namespace {

double norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

std::vector<double> mean_direction(std::span<const std::string> prompts,
                                   const PromptEmbedder& embed, std::size_t& dim) {
    require(!prompts.empty(), "build_text_bank: prompt list is empty");
    std::vector<double> acc;
    for (const auto& p : prompts) {
        auto e = embed(p);
        if (dim == 0) dim = e.size();
        require(e.size() == dim && dim > 0, "build_text_bank: embedding dimensions differ");
        const double n = norm(e);
        require(n > 0.0, "build_text_bank: zero embedding for prompt \"" + p + "\"");
        if (acc.empty()) acc.assign(dim, 0.0);
        for (std::size_t i = 0; i < dim; ++i) acc[i] += e[i] / n;
    }
    for (auto& v : acc) v /= static_cast<double>(prompts.size());
    const double n = norm(acc);
    require(n > 1e-12, "build_text_bank: prompt embeddings cancel out; cannot normalize");
    for (auto& v : acc) v /= n;
    return acc;
}

}  // namespace

TextBank build_text_bank(std::span<const std::string> normal_prompts,
                         std::span<const std::string> anomaly_prompts,
                         const PromptEmbedder& embed) {
    std::size_t dim = 0;
    TextBank bank;
    bank.normal_vec = mean_direction(normal_prompts, embed, dim);
    bank.anomaly_vec = mean_direction(anomaly_prompts, embed, dim);
    bank.prompts.assign(normal_prompts.begin(), normal_prompts.end());
    bank.prompts.insert(bank.prompts.end(), anomaly_prompts.begin(), anomaly_prompts.end());
    return bank;
}

ScoreMap layer_score_map(const Mat& features, std::size_t grid_h, std::size_t grid_w,
                         const TextBank& text, double tau, std::size_t stage) {
    require(tau > 0.0, "layer_score_map: tau must be positive");
    require(features.rows() == grid_h * grid_w, "layer_score_map: grid does not match features");
    require(features.cols() == text.dim(), "layer_score_map: feature dim != text dim");
    const double nn = norm(text.normal_vec);
    const double na = norm(text.anomaly_vec);

    ScoreMap out{Mat(grid_h, grid_w), stage};
    for (std::size_t g = 0; g < features.rows(); ++g) {
        const auto f = features.row(g);
        const double nf = norm(f);
        if (nf == 0.0) {
            out.probs.data()[g] = 0.5;
            continue;
        }
        double dn = 0.0;
        double da = 0.0;
        for (std::size_t k = 0; k < f.size(); ++k) {
            dn += f[k] * text.normal_vec[k];
            da += f[k] * text.anomaly_vec[k];
        }
        const double z = (da / (nf * na) - dn / (nf * nn)) / tau;
        out.probs.data()[g] = 1.0 / (1.0 + std::exp(-z));
    }
    return out;
}

PixelMap fuse_layers(std::span<const ScoreMap> maps, std::size_t out_h, std::size_t out_w) {
    require(maps.size() == kStageCount, "fuse_layers: expected one map per stage");
    PixelMap out{Mat(out_h, out_w)};
    for (const auto& m : maps) {
        require(!m.probs.empty(), "fuse_layers: missing stage map");
        out.probs += bilinear_upsample(m.probs, out_h, out_w);
    }
    out.probs *= 1.0 / static_cast<double>(maps.size());
    return out;
}

double image_score(const PixelMap& map, double smooth_sigma_px, std::size_t top_k) {
    require(!map.probs.empty(), "image_score: empty map");
    require(top_k >= 1, "image_score: top_k must be >= 1");
    const Mat blurred = gaussian_blur(map.probs, smooth_sigma_px);
    std::vector<double> v(blurred.data().begin(), blurred.data().end());
    const std::size_t k = std::min(top_k, v.size());
    if (k == 1) return *std::max_element(v.begin(), v.end());
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(),
                      std::greater<>());
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += v[i];
    return acc / static_cast<double>(k);
}

SampleScores score_sample(const FeatureSample& sample, const AdapterSet* adapters,
                          const TextBank& text, const BlendConfig& blend,
                          const ScoreConfig& cfg, std::size_t out_h, std::size_t out_w) {
    SampleScores s;
    for (std::size_t l = 0; l < kStageCount; ++l) {
        const auto& stage = sample.stages[l];
        const Mat blended =
            adapters ? residual_blend(stage.features,
                                      adapter_forward((*adapters)[l], stage.features), blend.alpha)
                     : stage.features;
        s.stage_maps[l] = layer_score_map(blended, stage.height, stage.width, text, cfg.tau, l + 1);
    }
    s.pixel_map = fuse_layers(s.stage_maps, out_h, out_w);
    s.image_score = image_score(s.pixel_map, cfg.smooth_sigma_px, cfg.top_k);
    return s;
}

void write_pixel_map(const PixelMap& map, const std::filesystem::path& path) {
    require(!map.probs.empty(), "write_pixel_map: empty map");
    detail::ByteWriter w;
    w.magic("CMPM");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(map.probs.rows()));
    w.u32(static_cast<std::uint32_t>(map.probs.cols()));
    for (double v : map.probs.data()) w.f32(v);
    w.save(path);
}

PixelMap read_pixel_map(const std::filesystem::path& path) {
    auto r = detail::ByteReader::open(path);
    r.expect_magic("CMPM");
    r.expect_version(1);
    const std::size_t h = r.u32();
    const std::size_t w = r.u32();
    if (h == 0 || w == 0) r.fail(FormatErrorCode::bad_value, "zero map extent");
    if (r.remaining() / 4 / w < h) r.fail(FormatErrorCode::truncated, "map payload truncated");
    PixelMap m{Mat(h, w)};
    for (auto& v : m.probs.data()) v = r.f32();
    r.expect_end();
    return m;
}

}  // namespace cmega
