// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cmega/adapters.hpp"
#include "cmega/featio.hpp"
#include "cmega/numcore.hpp"

namespace cmega {

/// Generic prompts used to build the normal/anomaly text directions.
extern const std::array<std::string, 10> kNormalPrompts;
extern const std::array<std::string, 10> kAnomalyPrompts;

/// Per-cell P(anomaly) on one stage grid (H x W).
struct ScoreMap {
    Mat probs;
    std::size_t stage = 1;
};

/// Fused P(anomaly) at evaluation-mask resolution.
struct PixelMap {
    Mat probs;
};

struct ScoreConfig {
    double tau = 0.07;
    double smooth_sigma_px = 4.0;
    /// Image score is the mean of the top_k blurred pixels.
    std::size_t top_k = 1;
};

using PromptEmbedder = std::function<std::vector<double>(const std::string&)>;

/// Mean of the L2-normalized prompt embeddings per class, renormalized.
TextBank build_text_bank(std::span<const std::string> normal_prompts,
                         std::span<const std::string> anomaly_prompts,
                         const PromptEmbedder& embed);

/// Two-way softmax over cosine similarities to the text directions.
/// Zero-norm cells score exactly 0.5.
ScoreMap layer_score_map(const Mat& features, std::size_t grid_h, std::size_t grid_w,
                         const TextBank& text, double tau, std::size_t stage = 1);

/// Bilinear-upsamples each stage map to (out_h, out_w) and averages.
PixelMap fuse_layers(std::span<const ScoreMap> maps, std::size_t out_h, std::size_t out_w);

/// Blur, then the max (top_k = 1) or the mean of the top_k entries.
double image_score(const PixelMap& map, double smooth_sigma_px, std::size_t top_k = 1);

/// Complete inference path for one sample: blend each stage with its adapter,
/// score against the text bank, fuse at (out_h, out_w).
struct SampleScores {
    std::array<ScoreMap, kStageCount> stage_maps;
    PixelMap pixel_map;
    double image_score = 0.0;
};

SampleScores score_sample(const FeatureSample& sample, const AdapterSet* adapters,
                          const TextBank& text, const BlendConfig& blend,
                          const ScoreConfig& cfg, std::size_t out_h, std::size_t out_w);

// Pixel map dump "CMPM": magic | u32 version=1 | u32 H | u32 W | f32 payload.
void write_pixel_map(const PixelMap& map, const std::filesystem::path& path);
PixelMap read_pixel_map(const std::filesystem::path& path);

}  // namespace cmega
