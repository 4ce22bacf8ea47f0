// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "cmega/featio.hpp"
#include "cmega/numcore.hpp"

namespace cmega {

/// Two-matrix linear bottleneck attached to one encoder stage.
///
/// Maps a G x d feature grid F to (w2 * (w1 * F^T))^T, i.e. F w1^T w2^T.
/// w1 is h x d (down projection), w2 is d x h (up projection).
struct Adapter {
    Mat w1;
    Mat w2;
    std::size_t stage = 1;  // 1-based

    std::size_t dim() const { return w1.cols(); }
    std::size_t hidden() const { return w1.rows(); }
    void check_shapes() const;

    friend bool operator==(const Adapter&, const Adapter&) = default;
};

/// Bottleneck width used for a stage of dimension d: d / 4, at least 1.
std::size_t default_hidden_width(std::size_t d);

struct AdapterSet {
    std::array<Adapter, kStageCount> adapters;
    /// 0 for the base set, n for the adapters trained on task n.
    std::size_t task = 0;

    const Adapter& operator[](std::size_t stage_index) const { return adapters[stage_index]; }
    Adapter& operator[](std::size_t stage_index) { return adapters[stage_index]; }
    bool shape_compatible(const AdapterSet& o) const;

    friend bool operator==(const AdapterSet&, const AdapterSet&) = default;
};

/// The base adapter set plus one set per completed task, in training order.
struct AdapterBank {
    std::optional<AdapterSet> base;
    std::vector<AdapterSet> tasks;

    /// Appends a finished task set; it must be shape-compatible with the base.
    void push_task(AdapterSet set);
    std::size_t size() const { return (base ? 1 : 0) + tasks.size(); }

    friend bool operator==(const AdapterBank&, const AdapterBank&) = default;
};

struct BlendConfig {
    double alpha = 0.9;  // residual weight on the raw features
    double beta = 1.0;   // synthetic noise scale, relative to the feature std
};

Mat adapter_forward(const Adapter& a, const Mat& features);

/// alpha * F + (1 - alpha) * AF.
Mat residual_blend(const Mat& features, const Mat& adapted, double alpha);

/// Noise for the synthetic branch: i.i.d. N(0, (beta * std(F))^2) over the
/// whole G x d grid, std taken over all entries of F. Returns zeros (and
/// draws nothing) when beta or std(F) is zero.
Mat draw_synthetic_noise(const Mat& features, RandomStream& stream, double beta);

/// A(F + gamma) for a fixed noise grid.
Mat synthesize_with_noise(const Adapter& a, const Mat& features, const Mat& noise);

/// A(F + gamma) with gamma drawn by draw_synthetic_noise.
Mat synthesize_anomaly(const Adapter& a, const Mat& features, RandomStream& stream, double beta);

/// Elementwise mean of base and task weights, per stage, summed base first
/// then tasks in order. With no task sets the base is returned verbatim.
AdapterSet average_bank(const AdapterBank& bank);

/// w1 ~ U(+-1/sqrt(d)), w2 ~ U(+-1e-3/sqrt(h)).
Adapter init_adapter(std::size_t d, std::size_t h, std::size_t stage, RandomStream& stream);

/// Fresh set for the given stage dimensions with h = default_hidden_width(d).
AdapterSet init_adapter_set(const std::array<std::size_t, kStageCount>& dims,
                            RandomStream& stream, std::size_t task = 0);

// Bank checkpoint "CMAB": magic | u32 version=1 | per stage (u32 d, u32 h) |
// u32 N (task sets) | sets base first then tasks 1..N, each stage 1..4 as
// w1 (h x d) then w2 (d x h), row-major f32.
void write_bank(const AdapterBank& bank, const std::filesystem::path& path);
AdapterBank read_bank(const std::filesystem::path& path);

}  // namespace cmega
