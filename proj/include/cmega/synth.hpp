// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cmega/featio.hpp"

namespace cmega {

/// Desk-scale stand-in for encoder features.
///
/// Text directions are the first two basis vectors (normal = e0, anomaly =
/// e1). Every class has, per stage, a mean of normal_strength * e0 plus a
/// random class offset of norm class_offset in the remaining dimensions;
/// cells scatter around it with per-dimension std cell_noise. Anomalous
/// images carry one grid-aligned rectangle (area fraction drawn from
/// [area_min, area_max]) whose cells are shifted along e1 by
/// margin * cell_noise * sqrt(dim), i.e. margin times the RMS distance of a
/// cell from its class mean.
struct SynthSpec {
    std::string dataset_name = "synthetic";
    std::string class_prefix = "class";
    std::size_t n_classes = 10;
    std::size_t grid_h = 8;
    std::size_t grid_w = 8;
    std::size_t dim = 16;
    /// Pixel resolution of the written masks; a multiple of the grid.
    std::size_t mask_scale = 4;
    std::size_t train_normal = 10;
    std::size_t train_anomalous = 10;
    std::size_t test_normal = 15;
    std::size_t test_anomalous = 15;
    double area_min = 0.05;
    double area_max = 0.3;
    double margin = 2.0;
    double cell_noise = 0.1;
    double normal_strength = 1.0;
    double class_offset = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    std::string class_id(std::size_t index) const;
};

/// Writes features/, masks/, text_bank.cmtx and manifest.json under out_dir
/// and returns the manifest (base_dir = out_dir).
Manifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace cmega
