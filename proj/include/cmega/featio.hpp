// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmega/errors.hpp"
#include "cmega/numcore.hpp"

namespace cmega {

inline constexpr std::size_t kStageCount = 4;

enum class Label : std::uint8_t { normal = 0, anomalous = 1 };

std::string_view to_string(Label label);
Label label_from_string(std::string_view s);

/// One encoder stage: an H x W grid of d-dimensional cells stored as G x d.
struct StageGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    Mat features;

    std::size_t cells() const { return height * width; }
    std::size_t dim() const { return features.cols(); }
};

/// Binary pixel grid; values are 0 or 1.
struct PixelMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> values;

    PixelMask() = default;
    PixelMask(std::size_t h, std::size_t w) : height(h), width(w), values(h * w, 0) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    bool any() const;
    Mat as_mat() const;

    friend bool operator==(const PixelMask&, const PixelMask&) = default;
};

struct FeatureSample {
    std::string sample_id;
    std::string class_id;
    Label label = Label::normal;
    std::array<StageGrid, kStageCount> stages;
    std::optional<PixelMask> mask;

    /// Throws DataError when a structural invariant does not hold.
    void validate() const;
};

/// Unit-norm normal/anomaly text directions in the feature space.
struct TextBank {
    std::vector<double> normal_vec;
    std::vector<double> anomaly_vec;
    std::vector<std::string> prompts;
    /// Set by the reader when a stored vector was not unit-norm and got rescaled.
    bool renormalized = false;

    std::size_t dim() const { return normal_vec.size(); }
};

enum class FormatErrorCode {
    io,
    bad_magic,
    bad_version,
    truncated,
    bad_stage_count,
    non_finite,
    bad_value,
    trailing_bytes,
};

/// Parse failure in one of the binary formats.
class FormatError : public DataError {
public:
    FormatError(FormatErrorCode code, const std::string& what) : DataError(what), code_(code) {}
    FormatErrorCode code() const { return code_; }

private:
    FormatErrorCode code_;
};

// Feature file "CMFG": magic | u32 version=1 | u8 label | u8 stage_count=4 |
// per stage (u32 H, u32 W, u32 d) | stage payloads, row-major f32.
inline constexpr std::size_t kFeatureHeaderBytes = 4 + 4 + 1 + 1 + kStageCount * 12;

void write_feature_file(const FeatureSample& sample, const std::filesystem::path& path);
/// sample_id and class_id are not stored in the file and come back empty.
FeatureSample read_feature_file(const std::filesystem::path& path);

// Mask file "CMSK": magic | u32 version=1 | u32 H | u32 W | u8 payload.
void write_mask_file(const PixelMask& mask, const std::filesystem::path& path);
PixelMask read_mask_file(const std::filesystem::path& path);

// Text bank "CMTX": magic | u32 version=1 | u32 d | f32 normal[d] | f32 anomaly[d] |
// u16 prompt count | per prompt (u32 byte length, UTF-8 bytes).
void write_text_bank(const TextBank& bank, const std::filesystem::path& path);
TextBank read_text_bank(const std::filesystem::path& path);

/// Any-pooling of a pixel mask onto an H x W grid. Cells partition each axis
/// evenly; leftover pixels belong to the last cell.
Mat pool_mask_to_grid(const PixelMask& mask, std::size_t grid_h, std::size_t grid_w);

// ---------------------------------------------------------------------------
// Manifest

struct SampleEntry {
    std::string sample_id;
    std::filesystem::path feature_path;
    std::optional<std::filesystem::path> mask_path;
    Label label = Label::normal;

    friend bool operator==(const SampleEntry&, const SampleEntry&) = default;
};

struct ClassEntry {
    std::string class_id;
    std::vector<SampleEntry> train_normals;
    std::vector<SampleEntry> train_anomalies;
    std::vector<SampleEntry> test_samples;

    friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

struct Manifest {
    std::string dataset_name;
    std::vector<ClassEntry> classes;
    /// Optional text bank shipped with the features.
    std::optional<std::filesystem::path> text_bank;
    /// Directory relative paths resolve against; not serialized.
    std::filesystem::path base_dir;

    const ClassEntry* find(std::string_view class_id) const;
    std::filesystem::path resolve(const std::filesystem::path& p) const;

    friend bool operator==(const Manifest& a, const Manifest& b) {
        return a.dataset_name == b.dataset_name && a.classes == b.classes &&
               a.text_bank == b.text_bank;
    }
};

/// Missing required fields in a JSON document.
class SchemaError : public DataError {
public:
    SchemaError(std::string context, std::vector<std::string> fields);
    const std::vector<std::string>& fields() const { return fields_; }

private:
    std::vector<std::string> fields_;
};

Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir);
std::string manifest_to_json(const Manifest& manifest);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Reads the feature file (and mask, if any) behind a manifest entry.
FeatureSample load_sample(const Manifest& manifest, const std::string& class_id,
                          const SampleEntry& entry);

}  // namespace cmega
