// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmega/featio.hpp"
#include "cmega/numcore.hpp"

namespace cmega {

/// Mann-Whitney AUROC, ties counted one half. Needs both labels present.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Step-interpolated average precision over descending unique thresholds;
/// tied scores form one threshold block. Needs at least one positive.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Model output for one test image.
struct ImageResult {
    Label label = Label::normal;
    double score = 0.0;
    Mat pixel_probs;  // H x W, same dims as mask
    PixelMask mask;
};

struct ClassEval {
    std::string class_id;
    double image_auroc = 0.0;
    double pixel_ap = 0.0;
    std::size_t n_test_normal = 0;
    std::size_t n_test_anomalous = 0;

    double average() const { return 0.5 * (image_auroc + pixel_ap); }
    friend bool operator==(const ClassEval&, const ClassEval&) = default;
};

/// Image AUROC over per-image scores; pixel AP over every pixel of every
/// image pooled into one ranking.
ClassEval class_eval(const std::string& class_id, std::span<const ImageResult> results);

enum class ReportTag { seen, zero_shot };
std::string_view to_string(ReportTag tag);
ReportTag report_tag_from_string(std::string_view s);

enum class FmBaseline { after_task, best_so_far };
std::string_view to_string(FmBaseline b);
FmBaseline fm_baseline_from_string(std::string_view s);

struct MetricReport {
    /// Index of the task after which this evaluation ran (0 = base).
    std::size_t checkpoint_id = 0;
    ReportTag tag = ReportTag::seen;
    std::vector<ClassEval> classes;
    double acc_image = 0.0;
    double acc_pixel = 0.0;
    double acc_avg = 0.0;
    double fm_image = 0.0;
    double fm_pixel = 0.0;
    double fm_avg = 0.0;
    /// False when no class had a later checkpoint to forget on.
    bool fm_defined = false;

    const ClassEval* find(std::string_view class_id) const;
    /// Recomputes the acc_* fields as unweighted means over classes.
    void aggregate();

    friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

struct Forgetting {
    double image = 0.0;
    double pixel = 0.0;
    double avg = 0.0;
    bool defined = false;
};

/// Mean drop from each class's reference checkpoint to the last one, over
/// classes first evaluated before the last checkpoint. Negative drops count.
Forgetting forgetting_measure(std::span<const MetricReport> history,
                              FmBaseline baseline = FmBaseline::after_task);

}  // namespace cmega
