// SPDX-License-Identifier: Apache-2.0
#include "cmega/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace cmega {

namespace {

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels,
                  const char* who) {
    detail::require(scores.size() == labels.size(),
                    std::string(who) + ": scores and labels differ in length");
    for (double s : scores)
        detail::require(!std::isnan(s), std::string(who) + ": NaN score");
}

std::vector<std::size_t> sorted_order(std::span<const double> scores, bool descending) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (descending)
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    else
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_inputs(scores, labels, "auroc");
    const auto n_pos = static_cast<double>(std::count_if(labels.begin(), labels.end(),
                                                         [](auto v) { return v != 0; }));
    const double n_neg = static_cast<double>(labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("AUROC undefined: need both positive and negative samples");

    // Sum of mid-ranks of the positives (Mann-Whitney U).
    const auto idx = sorted_order(scores, false);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        std::size_t pos_in_block = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            pos_in_block += labels[idx[j]] != 0;
            ++j;
        }
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        rank_sum += mid_rank * static_cast<double>(pos_in_block);
        i = j;
    }
    const double u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_inputs(scores, labels, "average_precision");
    const auto n_pos = static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](auto v) { return v != 0; }));
    if (n_pos == 0) throw UndefinedMetricError("average precision undefined: no positive samples");

    const auto idx = sorted_order(scores, true);
    std::size_t tp = 0;
    std::size_t seen = 0;
    std::size_t tp_prev = 0;
    double ap = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            tp += labels[idx[j]] != 0;
            ++j;
        }
        seen = j;
        if (tp != tp_prev) {
            const double recall_step =
                static_cast<double>(tp - tp_prev) / static_cast<double>(n_pos);
            ap += recall_step * static_cast<double>(tp) / static_cast<double>(seen);
            tp_prev = tp;
        }
        i = j;
    }
    return ap;
}

ClassEval class_eval(const std::string& class_id, std::span<const ImageResult> results) {
    ClassEval out;
    out.class_id = class_id;
    std::vector<double> image_scores;
    std::vector<std::uint8_t> image_labels;
    std::size_t n_pixels = 0;
    for (const auto& r : results) {
        detail::require(r.pixel_probs.rows() == r.mask.height && r.pixel_probs.cols() == r.mask.width,
                        "class_eval: pixel map and mask dims differ for class " + class_id);
        image_scores.push_back(r.score);
        image_labels.push_back(r.label == Label::anomalous ? 1 : 0);
        (r.label == Label::anomalous ? out.n_test_anomalous : out.n_test_normal)++;
        n_pixels += r.mask.values.size();
    }
    std::vector<double> pixel_scores;
    std::vector<std::uint8_t> pixel_labels;
    pixel_scores.reserve(n_pixels);
    pixel_labels.reserve(n_pixels);
    for (const auto& r : results) {
        pixel_scores.insert(pixel_scores.end(), r.pixel_probs.data().begin(),
                            r.pixel_probs.data().end());
        pixel_labels.insert(pixel_labels.end(), r.mask.values.begin(), r.mask.values.end());
    }
    try {
        out.image_auroc = auroc(image_scores, image_labels);
        out.pixel_ap = average_precision(pixel_scores, pixel_labels);
    } catch (const UndefinedMetricError& e) {
        throw UndefinedMetricError("class " + class_id + ": " + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

std::string_view to_string(ReportTag tag) { return tag == ReportTag::seen ? "seen" : "zero_shot"; }

ReportTag report_tag_from_string(std::string_view s) {
    if (s == "seen") return ReportTag::seen;
    if (s == "zero_shot") return ReportTag::zero_shot;
    throw DataError("unknown report tag \"" + std::string(s) + "\"");
}

std::string_view to_string(FmBaseline b) {
    return b == FmBaseline::after_task ? "after_task" : "best_so_far";
}

FmBaseline fm_baseline_from_string(std::string_view s) {
    if (s == "after_task") return FmBaseline::after_task;
    if (s == "best_so_far") return FmBaseline::best_so_far;
    throw ConfigError("unknown fm baseline \"" + std::string(s) + "\" (after_task|best_so_far)");
}

const ClassEval* MetricReport::find(std::string_view class_id) const {
    for (const auto& c : classes)
        if (c.class_id == class_id) return &c;
    return nullptr;
}

void MetricReport::aggregate() {
    acc_image = acc_pixel = 0.0;
    if (!classes.empty()) {
        for (const auto& c : classes) {
            acc_image += c.image_auroc;
            acc_pixel += c.pixel_ap;
        }
        acc_image /= static_cast<double>(classes.size());
        acc_pixel /= static_cast<double>(classes.size());
    }
    acc_avg = 0.5 * (acc_image + acc_pixel);
}

Forgetting forgetting_measure(std::span<const MetricReport> history, FmBaseline baseline) {
    Forgetting fm;
    if (history.size() < 2) return fm;
    const std::size_t last = history.size() - 1;
    const MetricReport& final_report = history[last];

    // First checkpoint at which each class was evaluated, in order of appearance.
    std::vector<std::pair<std::string, std::size_t>> introduced;
    std::map<std::string, std::size_t> first_seen;
    for (std::size_t k = 0; k < last; ++k)
        for (const auto& c : history[k].classes)
            if (first_seen.emplace(c.class_id, k).second) introduced.emplace_back(c.class_id, k);

    std::size_t count = 0;
    for (const auto& [class_id, t_c] : introduced) {
        const ClassEval* end = final_report.find(class_id);
        if (!end)
            throw DataError("forgetting: class " + class_id + " missing from final checkpoint");
        double ref_image = 0.0;
        double ref_pixel = 0.0;
        double ref_avg = 0.0;
        if (baseline == FmBaseline::after_task) {
            const ClassEval& ref = *history[t_c].find(class_id);
            ref_image = ref.image_auroc;
            ref_pixel = ref.pixel_ap;
            ref_avg = ref.average();
        } else {
            ref_image = ref_pixel = ref_avg = -1.0;
            for (std::size_t k = t_c; k < last; ++k) {
                const ClassEval* c = history[k].find(class_id);
                if (!c)
                    throw DataError("forgetting: class " + class_id + " missing from checkpoint " +
                                    std::to_string(history[k].checkpoint_id));
                ref_image = std::max(ref_image, c->image_auroc);
                ref_pixel = std::max(ref_pixel, c->pixel_ap);
                ref_avg = std::max(ref_avg, c->average());
            }
        }
        fm.image += ref_image - end->image_auroc;
        fm.pixel += ref_pixel - end->pixel_ap;
        fm.avg += ref_avg - end->average();
        ++count;
    }
    if (count == 0) return fm;
    fm.image /= static_cast<double>(count);
    fm.pixel /= static_cast<double>(count);
    fm.avg /= static_cast<double>(count);
    fm.defined = true;
    return fm;
}

}  // namespace cmega
