// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmega/adapters.hpp"
#include "cmega/featio.hpp"
#include "cmega/metrics.hpp"
#include "cmega/scoring.hpp"
#include "cmega/synth.hpp"
#include "cmega/training.hpp"

namespace cmega {

/// Declarative continual stream: joint base training, then one adapter set
/// per task, then zero-shot evaluation of held-out classes.
struct ScenarioSpec {
    std::string name = "scenario";
    std::vector<std::string> base_classes;
    std::vector<std::vector<std::string>> tasks;
    std::size_t shots_normal = 10;
    std::size_t shots_anomalous = 10;
    std::vector<std::vector<std::string>> zero_shot_holdout;
    std::uint64_t seed = 0;
    std::vector<std::filesystem::path> manifests;
    /// Defaults to the text bank named by the first manifest.
    std::optional<std::filesystem::path> text_bank;

    /// Disjointness of base / tasks / holdout and uniform task size. Throws ConfigError.
    void validate() const;
    std::vector<std::string> trained_classes() const;
};

struct EvalConfig {
    ScoreConfig score;
    FmBaseline fm_baseline = FmBaseline::after_task;
};

// JSON config parsing; unknown keys and type errors raise ConfigError.
// Relative paths in a scenario resolve against base_dir.
ScenarioSpec parse_scenario(std::string_view json_text, const std::filesystem::path& base_dir);
ScenarioSpec load_scenario(const std::filesystem::path& path);
TrainConfig parse_train_config(std::string_view json_text);
EvalConfig parse_eval_config(std::string_view json_text);
SynthSpec parse_synth_spec(std::string_view json_text);
std::string read_text_file(const std::filesystem::path& path);

/// Classes from one or more manifests under one namespace of class ids.
class DataCatalog {
public:
    explicit DataCatalog(std::vector<Manifest> manifests);
    static DataCatalog load(const std::vector<std::filesystem::path>& paths);

    const Manifest& manifest_of(const std::string& class_id) const;
    const ClassEntry& entry(const std::string& class_id) const;
    bool contains(const std::string& class_id) const;
    const std::vector<Manifest>& manifests() const { return manifests_; }

private:
    std::vector<Manifest> manifests_;
};

/// Training samples for the given classes under the shot budget. Classes
/// with more samples than the budget are subsampled by a seeded shuffle;
/// fewer is a DataError.
std::vector<FeatureSample> load_training_set(const DataCatalog& catalog,
                                             const std::vector<std::string>& classes,
                                             std::size_t shots_normal,
                                             std::size_t shots_anomalous, RandomStream stream);

/// Scores every test sample of one class with the given adapters
/// (nullptr = raw features) and computes its ClassEval.
ClassEval evaluate_class(const DataCatalog& catalog, const std::string& class_id,
                         const AdapterSet* adapters, const TextBank& text,
                         const BlendConfig& blend, const ScoreConfig& score);

MetricReport evaluate_classes(const DataCatalog& catalog, const std::vector<std::string>& classes,
                              const AdapterSet* adapters, const TextBank& text,
                              const BlendConfig& blend, const ScoreConfig& score,
                              std::size_t checkpoint_id, ReportTag tag);

struct RunState {
    std::string scenario;
    AdapterBank bank;
    std::size_t completed_tasks = 0;
    /// One seen-class report per checkpoint; index 0 is the base checkpoint.
    std::vector<MetricReport> reports;
    /// One report per holdout group, evaluated with the final averaged adapters.
    std::vector<MetricReport> zero_shot;
    /// Loss log per phase; index 0 is base training.
    std::vector<std::vector<EpochLoss>> loss_logs;
};

/// Evaluates held-out classes with average_bank(bank). Overlap with
/// trained_classes raises ConfigError naming the class.
MetricReport evaluate_zero_shot(const AdapterBank& bank, const DataCatalog& catalog,
                                const std::vector<std::string>& holdout,
                                const std::vector<std::string>& trained_classes,
                                const TextBank& text, const BlendConfig& blend,
                                const ScoreConfig& score);

/// Optional hook run after each task set is trained and before it is frozen
/// into the bank. Used by fixtures that tamper with adapters.
using TaskHook = std::function<void(std::size_t task, AdapterSet&)>;

RunState run_scenario(const ScenarioSpec& spec, const TrainConfig& train, const EvalConfig& eval,
                      const TaskHook& hook = {});

/// Writes bank.cmab, loss logs, run.json and the json + csv reports.
void persist_run(const RunState& run, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { json, csv };
ReportFormat report_format_from_string(std::string_view s);

/// run.json round trip.
std::string run_to_json(const RunState& run);
RunState run_from_json(std::string_view text);

/// report.json: checkpoints then zero-shot reports.
std::string reports_to_json(const std::string& scenario, const std::vector<MetricReport>& reports);

// metrics.csv columns (frozen):
//   checkpoint,tag,class_id,image_auroc,pixel_ap,avg,n_test_normal,n_test_anomalous
// summary.csv columns (frozen):
//   checkpoint,tag,acc_image,acc_pixel,acc_avg,fm_image,fm_pixel,fm_avg,fm_defined
std::string reports_to_metrics_csv(const std::vector<MetricReport>& reports);
std::string reports_to_summary_csv(const std::vector<MetricReport>& reports);
std::vector<MetricReport> reports_from_csv(std::string_view metrics_csv,
                                           std::string_view summary_csv);

/// Human-readable Image/Pixel/Avg table in percent.
std::string reports_to_table(const std::string& scenario, const std::vector<MetricReport>& reports);

/// All reports of a run in order: checkpoints, then zero-shot.
std::vector<MetricReport> all_reports(const RunState& run);

/// Writes report.json (json) or metrics.csv + summary.csv + table.txt (csv) into dir.
void write_reports(const std::string& scenario, const std::vector<MetricReport>& reports,
                   ReportFormat fmt, const std::filesystem::path& dir);

}  // namespace cmega
