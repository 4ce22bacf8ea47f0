// SPDX-License-Identifier: Apache-2.0
#include "cmega/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <set>

namespace cmega {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// ScenarioSpec

void ScenarioSpec::validate() const {
    if (base_classes.empty()) throw ConfigError("scenario " + name + ": no base classes");
    if (manifests.empty()) throw ConfigError("scenario " + name + ": no manifests");
    if (shots_normal + shots_anomalous == 0)
        throw ConfigError("scenario " + name + ": shot budget is zero");

    std::map<std::string, std::string> owner;
    auto claim = [&](const std::string& cls, const std::string& where) {
        auto [it, fresh] = owner.emplace(cls, where);
        if (!fresh)
            throw ConfigError("scenario " + name + ": class \"" + cls + "\" appears in both " +
                              it->second + " and " + where);
    };
    for (const auto& c : base_classes) claim(c, "base");
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (tasks[t].empty())
            throw ConfigError("scenario " + name + ": task " + std::to_string(t + 1) + " is empty");
        if (tasks[t].size() != tasks.front().size())
            throw ConfigError("scenario " + name + ": task sizes differ (" +
                              std::to_string(tasks.front().size()) + " vs " +
                              std::to_string(tasks[t].size()) + ")");
        for (const auto& c : tasks[t]) claim(c, "task " + std::to_string(t + 1));
    }
    for (std::size_t h = 0; h < zero_shot_holdout.size(); ++h)
        for (const auto& c : zero_shot_holdout[h]) claim(c, "holdout " + std::to_string(h + 1));
}

std::vector<std::string> ScenarioSpec::trained_classes() const {
    std::vector<std::string> out = base_classes;
    for (const auto& t : tasks) out.insert(out.end(), t.begin(), t.end());
    return out;
}

// ---------------------------------------------------------------------------
// Catalog

DataCatalog::DataCatalog(std::vector<Manifest> manifests) : manifests_(std::move(manifests)) {
    std::set<std::string> ids;
    for (const auto& m : manifests_)
        for (const auto& c : m.classes)
            if (!ids.insert(c.class_id).second)
                throw DataError("class \"" + c.class_id + "\" defined by more than one manifest");
}

DataCatalog DataCatalog::load(const std::vector<fs::path>& paths) {
    std::vector<Manifest> manifests;
    for (const auto& p : paths) manifests.push_back(load_manifest(p));
    return DataCatalog(std::move(manifests));
}

bool DataCatalog::contains(const std::string& class_id) const {
    return std::any_of(manifests_.begin(), manifests_.end(),
                       [&](const Manifest& m) { return m.find(class_id) != nullptr; });
}

const Manifest& DataCatalog::manifest_of(const std::string& class_id) const {
    for (const auto& m : manifests_)
        if (m.find(class_id)) return m;
    throw DataError("class \"" + class_id + "\" is not in any manifest");
}

const ClassEntry& DataCatalog::entry(const std::string& class_id) const {
    return *manifest_of(class_id).find(class_id);
}

// ---------------------------------------------------------------------------
// Training data

std::vector<FeatureSample> load_training_set(const DataCatalog& catalog,
                                             const std::vector<std::string>& classes,
                                             std::size_t shots_normal,
                                             std::size_t shots_anomalous, RandomStream stream) {
    std::vector<FeatureSample> out;
    for (const auto& cls : classes) {
        const Manifest& m = catalog.manifest_of(cls);
        const ClassEntry& e = *m.find(cls);
        RandomStream rng = stream.derive(cls);
        auto take = [&](const std::vector<SampleEntry>& pool, std::size_t budget, const char* kind) {
            if (pool.size() < budget)
                throw DataError("class " + cls + ": " + std::to_string(pool.size()) + " " + kind +
                                " training samples, budget needs " + std::to_string(budget));
            std::vector<std::size_t> idx(pool.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            if (pool.size() > budget) {
                for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
                idx.resize(budget);
                std::sort(idx.begin(), idx.end());
            }
            for (std::size_t i : idx) out.push_back(load_sample(m, cls, pool[i]));
        };
        take(e.train_normals, shots_normal, "normal");
        take(e.train_anomalies, shots_anomalous, "anomalous");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

ClassEval evaluate_class(const DataCatalog& catalog, const std::string& class_id,
                         const AdapterSet* adapters, const TextBank& text,
                         const BlendConfig& blend, const ScoreConfig& score) {
    const Manifest& m = catalog.manifest_of(class_id);
    const ClassEntry& e = *m.find(class_id);

    std::vector<FeatureSample> samples;
    samples.reserve(e.test_samples.size());
    for (const auto& s : e.test_samples) samples.push_back(load_sample(m, class_id, s));

    // Normal samples without a mask are scored at the class's mask resolution.
    std::optional<std::pair<std::size_t, std::size_t>> ref_dims;
    for (const auto& s : samples)
        if (s.mask) {
            ref_dims = std::pair{s.mask->height, s.mask->width};
            break;
        }
    if (!ref_dims)
        throw DataError("class " + class_id + ": no test masks, pixel AP is undefined");

    std::vector<ImageResult> results;
    results.reserve(samples.size());
    for (auto& s : samples) {
        if (!s.mask) {
            if (s.label == Label::anomalous)
                throw DataError("sample " + s.sample_id + ": anomalous test sample has no mask");
            s.mask = PixelMask(ref_dims->first, ref_dims->second);
        }
        auto scored = score_sample(s, adapters, text, blend, score, s.mask->height, s.mask->width);
        results.push_back(
            {s.label, scored.image_score, std::move(scored.pixel_map.probs), std::move(*s.mask)});
    }
    return class_eval(class_id, results);
}

MetricReport evaluate_classes(const DataCatalog& catalog, const std::vector<std::string>& classes,
                              const AdapterSet* adapters, const TextBank& text,
                              const BlendConfig& blend, const ScoreConfig& score,
                              std::size_t checkpoint_id, ReportTag tag) {
    std::vector<std::future<ClassEval>> jobs;
    jobs.reserve(classes.size());
    for (const auto& cls : classes)
        jobs.push_back(std::async(std::launch::async | std::launch::deferred, [&, cls] {
            return evaluate_class(catalog, cls, adapters, text, blend, score);
        }));
    MetricReport report;
    report.checkpoint_id = checkpoint_id;
    report.tag = tag;
    for (auto& j : jobs) report.classes.push_back(j.get());
    report.aggregate();
    return report;
}

MetricReport evaluate_zero_shot(const AdapterBank& bank, const DataCatalog& catalog,
                                const std::vector<std::string>& holdout,
                                const std::vector<std::string>& trained_classes,
                                const TextBank& text, const BlendConfig& blend,
                                const ScoreConfig& score) {
    const std::set<std::string> trained(trained_classes.begin(), trained_classes.end());
    for (const auto& c : holdout)
        if (trained.count(c))
            throw ConfigError("zero-shot holdout class \"" + c + "\" was trained on");
    MetricReport report;
    report.checkpoint_id = bank.tasks.size();
    report.tag = ReportTag::zero_shot;
    if (holdout.empty()) return report;
    const AdapterSet avg = average_bank(bank);
    report = evaluate_classes(catalog, holdout, &avg, text, blend, score, bank.tasks.size(),
                              ReportTag::zero_shot);
    return report;
}

// ---------------------------------------------------------------------------
// Scenario

namespace {

void apply_forgetting(std::vector<MetricReport>& history, FmBaseline baseline) {
    const Forgetting fm = forgetting_measure(history, baseline);
    auto& r = history.back();
    r.fm_image = fm.image;
    r.fm_pixel = fm.pixel;
    r.fm_avg = fm.avg;
    r.fm_defined = fm.defined;
}

}  // namespace

RunState run_scenario(const ScenarioSpec& spec, const TrainConfig& train, const EvalConfig& eval,
                      const TaskHook& hook) {
    spec.validate();
    train.validate();
    const DataCatalog catalog = DataCatalog::load(spec.manifests);
    for (const auto& cls : spec.trained_classes())
        if (!catalog.contains(cls)) throw DataError("class \"" + cls + "\" is not in any manifest");
    for (const auto& group : spec.zero_shot_holdout)
        for (const auto& cls : group)
            if (!catalog.contains(cls))
                throw DataError("holdout class \"" + cls + "\" is not in any manifest");

    fs::path text_path;
    if (spec.text_bank) {
        text_path = *spec.text_bank;
    } else {
        const Manifest& first = catalog.manifests().front();
        if (!first.text_bank) throw ConfigError("scenario names no text bank and manifest has none");
        text_path = first.resolve(*first.text_bank);
    }
    const TextBank text = read_text_bank(text_path);

    const RandomStream root(spec.seed);
    const RandomStream budget = root.derive("budget");
    const BlendConfig& blend = train.blend;

    RunState run;
    run.scenario = spec.name;

    {
        const auto samples = load_training_set(catalog, spec.base_classes, spec.shots_normal,
                                               spec.shots_anomalous, budget);
        auto res = train_adapter_set(samples, text, train, train.epochs_base,
                                     root.derive("train/base"), 0);
        run.bank.base = std::move(res.set);
        run.loss_logs.push_back(std::move(res.log));
    }
    std::vector<std::string> seen = spec.base_classes;
    run.reports.push_back(evaluate_classes(catalog, seen, &*run.bank.base, text, blend, eval.score,
                                           0, ReportTag::seen));
    apply_forgetting(run.reports, eval.fm_baseline);

    for (std::size_t n = 1; n <= spec.tasks.size(); ++n) {
        const auto& classes = spec.tasks[n - 1];
        const auto samples = load_training_set(catalog, classes, spec.shots_normal,
                                               spec.shots_anomalous, budget);
        auto res = train_adapter_set(samples, text, train, train.epochs_task,
                                     root.derive("train/task/" + std::to_string(n)), n);
        if (hook) hook(n, res.set);
        run.bank.push_task(std::move(res.set));
        run.loss_logs.push_back(std::move(res.log));
        run.completed_tasks = n;

        seen.insert(seen.end(), classes.begin(), classes.end());
        const AdapterSet avg = average_bank(run.bank);
        run.reports.push_back(
            evaluate_classes(catalog, seen, &avg, text, blend, eval.score, n, ReportTag::seen));
        apply_forgetting(run.reports, eval.fm_baseline);
    }

    const auto trained = spec.trained_classes();
    for (const auto& group : spec.zero_shot_holdout)
        run.zero_shot.push_back(
            evaluate_zero_shot(run.bank, catalog, group, trained, text, blend, eval.score));
    return run;
}

void persist_run(const RunState& run, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    write_bank(run.bank, out_dir / "bank.cmab");
    for (std::size_t i = 0; i < run.loss_logs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "loss_task_%02u.csv", static_cast<unsigned>(i % 100));
        const std::string file = i == 0 ? "loss_base.csv" : name;
        write_loss_log(run.loss_logs[i], out_dir / file);
    }
    {
        std::ofstream out(out_dir / "run.json", std::ios::trunc);
        if (!out) throw DataError("cannot write " + (out_dir / "run.json").string());
        out << run_to_json(run);
    }
    const auto reports = all_reports(run);
    write_reports(run.scenario, reports, ReportFormat::json, out_dir);
    write_reports(run.scenario, reports, ReportFormat::csv, out_dir);
}

}  // namespace cmega
