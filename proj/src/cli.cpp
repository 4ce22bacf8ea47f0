// SPDX-License-Identifier: Apache-2.0
#include "cmega/cli.hpp"

#include <iostream>

#include <CLI11.hpp>

#include "cmega/harness.hpp"

namespace cmega {

namespace fs = std::filesystem;

namespace {

int cmd_synth_gen(const fs::path& spec_path, const fs::path& out) {
    const SynthSpec spec = parse_synth_spec(read_text_file(spec_path));
    const Manifest m = synth_generate(spec, out);
    std::cout << "wrote " << m.classes.size() << " classes to " << out.string() << "\n";
    return 0;
}

int cmd_run(const fs::path& scenario_path, const std::string& train_path,
            const std::string& score_path, const fs::path& out, std::optional<std::uint64_t> seed) {
    ScenarioSpec spec = load_scenario(scenario_path);
    if (seed) spec.seed = *seed;
    const TrainConfig train =
        train_path.empty() ? TrainConfig{} : parse_train_config(read_text_file(train_path));
    const EvalConfig eval =
        score_path.empty() ? EvalConfig{} : parse_eval_config(read_text_file(score_path));
    const RunState run = run_scenario(spec, train, eval);
    persist_run(run, out);
    std::cout << reports_to_table(run.scenario, all_reports(run));
    return 0;
}

int cmd_eval(const fs::path& bank_path, const fs::path& manifest_path, const std::string& classes_arg,
             const std::string& text_bank_arg, const std::string& train_path,
             const std::string& score_path, const fs::path& out) {
    const TrainConfig train =
        train_path.empty() ? TrainConfig{} : parse_train_config(read_text_file(train_path));
    const EvalConfig eval =
        score_path.empty() ? EvalConfig{} : parse_eval_config(read_text_file(score_path));

    const DataCatalog catalog({load_manifest(manifest_path)});
    const Manifest& m = catalog.manifests().front();
    fs::path text_path;
    if (!text_bank_arg.empty())
        text_path = text_bank_arg;
    else if (m.text_bank)
        text_path = m.resolve(*m.text_bank);
    else
        throw ConfigError("no --text-bank given and the manifest names none");
    const TextBank text = read_text_bank(text_path);

    std::vector<std::string> classes;
    std::stringstream ss(classes_arg);
    for (std::string c; std::getline(ss, c, ',');)
        if (!c.empty()) classes.push_back(c);
    if (classes.empty())
        for (const auto& c : m.classes) classes.push_back(c.class_id);
    for (const auto& c : classes)
        if (!catalog.contains(c)) throw ConfigError("class \"" + c + "\" is not in the manifest");

    const AdapterBank bank = read_bank(bank_path);
    const AdapterSet avg = average_bank(bank);
    const MetricReport report = evaluate_classes(catalog, classes, &avg, text, train.blend,
                                                 eval.score, bank.tasks.size(), ReportTag::seen);
    const std::vector<MetricReport> reports{report};
    write_reports("eval", reports, ReportFormat::json, out);
    write_reports("eval", reports, ReportFormat::csv, out);
    std::cout << reports_to_table("eval", reports);
    return 0;
}

int cmd_report(const fs::path& run_dir, const std::string& fmt) {
    const ReportFormat format = report_format_from_string(fmt);
    const RunState run = run_from_json(read_text_file(run_dir / "run.json"));
    write_reports(run.scenario, all_reports(run), format, run_dir);
    std::cout << reports_to_table(run.scenario, all_reports(run));
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Continual anomaly detection with averaged stage adapters", "cmega"};
    app.require_subcommand(1);

    fs::path spec_path, out_dir;
    auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic feature dataset");
    synth->add_option("--spec", spec_path, "Generator spec (JSON)")->required();
    synth->add_option("--out", out_dir, "Output directory")->required();

    fs::path scenario_path;
    std::string train_path, score_path;
    std::uint64_t seed = 0;
    auto* run = app.add_subcommand("run", "Train and evaluate a continual scenario");
    run->add_option("--scenario", scenario_path, "Scenario spec (JSON)")->required();
    run->add_option("--train", train_path, "Training config (JSON)");
    run->add_option("--score", score_path, "Scoring config (JSON)");
    run->add_option("--out", out_dir, "Output directory")->required();
    auto* seed_opt = run->add_option("--seed", seed, "Override the scenario seed");

    fs::path bank_path, manifest_path;
    std::string classes, text_bank;
    auto* eval = app.add_subcommand("eval", "Evaluate an adapter bank checkpoint");
    eval->add_option("--bank", bank_path, "Adapter bank checkpoint")->required();
    eval->add_option("--manifest", manifest_path, "Manifest (JSON)")->required();
    eval->add_option("--classes", classes, "Comma-separated class ids (default: all)");
    eval->add_option("--text-bank", text_bank, "Text bank (default: from manifest)");
    eval->add_option("--train", train_path, "Training config supplying alpha");
    eval->add_option("--score", score_path, "Scoring config (JSON)");
    eval->add_option("--out", out_dir, "Output directory")->required();

    fs::path run_dir;
    std::string fmt;
    auto* report = app.add_subcommand("report", "Re-emit reports of a finished run");
    report->add_option("--run", run_dir, "Run directory")->required();
    report->add_option("--fmt", fmt, "csv or json")->required()->check(CLI::IsMember({"csv", "json"}));

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth_gen(spec_path, out_dir);
        if (*run)
            return cmd_run(scenario_path, train_path, score_path, out_dir,
                           *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt);
        if (*eval)
            return cmd_eval(bank_path, manifest_path, classes, text_bank, train_path, score_path,
                            out_dir);
        if (*report) return cmd_report(run_dir, fmt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UndefinedMetricError& e) {
        std::cerr << "undefined metric: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace cmega
