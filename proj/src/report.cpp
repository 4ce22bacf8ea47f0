// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cmega/harness.hpp"

namespace cmega {

namespace fs = std::filesystem;
using json = nlohmann::json;

ReportFormat report_format_from_string(std::string_view s) {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    throw ConfigError("unknown report format \"" + std::string(s) + "\" (json|csv)");
}

std::vector<MetricReport> all_reports(const RunState& run) {
    std::vector<MetricReport> out = run.reports;
    out.insert(out.end(), run.zero_shot.begin(), run.zero_shot.end());
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json report_to_json(const MetricReport& r) {
    json j;
    j["checkpoint"] = r.checkpoint_id;
    j["tag"] = std::string(to_string(r.tag));
    j["acc"] = {{"image", r.acc_image}, {"pixel", r.acc_pixel}, {"avg", r.acc_avg}};
    j["fm"] = {{"image", r.fm_image}, {"pixel", r.fm_pixel}, {"avg", r.fm_avg},
               {"defined", r.fm_defined}};
    j["classes"] = json::array();
    for (const auto& c : r.classes)
        j["classes"].push_back({{"class_id", c.class_id},
                                {"image_auroc", c.image_auroc},
                                {"pixel_ap", c.pixel_ap},
                                {"avg", c.average()},
                                {"n_test_normal", c.n_test_normal},
                                {"n_test_anomalous", c.n_test_anomalous}});
    return j;
}

MetricReport report_from_json(const json& j) {
    MetricReport r;
    r.checkpoint_id = j.at("checkpoint").get<std::size_t>();
    r.tag = report_tag_from_string(j.at("tag").get<std::string>());
    r.acc_image = j.at("acc").at("image").get<double>();
    r.acc_pixel = j.at("acc").at("pixel").get<double>();
    r.acc_avg = j.at("acc").at("avg").get<double>();
    r.fm_image = j.at("fm").at("image").get<double>();
    r.fm_pixel = j.at("fm").at("pixel").get<double>();
    r.fm_avg = j.at("fm").at("avg").get<double>();
    r.fm_defined = j.at("fm").at("defined").get<bool>();
    for (const auto& c : j.at("classes"))
        r.classes.push_back({c.at("class_id").get<std::string>(), c.at("image_auroc").get<double>(),
                             c.at("pixel_ap").get<double>(), c.at("n_test_normal").get<std::size_t>(),
                             c.at("n_test_anomalous").get<std::size_t>()});
    return r;
}

}  // namespace

std::string run_to_json(const RunState& run) {
    json j;
    j["scenario"] = run.scenario;
    j["completed_tasks"] = run.completed_tasks;
    j["checkpoints"] = json::array();
    for (const auto& r : run.reports) j["checkpoints"].push_back(report_to_json(r));
    j["zero_shot"] = json::array();
    for (const auto& r : run.zero_shot) j["zero_shot"].push_back(report_to_json(r));
    return j.dump(2) + "\n";
}

RunState run_from_json(std::string_view text) {
    RunState run;
    try {
        const json j = json::parse(text);
        run.scenario = j.at("scenario").get<std::string>();
        run.completed_tasks = j.at("completed_tasks").get<std::size_t>();
        for (const auto& r : j.at("checkpoints")) run.reports.push_back(report_from_json(r));
        for (const auto& r : j.at("zero_shot")) run.zero_shot.push_back(report_from_json(r));
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed run.json: ") + e.what());
    }
    if (run.reports.size() != run.completed_tasks + 1)
        throw DataError("run.json: checkpoint count does not match completed tasks");
    return run;
}

std::string reports_to_json(const std::string& scenario, const std::vector<MetricReport>& reports) {
    json j;
    j["scenario"] = scenario;
    j["reports"] = json::array();
    for (const auto& r : reports) j["reports"].push_back(report_to_json(r));
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text, std::size_t columns,
                                                const char* what) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != columns)
            throw DataError(std::string(what) + ": expected " + std::to_string(columns) +
                            " columns, got " + std::to_string(cells.size()));
        if (header) {
            header = false;
            continue;
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

double to_double(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("bad number in report csv: \"" + s + "\"");
    }
}

std::size_t to_count(const std::string& s) {
    try {
        return static_cast<std::size_t>(std::stoull(s));
    } catch (const std::exception&) {
        throw DataError("bad count in report csv: \"" + s + "\"");
    }
}

std::string pct(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
    return buf;
}

}  // namespace

std::string reports_to_metrics_csv(const std::vector<MetricReport>& reports) {
    std::string out = "checkpoint,tag,class_id,image_auroc,pixel_ap,avg,n_test_normal,n_test_anomalous\n";
    for (const auto& r : reports)
        for (const auto& c : r.classes)
            out += std::to_string(r.checkpoint_id) + "," + std::string(to_string(r.tag)) + "," +
                   c.class_id + "," + num(c.image_auroc) + "," + num(c.pixel_ap) + "," +
                   num(c.average()) + "," + std::to_string(c.n_test_normal) + "," +
                   std::to_string(c.n_test_anomalous) + "\n";
    return out;
}

std::string reports_to_summary_csv(const std::vector<MetricReport>& reports) {
    std::string out = "checkpoint,tag,acc_image,acc_pixel,acc_avg,fm_image,fm_pixel,fm_avg,fm_defined\n";
    for (const auto& r : reports)
        out += std::to_string(r.checkpoint_id) + "," + std::string(to_string(r.tag)) + "," +
               num(r.acc_image) + "," + num(r.acc_pixel) + "," + num(r.acc_avg) + "," +
               num(r.fm_image) + "," + num(r.fm_pixel) + "," + num(r.fm_avg) + "," +
               (r.fm_defined ? "1" : "0") + "\n";
    return out;
}

std::vector<MetricReport> reports_from_csv(std::string_view metrics_csv,
                                           std::string_view summary_csv) {
    std::vector<MetricReport> reports;
    std::map<std::pair<std::size_t, std::string>, std::size_t> index;
    for (const auto& row : parse_csv(summary_csv, 9, "summary.csv")) {
        MetricReport r;
        r.checkpoint_id = to_count(row[0]);
        r.tag = report_tag_from_string(row[1]);
        r.acc_image = to_double(row[2]);
        r.acc_pixel = to_double(row[3]);
        r.acc_avg = to_double(row[4]);
        r.fm_image = to_double(row[5]);
        r.fm_pixel = to_double(row[6]);
        r.fm_avg = to_double(row[7]);
        r.fm_defined = row[8] == "1";
        index[{r.checkpoint_id, row[1]}] = reports.size();
        reports.push_back(std::move(r));
    }
    for (const auto& row : parse_csv(metrics_csv, 8, "metrics.csv")) {
        const auto it = index.find({to_count(row[0]), row[1]});
        if (it == index.end())
            throw DataError("metrics.csv row for checkpoint " + row[0] + " has no summary row");
        reports[it->second].classes.push_back(
            {row[2], to_double(row[3]), to_double(row[4]), to_count(row[6]), to_count(row[7])});
    }
    return reports;
}

std::string reports_to_table(const std::string& scenario, const std::vector<MetricReport>& reports) {
    std::ostringstream out;
    out << "scenario: " << scenario << "\n";
    out << "checkpoint  tag        ACC (Image/Pixel/Avg)  FM (Image/Pixel/Avg)\n";
    for (const auto& r : reports) {
        std::string acc = pct(r.acc_image) + "/" + pct(r.acc_pixel) + "/" + pct(r.acc_avg);
        std::string fm = r.fm_defined ? pct(r.fm_image) + "/" + pct(r.fm_pixel) + "/" + pct(r.fm_avg)
                                      : std::string("-/-/-");
        char line[160];
        std::snprintf(line, sizeof line, "%-10zu  %-9s  %-21s  %s\n", r.checkpoint_id,
                      std::string(to_string(r.tag)).c_str(), acc.c_str(), fm.c_str());
        out << line;
    }
    return out.str();
}

void write_reports(const std::string& scenario, const std::vector<MetricReport>& reports,
                   ReportFormat fmt, const fs::path& dir) {
    fs::create_directories(dir);
    auto put = [&](const char* name, const std::string& content) {
        std::ofstream out(dir / name, std::ios::trunc | std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir / name).string());
        out << content;
    };
    if (fmt == ReportFormat::json) {
        put("report.json", reports_to_json(scenario, reports));
    } else {
        put("metrics.csv", reports_to_metrics_csv(reports));
        put("summary.csv", reports_to_summary_csv(reports));
        put("table.txt", reports_to_table(scenario, reports));
    }
}

}  // namespace cmega
