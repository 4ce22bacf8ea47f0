// SPDX-License-Identifier: Apache-2.0
// JSON config parsing for scenarios, training, evaluation and the generator.
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "cmega/harness.hpp"

namespace cmega {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Reads fields from one config object and rejects keys it never asked for.
class Fields {
public:
    Fields(std::string_view text, std::string context) : context_(std::move(context)) {
        try {
            doc_ = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(context_ + ": invalid JSON: " + e.what());
        }
        if (!doc_.is_object()) throw ConfigError(context_ + ": root must be an object");
    }

    template <class T>
    void opt(const char* key, T& out) {
        known_.insert(key);
        if (!doc_.contains(key)) return;
        try {
            out = doc_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(context_ + ": field \"" + key + "\" has the wrong type");
        }
    }

    template <class T>
    void req(const char* key, T& out) {
        if (!doc_.contains(key)) missing_.push_back(key);
        opt(key, out);
    }

    void finish() {
        if (!missing_.empty()) {
            std::string list;
            for (const auto& m : missing_) list += (list.empty() ? "" : ", ") + m;
            throw ConfigError(context_ + ": missing required field(s): " + list);
        }
        for (const auto& [k, v] : doc_.items())
            if (!known_.count(k)) throw ConfigError(context_ + ": unknown field \"" + k + "\"");
    }

private:
    json doc_;
    std::string context_;
    std::set<std::string> known_;
    std::vector<std::string> missing_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

ScenarioSpec parse_scenario(std::string_view json_text, const fs::path& base_dir) {
    Fields f(json_text, "scenario");
    ScenarioSpec s;
    std::vector<std::string> manifests;
    std::string text_bank;
    f.opt("name", s.name);
    f.req("base_classes", s.base_classes);
    f.opt("tasks", s.tasks);
    f.opt("shots_normal", s.shots_normal);
    f.opt("shots_anomalous", s.shots_anomalous);
    f.opt("zero_shot_holdout", s.zero_shot_holdout);
    f.opt("seed", s.seed);
    f.req("manifests", manifests);
    f.opt("text_bank", text_bank);
    f.finish();
    for (const auto& m : manifests) s.manifests.push_back(resolve(base_dir, m));
    if (!text_bank.empty()) s.text_bank = resolve(base_dir, text_bank);
    s.validate();
    return s;
}

ScenarioSpec load_scenario(const fs::path& path) {
    return parse_scenario(read_text_file(path), path.parent_path());
}

TrainConfig parse_train_config(std::string_view json_text) {
    Fields f(json_text, "train config");
    TrainConfig c;
    f.opt("epochs_base", c.epochs_base);
    f.opt("epochs_task", c.epochs_task);
    f.opt("lr", c.lr);
    f.opt("adam_beta1", c.adam_beta1);
    f.opt("adam_beta2", c.adam_beta2);
    f.opt("adam_eps", c.adam_eps);
    f.opt("focal_gamma", c.focal_gamma);
    f.opt("focal_alpha", c.focal_alpha);
    f.opt("dice_eps", c.dice_eps);
    f.opt("alpha", c.blend.alpha);
    f.opt("beta", c.blend.beta);
    f.opt("tau", c.tau);
    f.finish();
    c.validate();
    return c;
}

EvalConfig parse_eval_config(std::string_view json_text) {
    Fields f(json_text, "score config");
    EvalConfig c;
    std::string baseline(to_string(c.fm_baseline));
    f.opt("tau", c.score.tau);
    f.opt("smooth_sigma_px", c.score.smooth_sigma_px);
    f.opt("top_k", c.score.top_k);
    f.opt("fm_baseline", baseline);
    f.finish();
    c.fm_baseline = fm_baseline_from_string(baseline);
    if (!(c.score.tau > 0.0)) throw ConfigError("score config: tau must be positive");
    if (!(c.score.smooth_sigma_px >= 0.0))
        throw ConfigError("score config: smooth_sigma_px must be >= 0");
    if (c.score.top_k < 1) throw ConfigError("score config: top_k must be >= 1");
    return c;
}

SynthSpec parse_synth_spec(std::string_view json_text) {
    Fields f(json_text, "synth spec");
    SynthSpec s;
    f.opt("dataset_name", s.dataset_name);
    f.opt("class_prefix", s.class_prefix);
    f.opt("n_classes", s.n_classes);
    f.opt("grid_h", s.grid_h);
    f.opt("grid_w", s.grid_w);
    f.opt("dim", s.dim);
    f.opt("mask_scale", s.mask_scale);
    f.opt("train_normal", s.train_normal);
    f.opt("train_anomalous", s.train_anomalous);
    f.opt("test_normal", s.test_normal);
    f.opt("test_anomalous", s.test_anomalous);
    f.opt("area_min", s.area_min);
    f.opt("area_max", s.area_max);
    f.opt("margin", s.margin);
    f.opt("cell_noise", s.cell_noise);
    f.opt("normal_strength", s.normal_strength);
    f.opt("class_offset", s.class_offset);
    f.opt("seed", s.seed);
    f.finish();
    s.validate();
    return s;
}

}  // namespace cmega
