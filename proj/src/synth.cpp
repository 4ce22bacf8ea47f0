// SPDX-License-Identifier: Apache-2.0
#include "cmega/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cmega/scoring.hpp"

namespace cmega {

namespace fs = std::filesystem;

void SynthSpec::validate() const {
    if (n_classes == 0) throw ConfigError("synth spec: n_classes must be >= 1");
    if (grid_h == 0 || grid_w == 0) throw ConfigError("synth spec: grid must be nonempty");
    if (dim < 2) throw ConfigError("synth spec: dim must be >= 2 (two text directions)");
    if (mask_scale == 0) throw ConfigError("synth spec: mask_scale must be >= 1");
    if (!(area_min > 0.0 && area_min <= area_max && area_max <= 1.0))
        throw ConfigError("synth spec: need 0 < area_min <= area_max <= 1");
    if (!(margin >= 0.0)) throw ConfigError("synth spec: margin must be >= 0");
    if (!(cell_noise > 0.0)) throw ConfigError("synth spec: cell_noise must be positive");
    if (test_normal + test_anomalous == 0) throw ConfigError("synth spec: empty test split");
}

std::string SynthSpec::class_id(std::size_t index) const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02zu", index);
    return class_prefix + buf;
}

namespace {

struct Rect {
    std::size_t y0, x0, h, w;
    bool contains(std::size_t y, std::size_t x) const {
        return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w;
    }
};

Rect draw_rect(const SynthSpec& spec, RandomStream& rng) {
    const double cells = static_cast<double>(spec.grid_h * spec.grid_w);
    const double target = std::max(1.0, rng.uniform(spec.area_min, spec.area_max) * cells);
    const double aspect = rng.uniform(0.5, 2.0);
    auto h = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    h = std::clamp<std::size_t>(h, 1, spec.grid_h);
    auto w = static_cast<std::size_t>(std::lround(target / static_cast<double>(h)));
    w = std::clamp<std::size_t>(w, 1, spec.grid_w);
    const std::size_t y0 = rng.below(spec.grid_h - h + 1);
    const std::size_t x0 = rng.below(spec.grid_w - w + 1);
    return {y0, x0, h, w};
}

struct ClassModel {
    std::array<std::vector<double>, kStageCount> means;
};

ClassModel draw_class(const SynthSpec& spec, RandomStream& rng) {
    ClassModel m;
    for (auto& mean : m.means) {
        mean.assign(spec.dim, 0.0);
        mean[0] = spec.normal_strength;
        if (spec.dim > 2) {
            double n2 = 0.0;
            for (std::size_t k = 2; k < spec.dim; ++k) {
                mean[k] = rng.gaussian();
                n2 += mean[k] * mean[k];
            }
            const double scale = n2 > 0.0 ? spec.class_offset / std::sqrt(n2) : 0.0;
            for (std::size_t k = 2; k < spec.dim; ++k) mean[k] *= scale;
        }
    }
    return m;
}

FeatureSample draw_sample(const SynthSpec& spec, const ClassModel& model, Label label,
                          RandomStream& rng) {
    FeatureSample s;
    s.label = label;
    std::optional<Rect> rect;
    if (label == Label::anomalous) rect = draw_rect(spec, rng);
    const double shift = spec.margin * spec.cell_noise * std::sqrt(static_cast<double>(spec.dim));
    for (std::size_t l = 0; l < kStageCount; ++l) {
        auto& st = s.stages[l];
        st.height = spec.grid_h;
        st.width = spec.grid_w;
        st.features = Mat(spec.grid_h * spec.grid_w, spec.dim);
        for (std::size_t y = 0; y < spec.grid_h; ++y) {
            for (std::size_t x = 0; x < spec.grid_w; ++x) {
                auto cell = st.features.row(y * spec.grid_w + x);
                for (std::size_t k = 0; k < spec.dim; ++k)
                    cell[k] = model.means[l][k] + spec.cell_noise * rng.gaussian();
                if (rect && rect->contains(y, x)) cell[1] += shift;
                // Interchange files are f32; keep the in-memory sample identical.
                for (auto& v : cell) v = static_cast<double>(static_cast<float>(v));
            }
        }
    }
    const std::size_t mh = spec.grid_h * spec.mask_scale;
    const std::size_t mw = spec.grid_w * spec.mask_scale;
    s.mask = PixelMask(mh, mw);
    if (rect)
        for (std::size_t y = 0; y < mh; ++y)
            for (std::size_t x = 0; x < mw; ++x)
                s.mask->at(y, x) = rect->contains(y / spec.mask_scale, x / spec.mask_scale) ? 1 : 0;
    return s;
}

}  // namespace

Manifest synth_generate(const SynthSpec& spec, const fs::path& out_dir) {
    spec.validate();
    fs::create_directories(out_dir);
    const RandomStream root(spec.seed);

    TextBank text;
    text.normal_vec.assign(spec.dim, 0.0);
    text.anomaly_vec.assign(spec.dim, 0.0);
    text.normal_vec[0] = 1.0;
    text.anomaly_vec[1] = 1.0;
    text.prompts.assign(kNormalPrompts.begin(), kNormalPrompts.end());
    text.prompts.insert(text.prompts.end(), kAnomalyPrompts.begin(), kAnomalyPrompts.end());
    write_text_bank(text, out_dir / "text_bank.cmtx");

    Manifest manifest;
    manifest.dataset_name = spec.dataset_name;
    manifest.text_bank = "text_bank.cmtx";
    manifest.base_dir = out_dir;

    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        const std::string cid = spec.class_id(c);
        RandomStream class_rng = root.derive("class/" + cid);
        const ClassModel model = draw_class(spec, class_rng);
        ClassEntry entry;
        entry.class_id = cid;

        auto emit = [&](const std::string& split, std::size_t count, Label label, bool with_mask,
                        std::vector<SampleEntry>& list) {
            for (std::size_t i = 0; i < count; ++i) {
                char name[64];
                std::snprintf(name, sizeof name, "%s_%s_%03zu", split.c_str(),
                              label == Label::normal ? "n" : "a", i);
                RandomStream rng = class_rng.derive(name);
                FeatureSample sample = draw_sample(spec, model, label, rng);
                SampleEntry e;
                e.sample_id = cid + "/" + name;
                e.label = label;
                e.feature_path = fs::path("features") / cid / (std::string(name) + ".cmfg");
                write_feature_file(sample, out_dir / e.feature_path);
                if (with_mask) {
                    e.mask_path = fs::path("masks") / cid / (std::string(name) + ".cmsk");
                    write_mask_file(*sample.mask, out_dir / *e.mask_path);
                }
                list.push_back(std::move(e));
            }
        };
        emit("train", spec.train_normal, Label::normal, false, entry.train_normals);
        emit("train", spec.train_anomalous, Label::anomalous, true, entry.train_anomalies);
        emit("test", spec.test_normal, Label::normal, true, entry.test_samples);
        emit("test", spec.test_anomalous, Label::anomalous, true, entry.test_samples);
        manifest.classes.push_back(std::move(entry));
    }
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace cmega
