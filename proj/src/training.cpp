// SPDX-License-Identifier: Apache-2.0
#include "cmega/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <tuple>

#include "cmega/scoring.hpp"

namespace cmega {

using detail::require;

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
    if (epochs_base < 1 || epochs_task < 1) throw ConfigError("train config: epochs must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("train config: adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train config: adam eps must be positive");
    if (!(focal_gamma >= 0.0)) throw ConfigError("train config: focal gamma must be >= 0");
    if (!(focal_alpha >= 0.0 && focal_alpha <= 1.0))
        throw ConfigError("train config: focal alpha must lie in [0, 1]");
    if (!(dice_eps > 0.0)) throw ConfigError("train config: dice eps must be positive");
    if (!(blend.alpha >= 0.0 && blend.alpha <= 1.0))
        throw ConfigError("train config: alpha must lie in [0, 1]");
    if (!(blend.beta >= 0.0)) throw ConfigError("train config: beta must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("train config: tau must be positive");
}

// ---------------------------------------------------------------------------
// Pixel losses

namespace {

void check_pair(const Mat& probs, const Mat& mask, const char* who) {
    require(probs.same_shape(mask), std::string(who) + ": probability and mask shapes differ");
    require(!probs.empty(), std::string(who) + ": empty map");
}

bool clamped(double p) { return p < kProbClamp || p > 1.0 - kProbClamp; }
double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace

LossGrad ce_loss(const Mat& probs, const Mat& mask) {
    check_pair(probs, mask, "ce_loss");
    const double n = static_cast<double>(probs.size());
    LossGrad out{0.0, Mat(probs.rows(), probs.cols())};
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double m = mask.data()[i];
        const double p = clamp_prob(probs.data()[i]);
        out.value -= m * std::log(p) + (1.0 - m) * std::log(1.0 - p);
        if (!clamped(probs.data()[i])) out.grad.data()[i] = (-m / p + (1.0 - m) / (1.0 - p)) / n;
    }
    out.value /= n;
    return out;
}

LossGrad focal_loss(const Mat& probs, const Mat& mask, double gamma, double alpha) {
    check_pair(probs, mask, "focal_loss");
    require(gamma >= 0.0, "focal_loss: gamma must be >= 0");
    const double n = static_cast<double>(probs.size());
    LossGrad out{0.0, Mat(probs.rows(), probs.cols())};
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool positive = mask.data()[i] >= 0.5;
        const double raw_pt = positive ? probs.data()[i] : 1.0 - probs.data()[i];
        const double pt = clamp_prob(raw_pt);
        const double at = positive ? alpha : 1.0 - alpha;
        const double q = 1.0 - pt;
        const double log_pt = std::log(pt);
        out.value -= at * std::pow(q, gamma) * log_pt;
        if (clamped(raw_pt)) continue;
        // d/dp_t of -a_t q^gamma log p_t
        const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * log_pt;
        const double d_pt = -at * (-lead + std::pow(q, gamma) / pt);
        out.grad.data()[i] = (positive ? d_pt : -d_pt) / n;
    }
    out.value /= n;
    return out;
}

LossGrad dice_loss(const Mat& probs, const Mat& mask, double eps) {
    check_pair(probs, mask, "dice_loss");
    require(eps > 0.0, "dice_loss: eps must be positive");
    double inter = 0.0;
    double sp = 0.0;
    double sm = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        inter += probs.data()[i] * mask.data()[i];
        sp += probs.data()[i];
        sm += mask.data()[i];
    }
    const double num = 2.0 * inter + eps;
    const double den = sp + sm + eps;
    LossGrad out{1.0 - num / den, Mat(probs.rows(), probs.cols())};
    for (std::size_t i = 0; i < probs.size(); ++i)
        out.grad.data()[i] = -(2.0 * mask.data()[i] * den - num) / (den * den);
    return out;
}

// ---------------------------------------------------------------------------
// Scorer chain rule

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

Mat score_backward(const Mat& features, const TextBank& text, double tau, const Mat& grad_probs) {
    require(grad_probs.size() == features.rows(), "score_backward: gradient size mismatch");
    const double nn = std::sqrt(dot(text.normal_vec, text.normal_vec));
    const double na = std::sqrt(dot(text.anomaly_vec, text.anomaly_vec));
    Mat out(features.rows(), features.cols());
    for (std::size_t g = 0; g < features.rows(); ++g) {
        const auto f = features.row(g);
        const double nf2 = dot(f, f);
        if (nf2 == 0.0) continue;
        const double nf = std::sqrt(nf2);
        const double ca = dot(f, text.anomaly_vec) / (nf * na);
        const double cn = dot(f, text.normal_vec) / (nf * nn);
        const double p = 1.0 / (1.0 + std::exp(-(ca - cn) / tau));
        const double dz = grad_probs.data()[g] * p * (1.0 - p) / tau;
        auto o = out.row(g);
        for (std::size_t k = 0; k < f.size(); ++k) {
            const double dca = text.anomaly_vec[k] / (nf * na) - ca * f[k] / nf2;
            const double dcn = text.normal_vec[k] / (nf * nn) - cn * f[k] / nf2;
            o[k] = dz * (dca - dcn);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Composite loss

StageNoise draw_stage_noise(const FeatureSample& sample, RandomStream& stream, double beta) {
    StageNoise noise;
    for (std::size_t l = 0; l < kStageCount; ++l)
        noise[l] = draw_synthetic_noise(sample.stages[l].features, stream, beta);
    return noise;
}

namespace {

/// One adapter branch: input X, residual base R (== X here), blended output.
struct Branch {
    Mat input;
    Mat hidden;   // X w1^T
    Mat blended;  // alpha R + (1 - alpha) hidden w2^T
};

Branch run_branch(const Adapter& a, Mat input, double alpha) {
    Branch b;
    b.hidden = matmul_bt(input, a.w1);
    b.blended = residual_blend(input, matmul_bt(b.hidden, a.w2), alpha);
    b.input = std::move(input);
    return b;
}

void backprop_branch(const Adapter& a, const Branch& b, const Mat& d_blended, double alpha,
                     AdapterGrad& g) {
    const Mat d_out = (1.0 - alpha) * d_blended;
    g.dw2 += matmul_at(d_out, b.hidden);
    const Mat d_hidden = matmul(d_out, a.w2);
    g.dw1 += matmul_at(d_hidden, b.input);
}

Mat sum_grads(const Mat& a, const Mat& b, const Mat& c) {
    Mat out = a;
    out += b;
    out += c;
    return out;
}

}  // namespace

namespace detail {

/// Pooled per-stage ground truth for a sample (all zeros for normal samples).
std::array<Mat, kStageCount> stage_masks(const FeatureSample& sample) {
    std::array<Mat, kStageCount> masks;
    for (std::size_t l = 0; l < kStageCount; ++l) {
        const auto& s = sample.stages[l];
        if (sample.label == Label::anomalous)
            masks[l] = pool_mask_to_grid(*sample.mask, s.height, s.width);
        else
            masks[l] = Mat(s.height, s.width);
    }
    return masks;
}

LossBreakdown sample_losses_with_masks(const FeatureSample& sample, const AdapterSet& set,
                                       const std::array<Mat, kStageCount>& masks,
                                       const TextBank& text, const TrainConfig& cfg,
                                       const StageNoise* noise, GradSet* grads) {
    const double alpha = cfg.blend.alpha;
    LossBreakdown out;
    if (grads)
        for (std::size_t l = 0; l < kStageCount; ++l) {
            (*grads)[l].dw1 = Mat(set[l].w1.rows(), set[l].w1.cols());
            (*grads)[l].dw2 = Mat(set[l].w2.rows(), set[l].w2.cols());
        }

    for (std::size_t l = 0; l < kStageCount; ++l) {
        const auto& stage = sample.stages[l];
        const Adapter& a = set[l];
        require(stage.dim() == a.dim(), "sample_losses: stage dim does not match adapter");
        auto& terms = out.stages[l];
        const Mat& mask = masks[l];

        const Branch real = run_branch(a, stage.features, alpha);
        const Mat p = layer_score_map(real.blended, stage.height, stage.width, text, cfg.tau).probs;

        Mat d_probs;
        if (sample.label == Label::normal) {
            const auto ce = ce_loss(p, mask);
            const auto dice = dice_loss(p, mask, cfg.dice_eps);
            const auto focal = focal_loss(p, mask, cfg.focal_gamma, cfg.focal_alpha);
            terms.no = {ce.value, dice.value, focal.value};
            if (grads) d_probs = sum_grads(ce.grad, dice.grad, focal.grad);
        } else {
            const auto dice = dice_loss(p, mask, cfg.dice_eps);
            const auto focal = focal_loss(p, mask, cfg.focal_gamma, cfg.focal_alpha);
            terms.an = {dice.value, focal.value};
            if (grads) {
                d_probs = dice.grad;
                d_probs += focal.grad;
            }
        }
        if (grads)
            backprop_branch(a, real, score_backward(real.blended, text, cfg.tau, d_probs), alpha,
                            (*grads)[l]);

        if (sample.label == Label::normal && noise) {
            const Branch syn = run_branch(a, stage.features + (*noise)[l], alpha);
            const Mat ps = layer_score_map(syn.blended, stage.height, stage.width, text, cfg.tau).probs;
            const auto ce = ce_loss(ps, Mat(stage.height, stage.width, 1.0));
            terms.syn = {ce.value};
            if (grads)
                backprop_branch(a, syn, score_backward(syn.blended, text, cfg.tau, ce.grad), alpha,
                                (*grads)[l]);
        }

        out.l_no += terms.no.total();
        out.l_an += terms.an.total();
        out.l_syn += terms.syn.total();
    }
    out.l_total = out.l_no + out.l_an + out.l_syn;
    return out;
}

}  // namespace detail

LossBreakdown sample_losses(const FeatureSample& sample, const AdapterSet& set,
                            const TextBank& text, const TrainConfig& cfg,
                            const StageNoise* noise, GradSet* grads) {
    if (sample.label == Label::anomalous && !sample.mask)
        throw DataError("sample " + sample.sample_id + ": anomalous sample has no mask");
    return detail::sample_losses_with_masks(sample, set, detail::stage_masks(sample), text, cfg,
                                            noise, grads);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct AdamState {
    std::array<AdapterGrad, kStageCount> m;
    std::array<AdapterGrad, kStageCount> v;
    std::size_t step = 0;

    explicit AdamState(const AdapterSet& set) {
        for (std::size_t l = 0; l < kStageCount; ++l) {
            m[l] = {Mat(set[l].w1.rows(), set[l].w1.cols()), Mat(set[l].w2.rows(), set[l].w2.cols())};
            v[l] = m[l];
        }
    }

    void apply(AdapterSet& set, const GradSet& g, const TrainConfig& cfg) {
        ++step;
        const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
        auto update = [&](Mat& w, Mat& mm, Mat& vv, const Mat& grad) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = grad.data()[i];
                double& mi = mm.data()[i];
                double& vi = vv.data()[i];
                mi = cfg.adam_beta1 * mi + (1.0 - cfg.adam_beta1) * gi;
                vi = cfg.adam_beta2 * vi + (1.0 - cfg.adam_beta2) * gi * gi;
                w.data()[i] -= cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
            }
        };
        for (std::size_t l = 0; l < kStageCount; ++l) {
            update(set[l].w1, m[l].dw1, v[l].dw1, g[l].dw1);
            update(set[l].w2, m[l].dw2, v[l].dw2, g[l].dw2);
        }
    }
};

}  // namespace

TrainResult train_adapter_set(std::span<const FeatureSample> samples, const TextBank& text,
                              const TrainConfig& cfg, std::size_t epochs, RandomStream stream,
                              std::size_t task) {
    cfg.validate();
    if (samples.empty()) throw DataError("train_adapter_set: empty training set");

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = samples[a];
        const auto& y = samples[b];
        return std::tie(x.class_id, x.sample_id) < std::tie(y.class_id, y.sample_id);
    });

    std::array<std::size_t, kStageCount> dims{};
    for (std::size_t l = 0; l < kStageCount; ++l) dims[l] = samples[order[0]].stages[l].dim();
    std::vector<std::array<Mat, kStageCount>> masks(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.label == Label::anomalous && !s.mask)
            throw DataError("sample " + s.sample_id + ": anomalous training sample has no mask");
        for (std::size_t l = 0; l < kStageCount; ++l)
            if (s.stages[l].dim() != dims[l])
                throw DataError("sample " + s.sample_id + ": stage dims differ across samples");
        masks[i] = detail::stage_masks(s);
    }

    RandomStream init_stream = stream.derive("init");
    RandomStream shuffle_stream = stream.derive("shuffle");
    RandomStream noise_stream = stream.derive("noise");

    TrainResult result{init_adapter_set(dims, init_stream, task), {}};
    AdamState adam(result.set);
    GradSet grads;
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_stream.below(i)]);
        EpochLoss acc{epoch};
        for (std::size_t idx : order) {
            const auto& s = samples[idx];
            std::optional<StageNoise> noise;
            if (s.label == Label::normal) noise = draw_stage_noise(s, noise_stream, cfg.blend.beta);
            const auto loss = detail::sample_losses_with_masks(
                s, result.set, masks[idx], text, cfg, noise ? &*noise : nullptr, &grads);
            adam.apply(result.set, grads, cfg);
            acc.l_no += loss.l_no;
            acc.l_an += loss.l_an;
            acc.l_syn += loss.l_syn;
            acc.l_total += loss.l_total;
        }
        const double n = static_cast<double>(order.size());
        acc.l_no /= n;
        acc.l_an /= n;
        acc.l_syn /= n;
        acc.l_total /= n;
        result.log.push_back(acc);
    }
    return result;
}

void write_loss_log(std::span<const EpochLoss> log, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write loss log: " + path.string());
    out.precision(17);
    out << "epoch,l_no,l_an,l_syn,l_total\n";
    for (const auto& e : log)
        out << e.epoch << ',' << e.l_no << ',' << e.l_an << ',' << e.l_syn << ',' << e.l_total
            << '\n';
}

}  // namespace cmega
