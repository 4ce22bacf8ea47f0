// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cmega/adapters.hpp"
#include "cmega/featio.hpp"
#include "cmega/numcore.hpp"

namespace cmega {

struct TrainConfig {
    std::size_t epochs_base = 50;
    std::size_t epochs_task = 20;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double dice_eps = 1.0;
    BlendConfig blend;
    /// Softmax temperature of the cosine scorer used inside the loss.
    double tau = 0.07;

    void validate() const;
};

/// Loss value plus its gradient with respect to each cell's P(anomaly).
struct LossGrad {
    double value = 0.0;
    Mat grad;
};

inline constexpr double kProbClamp = 1e-7;

/// Mean over cells of -[M log P + (1 - M) log(1 - P)], P clamped to [1e-7, 1 - 1e-7].
LossGrad ce_loss(const Mat& probs, const Mat& mask);
/// Mean over cells of -a_t (1 - p_t)^gamma log p_t, a_t = alpha for M = 1 and 1 - alpha otherwise.
LossGrad focal_loss(const Mat& probs, const Mat& mask, double gamma, double alpha);
/// 1 - (2 sum(P M) + eps) / (sum(P) + sum(M) + eps).
LossGrad dice_loss(const Mat& probs, const Mat& mask, double eps);

// Per-stage terms. The anomaly branch carries no cross-entropy and the
// synthetic branch carries nothing but cross-entropy.
struct NormalTerms {
    double ce = 0.0;
    double dice = 0.0;
    double focal = 0.0;
    double total() const { return ce + dice + focal; }
};
struct AnomalyTerms {
    double dice = 0.0;
    double focal = 0.0;
    double total() const { return dice + focal; }
};
struct SyntheticTerms {
    double ce = 0.0;
    double total() const { return ce; }
};

struct StageLoss {
    NormalTerms no;
    AnomalyTerms an;
    SyntheticTerms syn;
};

struct LossBreakdown {
    double l_no = 0.0;
    double l_an = 0.0;
    double l_syn = 0.0;
    double l_total = 0.0;
    std::array<StageLoss, kStageCount> stages;
};

struct AdapterGrad {
    Mat dw1;
    Mat dw2;
};
using GradSet = std::array<AdapterGrad, kStageCount>;

/// Synthetic-branch noise, one G x d grid per stage.
using StageNoise = std::array<Mat, kStageCount>;

StageNoise draw_stage_noise(const FeatureSample& sample, RandomStream& stream, double beta);

/// Probabilities of one scored grid and the chain rule back to the grid.
/// Exposed for tests; grad_probs is dL/dP per cell, result is dL/dF.
Mat score_backward(const Mat& features, const TextBank& text, double tau, const Mat& grad_probs);

/// Forward (and optionally backward) pass of the composite loss on one sample.
///
/// Real branch per stage: P from blend(F, A(F)). Normal samples add
/// CE + dice + focal against a zero mask and, when noise is given, the
/// synthetic branch CE of blend(F + gamma, A(F + gamma)) against an all-ones
/// mask. Anomalous samples add dice + focal against the pooled ground truth.
LossBreakdown sample_losses(const FeatureSample& sample, const AdapterSet& set,
                            const TextBank& text, const TrainConfig& cfg,
                            const StageNoise* noise, GradSet* grads = nullptr);

struct EpochLoss {
    std::size_t epoch = 0;
    double l_no = 0.0;
    double l_an = 0.0;
    double l_syn = 0.0;
    double l_total = 0.0;
};

struct TrainResult {
    AdapterSet set;
    std::vector<EpochLoss> log;
};

/// Adam on one adapter set, one sample per step, order reshuffled each
/// epoch. Samples are put in (class_id, sample_id) order before the first
/// shuffle, so the result does not depend on the input order.
TrainResult train_adapter_set(std::span<const FeatureSample> samples, const TextBank& text,
                              const TrainConfig& cfg, std::size_t epochs, RandomStream stream,
                              std::size_t task = 0);

/// CSV with header epoch,l_no,l_an,l_syn,l_total.
void write_loss_log(std::span<const EpochLoss> log, const std::filesystem::path& path);

}  // namespace cmega
