// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "cmega/scoring.hpp"
#include "cmega/synth.hpp"
#include "cmega/training.hpp"
#include "support.hpp"

using namespace cmega;
using namespace testsupport;

namespace {

/// Central differences of f with respect to every entry of x.
template <class F>
Mat numeric_grad(Mat x, F f, double h = 1e-6) {
    Mat g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = f(x);
        x.data()[i] = keep - h;
        const double dn = f(x);
        x.data()[i] = keep;
        g.data()[i] = (up - dn) / (2 * h);
    }
    return g;
}

double rel_err(const Mat& a, const Mat& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
        den = std::max(den, std::max(a.data()[i] * a.data()[i], b.data()[i] * b.data()[i]));
    }
    return den == 0 ? std::sqrt(num) : std::sqrt(num / den);
}

std::vector<FeatureSample> synth_training_set(const fs::path& dir, std::size_t classes) {
    SynthSpec spec;
    spec.n_classes = classes;
    spec.train_normal = 4;
    spec.train_anomalous = 4;
    spec.test_normal = 1;
    spec.test_anomalous = 1;
    spec.seed = 17;
    const Manifest m = synth_generate(spec, dir);
    std::vector<FeatureSample> out;
    for (const auto& c : m.classes) {
        for (const auto& e : c.train_normals) out.push_back(load_sample(m, c.class_id, e));
        for (const auto& e : c.train_anomalies) out.push_back(load_sample(m, c.class_id, e));
    }
    return out;
}

}  // namespace

TEST_CASE("cross entropy at one half is ln 2") {
    CHECK(ce_loss(Mat(2, 2, 0.5), Mat(2, 2, 1.0)).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(ce_loss(Mat(2, 2, 0.5), Mat(2, 2, 0.0)).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("cross entropy clamps and stops the gradient there") {
    const auto l = ce_loss(Mat(1, 1, 0.0), Mat(1, 1, 1.0));
    CHECK(l.value == doctest::Approx(-std::log(kProbClamp)));
    CHECK(l.grad(0, 0) == 0.0);
}

TEST_CASE("focal loss reference values") {
    RandomStream rng(1);
    const Mat p = random_mat(rng, 3, 3, 0.05, 0.95);
    Mat m(3, 3);
    m(0, 0) = m(1, 2) = 1.0;
    CHECK(focal_loss(p, m, 0.0, 0.5).value == doctest::Approx(0.5 * ce_loss(p, m).value).epsilon(1e-14));
    CHECK(focal_loss(Mat(1, 1, 0.9), Mat(1, 1, 1.0), 2.0, 0.25).value ==
          doctest::Approx(0.25 * 0.01 * -std::log(0.9)).epsilon(1e-12));
    CHECK(focal_loss(Mat(1, 1, 0.9), Mat(1, 1, 1.0), 2.0, 0.25).value == doctest::Approx(2.634e-4).epsilon(1e-3));
    // p_t for a background cell is 1 - P; the weight is 1 - alpha.
    CHECK(focal_loss(Mat(1, 1, 0.1), Mat(1, 1, 0.0), 2.0, 0.25).value ==
          doctest::Approx(0.75 * 0.01 * -std::log(0.9)).epsilon(1e-12));
}

TEST_CASE("dice loss reference values") {
    Mat m(2, 2);
    m(0, 0) = m(1, 1) = 1.0;
    CHECK(dice_loss(Mat(2, 2, 0.5), m, 1.0).value == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(dice_loss(Mat(2, 2), Mat(2, 2), 1.0).value == 0.0);
}

TEST_CASE("loss gradients match finite differences") {
    RandomStream rng(2);
    for (int i = 0; i < 10; ++i) {
        const Mat p = random_mat(rng, 3, 4, 0.02, 0.98);
        Mat m(3, 4);
        for (auto& v : m.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        CHECK(rel_err(ce_loss(p, m).grad, numeric_grad(p, [&](const Mat& x) { return ce_loss(x, m).value; })) < 1e-6);
        CHECK(rel_err(focal_loss(p, m, 2.0, 0.25).grad,
                      numeric_grad(p, [&](const Mat& x) { return focal_loss(x, m, 2.0, 0.25).value; })) < 1e-6);
        CHECK(rel_err(dice_loss(p, m, 1.0).grad,
                      numeric_grad(p, [&](const Mat& x) { return dice_loss(x, m, 1.0).value; })) < 1e-6);
    }
}

TEST_CASE("score backward matches finite differences") {
    RandomStream rng(3);
    for (int i = 0; i < 5; ++i) {
        const TextBank t = random_text_bank(rng, 6);
        const Mat f = random_mat(rng, 9, 6);
        const Mat w = random_mat(rng, 3, 3);
        auto loss = [&](const Mat& x) {
            const Mat p = layer_score_map(x, 3, 3, t, 0.5).probs;
            double acc = 0;
            for (std::size_t k = 0; k < p.size(); ++k) acc += w.data()[k] * p.data()[k];
            return acc;
        };
        CHECK(rel_err(score_backward(f, t, 0.5, w), numeric_grad(f, loss)) < 1e-6);
    }
}

TEST_CASE("synthetic branch with zero noise is all-ones cross entropy on the real features") {
    RandomStream rng(4);
    const auto s = random_sample(rng, 3, 3, 8, Label::normal);
    const TextBank t = random_text_bank(rng, 8);
    const AdapterSet set = random_set(rng, 8, 2);
    TrainConfig cfg;
    cfg.blend.beta = 0.0;
    RandomStream nr(1);
    const StageNoise zero = draw_stage_noise(s, nr, 0.0);

    GradSet with_syn, without;
    sample_losses(s, set, t, cfg, &zero, &with_syn);
    sample_losses(s, set, t, cfg, nullptr, &without);

    for (std::size_t l = 0; l < kStageCount; ++l) {
        const auto& st = s.stages[l];
        auto ones_ce = [&](const Mat& w1) {
            Adapter a = set[l];
            a.w1 = w1;
            const Mat b = residual_blend(st.features, adapter_forward(a, st.features), cfg.blend.alpha);
            return ce_loss(layer_score_map(b, st.height, st.width, t, cfg.tau).probs,
                           Mat(st.height, st.width, 1.0)).value;
        };
        const Mat diff = with_syn[l].dw1 - without[l].dw1;
        CHECK(rel_err(diff, numeric_grad(set[l].w1, ones_ce)) < 1e-5);
    }
}

TEST_CASE("anomalous sample without a mask is a data error") {
    RandomStream rng(5);
    auto s = random_sample(rng, 2, 2, 4, Label::anomalous);
    s.mask.reset();
    CHECK_THROWS_AS(sample_losses(s, random_set(rng, 4, 1), random_text_bank(rng, 4), {}, nullptr),
                    DataError);
}

TEST_CASE("training: zero epochs returns the initial set") {
    TempDir tmp("training");
    const auto samples = synth_training_set(tmp.path(), 1);
    const TextBank text = read_text_bank(tmp / "text_bank.cmtx");
    const RandomStream root(9);
    const auto res = train_adapter_set(samples, text, {}, 0, root, 3);
    RandomStream init = root.derive("init");
    const auto& st = samples.front().stages;
    const AdapterSet want = init_adapter_set(
        {st[0].dim(), st[1].dim(), st[2].dim(), st[3].dim()}, init, 3);
    CHECK(res.set == want);
    CHECK(res.log.empty());
}

TEST_CASE("training is deterministic, order-free and settles") {
    TempDir tmp("training");
    auto samples = synth_training_set(tmp.path(), 2);
    const TextBank text = read_text_bank(tmp / "text_bank.cmtx");
    const auto a = train_adapter_set(samples, text, {}, 30, RandomStream(5));
    const auto b = train_adapter_set(samples, text, {}, 30, RandomStream(5));
    CHECK(a.set == b.set);
    std::reverse(samples.begin(), samples.end());
    const auto c = train_adapter_set(samples, text, {}, 30, RandomStream(5));
    CHECK(c.set == a.set);

    REQUIRE(a.log.size() == 30);
    CHECK(a.log.back().l_total <= 1.05 * a.log[a.log.size() - 11].l_total);
    CHECK(a.log.back().l_total < a.log.front().l_total);
    for (const auto& e : a.log)
        CHECK(e.l_total == doctest::Approx(e.l_no + e.l_an + e.l_syn).epsilon(1e-12));
}

TEST_CASE("loss log csv") {
    TempDir tmp("training");
    const std::vector<EpochLoss> log{{1, 0.5, 0.25, 0.125, 0.875}};
    write_loss_log(log, tmp / "loss.csv");
    const std::string text = slurp(tmp / "loss.csv");
    CHECK(text.rfind("epoch,l_no,l_an,l_syn,l_total\n", 0) == 0);
    CHECK(text.find("1,0.5,0.25,0.125,0.875") != std::string::npos);
}

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.blend.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
