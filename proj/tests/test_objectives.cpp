#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fd.hpp"
#include "model_util.hpp"
#include "textad/objectives.hpp"
#include "textad/optim.hpp"
#include "textad/train.hpp"

using namespace textad;
using namespace textad::testing;

namespace {

EncoderModel zero_model(AttentionMode mode) {
    auto m = EncoderModel::init(small_config(mode), 1);
    for (auto& p : m.parameters().entries()) {
        for (auto& v : p.tensor.data()) v = 0.0;
    }
    return m;
}

std::vector<TokenSequence> random_batch(std::size_t n, std::uint64_t seed, bool bos = false) {
    std::vector<TokenSequence> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_sequence(2 + (seed + i) % 6, 8, 13, seed * 100 + i, bos));
    return out;
}

// Direct -log softmax(z)[t] without the tape.
double direct_nll(std::span<const double> z, std::size_t t) {
    double mx = *std::max_element(z.begin(), z.end());
    double s = 0;
    for (double v : z) s += std::exp(v - mx);
    return -(z[t] - mx - std::log(s));
}

std::vector<double> normalize(std::vector<double> v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> row(const Tensor& t, std::size_t r) {
    const std::size_t d = t.dim(1);
    return {t.data().begin() + r * d, t.data().begin() + (r + 1) * d};
}

} // namespace

// ---------------------------------------------------------------------------
// Masking

TEST(Masking, CountAndDeterminism) {
    EXPECT_EQ(mask_positions(1, 0.15, 3).size(), 1u);
    EXPECT_EQ(mask_positions(3, 0.15, 3).size(), 1u);  // forced
    EXPECT_EQ(mask_positions(20, 0.15, 3).size(), 3u);
    EXPECT_EQ(mask_positions(20, 0.15, 3), mask_positions(20, 0.15, 3));
    auto p = mask_positions(40, 0.5, 9);
    EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
    EXPECT_EQ(std::adjacent_find(p.begin(), p.end()), p.end());
    EXPECT_LT(p.back(), 40u);
}

TEST(Masking, AlwaysMaskByDefault) {
    auto batch = random_batch(4, 2);
    std::vector<std::uint64_t> keys{1, 2, 3, 4};
    auto mb = apply_masking(batch, keys, MaskingPolicy{}, 0, 13, 8);
    for (std::size_t i = 0; i < mb.rows.size(); ++i) {
        const auto b = mb.owner[i], t = mb.rows[i] % 8;
        EXPECT_EQ(mb.inputs[b].ids[t], static_cast<std::size_t>(kMask));
        EXPECT_EQ(batch[b].ids[t], mb.targets[i]);
    }
}

TEST(Masking, PolicyValidation) {
    MaskingPolicy p;
    p.mask_fraction = 0.0;
    EXPECT_THROW(MlmObjective{p}, std::invalid_argument);
    p = {};
    p.num_draws = 0;
    EXPECT_THROW(MlmObjective{p}, std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Analytic anchors

TEST(Objectives, UniformPredictorMlmIsLogV) {
    auto m = zero_model(AttentionMode::Bidirectional);
    MlmObjective mlm;
    auto batch = random_batch(5, 1);
    Tape t(false);
    EXPECT_NEAR(mlm.batch_loss(t, m, batch, 3, false).item(), std::log(13.0), 1e-9);
    EXPECT_NEAR(mlm.score(m, batch[0], 4), std::log(13.0), 1e-9);
}

TEST(Objectives, UniformPredictorClmPerplexityIsV) {
    auto m = zero_model(AttentionMode::Causal);
    ClmObjective clm;
    for (const auto& s : random_batch(5, 2, true)) EXPECT_NEAR(clm.score(m, s, 0), 13.0, 1e-6 * 13.0);
}

TEST(Objectives, NtxentAllEqualIsLogN) {
    Tape t(false);
    for (std::size_t n : {2u, 5u, 64u}) {
        auto e = Tensor::filled({n, 4}, 0.7);
        EXPECT_NEAR(ntxent_from_embeddings(t, e, e, 0.05).item(), std::log(double(n)), 1e-9);
    }
    auto m = zero_model(AttentionMode::Bidirectional);
    EXPECT_NEAR(ntxent_loss(t, m, random_batch(6, 3), ContrastiveConfig{}, 1).item(), std::log(6.0), 1e-9);
}

TEST(Objectives, NtxentSaturates) {
    // cos 1 to the positive, 0 to every negative: loss = log(1 + (N-1) e^{-1/tau})
    Tape t(false);
    for (std::size_t n : {2u, 5u, 10u, 40u}) {
        auto e = Tensor::zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) e.data()[i * n + i] = 1.0;
        const double loss = ntxent_from_embeddings(t, e, e, 0.05).item();
        EXPECT_NEAR(loss, std::log1p((n - 1.0) * std::exp(-20.0)), 1e-14);
        if (n <= 5) EXPECT_LT(loss, 1e-8);
    }
}

TEST(Objectives, NtxentMatchesDirect) {
    Rng rng(5);
    const std::size_t n = 6, d = 5;
    std::vector<double> a(n * d), c(n * d);
    for (auto& x : a) x = rng.normal();
    for (auto& x : c) x = rng.normal();
    Tape t(false);
    const double got = ntxent_from_embeddings(t, Tensor::from({n, d}, a), Tensor::from({n, d}, c), 0.1).item();
    double expect = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto ai = normalize({a.begin() + i * d, a.begin() + (i + 1) * d});
        std::vector<double> sims;
        for (std::size_t j = 0; j < n; ++j) sims.push_back(dot(ai, normalize({c.begin() + j * d, c.begin() + (j + 1) * d})) / 0.1);
        expect += direct_nll(sims, i) / n;
    }
    EXPECT_NEAR(got, expect, 1e-12);
    EXPECT_GE(got, 0.0);
}

TEST(Objectives, NtxentNeedsTwo) {
    auto m = scaled_model(small_config(), 1);
    Tape t(false);
    EXPECT_THROW(ntxent_loss(t, m, random_batch(1, 1), ContrastiveConfig{}, 0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Direct oracles

TEST(Objectives, MlmMatchesDirectRecomputation) {
    auto m = scaled_model(small_config(), 2);
    auto batch = random_batch(3, 4);
    std::vector<std::uint64_t> keys{7, 8, 9};
    MaskingPolicy policy;
    auto mb = apply_masking(batch, keys, policy, 0, 13, 7);
    Tape t(false);
    const double loss = mlm_loss(t, m, batch, keys, policy, 0, {}).item();
    auto layout = make_layout(mb.inputs, true);
    ASSERT_EQ(layout.seq_len, 7u);
    auto logits = output_logits(t, m, encode_batch(t, m, layout, {}));
    double expect = 0;
    for (std::size_t i = 0; i < mb.rows.size(); ++i) expect += direct_nll(row(logits, mb.rows[i]), mb.targets[i]);
    EXPECT_NEAR(loss, expect / mb.rows.size(), 1e-12);
}

TEST(Objectives, MlmScoreIsMeanOfDraws) {
    auto m = scaled_model(small_config(), 3);
    MaskingPolicy policy;
    policy.seed = 11;
    MlmObjective mlm(policy);
    auto s = random_sequence(7, 8, 13, 5);
    double mean = 0;
    for (std::size_t d = 0; d < 5; ++d) mean += mlm.draw_loss(m, s, 42, d) / 5.0;
    EXPECT_NEAR(mlm.score(m, s, 42), mean, 1e-12);
    EXPECT_EQ(mlm.score(m, s, 42), mlm.score(m, s, 42));
    policy.num_draws = 1;
    MlmObjective one(policy);
    EXPECT_NEAR(one.score(m, s, 42), mlm.draw_loss(m, s, 42, 0), 1e-12);
}

TEST(Objectives, ClmPerplexityMatchesDirect) {
    auto m = scaled_model(small_config(AttentionMode::Causal), 4);
    ClmObjective clm;
    auto s = random_sequence(6, 8, 13, 9, true);
    Tape t(false);
    auto logits = output_logits(t, m, encode_batch(t, m, make_layout(std::span(&s, 1), true), {}));
    double nll = 0;
    for (std::size_t i = 0; i + 1 < 6; ++i) nll += direct_nll(row(logits, i), s.ids[i + 1]) / 5.0;
    EXPECT_NEAR(clm.score(m, s, 0), std::exp(nll), 1e-9);
    const double ppl = clm.score(m, s, 0);
    EXPECT_GE(ppl, 1.0);
    EXPECT_LE(ppl, 13.0 * 1e3);
}

TEST(Objectives, ClmRequiresCausal) {
    auto m = scaled_model(small_config(), 4);
    ClmObjective clm;
    EXPECT_THROW(clm.check_model(m), std::invalid_argument);
    auto s = random_sequence(6, 8, 13, 9, true);
    EXPECT_THROW(clm.score(m, s, 0), std::invalid_argument);
}

TEST(Objectives, ContrastiveScoreMatchesCachedSimilarities) {
    auto m = scaled_model(small_config(), 5);
    ContrastiveConfig cfg;
    cfg.reference_batch_size = 8;
    cfg.temperature = 0.5;
    ContrastiveObjective obj(cfg);
    auto s = random_sequence(5, 8, 13, 3);
    EXPECT_THROW(obj.score(m, s, 1), std::logic_error);
    obj.prepare_scoring(m, random_batch(20, 6));
    ASSERT_EQ(obj.reference()->views.dim(0), 8u);
    Tape t(false);
    auto views = obj.example_views(t, m, s, 1);
    const auto anchor = row(views, 0);
    std::vector<double> sims{dot(anchor, row(views, 1)) / 0.5};
    for (std::size_t j = 0; j < 8; ++j) sims.push_back(dot(anchor, row(obj.reference()->views, j)) / 0.5);
    EXPECT_NEAR(obj.score(m, s, 1), direct_nll(sims, 0), 1e-12);
    EXPECT_EQ(obj.score(m, s, 1), obj.score(m, s, 1));
}

TEST(Objectives, EmptyReferenceIsError) {
    auto m = scaled_model(small_config(), 5);
    ContrastiveConfig cfg;
    EXPECT_THROW(build_reference_batch(m, {}, cfg), std::invalid_argument);
    cfg.reference_batch_size = 0;
    EXPECT_THROW(ContrastiveObjective{cfg}, std::invalid_argument);
}

TEST(Objectives, PretrainedBaselineIsFrozenMlm) {
    auto m = scaled_model(small_config(), 6);
    auto before = m.parameters();
    MaskingPolicy policy;
    MlmObjective mlm(policy);
    auto s = random_sequence(6, 8, 13, 1);
    auto a = pretrained_baseline_score(m, "doc-1", s, policy);
    EXPECT_EQ(a.objective, "pretrained");
    EXPECT_EQ(a.score, score_example(mlm, m, "doc-1", s).score);
    EXPECT_EQ(a.score, pretrained_baseline_score(m, "doc-1", s, policy).score);
    EXPECT_TRUE(m.parameters().bit_equal(before));
}

// ---------------------------------------------------------------------------
// Gradients of the three losses, every parameter

TEST(ObjectiveGradients, Mlm) {
    auto m = scaled_model(small_config(), 7, 1.0);
    MlmObjective mlm;
    auto batch = random_batch(3, 1);
    auto f = [&](Tape& t) { return mlm.batch_loss(t, m, batch, 5, true); };
    std::vector<Tensor> leaves;
    for (auto& p : m.parameters().entries()) leaves.push_back(p.tensor);
    EXPECT_LT(max_relative_error(f, leaves), 1e-4);
}

TEST(ObjectiveGradients, Clm) {
    auto m = scaled_model(small_config(AttentionMode::Causal), 8, 1.0);
    ClmObjective clm;
    auto batch = random_batch(3, 2, true);
    auto f = [&](Tape& t) { return clm.batch_loss(t, m, batch, 5, true); };
    std::vector<Tensor> leaves;
    for (auto& p : m.parameters().entries()) leaves.push_back(p.tensor);
    EXPECT_LT(max_relative_error(f, leaves), 1e-4);
}

TEST(ObjectiveGradients, Ntxent) {
    auto m = scaled_model(small_config(), 9, 1.0);
    ContrastiveConfig cfg;
    cfg.temperature = 0.5;
    ContrastiveObjective obj(cfg);
    auto batch = random_batch(4, 3);
    auto f = [&](Tape& t) { return obj.batch_loss(t, m, batch, 5, true); };
    std::vector<Tensor> leaves;
    for (auto& p : m.parameters().entries()) leaves.push_back(p.tensor);
    FdWorst w;
    EXPECT_LT(max_relative_error(f, leaves, 1e-5, 1e-5, &w), 1e-4)
        << m.parameters().entries()[w.leaf].name << "[" << w.index << "] " << w.analytic << " vs " << w.numeric;
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Adam, ZeroGradientLeavesParameters) {
    auto p = Tensor::from({3}, {1, 2, 3}, true);
    AdamState st;
    std::vector<double> g(3, 0.0);
    adam_step(p, g, st, {}, 0.1);
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(p[2], 3.0);
    std::vector<double> bad(2, 0.0);
    EXPECT_THROW(adam_step(p, bad, st, {}, 0.1), ShapeError);
}

TEST(Adam, DescendsQuadratic) {
    auto w = Tensor::from({1}, {1.0}, true);
    AdamState st;
    std::vector<double> g{2.0};
    adam_step(w, g, st, {}, 0.1);
    EXPECT_LT(std::abs(w[0]), 1.0);

    // f(w) = sum c_i (w_i - t_i)^2, optimum 0
    auto v = Tensor::from({3}, {2.0, -1.0, 0.5}, true);
    const double c[] = {1.0, 3.0, 0.5}, target[] = {0.3, 0.2, -0.4};
    AdamState s2;
    auto f = [&] {
        double l = 0;
        for (int i = 0; i < 3; ++i) l += c[i] * (v[i] - target[i]) * (v[i] - target[i]);
        return l;
    };
    for (int it = 0; it < 200; ++it) {
        std::vector<double> grad(3);
        for (int i = 0; i < 3; ++i) grad[i] = 2 * c[i] * (v[i] - target[i]);
        adam_step(v, grad, s2, {}, 0.05);
    }
    EXPECT_LT(f(), 1e-3);
}

TEST(Adam, ClipGradNorm) {
    ParameterSet ps;
    ps.add("a", Tensor::from({2}, {0, 0}, true));
    ps.get("a").mutable_grad()[0] = 3.0;
    ps.get("a").mutable_grad()[1] = 4.0;
    EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
    EXPECT_NEAR(ps.get("a").grad()[0], 0.6, 1e-12);
    EXPECT_NEAR(ps.get("a").grad()[1], 0.8, 1e-12);
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Validation loss rises at every evaluation.
class RisingValidation : public Objective {
public:
    std::string name() const override { return "rising"; }
    Tensor batch_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence>, std::uint64_t,
                      bool) const override {
        const auto& b = model.param("final_ln.beta");
        return tape.sum(tape.mul(b, b));
    }
    double validation_loss(const EncoderModel&, std::span<const TokenSequence>, std::uint64_t) const override {
        return static_cast<double>(++calls_);
    }
    Tensor example_loss(Tape& tape, const EncoderModel& model, const TokenSequence&, std::uint64_t,
                        const Tensor*) const override {
        return tape.sum(model.param("final_ln.beta"));
    }

private:
    mutable int calls_ = 0;
};

std::vector<TokenSequence> template_corpus(std::size_t n) {
    std::vector<TokenSequence> out;
    for (std::size_t i = 0; i < n; ++i) {
        TokenSequence s;
        s.ids.assign(8, kPad);
        s.length = 6;
        for (std::size_t t = 0; t < 6; ++t) s.ids[t] = kNumSpecial + (i % 2 == 0 ? t : 7 - t);
        out.push_back(s);
    }
    return out;
}

} // namespace

TEST(Train, RejectsBadConfig) {
    TrainConfig cfg;
    cfg.max_steps = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    auto m = EncoderModel::init(small_config(), 1);
    MlmObjective mlm;
    auto data = template_corpus(4);
    EXPECT_THROW(train(m, mlm, data, data, cfg), std::invalid_argument);
    EXPECT_THROW(train(m, mlm, {}, data, TrainConfig{}), std::invalid_argument);
}

TEST(Train, PatienceOneStopsAtSecondEvaluation) {
    auto m = EncoderModel::init(small_config(), 1);
    RisingValidation obj;
    TrainConfig cfg;
    cfg.max_steps = 100;
    cfg.eval_interval = 5;
    cfg.patience = 1;
    auto data = template_corpus(8);
    auto r = train(m, obj, data, data, cfg);
    ASSERT_EQ(r.history.size(), 2u);
    EXPECT_EQ(r.steps_run, 10u);
    EXPECT_EQ(r.best_step, 5u);
    EXPECT_TRUE(r.early_stopped);
}

TEST(Train, MlmLossDecreasesAndIsDeterministic) {
    auto cfg_m = small_config();
    auto m = EncoderModel::init(cfg_m, 2);
    MlmObjective mlm;
    TrainConfig cfg;
    cfg.max_steps = 500;
    cfg.eval_interval = 50;
    cfg.patience = 100;
    cfg.batch_size = 8;
    cfg.learning_rate = 3e-3;
    auto data = template_corpus(32);
    auto r = train(m, mlm, data, data, cfg);
    ASSERT_GE(r.history.size(), 2u);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
    EXPECT_LT(r.best_val_loss, std::log(13.0));
    auto r2 = train(m, mlm, data, data, cfg);
    EXPECT_EQ(history_csv(r.history), history_csv(r2.history));
    EXPECT_TRUE(r.model.parameters().bit_equal(r2.model.parameters()));
    EXPECT_EQ(history_csv(r.history).substr(0, 24), "step,train_loss,val_loss");
}

TEST(Train, ClmTrainingRejectsBidirectional) {
    auto m = EncoderModel::init(small_config(), 1);
    ClmObjective clm;
    auto data = template_corpus(4);
    EXPECT_THROW(train(m, clm, data, data, TrainConfig{}), std::invalid_argument);
}
