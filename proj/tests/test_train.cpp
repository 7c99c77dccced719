#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rgf/rng.hpp"
#include "rgf/train.hpp"

using namespace rgf;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.vocab_size = 20;
    c.max_len = 6;
    c.init_seed = seed;
    return c;
}

TrainSample make_sample(std::string id, std::vector<TokenId> tokens, int label, int max_len) {
    TrainSample s;
    s.cell_id = std::move(id);
    s.label = label;
    s.seq.n_real = static_cast<int>(tokens.size());
    tokens.resize(static_cast<std::size_t>(max_len), kPadId);
    s.seq.tokens = std::move(tokens);
    return s;
}

/// Random batch with unique non-pad tokens per sequence.
std::vector<TrainSample> random_batch(Rng& rng, const ModelConfig& cfg, std::size_t n) {
    std::vector<TrainSample> batch;
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<TokenId> pool;
        for (TokenId t = 1; t < cfg.vocab_size; ++t) pool.push_back(t);
        rng.shuffle(pool.data(), pool.size());
        const int len = 2 + static_cast<int>(rng.uniform_int(
                                static_cast<std::uint64_t>(cfg.max_len - 1)));
        pool.resize(static_cast<std::size_t>(len));
        batch.push_back(make_sample("s" + std::to_string(s), pool,
                                    static_cast<int>(rng.uniform_int(2)), cfg.max_len));
    }
    return batch;
}

double batch_loss(const ModelParams& params, const std::vector<TrainSample>& batch) {
    double sum = 0.0;
    for (const auto& s : batch) {
        const RunTrace t = forward(params, s.seq);
        sum += cross_entropy(t.probs, s.label);
    }
    return sum / static_cast<double>(batch.size());
}

/// Central finite differences over every parameter; the independent oracle
/// for compute_gradients.
double max_fd_rel_error(const ModelParams& params, const std::vector<TrainSample>& batch,
                        const ModelGrads& grads, double step) {
    ModelParams work = params;
    std::vector<Matrix*> tensors;
    for_each_tensor(work, [&](const std::string&, int, Matrix& m) { tensors.push_back(&m); });
    std::vector<const Matrix*> gtensors;
    for_each_tensor(grads, [&](const std::string&, int, const Matrix& m) { gtensors.push_back(&m); });

    double worst = 0.0;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        for (std::size_t j = 0; j < tensors[t]->a.size(); ++j) {
            const double saved = tensors[t]->a[j];
            tensors[t]->a[j] = saved + step;
            const double up = batch_loss(work, batch);
            tensors[t]->a[j] = saved - step;
            const double down = batch_loss(work, batch);
            tensors[t]->a[j] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double an = gtensors[t]->a[j];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

bool tensor_is_zero(const Matrix& m) {
    return std::all_of(m.a.begin(), m.a.end(), [](double x) { return x == 0.0; });
}

}  // namespace

TEST_CASE("cross_entropy matches hand values") {
    CHECK(cross_entropy({1.0, 0.0}, 0) == 0.0);
    CHECK(cross_entropy({0.5, 0.5}, 1) == doctest::Approx(0.693147).epsilon(1e-5));
    const double batch_mean = (cross_entropy({1.0, 0.0}, 0) + cross_entropy({0.5, 0.5}, 1)) / 2.0;
    CHECK(batch_mean == doctest::Approx(0.346574).epsilon(1e-5));
    CHECK(cross_entropy({0.0, 1.0}, 0) == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(cross_entropy({0.5, 0.5}, 2), Error);
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(2024);
    const auto cfg = tiny_config(55);
    const auto params = init_model(cfg);
    const auto batch = random_batch(rng, cfg, 3);

    const ModelGrads grads = compute_gradients(params, batch, /*frozen_layers=*/0);
    CHECK(max_fd_rel_error(params, batch, grads, 1e-5) < 1e-4);
}

TEST_CASE("frozen layers report identically zero gradients") {
    Rng rng(77);
    const auto cfg = tiny_config(56);
    const auto params = init_model(cfg);
    const auto batch = random_batch(rng, cfg, 4);

    const ModelGrads grads = compute_gradients(params, batch, /*frozen_layers=*/1);
    bool layer1_zero = true, layer2_nonzero = false, embed_nonzero = false;
    for_each_tensor(grads, [&](const std::string& name, int layer, const Matrix& m) {
        if (layer == 1) layer1_zero = layer1_zero && tensor_is_zero(m);
        if (layer == 2 && !tensor_is_zero(m)) layer2_nonzero = true;
        if (name == "tok_embed" && !tensor_is_zero(m)) embed_nonzero = true;
    });
    CHECK(layer1_zero);
    CHECK(layer2_nonzero);
    CHECK(embed_nonzero);  // gradient still flows through frozen layers
}

TEST_CASE("duplicating every sample leaves the mean gradient unchanged") {
    Rng rng(88);
    const auto cfg = tiny_config(57);
    const auto params = init_model(cfg);
    const auto batch = random_batch(rng, cfg, 4);
    std::vector<TrainSample> doubled;
    for (const auto& s : batch) {
        doubled.push_back(s);
        doubled.push_back(s);
    }
    const ModelGrads g1 = compute_gradients(params, batch, 0);
    const ModelGrads g2 = compute_gradients(params, doubled, 0);
    std::vector<const Matrix*> t1, t2;
    for_each_tensor(g1, [&](const std::string&, int, const Matrix& m) { t1.push_back(&m); });
    for_each_tensor(g2, [&](const std::string&, int, const Matrix& m) { t2.push_back(&m); });
    for (std::size_t t = 0; t < t1.size(); ++t) {
        for (std::size_t j = 0; j < t1[t]->a.size(); ++j) {
            CHECK(t1[t]->a[j] == doctest::Approx(t2[t]->a[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("gradients do not depend on the worker count") {
    Rng rng(89);
    const auto cfg = tiny_config(58);
    const auto params = init_model(cfg);
    const auto batch = random_batch(rng, cfg, 9);
    const ModelGrads g1 = compute_gradients(params, batch, 0, /*workers=*/1);
    const ModelGrads g2 = compute_gradients(params, batch, 0, /*workers=*/4);
    std::vector<const Matrix*> t1, t2;
    for_each_tensor(g1, [&](const std::string&, int, const Matrix& m) { t1.push_back(&m); });
    for_each_tensor(g2, [&](const std::string&, int, const Matrix& m) { t2.push_back(&m); });
    for (std::size_t t = 0; t < t1.size(); ++t) CHECK(t1[t]->a == t2[t]->a);
}

TEST_CASE("optimizer_step follows the bias-corrected Adam update") {
    const auto cfg = tiny_config(60);
    auto params = init_model(cfg);
    const auto before = params;
    auto state = AdamState::make(cfg);
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.frozen_layers = 0;

    SUBCASE("zero gradients leave parameters unchanged") {
        ModelGrads zero;
        zero.allocate(cfg);
        optimizer_step(params, zero, state, tc);
        bool same = true;
        std::vector<const Matrix*> ta, tb;
        for_each_tensor(params, [&](const std::string&, int, const Matrix& m) { ta.push_back(&m); });
        for_each_tensor(before, [&](const std::string&, int, const Matrix& m) { tb.push_back(&m); });
        for (std::size_t t = 0; t < ta.size(); ++t) same = same && ta[t]->a == tb[t]->a;
        CHECK(same);
    }

    SUBCASE("first step with a constant gradient has magnitude ~ lr") {
        ModelGrads g;
        g.allocate(cfg);
        const double gv = 0.5;
        for_each_tensor(g, [&](const std::string&, int, Matrix& m) {
            std::fill(m.a.begin(), m.a.end(), gv);
        });
        optimizer_step(params, g, state, tc);
        // bias-corrected first step: lr * g / (|g| + eps)
        const double expected = tc.learning_rate * gv / (gv + tc.adam_eps);
        CHECK(params.tok_embed.at(3, 3) ==
              doctest::Approx(before.tok_embed.at(3, 3) - expected).epsilon(1e-12));
        CHECK(params.layers[1].w1.at(2, 5) ==
              doctest::Approx(before.layers[1].w1.at(2, 5) - expected).epsilon(1e-12));
    }

    SUBCASE("identical inputs give identical outputs") {
        ModelGrads g;
        g.allocate(cfg);
        Rng rng(5);
        for_each_tensor(g, [&](const std::string&, int, Matrix& m) {
            for (auto& x : m.a) x = rng.uniform(-1.0, 1.0);
        });
        auto params2 = before;
        auto state2 = AdamState::make(cfg);
        optimizer_step(params, g, state, tc);
        optimizer_step(params2, g, state2, tc);
        CHECK(params.tok_embed.a == params2.tok_embed.a);
        CHECK(params.layers[0].wq.a == params2.layers[0].wq.a);
    }
}

TEST_CASE("fit selects the best validation-F1 epoch and freezes frozen layers") {
    Rng rng(99);
    ModelConfig cfg = tiny_config(61);
    cfg.n_layers = 3;  // so frozen = 1 by the one-third default
    const auto init = init_model(cfg);

    // Separable toy task: class 1 sequences start with token 1.
    std::vector<TrainSample> train, val;
    for (int i = 0; i < 24; ++i) {
        const int label = i % 2;
        std::vector<TokenId> toks;
        toks.push_back(label == 1 ? 1 : 2);
        toks.push_back(3 + (i % 5));
        toks.push_back(9 + (i % 7));
        auto& dst = i < 16 ? train : val;
        dst.push_back(make_sample("t" + std::to_string(i), toks, label, cfg.max_len));
    }

    TrainConfig tc;
    tc.learning_rate = 5e-3;
    tc.epochs = 4;
    tc.batch_size = 8;
    tc.seed = 7;
    const FitResult res = fit(init, train, val, tc);

    REQUIRE(res.history.size() == 4);
    // the returned snapshot is the first epoch attaining the max F1
    double best = -1.0;
    int best_epoch = 0;
    for (const auto& e : res.history) {
        if (e.val_f1 > best) {
            best = e.val_f1;
            best_epoch = e.epoch;
        }
    }
    CHECK(res.best_epoch == best_epoch);
    CHECK(res.best_val_f1 == best);

    // frozen layer 1 is bit-identical to the initial weights
    CHECK(res.params.layers[0].wq.a == init.layers[0].wq.a);
    CHECK(res.params.layers[0].w1.a == init.layers[0].w1.a);
    CHECK(res.params.layers[0].ln2_g.a == init.layers[0].ln2_g.a);
    // an unfrozen layer moved
    CHECK(res.params.layers[2].wq.a != init.layers[2].wq.a);

    SUBCASE("one epoch returns that epoch") {
        TrainConfig one = tc;
        one.epochs = 1;
        const FitResult r1 = fit(init, train, val, one);
        CHECK(r1.best_epoch == 1);
        CHECK(r1.history.size() == 1);
    }
    SUBCASE("empty splits are rejected") {
        CHECK_THROWS_AS(fit(init, {}, val, tc), Error);
        CHECK_THROWS_AS(fit(init, train, {}, tc), Error);
    }
}

TEST_CASE("full-batch loss is non-increasing for a small learning rate") {
    Rng rng(123);
    const auto cfg = tiny_config(62);
    const auto init = init_model(cfg);
    std::vector<TrainSample> train, val;
    for (int i = 0; i < 8; ++i) {
        const int label = i % 2;
        train.push_back(make_sample("t" + std::to_string(i),
                                    {static_cast<TokenId>(label == 1 ? 1 : 2),
                                     static_cast<TokenId>(3 + i % 4)},
                                    label, cfg.max_len));
    }
    val = train;

    TrainConfig tc;
    tc.learning_rate = 1e-4;
    tc.epochs = 6;
    tc.batch_size = 8;  // full batch
    tc.frozen_layers = 0;
    tc.seed = 3;
    const FitResult res = fit(init, train, val, tc);
    for (std::size_t e = 1; e < res.history.size(); ++e) {
        CHECK(res.history[e].train_loss <= res.history[e - 1].train_loss + 1e-12);
    }
}

TEST_CASE("metric_auc equals exhaustive pair counting") {
    CHECK(metric_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    CHECK(metric_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
    CHECK(metric_auc({0.9, 0.8, 0.7, 0.1}, {1, 0, 1, 0}) == doctest::Approx(0.75));
    CHECK_THROWS_AS(metric_auc({0.9, 0.8}, {1, 1}), Error);

    // pair-counting oracle over random instances with deliberate ties
    Rng rng(314);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(199);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.uniform_int(8)) / 7.0;  // coarse: many ties
            labels[i] = static_cast<int>(rng.uniform_int(2));
        }
        labels[0] = 0;
        labels[n - 1] = 1;  // both classes present

        double wins = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != 1) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[j] != 0) continue;
                ++pairs;
                if (scores[i] > scores[j]) {
                    wins += 1.0;
                } else if (scores[i] == scores[j]) {
                    wins += 0.5;
                }
            }
        }
        const double oracle = wins / static_cast<double>(pairs);
        CHECK(metric_auc(scores, labels) == doctest::Approx(oracle).epsilon(1e-12));
    }
}

TEST_CASE("metric_auc is invariant under strictly monotone transforms") {
    Rng rng(271);
    std::vector<double> scores(60);
    std::vector<int> labels(60);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.uniform(-2.0, 2.0);
        labels[i] = static_cast<int>(rng.uniform_int(2));
    }
    labels[0] = 0;
    labels[1] = 1;
    const double base = metric_auc(scores, labels);
    std::vector<double> exp_scores = scores, affine_scores = scores;
    for (auto& s : exp_scores) s = std::exp(s);
    for (auto& s : affine_scores) s = 3.0 * s + 11.0;
    CHECK(metric_auc(exp_scores, labels) == doctest::Approx(base).epsilon(1e-12));
    CHECK(metric_auc(affine_scores, labels) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("metric_sens_spec_f1 matches the hand confusion matrix") {
    SUBCASE("all correct") {
        const auto m = metric_sens_spec_f1({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0});
        CHECK(m.sensitivity == 1.0);
        CHECK(m.specificity == 1.0);
        CHECK(m.f1 == 1.0);
    }
    SUBCASE("all predicted positive") {
        const auto m = metric_sens_spec_f1({0.9, 0.8, 0.7, 0.6}, {1, 1, 0, 0});
        CHECK(m.sensitivity == 1.0);
        CHECK(m.specificity == 0.0);
    }
    SUBCASE("TP=2 FP=1 FN=1 TN=1") {
        const auto m = metric_sens_spec_f1({0.9, 0.8, 0.3, 0.7, 0.2}, {1, 1, 1, 0, 0});
        CHECK(m.sensitivity == doctest::Approx(2.0 / 3.0));
        CHECK(m.specificity == doctest::Approx(0.5));
        CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("threshold is inclusive") {
        const auto m = metric_sens_spec_f1({0.5, 0.4}, {1, 0});
        CHECK(m.sensitivity == 1.0);
        CHECK(m.specificity == 1.0);
    }
}

TEST_CASE("cross_validate reports k folds and zero spread on identical folds") {
    const auto cfg = tiny_config(63);

    std::vector<TrainSample> samples;
    // 25 identical class-0 and 25 identical class-1 samples: every fold sees
    // the same data, so per-fold metrics must be identical.
    for (int i = 0; i < 50; ++i) {
        const int label = i % 2;
        samples.push_back(make_sample("s" + std::to_string(i),
                                      {static_cast<TokenId>(label == 1 ? 1 : 2), 5, 9}, label,
                                      cfg.max_len));
    }
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.epochs = 2;
    tc.batch_size = 10;
    tc.frozen_layers = 0;
    CvOptions opts;
    opts.k = 5;
    opts.seed = 17;
    const MetricsReport report = cross_validate(samples, cfg, {tc}, opts);

    CHECK(report.auc.per_fold.size() == 5);
    CHECK(report.f1.per_fold.size() == 5);
    CHECK(report.auc.stddev == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(report.f1.stddev == doctest::Approx(0.0).epsilon(1e-12));
    for (double v : report.auc.per_fold) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("summarize computes mean and population standard deviation") {
    const auto s = summarize({0.5, 0.7});
    CHECK(s.mean == doctest::Approx(0.6));
    CHECK(s.stddev == doctest::Approx(0.1));
}
