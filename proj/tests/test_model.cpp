#include <doctest.h>

#include "mtc/model.hpp"
#include "test_util.hpp"

using namespace mtc;

namespace {

ModelConfig tiny_config(int vocab, Activation act = Activation::Tanh) {
    ModelConfig cfg;
    cfg.token_vocab = vocab;
    cfg.embed_dim = 8;
    cfg.hidden = 4;
    cfg.attn_dim = 0;
    cfg.ffnn_h1 = 8;
    cfg.ffnn_h2 = 6;
    cfg.code_dim = 6;
    cfg.activation = act;
    return cfg;
}

Example tiny_example(std::uint64_t seed, int vocab, int n, int m, int l) {
    std::mt19937_64 rng(seed);
    Example ex;
    ex.id = "tiny";
    for (int t = 0; t < n; ++t)
        ex.tokens.push_back(static_cast<int>(rng() % static_cast<unsigned>(vocab)));
    for (int i = 0; i < m; ++i)
        ex.positions.push_back(static_cast<int>(rng() % static_cast<unsigned>(n)));
    for (int i = 0; i < m; ++i) {
        std::vector<double> target;
        for (int k = 0; k < l; ++k) target.push_back(static_cast<double>(rng() % 3));
        ex.targets.push_back(std::move(target));
    }
    return ex;
}

double loss_of(ModelParams& params, const Example& ex) {
    Trace tr;
    forward_problem(params, ex, tr);
    return loss_value(tr.out, ex.targets);
}

// Independent single-step gated cell, written directly from the update rules.
void reference_lstm_step(const nn::Mat& wx, const nn::Mat& wh, const nn::Vec& b, const double* x,
                         const nn::Vec& h_prev, const nn::Vec& c_prev, nn::Vec& h_out,
                         nn::Vec& c_out) {
    int h = static_cast<int>(h_prev.size());
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (int k = 0; k < h; ++k) {
        auto pre = [&](int gate) {
            double s = b[static_cast<std::size_t>(gate * h + k)];
            for (int c = 0; c < wx.cols; ++c) s += wx.at(gate * h + k, c) * x[c];
            for (int c = 0; c < wh.cols; ++c)
                s += wh.at(gate * h + k, c) * h_prev[static_cast<std::size_t>(c)];
            return s;
        };
        double iv = sig(pre(0)), fv = sig(pre(1)), gv = std::tanh(pre(2)), ov = sig(pre(3));
        c_out[static_cast<std::size_t>(k)] = fv * c_prev[static_cast<std::size_t>(k)] + iv * gv;
        h_out[static_cast<std::size_t>(k)] = ov * std::tanh(c_out[static_cast<std::size_t>(k)]);
    }
}

std::pair<Supervision, std::vector<Example>> synthetic_examples(int count, std::uint64_t seed,
                                                                TokenVocab& tv_out) {
    auto records = generate_synthetic(count, seed);
    LoadResult lr;
    for (const auto& r : records)
        lr.problems.push_back(make_problem(r.id, r.text, r.equation, r.answer));
    Supervision sup = make_supervision(lr, 1.0);
    tv_out = TokenVocab::build(sup.problems);
    std::vector<Example> examples;
    for (const auto& p : sup.problems) examples.push_back(example_from_problem(p, tv_out));
    return {std::move(sup), std::move(examples)};
}

}  // namespace

TEST_CASE("encoder: shapes and the zero-parameter fixed point") {
    ModelConfig cfg = tiny_config(10);
    ModelParams zero = ModelParams::like(cfg);
    Trace tr;
    encode_problem(zero, {1, 2, 3, 4, 5}, tr);
    REQUIRE(tr.H.size() == 5);
    for (const auto& row : tr.H) {
        REQUIRE(row.size() == 8);  // 2*hidden
        for (double v : row) CHECK(v == 0.0);
    }
    encode_problem(zero, {7}, tr);
    CHECK(tr.H.size() == 1);
}

TEST_CASE("encoder: forward states of X are backward states of reverse(X)") {
    ModelConfig cfg = tiny_config(12);
    ModelParams p = ModelParams::init(cfg, 99);
    p.bwd = p.fwd;  // tie the two directions
    std::vector<int> x{3, 1, 4, 1, 5, 9};
    std::vector<int> rx(x.rbegin(), x.rend());
    Trace tx, trx;
    encode_problem(p, x, tx);
    encode_problem(p, rx, trx);
    int n = static_cast<int>(x.size()), h = cfg.hidden;
    for (int t = 0; t < n; ++t)
        for (int k = 0; k < h; ++k)
            CHECK(trx.H[static_cast<std::size_t>(t)][static_cast<std::size_t>(h + k)] ==
                  doctest::Approx(
                      tx.H[static_cast<std::size_t>(n - 1 - t)][static_cast<std::size_t>(k)])
                      .epsilon(1e-12));
}

TEST_CASE("encoder: matches an independently written cell step") {
    ModelConfig cfg = tiny_config(6);
    ModelParams p = ModelParams::init(cfg, 2024);
    Trace tr;
    encode_problem(p, {2, 4}, tr);
    int h = cfg.hidden;
    nn::Vec h0(static_cast<std::size_t>(h), 0.0), c0(static_cast<std::size_t>(h), 0.0);
    nn::Vec h1(static_cast<std::size_t>(h)), c1(static_cast<std::size_t>(h));
    reference_lstm_step(p.fwd.wx, p.fwd.wh, p.fwd.b, p.embed.row(2), h0, c0, h1, c1);
    for (int k = 0; k < h; ++k)
        CHECK(tr.fw.h[0][static_cast<std::size_t>(k)] ==
              doctest::Approx(h1[static_cast<std::size_t>(k)]).epsilon(1e-12));
    nn::Vec h2(static_cast<std::size_t>(h)), c2(static_cast<std::size_t>(h));
    reference_lstm_step(p.fwd.wx, p.fwd.wh, p.fwd.b, p.embed.row(4), h1, c1, h2, c2);
    for (int k = 0; k < h; ++k)
        CHECK(tr.fw.h[1][static_cast<std::size_t>(k)] ==
              doctest::Approx(h2[static_cast<std::size_t>(k)]).epsilon(1e-12));
}

TEST_CASE("number representation: rows of H, bad positions rejected") {
    ModelConfig cfg = tiny_config(10);
    ModelParams p = ModelParams::init(cfg, 7);
    Example ex = tiny_example(5, 10, 6, 3, cfg.code_dim);
    Trace tr;
    forward_problem(p, ex, tr);
    for (std::size_t i = 0; i < ex.positions.size(); ++i) {
        const auto& z = tr.z[i];
        const auto& hq = tr.H[static_cast<std::size_t>(ex.positions[i])];
        for (int k = 0; k < 2 * cfg.hidden; ++k)
            CHECK(z[static_cast<std::size_t>(2 * cfg.hidden + k)] ==
                  hq[static_cast<std::size_t>(k)]);
    }
    Example bad = ex;
    bad.positions[0] = 99;
    CHECK_THROWS_AS(forward_problem(p, bad, tr), PositionOutOfRange);
    Example empty = ex;
    empty.positions.clear();
    empty.targets.clear();
    forward_problem(p, empty, tr);
    CHECK(tr.m == 0);
}

TEST_CASE("attention: singleton softmax, uniform scores, weights sum to one") {
    ModelConfig cfg = tiny_config(10);
    ModelParams p = ModelParams::init(cfg, 11);
    Example one;
    one.tokens = {3};
    one.positions = {0};
    Trace tr;
    forward_problem(p, one, tr);
    CHECK(tr.alpha[0][0] == doctest::Approx(1.0));
    for (int k = 0; k < 2 * cfg.hidden; ++k)
        CHECK(tr.context[0][static_cast<std::size_t>(k)] ==
              doctest::Approx(tr.H[0][static_cast<std::size_t>(k)]).epsilon(1e-12));

    // zero attention weights make every score equal: context = mean of H
    ModelParams q = ModelParams::init(cfg, 12);
    std::fill(q.attn_w.a.begin(), q.attn_w.a.end(), 0.0);
    Example ex = tiny_example(5, 10, 5, 2, cfg.code_dim);
    forward_problem(q, ex, tr);
    for (int k = 0; k < 2 * cfg.hidden; ++k) {
        double mean = 0.0;
        for (int t = 0; t < 5; ++t)
            mean += tr.H[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
        mean /= 5.0;
        CHECK(tr.context[0][static_cast<std::size_t>(k)] == doctest::Approx(mean).epsilon(1e-12));
    }

    // alphas are a probability distribution
    ModelParams r = ModelParams::init(cfg, 13);
    forward_problem(r, ex, tr);
    for (int i = 0; i < tr.m; ++i) {
        double sum = 0.0;
        for (double a : tr.alpha[static_cast<std::size_t>(i)]) {
            CHECK(a >= 0.0);
            sum += a;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("generator: zero weights emit the output bias, reference arithmetic agrees") {
    ModelConfig cfg = tiny_config(10, Activation::ReLU);
    ModelParams p = ModelParams::like(cfg);
    for (std::size_t k = 0; k < p.b3.size(); ++k) p.b3[k] = 0.5 * static_cast<double>(k) - 1.0;
    Example ex = tiny_example(17, 10, 4, 2, cfg.code_dim);
    Trace tr;
    forward_problem(p, ex, tr);
    for (int i = 0; i < tr.m; ++i) {
        REQUIRE(tr.out[static_cast<std::size_t>(i)].size() ==
                static_cast<std::size_t>(cfg.code_dim));
        for (int k = 0; k < cfg.code_dim; ++k)
            CHECK(tr.out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] ==
                  doctest::Approx(p.b3[static_cast<std::size_t>(k)]));
    }

    // independent three-layer arithmetic on the traced z
    ModelParams q = ModelParams::init(cfg, 4242);
    forward_problem(q, ex, tr);
    for (int i = 0; i < tr.m; ++i) {
        const auto& z = tr.z[static_cast<std::size_t>(i)];
        nn::Vec z1(static_cast<std::size_t>(cfg.ffnn_h1));
        for (int r = 0; r < cfg.ffnn_h1; ++r) {
            double s = q.b1[static_cast<std::size_t>(r)];
            for (int c = 0; c < q.w1.cols; ++c) s += q.w1.at(r, c) * z[static_cast<std::size_t>(c)];
            z1[static_cast<std::size_t>(r)] = s > 0 ? s : 0.0;
        }
        nn::Vec z2(static_cast<std::size_t>(cfg.ffnn_h2));
        for (int r = 0; r < cfg.ffnn_h2; ++r) {
            double s = q.b2[static_cast<std::size_t>(r)];
            for (int c = 0; c < q.w2.cols; ++c)
                s += q.w2.at(r, c) * z1[static_cast<std::size_t>(c)];
            z2[static_cast<std::size_t>(r)] = s > 0 ? s : 0.0;
        }
        for (int r = 0; r < cfg.code_dim; ++r) {
            double s = q.b3[static_cast<std::size_t>(r)];
            for (int c = 0; c < q.w3.cols; ++c)
                s += q.w3.at(r, c) * z2[static_cast<std::size_t>(c)];
            CHECK(tr.out[static_cast<std::size_t>(i)][static_cast<std::size_t>(r)] ==
                  doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("loss: exact values, homogeneity, shape errors") {
    std::vector<nn::Vec> outs{{0.0, 0.0}};
    std::vector<std::vector<double>> targets{{1.0, 0.0}};
    CHECK(loss_value(outs, targets) == doctest::Approx(0.5));
    CHECK(loss_value({{1.0, 0.0}}, targets) == doctest::Approx(0.0));
    // doubling residuals quadruples the loss
    CHECK(loss_value({{-1.0, 0.0}}, targets) == doctest::Approx(2.0));
    CHECK_THROWS_AS(loss_value({{1.0}}, targets), ShapeMismatch);
    CHECK_THROWS_AS(loss_value({}, targets), ShapeMismatch);
}

TEST_CASE("gradient check: analytic gradients match central finite differences") {
    const int vocab = 9, n = 5, m = 2, l = 6;
    for (Activation act : {Activation::Tanh, Activation::ReLU}) {
        ModelConfig cfg = tiny_config(vocab, act);
        std::uint64_t seed = act == Activation::Tanh ? 301 : 907;
        ModelParams params = ModelParams::init(cfg, seed);
        Example ex = tiny_example(55, vocab, n, m, l);

        if (act == Activation::ReLU) {
            // keep pre-activations clear of the kink so the difference
            // quotient stays one-sided
            Trace probe;
            forward_problem(params, ex, probe);
            double margin = 1e300;
            for (int i = 0; i < probe.m; ++i) {
                for (double a : probe.a1[static_cast<std::size_t>(i)])
                    margin = std::min(margin, std::abs(a));
                for (double a : probe.a2[static_cast<std::size_t>(i)])
                    margin = std::min(margin, std::abs(a));
            }
            REQUIRE(margin > 1e-3);
        }

        ModelParams grads = ModelParams::like(cfg);
        Trace tr;
        backward_problem(params, ex, tr, grads);

        const double eps = 1e-4;
        std::vector<std::pair<const char*, nn::Vec*>> param_tensors, grad_tensors;
        params.for_each_tensor([&](const char* name, nn::Vec& v, int, int) {
            param_tensors.emplace_back(name, &v);
        });
        grads.for_each_tensor([&](const char* name, nn::Vec& v, int, int) {
            grad_tensors.emplace_back(name, &v);
        });
        for (std::size_t t = 0; t < param_tensors.size(); ++t) {
            nn::Vec& pv = *param_tensors[t].second;
            nn::Vec& gv = *grad_tensors[t].second;
            double worst = 0.0;
            for (std::size_t k = 0; k < pv.size(); ++k) {
                double keep = pv[k];
                pv[k] = keep + eps;
                double up = loss_of(params, ex);
                pv[k] = keep - eps;
                double down = loss_of(params, ex);
                pv[k] = keep;
                double numeric = (up - down) / (2 * eps);
                double denom = std::max({std::abs(numeric), std::abs(gv[k]), 1e-6});
                worst = std::max(worst, std::abs(numeric - gv[k]) / denom);
            }
            INFO("tensor ", param_tensors[t].first, " activation ",
                 act == Activation::Tanh ? "tanh" : "relu");
            CHECK(worst <= 1e-4);
        }
    }
}

TEST_CASE("training: zero learning rate leaves parameters untouched") {
    TokenVocab tv;
    auto [sup, examples] = synthetic_examples(8, 5150, tv);
    ModelConfig cfg = tiny_config(tv.size());
    cfg.code_dim = sup.vocab.size();
    TrainConfig tc;
    tc.lr = 0.0;
    tc.epochs = 3;
    tc.seed = 77;
    tc.eval_every = 0;
    TrainResult out = train(examples, {}, cfg, tc, sup.vocab);

    ModelParams fresh = ModelParams::init(cfg, tc.seed);
    std::vector<nn::Vec*> a, b;
    out.params.for_each_tensor([&](const char*, nn::Vec& v, int, int) { a.push_back(&v); });
    fresh.for_each_tensor([&](const char*, nn::Vec& v, int, int) { b.push_back(&v); });
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(*a[t] == *b[t]);
}

TEST_CASE("training: identical seeds give bit-identical logs") {
    TokenVocab tv;
    auto [sup, examples] = synthetic_examples(12, 8080, tv);
    ModelConfig cfg = tiny_config(tv.size());
    cfg.code_dim = sup.vocab.size();
    TrainConfig tc;
    tc.lr = 0.002;
    tc.epochs = 4;
    tc.seed = 31;
    tc.batch_size = 4;
    TrainResult r1 = train(examples, examples, cfg, tc, sup.vocab);
    TrainResult r2 = train(examples, examples, cfg, tc, sup.vocab);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i)
        CHECK(r1.log[i].deterministic_json().dump() == r2.log[i].deterministic_json().dump());
}

TEST_CASE("training: worker count is part of the deterministic configuration") {
    TokenVocab tv;
    auto [sup, examples] = synthetic_examples(10, 4444, tv);
    ModelConfig cfg = tiny_config(tv.size());
    cfg.code_dim = sup.vocab.size();
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 5;
    tc.batch_size = 6;
    tc.threads = 2;
    TrainResult r1 = train(examples, {}, cfg, tc, sup.vocab);
    TrainResult r2 = train(examples, {}, cfg, tc, sup.vocab);
    for (std::size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].loss == r2.log[i].loss);
}

TEST_CASE("training: divergence raises with diagnostics") {
    TokenVocab tv;
    auto [sup, examples] = synthetic_examples(6, 321, tv);
    ModelConfig cfg = tiny_config(tv.size());
    cfg.code_dim = sup.vocab.size();
    TrainConfig tc;
    tc.lr = 1000.0;  // absurd rate forces a non-finite loss quickly
    tc.optimizer = Optimizer::Sgd;
    tc.epochs = 50;
    tc.clip_norm = 0.0;
    tc.eval_every = 0;
    CHECK_THROWS_AS(train(examples, {}, cfg, tc, sup.vocab), DivergenceDetected);
}

TEST_CASE("prediction: gold vectors decode to the gold answer; garbage is scored, not thrown") {
    TokenVocab tv;
    auto [sup, examples] = synthetic_examples(10, 606, tv);
    for (const auto& p : sup.problems) {
        MTree t = decode(p.vectors, sup.vocab, p.values);
        CHECK(answers_equal(eval_mtree(t), p.answer));
    }
    // all-zero prediction rounds to all-None: scored incorrect via EmptyTree
    ModelConfig cfg = tiny_config(tv.size());
    cfg.code_dim = sup.vocab.size();
    ModelParams zero = ModelParams::like(cfg);
    Prediction pred = predict_answer(zero, examples[0], sup.vocab);
    CHECK(!pred.ok);
    CHECK(!pred.error.empty());
}

TEST_CASE("checkpoints: JSON round-trip preserves predictions bit-exactly") {
    TokenVocab tv;
    auto [sup, examples] = synthetic_examples(6, 2121, tv);
    ModelConfig cfg = tiny_config(tv.size());
    cfg.code_dim = sup.vocab.size();
    ModelParams params = ModelParams::init(cfg, 9001);

    Json j = checkpoint_to_json(params, tv, sup.vocab);
    Checkpoint ck = checkpoint_from_json(j);
    Trace t1, t2;
    forward_problem(params, examples[0], t1);
    forward_problem(ck.params, examples[0], t2);
    for (int i = 0; i < t1.m; ++i)
        for (int k = 0; k < cfg.code_dim; ++k)
            CHECK(t1.out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] ==
                  t2.out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
    CHECK(ck.tokens.tokens == tv.tokens);
    CHECK(ck.codes.codes == sup.vocab.codes);
}

TEST_CASE("overfit: a tiny model memorizes a small corpus") {
    TokenVocab tv;
    auto [sup, examples] = synthetic_examples(12, 1995, tv);
    ModelConfig cfg;
    cfg.token_vocab = tv.size();
    cfg.embed_dim = 16;
    cfg.hidden = 24;
    cfg.ffnn_h1 = 32;
    cfg.ffnn_h2 = 24;
    cfg.code_dim = sup.vocab.size();
    cfg.activation = Activation::ReLU;
    TrainConfig tc;
    tc.lr = 0.002;
    tc.epochs = 150;
    tc.batch_size = 6;
    tc.seed = 7;
    tc.eval_every = 25;
    TrainResult out = train(examples, examples, cfg, tc, sup.vocab);
    double best = 0.0;
    for (const auto& e : out.log)
        if (e.dev_accuracy) best = std::max(best, *e.dev_accuracy);
    CHECK(best == doctest::Approx(1.0));

    // loss trend: after epoch 10 the loss descends (5% slack per epoch) until
    // it converges below 2% of its epoch-10 value
    double floor = out.log[9].loss * 0.02;
    for (std::size_t e = 10; e < out.log.size(); ++e) {
        if (out.log[e].loss <= floor) continue;
        CHECK(out.log[e].loss <= out.log[e - 1].loss * 1.05);
    }
}
