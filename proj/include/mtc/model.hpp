#pragma once

// The seq2code learner. A bidirectional LSTM encodes the masked token
// sequence; each value occurrence takes its hidden state plus an attention
// context over all tokens; a three-layer feed-forward generator emits one
// real-valued count vector per occurrence. Training minimizes the summed
// per-occurrence mean squared error by full backpropagation through the
// generator, the attention and both recurrent directions. Inference rounds
// the predicted counts, decodes the M-tree and evaluates it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mtc/codec.hpp"
#include "mtc/dataset.hpp"
#include "mtc/errors.hpp"
#include "mtc/io.hpp"
#include "mtc/nn.hpp"

namespace mtc {

enum class Activation { ReLU, Tanh };
enum class Optimizer { Sgd, Momentum, Adam };

struct ModelConfig {
    int token_vocab = 0;
    int embed_dim = 128;  // word embedding size
    int hidden = 512;     // LSTM hidden size per direction
    int attn_dim = 0;     // attention layer size; 0 means `hidden`
    int ffnn_h1 = 2048;
    int ffnn_h2 = 1024;
    int code_dim = 0;  // output vector length l
    Activation activation = Activation::ReLU;

    int d_a() const { return attn_dim > 0 ? attn_dim : hidden; }

    Json to_json() const {
        return Json{{"token_vocab", token_vocab}, {"embed_dim", embed_dim},
                    {"hidden", hidden},           {"attn_dim", attn_dim},
                    {"ffnn_h1", ffnn_h1},         {"ffnn_h2", ffnn_h2},
                    {"code_dim", code_dim},
                    {"activation", activation == Activation::ReLU ? "relu" : "tanh"}};
    }
    static ModelConfig from_json(const Json& j) {
        ModelConfig c;
        c.token_vocab = j.at("token_vocab").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.hidden = j.at("hidden").get<int>();
        c.attn_dim = j.value("attn_dim", 0);
        c.ffnn_h1 = j.at("ffnn_h1").get<int>();
        c.ffnn_h2 = j.at("ffnn_h2").get<int>();
        c.code_dim = j.at("code_dim").get<int>();
        c.activation = j.value("activation", "relu") == "tanh" ? Activation::Tanh : Activation::ReLU;
        return c;
    }
};

struct TrainConfig {
    double lr = 0.002;
    int batch_size = 16;
    int epochs = 50;
    std::uint64_t seed = 1;
    double clip_norm = 5.0;  // <= 0 disables clipping
    Optimizer optimizer = Optimizer::Adam;
    double momentum = 0.9;
    int threads = 1;
    int eval_every = 1;  // dev-accuracy cadence in epochs; 0 = never
};

// Gated recurrent cell parameters, gates stacked [input; forget; cell; output].
struct LstmCell {
    nn::Mat wx;  // 4h x embed
    nn::Mat wh;  // 4h x h
    nn::Vec b;   // 4h
};

struct ModelParams {
    ModelConfig config;
    nn::Mat embed;  // vocab x embed_dim
    LstmCell fwd, bwd;
    nn::Mat attn_w;  // d_a x 4h   (left half acts on e_i, right half on h_t)
    nn::Vec attn_u;  // d_a
    nn::Mat w1;
    nn::Vec b1;
    nn::Mat w2;
    nn::Vec b2;
    nn::Mat w3;
    nn::Vec b3;

    static ModelParams like(const ModelConfig& cfg) {
        ModelParams p;
        p.config = cfg;
        int h = cfg.hidden, da = cfg.d_a();
        p.embed = nn::Mat::zeros(cfg.token_vocab, cfg.embed_dim);
        for (LstmCell* cell : {&p.fwd, &p.bwd}) {
            cell->wx = nn::Mat::zeros(4 * h, cfg.embed_dim);
            cell->wh = nn::Mat::zeros(4 * h, h);
            cell->b.assign(static_cast<std::size_t>(4 * h), 0.0);
        }
        p.attn_w = nn::Mat::zeros(da, 4 * h);
        p.attn_u.assign(static_cast<std::size_t>(da), 0.0);
        p.w1 = nn::Mat::zeros(cfg.ffnn_h1, 4 * h);
        p.b1.assign(static_cast<std::size_t>(cfg.ffnn_h1), 0.0);
        p.w2 = nn::Mat::zeros(cfg.ffnn_h2, cfg.ffnn_h1);
        p.b2.assign(static_cast<std::size_t>(cfg.ffnn_h2), 0.0);
        p.w3 = nn::Mat::zeros(cfg.code_dim, cfg.ffnn_h2);
        p.b3.assign(static_cast<std::size_t>(cfg.code_dim), 0.0);
        return p;
    }

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
        ModelParams p = like(cfg);
        std::mt19937_64 rng(seed);
        int h = cfg.hidden;
        nn::init_uniform(p.embed, cfg.embed_dim, rng);
        for (LstmCell* cell : {&p.fwd, &p.bwd}) {
            nn::init_uniform(cell->wx, cfg.embed_dim, rng);
            nn::init_uniform(cell->wh, h, rng);
            nn::init_uniform(cell->b, h, rng);
        }
        nn::init_uniform(p.attn_w, 4 * h, rng);
        nn::init_uniform(p.attn_u, cfg.d_a(), rng);
        nn::init_uniform(p.w1, 4 * h, rng);
        nn::init_uniform(p.b1, 4 * h, rng);
        nn::init_uniform(p.w2, cfg.ffnn_h1, rng);
        nn::init_uniform(p.b2, cfg.ffnn_h1, rng);
        nn::init_uniform(p.w3, cfg.ffnn_h2, rng);
        nn::init_uniform(p.b3, cfg.ffnn_h2, rng);
        return p;
    }

    // Fixed tensor order shared by the optimizer, the checkpoint format and
    // the gradient checks.
    template <typename F>
    void for_each_tensor(F&& f) {
        f("embed", embed.a, embed.rows, embed.cols);
        f("fwd.wx", fwd.wx.a, fwd.wx.rows, fwd.wx.cols);
        f("fwd.wh", fwd.wh.a, fwd.wh.rows, fwd.wh.cols);
        f("fwd.b", fwd.b, static_cast<int>(fwd.b.size()), 1);
        f("bwd.wx", bwd.wx.a, bwd.wx.rows, bwd.wx.cols);
        f("bwd.wh", bwd.wh.a, bwd.wh.rows, bwd.wh.cols);
        f("bwd.b", bwd.b, static_cast<int>(bwd.b.size()), 1);
        f("attn.w", attn_w.a, attn_w.rows, attn_w.cols);
        f("attn.u", attn_u, static_cast<int>(attn_u.size()), 1);
        f("gen.w1", w1.a, w1.rows, w1.cols);
        f("gen.b1", b1, static_cast<int>(b1.size()), 1);
        f("gen.w2", w2.a, w2.rows, w2.cols);
        f("gen.b2", b2, static_cast<int>(b2.size()), 1);
        f("gen.w3", w3.a, w3.rows, w3.cols);
        f("gen.b3", b3, static_cast<int>(b3.size()), 1);
    }
};

// ---------------------------------------------------------------------------
// token vocabulary

struct TokenVocab {
    std::vector<std::string> tokens;  // tokens[0] == "<unk>"
    std::unordered_map<std::string, int> index;

    int id(const std::string& tok) const {
        auto it = index.find(tok);
        return it == index.end() ? 0 : it->second;
    }
    int size() const { return static_cast<int>(tokens.size()); }

    // Most frequent `max_words` tokens of the training rows; mask tokens are
    // always kept; everything else maps to <unk>.
    static TokenVocab build(const std::vector<Problem>& problems, int max_words = 2500) {
        std::unordered_map<std::string, long long> freq;
        for (const auto& p : problems)
            if (p.is_train)
                for (const auto& t : p.tokens) ++freq[t];
        std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        TokenVocab v;
        v.tokens.push_back("<unk>");
        auto is_mask = [](const std::string& t) { return t.rfind("NUM_", 0) == 0; };
        for (const auto& [tok, count] : ranked) {
            (void)count;
            if (is_mask(tok)) v.tokens.push_back(tok);
        }
        for (const auto& [tok, count] : ranked) {
            (void)count;
            if (is_mask(tok)) continue;
            if (static_cast<int>(v.tokens.size()) >= max_words) break;
            v.tokens.push_back(tok);
        }
        for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.index[v.tokens[i]] = i;
        return v;
    }
};

// One training/evaluation instance.
struct Example {
    std::string id;
    std::vector<int> tokens;                   // vocabulary ids
    std::vector<int> positions;                // q_i per value occurrence
    std::vector<std::vector<double>> targets;  // m x l, empty when uncovered
    std::vector<ValueRef> values;
    double answer = 0.0;
};

inline Example example_from_problem(const Problem& p, const TokenVocab& tv) {
    Example e;
    e.id = p.id;
    e.tokens.reserve(p.tokens.size());
    for (const auto& t : p.tokens) e.tokens.push_back(tv.id(t));
    e.positions = p.positions;
    for (const auto& v : p.vectors)
        e.targets.emplace_back(v.begin(), v.end());
    e.values = p.values;
    e.answer = p.answer;
    return e;
}

// ---------------------------------------------------------------------------
// forward / backward

namespace detail {

inline double activate(double x, Activation act) {
    return act == Activation::ReLU ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}
inline double activate_grad(double pre, Activation act) {
    if (act == Activation::ReLU) return pre > 0.0 ? 1.0 : 0.0;
    double t = std::tanh(pre);
    return 1.0 - t * t;
}

struct LstmTrace {
    // per step: gate activations, cell, tanh(cell), hidden
    std::vector<nn::Vec> i, f, g, o, c, tc, h;
    void resize(int n, int hsize) {
        auto fit = [&](std::vector<nn::Vec>& v) {
            v.resize(static_cast<std::size_t>(n));
            for (auto& row : v) row.assign(static_cast<std::size_t>(hsize), 0.0);
        };
        fit(i);
        fit(f);
        fit(g);
        fit(o);
        fit(c);
        fit(tc);
        fit(h);
    }
};

// One direction over steps 0..n-1 of `xs` (caller supplies the order).
inline void lstm_forward(const LstmCell& cell, const std::vector<const double*>& xs, int h,
                         LstmTrace& tr) {
    int n = static_cast<int>(xs.size());
    tr.resize(n, h);
    nn::Vec z(static_cast<std::size_t>(4 * h));
    for (int t = 0; t < n; ++t) {
        nn::gemv(cell.wx, xs[static_cast<std::size_t>(t)], z.data());
        if (t > 0) nn::gemv_acc(cell.wh, tr.h[static_cast<std::size_t>(t - 1)].data(), z.data());
        for (int k = 0; k < 4 * h; ++k) z[static_cast<std::size_t>(k)] += cell.b[static_cast<std::size_t>(k)];
        auto& I = tr.i[static_cast<std::size_t>(t)];
        auto& F = tr.f[static_cast<std::size_t>(t)];
        auto& G = tr.g[static_cast<std::size_t>(t)];
        auto& O = tr.o[static_cast<std::size_t>(t)];
        auto& C = tr.c[static_cast<std::size_t>(t)];
        auto& TC = tr.tc[static_cast<std::size_t>(t)];
        auto& H = tr.h[static_cast<std::size_t>(t)];
        const nn::Vec* c_prev = t > 0 ? &tr.c[static_cast<std::size_t>(t - 1)] : nullptr;
        for (int k = 0; k < h; ++k) {
            double iv = nn::sigmoid(z[static_cast<std::size_t>(k)]);
            double fv = nn::sigmoid(z[static_cast<std::size_t>(h + k)]);
            double gv = std::tanh(z[static_cast<std::size_t>(2 * h + k)]);
            double ov = nn::sigmoid(z[static_cast<std::size_t>(3 * h + k)]);
            double cv = (c_prev ? (*c_prev)[static_cast<std::size_t>(k)] * fv : 0.0) + iv * gv;
            I[static_cast<std::size_t>(k)] = iv;
            F[static_cast<std::size_t>(k)] = fv;
            G[static_cast<std::size_t>(k)] = gv;
            O[static_cast<std::size_t>(k)] = ov;
            C[static_cast<std::size_t>(k)] = cv;
            double tcv = std::tanh(cv);
            TC[static_cast<std::size_t>(k)] = tcv;
            H[static_cast<std::size_t>(k)] = ov * tcv;
        }
    }
}

// Backprop over the same order; dh_ext[t] is the loss gradient on h_t.
// dx[t] receives the input gradients; cell gradients accumulate into `grad`.
inline void lstm_backward(const LstmCell& cell, const std::vector<const double*>& xs, int h,
                          const LstmTrace& tr, const std::vector<nn::Vec>& dh_ext, LstmCell& grad,
                          std::vector<nn::Vec>& dx) {
    int n = static_cast<int>(xs.size());
    dx.resize(static_cast<std::size_t>(n));
    nn::Vec dh_carry(static_cast<std::size_t>(h), 0.0), dc_carry(static_cast<std::size_t>(h), 0.0);
    nn::Vec dz(static_cast<std::size_t>(4 * h));
    for (int t = n - 1; t >= 0; --t) {
        const auto& I = tr.i[static_cast<std::size_t>(t)];
        const auto& F = tr.f[static_cast<std::size_t>(t)];
        const auto& G = tr.g[static_cast<std::size_t>(t)];
        const auto& O = tr.o[static_cast<std::size_t>(t)];
        const auto& TC = tr.tc[static_cast<std::size_t>(t)];
        const nn::Vec* c_prev = t > 0 ? &tr.c[static_cast<std::size_t>(t - 1)] : nullptr;
        for (int k = 0; k < h; ++k) {
            double dh = dh_ext[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] +
                        dh_carry[static_cast<std::size_t>(k)];
            double tc = TC[static_cast<std::size_t>(k)];
            double dov = dh * tc;
            double dc = dc_carry[static_cast<std::size_t>(k)] +
                        dh * O[static_cast<std::size_t>(k)] * (1.0 - tc * tc);
            double div = dc * G[static_cast<std::size_t>(k)];
            double dgv = dc * I[static_cast<std::size_t>(k)];
            double cp = c_prev ? (*c_prev)[static_cast<std::size_t>(k)] : 0.0;
            double dfv = dc * cp;
            double iv = I[static_cast<std::size_t>(k)], fv = F[static_cast<std::size_t>(k)],
                   gv = G[static_cast<std::size_t>(k)], ov = O[static_cast<std::size_t>(k)];
            dz[static_cast<std::size_t>(k)] = div * iv * (1.0 - iv);
            dz[static_cast<std::size_t>(h + k)] = dfv * fv * (1.0 - fv);
            dz[static_cast<std::size_t>(2 * h + k)] = dgv * (1.0 - gv * gv);
            dz[static_cast<std::size_t>(3 * h + k)] = dov * ov * (1.0 - ov);
            dc_carry[static_cast<std::size_t>(k)] = dc * fv;
        }
        nn::outer_acc(grad.wx, dz.data(), xs[static_cast<std::size_t>(t)]);
        if (t > 0) nn::outer_acc(grad.wh, dz.data(), tr.h[static_cast<std::size_t>(t - 1)].data());
        for (int k = 0; k < 4 * h; ++k) grad.b[static_cast<std::size_t>(k)] += dz[static_cast<std::size_t>(k)];
        dx[static_cast<std::size_t>(t)].assign(static_cast<std::size_t>(cell.wx.cols), 0.0);
        nn::gemv_t_acc(cell.wx, dz.data(), dx[static_cast<std::size_t>(t)].data());
        std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
        nn::gemv_t_acc(cell.wh, dz.data(), dh_carry.data());
    }
}

}  // namespace detail

// Everything the backward pass needs from one forward evaluation.
struct Trace {
    int n = 0, m = 0;
    detail::LstmTrace fw, bw;                // bw is indexed in reversed order
    std::vector<nn::Vec> H;                  // n x 2h
    std::vector<nn::Vec> att_v;              // per value: n*d_a tanh vectors
    std::vector<nn::Vec> alpha;              // per value: n
    std::vector<nn::Vec> context;            // per value: 2h
    std::vector<nn::Vec> z, a1, z1, a2, z2;  // generator caches per value
    std::vector<nn::Vec> out;                // per value: l
};

// Hidden states H for a token sequence (n x 2h).
inline void encode_problem(const ModelParams& p, const std::vector<int>& tokens, Trace& tr) {
    int n = static_cast<int>(tokens.size());
    int h = p.config.hidden;
    std::vector<const double*> xs(static_cast<std::size_t>(n)), rs(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        xs[static_cast<std::size_t>(t)] = p.embed.row(tokens[static_cast<std::size_t>(t)]);
        rs[static_cast<std::size_t>(t)] = p.embed.row(tokens[static_cast<std::size_t>(n - 1 - t)]);
    }
    detail::lstm_forward(p.fwd, xs, h, tr.fw);
    detail::lstm_forward(p.bwd, rs, h, tr.bw);
    tr.n = n;
    tr.H.resize(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        auto& row = tr.H[static_cast<std::size_t>(t)];
        row.resize(static_cast<std::size_t>(2 * h));
        const auto& fh = tr.fw.h[static_cast<std::size_t>(t)];
        const auto& bh = tr.bw.h[static_cast<std::size_t>(n - 1 - t)];
        std::copy(fh.begin(), fh.end(), row.begin());
        std::copy(bh.begin(), bh.end(), row.begin() + h);
    }
}

// Full forward pass: encoder, number representations, attention, generator.
inline void forward_problem(const ModelParams& p, const Example& ex, Trace& tr) {
    const ModelConfig& cfg = p.config;
    int h = cfg.hidden, da = cfg.d_a(), l = cfg.code_dim;
    encode_problem(p, ex.tokens, tr);
    int n = tr.n;
    int m = static_cast<int>(ex.positions.size());
    tr.m = m;

    // W[:, 2h:4h] h_t, shared across values
    std::vector<nn::Vec> wh(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        wh[static_cast<std::size_t>(t)].assign(static_cast<std::size_t>(da), 0.0);
        nn::gemv_cols(p.attn_w, 2 * h, 4 * h, tr.H[static_cast<std::size_t>(t)].data(),
                      wh[static_cast<std::size_t>(t)].data(), false);
    }

    auto fit = [&](std::vector<nn::Vec>& v, int count, int width) {
        v.resize(static_cast<std::size_t>(count));
        for (auto& row : v) row.assign(static_cast<std::size_t>(width), 0.0);
    };
    fit(tr.att_v, m, n * da);
    fit(tr.alpha, m, n);
    fit(tr.context, m, 2 * h);
    fit(tr.z, m, 4 * h);
    fit(tr.a1, m, cfg.ffnn_h1);
    fit(tr.z1, m, cfg.ffnn_h1);
    fit(tr.a2, m, cfg.ffnn_h2);
    fit(tr.z2, m, cfg.ffnn_h2);
    fit(tr.out, m, l);

    nn::Vec we(static_cast<std::size_t>(da));
    nn::Vec scores;
    for (int i = 0; i < m; ++i) {
        int q = ex.positions[static_cast<std::size_t>(i)];
        if (q < 0 || q >= n) throw PositionOutOfRange(q, n);
        const double* e = tr.H[static_cast<std::size_t>(q)].data();
        nn::gemv_cols(p.attn_w, 0, 2 * h, e, we.data(), false);

        scores.assign(static_cast<std::size_t>(n), 0.0);
        double smax = -1e300;
        for (int t = 0; t < n; ++t) {
            double* v = tr.att_v[static_cast<std::size_t>(i)].data() +
                        static_cast<std::size_t>(t) * static_cast<std::size_t>(da);
            const double* whp = wh[static_cast<std::size_t>(t)].data();
            double s = 0.0;
            for (int k = 0; k < da; ++k) {
                double tv = std::tanh(we[static_cast<std::size_t>(k)] + whp[k]);
                v[k] = tv;
                s += p.attn_u[static_cast<std::size_t>(k)] * tv;
            }
            scores[static_cast<std::size_t>(t)] = s;
            smax = std::max(smax, s);
        }
        double denom = 0.0;
        auto& alpha = tr.alpha[static_cast<std::size_t>(i)];
        for (int t = 0; t < n; ++t) {
            alpha[static_cast<std::size_t>(t)] = std::exp(scores[static_cast<std::size_t>(t)] - smax);
            denom += alpha[static_cast<std::size_t>(t)];
        }
        auto& ctx = tr.context[static_cast<std::size_t>(i)];
        for (int t = 0; t < n; ++t) {
            double a = alpha[static_cast<std::size_t>(t)] / denom;
            alpha[static_cast<std::size_t>(t)] = a;
            nn::axpy(a, tr.H[static_cast<std::size_t>(t)], ctx);
        }

        auto& z = tr.z[static_cast<std::size_t>(i)];
        std::copy(ctx.begin(), ctx.end(), z.begin());
        std::copy(tr.H[static_cast<std::size_t>(q)].begin(), tr.H[static_cast<std::size_t>(q)].end(),
                  z.begin() + 2 * h);

        auto& a1 = tr.a1[static_cast<std::size_t>(i)];
        auto& z1 = tr.z1[static_cast<std::size_t>(i)];
        nn::gemv(p.w1, z.data(), a1.data());
        for (int k = 0; k < cfg.ffnn_h1; ++k) {
            a1[static_cast<std::size_t>(k)] += p.b1[static_cast<std::size_t>(k)];
            z1[static_cast<std::size_t>(k)] = detail::activate(a1[static_cast<std::size_t>(k)], cfg.activation);
        }
        auto& a2 = tr.a2[static_cast<std::size_t>(i)];
        auto& z2 = tr.z2[static_cast<std::size_t>(i)];
        nn::gemv(p.w2, z1.data(), a2.data());
        for (int k = 0; k < cfg.ffnn_h2; ++k) {
            a2[static_cast<std::size_t>(k)] += p.b2[static_cast<std::size_t>(k)];
            z2[static_cast<std::size_t>(k)] = detail::activate(a2[static_cast<std::size_t>(k)], cfg.activation);
        }
        auto& out = tr.out[static_cast<std::size_t>(i)];
        nn::gemv(p.w3, z2.data(), out.data());
        for (int k = 0; k < l; ++k) out[static_cast<std::size_t>(k)] += p.b3[static_cast<std::size_t>(k)];
    }
}

// Summed per-occurrence MSE: sum_i (1/l) sum_j (c_ij - c'_ij)^2.
inline double loss_value(const std::vector<nn::Vec>& outs,
                         const std::vector<std::vector<double>>& targets) {
    if (outs.size() != targets.size()) throw ShapeMismatch("predictions vs targets");
    double total = 0.0;
    for (std::size_t i = 0; i < outs.size(); ++i) {
        if (outs[i].size() != targets[i].size()) throw ShapeMismatch("code vector length");
        double s = 0.0;
        for (std::size_t j = 0; j < outs[i].size(); ++j) {
            double d = outs[i][j] - targets[i][j];
            s += d * d;
        }
        total += s / static_cast<double>(outs[i].size());
    }
    return total;
}

// Forward + backward for one example; gradients accumulate into `grad`.
// Returns the example's loss.
inline double backward_problem(const ModelParams& p, const Example& ex, Trace& tr,
                               ModelParams& grad) {
    const ModelConfig& cfg = p.config;
    int h = cfg.hidden, da = cfg.d_a(), l = cfg.code_dim;
    forward_problem(p, ex, tr);
    int n = tr.n, m = tr.m;
    double loss = loss_value(tr.out, ex.targets);

    std::vector<nn::Vec> dH(static_cast<std::size_t>(n),
                            nn::Vec(static_cast<std::size_t>(2 * h), 0.0));
    nn::Vec dout(static_cast<std::size_t>(l));
    nn::Vec dz2(static_cast<std::size_t>(cfg.ffnn_h2)), da2(static_cast<std::size_t>(cfg.ffnn_h2));
    nn::Vec dz1(static_cast<std::size_t>(cfg.ffnn_h1)), da1(static_cast<std::size_t>(cfg.ffnn_h1));
    nn::Vec dz(static_cast<std::size_t>(4 * h));
    nn::Vec dv(static_cast<std::size_t>(da));
    nn::Vec de(static_cast<std::size_t>(2 * h));

    for (int i = 0; i < m; ++i) {
        int q = ex.positions[static_cast<std::size_t>(i)];
        const auto& target = ex.targets[static_cast<std::size_t>(i)];
        const auto& out = tr.out[static_cast<std::size_t>(i)];
        for (int k = 0; k < l; ++k)
            dout[static_cast<std::size_t>(k)] =
                2.0 / static_cast<double>(l) *
                (out[static_cast<std::size_t>(k)] - target[static_cast<std::size_t>(k)]);

        // generator
        nn::outer_acc(grad.w3, dout.data(), tr.z2[static_cast<std::size_t>(i)].data());
        for (int k = 0; k < l; ++k) grad.b3[static_cast<std::size_t>(k)] += dout[static_cast<std::size_t>(k)];
        std::fill(dz2.begin(), dz2.end(), 0.0);
        nn::gemv_t_acc(p.w3, dout.data(), dz2.data());
        for (int k = 0; k < cfg.ffnn_h2; ++k)
            da2[static_cast<std::size_t>(k)] =
                dz2[static_cast<std::size_t>(k)] *
                detail::activate_grad(tr.a2[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
                                      cfg.activation);
        nn::outer_acc(grad.w2, da2.data(), tr.z1[static_cast<std::size_t>(i)].data());
        for (int k = 0; k < cfg.ffnn_h2; ++k) grad.b2[static_cast<std::size_t>(k)] += da2[static_cast<std::size_t>(k)];
        std::fill(dz1.begin(), dz1.end(), 0.0);
        nn::gemv_t_acc(p.w2, da2.data(), dz1.data());
        for (int k = 0; k < cfg.ffnn_h1; ++k)
            da1[static_cast<std::size_t>(k)] =
                dz1[static_cast<std::size_t>(k)] *
                detail::activate_grad(tr.a1[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
                                      cfg.activation);
        nn::outer_acc(grad.w1, da1.data(), tr.z[static_cast<std::size_t>(i)].data());
        for (int k = 0; k < cfg.ffnn_h1; ++k) grad.b1[static_cast<std::size_t>(k)] += da1[static_cast<std::size_t>(k)];
        std::fill(dz.begin(), dz.end(), 0.0);
        nn::gemv_t_acc(p.w1, da1.data(), dz.data());

        const double* dE = dz.data();
        std::copy(dz.begin() + 2 * h, dz.end(), de.begin());

        // attention
        const auto& alpha = tr.alpha[static_cast<std::size_t>(i)];
        nn::Vec dalpha(static_cast<std::size_t>(n));
        double sum_ad = 0.0;
        for (int t = 0; t < n; ++t) {
            double a = alpha[static_cast<std::size_t>(t)];
            dalpha[static_cast<std::size_t>(t)] = nn::dot(dE, tr.H[static_cast<std::size_t>(t)].data(), 2 * h);
            double* dh = dH[static_cast<std::size_t>(t)].data();
            for (int k = 0; k < 2 * h; ++k) dh[k] += a * dE[k];
            sum_ad += a * dalpha[static_cast<std::size_t>(t)];
        }
        const double* e = tr.H[static_cast<std::size_t>(q)].data();
        for (int t = 0; t < n; ++t) {
            double ds = alpha[static_cast<std::size_t>(t)] * (dalpha[static_cast<std::size_t>(t)] - sum_ad);
            if (ds == 0.0) continue;
            const double* v = tr.att_v[static_cast<std::size_t>(i)].data() +
                              static_cast<std::size_t>(t) * static_cast<std::size_t>(da);
            for (int k = 0; k < da; ++k) {
                double tv = v[k];
                grad.attn_u[static_cast<std::size_t>(k)] += ds * tv;
                dv[static_cast<std::size_t>(k)] = ds * p.attn_u[static_cast<std::size_t>(k)] * (1.0 - tv * tv);
            }
            nn::outer_cols_acc(grad.attn_w, 0, 2 * h, dv.data(), e);
            nn::outer_cols_acc(grad.attn_w, 2 * h, 4 * h, dv.data(),
                               tr.H[static_cast<std::size_t>(t)].data());
            nn::gemv_t_cols_acc(p.attn_w, 0, 2 * h, dv.data(), de.data());
            nn::gemv_t_cols_acc(p.attn_w, 2 * h, 4 * h, dv.data(),
                                dH[static_cast<std::size_t>(t)].data());
        }
        nn::axpy(1.0, de, dH[static_cast<std::size_t>(q)]);
        std::fill(de.begin(), de.end(), 0.0);
    }

    // split dH into the two directions and run BPTT
    std::vector<nn::Vec> dh_f(static_cast<std::size_t>(n)), dh_b(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        dh_f[static_cast<std::size_t>(t)].assign(dH[static_cast<std::size_t>(t)].begin(),
                                                 dH[static_cast<std::size_t>(t)].begin() + h);
        // bw trace index n-1-t corresponds to position t
        dh_b[static_cast<std::size_t>(n - 1 - t)].assign(dH[static_cast<std::size_t>(t)].begin() + h,
                                                         dH[static_cast<std::size_t>(t)].end());
    }
    std::vector<const double*> xs(static_cast<std::size_t>(n)), rs(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        xs[static_cast<std::size_t>(t)] = p.embed.row(ex.tokens[static_cast<std::size_t>(t)]);
        rs[static_cast<std::size_t>(t)] = p.embed.row(ex.tokens[static_cast<std::size_t>(n - 1 - t)]);
    }
    std::vector<nn::Vec> dx_f, dx_b;
    detail::lstm_backward(p.fwd, xs, h, tr.fw, dh_f, grad.fwd, dx_f);
    detail::lstm_backward(p.bwd, rs, h, tr.bw, dh_b, grad.bwd, dx_b);
    for (int t = 0; t < n; ++t) {
        double* gx = grad.embed.row(ex.tokens[static_cast<std::size_t>(t)]);
        const auto& da_f = dx_f[static_cast<std::size_t>(t)];
        const auto& da_b = dx_b[static_cast<std::size_t>(n - 1 - t)];
        for (int k = 0; k < cfg.embed_dim; ++k)
            gx[k] += da_f[static_cast<std::size_t>(k)] + da_b[static_cast<std::size_t>(k)];
    }
    return loss;
}

// ---------------------------------------------------------------------------
// optimizers

struct OptimizerState {
    Optimizer kind = Optimizer::Adam;
    double momentum = 0.9;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long step_count = 0;
    std::vector<nn::Vec> m1, m2;  // per tensor

    void ensure(ModelParams& params) {
        if (!m1.empty()) return;
        params.for_each_tensor([&](const char*, nn::Vec& v, int, int) {
            m1.emplace_back(v.size(), 0.0);
            m2.emplace_back(v.size(), 0.0);
        });
    }

    void step(ModelParams& params, ModelParams& grads, double lr) {
        ensure(params);
        ++step_count;
        std::size_t ti = 0;
        std::vector<nn::Vec*> pv, gv;
        params.for_each_tensor([&](const char*, nn::Vec& v, int, int) { pv.push_back(&v); });
        grads.for_each_tensor([&](const char*, nn::Vec& v, int, int) { gv.push_back(&v); });
        for (ti = 0; ti < pv.size(); ++ti) {
            nn::Vec& p = *pv[ti];
            nn::Vec& g = *gv[ti];
            switch (kind) {
                case Optimizer::Sgd:
                    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
                    break;
                case Optimizer::Momentum:
                    for (std::size_t k = 0; k < p.size(); ++k) {
                        m1[ti][k] = momentum * m1[ti][k] + g[k];
                        p[k] -= lr * m1[ti][k];
                    }
                    break;
                case Optimizer::Adam: {
                    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
                    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
                    for (std::size_t k = 0; k < p.size(); ++k) {
                        m1[ti][k] = beta1 * m1[ti][k] + (1.0 - beta1) * g[k];
                        m2[ti][k] = beta2 * m2[ti][k] + (1.0 - beta2) * g[k] * g[k];
                        double mhat = m1[ti][k] / bc1;
                        double vhat = m2[ti][k] / bc2;
                        p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
                    }
                    break;
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// prediction

struct Prediction {
    double answer = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
    CodeSets rounded_codes;
    std::string error;
};

// Round half away from zero, clamp at zero.
inline int round_count(double x) {
    long long r = std::llround(x);
    return r < 0 ? 0 : static_cast<int>(r);
}

inline Prediction predict_answer(const ModelParams& params, const Example& ex,
                                 const CodeVocab& vocab) {
    Trace tr;
    Prediction pred;
    try {
        forward_problem(params, ex, tr);
    } catch (const Error& e) {
        pred.error = e.what();
        return pred;
    }
    std::vector<CodeVector> counts;
    counts.reserve(static_cast<std::size_t>(tr.m));
    for (int i = 0; i < tr.m; ++i) {
        CodeVector row(static_cast<std::size_t>(params.config.code_dim));
        for (int k = 0; k < params.config.code_dim; ++k)
            row[static_cast<std::size_t>(k)] = round_count(tr.out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
        counts.push_back(std::move(row));
    }
    try {
        pred.rounded_codes = counts_to_codesets(counts, vocab);
        MTree tree = decode(pred.rounded_codes, ex.values);
        pred.answer = eval_mtree(tree);
        pred.ok = std::isfinite(pred.answer);
    } catch (const Error& e) {
        pred.error = e.what();  // scored incorrect, never a crash
    }
    return pred;
}

inline double answer_accuracy(const ModelParams& params, const std::vector<Example>& dev,
                              const CodeVocab& vocab) {
    if (dev.empty()) return 0.0;
    int correct = 0;
    for (const auto& ex : dev) {
        Prediction p = predict_answer(params, ex, vocab);
        if (p.ok && answers_equal(p.answer, ex.answer)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dev.size());
}

// ---------------------------------------------------------------------------
// training

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    std::optional<double> dev_accuracy;
    double seconds = 0.0;

    Json to_json() const {
        Json j{{"epoch", epoch}, {"loss", loss}, {"seconds", seconds}};
        j["dev_accuracy"] = dev_accuracy ? Json(*dev_accuracy) : Json(nullptr);
        return j;
    }
    // The volatile wall-clock field stripped; used by determinism checks.
    Json deterministic_json() const {
        Json j{{"epoch", epoch}, {"loss", loss}};
        j["dev_accuracy"] = dev_accuracy ? Json(*dev_accuracy) : Json(nullptr);
        return j;
    }
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Minibatch gradient descent with the summed MSE objective. Deterministic for
// a fixed config: example order, thread slicing and gradient merge order are
// all functions of (seed, batch, threads).
inline TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& dev_set,
                         const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const CodeVocab& vocab, const EpochCallback& on_epoch = {}) {
    if (train_set.empty()) throw Error("empty training set");
    TrainResult result;
    result.params = ModelParams::init(model_cfg, cfg.seed);
    OptimizerState opt;
    opt.kind = cfg.optimizer;
    opt.momentum = cfg.momentum;

    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    int threads = std::max(1, cfg.threads);
    std::vector<ModelParams> worker_grads;
    std::vector<Trace> worker_traces(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) worker_grads.push_back(ModelParams::like(model_cfg));
    ModelParams grads = ModelParams::like(model_cfg);

    auto zero_grads = [](ModelParams& g) {
        g.for_each_tensor([](const char*, nn::Vec& v, int, int) {
            std::fill(v.begin(), v.end(), 0.0);
        });
    };

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;

        std::size_t batch_size = cfg.batch_size > 0 ? static_cast<std::size_t>(cfg.batch_size)
                                                    : train_set.size();
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            std::size_t end = std::min(begin + batch_size, order.size());
            zero_grads(grads);
            double batch_loss = 0.0;

            if (threads == 1) {
                for (std::size_t bi = begin; bi < end; ++bi)
                    batch_loss += backward_problem(result.params, train_set[order[bi]],
                                                   worker_traces[0], grads);
            } else {
                // contiguous slices; grads merged in worker order below
                std::size_t count = end - begin;
                std::size_t per = (count + static_cast<std::size_t>(threads) - 1) /
                                  static_cast<std::size_t>(threads);
                std::vector<double> losses(static_cast<std::size_t>(threads), 0.0);
                std::vector<std::thread> pool;
                for (int w = 0; w < threads; ++w) {
                    std::size_t lo = begin + static_cast<std::size_t>(w) * per;
                    std::size_t hi = std::min(lo + per, end);
                    if (lo >= hi) break;
                    zero_grads(worker_grads[static_cast<std::size_t>(w)]);
                    pool.emplace_back([&, w, lo, hi]() {
                        for (std::size_t bi = lo; bi < hi; ++bi)
                            losses[static_cast<std::size_t>(w)] += backward_problem(
                                result.params, train_set[order[bi]],
                                worker_traces[static_cast<std::size_t>(w)],
                                worker_grads[static_cast<std::size_t>(w)]);
                    });
                }
                std::size_t used = pool.size();
                for (auto& th : pool) th.join();
                for (std::size_t w = 0; w < used; ++w) {
                    batch_loss += losses[w];
                    std::vector<nn::Vec*> dst, src;
                    grads.for_each_tensor([&](const char*, nn::Vec& v, int, int) { dst.push_back(&v); });
                    worker_grads[w].for_each_tensor(
                        [&](const char*, nn::Vec& v, int, int) { src.push_back(&v); });
                    for (std::size_t t = 0; t < dst.size(); ++t)
                        for (std::size_t k = 0; k < dst[t]->size(); ++k)
                            (*dst[t])[k] += (*src[t])[k];
                }
            }

            if (cfg.clip_norm > 0.0) {
                double norm2 = 0.0;
                grads.for_each_tensor([&](const char*, nn::Vec& v, int, int) {
                    for (double x : v) norm2 += x * x;
                });
                double norm = std::sqrt(norm2);
                if (norm > cfg.clip_norm) {
                    double scale = cfg.clip_norm / norm;
                    grads.for_each_tensor([&](const char*, nn::Vec& v, int, int) {
                        for (double& x : v) x *= scale;
                    });
                }
            }
            opt.step(result.params, grads, cfg.lr);
            epoch_loss += batch_loss;
        }

        if (!std::isfinite(epoch_loss))
            throw DivergenceDetected("loss is not finite at epoch " + std::to_string(epoch));

        EpochLog entry;
        entry.epoch = epoch;
        entry.loss = epoch_loss;
        if (!dev_set.empty() && cfg.eval_every > 0 && epoch % cfg.eval_every == 0)
            entry.dev_accuracy = answer_accuracy(result.params, dev_set, vocab);
        entry.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
    }
    return result;
}

// ---------------------------------------------------------------------------
// checkpoints

inline Json checkpoint_to_json(const ModelParams& params, const TokenVocab& tokens,
                               const CodeVocab& codes) {
    Json tensors = Json::object();
    const_cast<ModelParams&>(params).for_each_tensor(
        [&](const char* name, nn::Vec& v, int rows, int cols) {
            tensors[name] = Json{{"rows", rows}, {"cols", cols}, {"data", v}};
        });
    return Json{{"format_version", 1},
                {"model", params.config.to_json()},
                {"token_vocab", tokens.tokens},
                {"code_vocab", codes.codes},
                {"tensors", tensors}};
}

struct Checkpoint {
    ModelParams params;
    TokenVocab tokens;
    CodeVocab codes;
};

inline Checkpoint checkpoint_from_json(const Json& j) {
    if (j.value("format_version", 0) != 1) throw Error("unsupported checkpoint format");
    Checkpoint ck;
    ck.params = ModelParams::like(ModelConfig::from_json(j.at("model")));
    ck.tokens.tokens = j.at("token_vocab").get<std::vector<std::string>>();
    for (int i = 0; i < static_cast<int>(ck.tokens.tokens.size()); ++i)
        ck.tokens.index[ck.tokens.tokens[static_cast<std::size_t>(i)]] = i;
    ck.codes.codes = j.at("code_vocab").get<std::vector<std::string>>();
    for (int i = 0; i < static_cast<int>(ck.codes.codes.size()); ++i)
        ck.codes.index[ck.codes.codes[static_cast<std::size_t>(i)]] = i;
    const Json& tensors = j.at("tensors");
    ck.params.for_each_tensor([&](const char* name, nn::Vec& v, int rows, int cols) {
        const Json& t = tensors.at(name);
        if (t.at("rows").get<int>() != rows || t.at("cols").get<int>() != cols)
            throw ShapeMismatch(std::string("checkpoint tensor ") + name);
        v = t.at("data").get<nn::Vec>();
    });
    return ck;
}

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const TokenVocab& tokens, const CodeVocab& codes) {
    write_json(path, checkpoint_to_json(params, tokens, codes));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return checkpoint_from_json(Json::parse(read_file(resolve_data_path(path))));
}

}  // namespace mtc
