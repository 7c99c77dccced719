#include "rgf/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>

#include "rgf/kernels.hpp"
#include "rgf/parallel.hpp"
#include "rgf/rng.hpp"

namespace rgf {

double cross_entropy(const std::array<double, 2>& probs, int label) {
    require(label == 0 || label == 1, "cross_entropy: invalid label");
    const double p = std::max(probs[static_cast<std::size_t>(label)], 1e-12);
    return -std::log(p);
}

// ---- cached forward + backward ----

namespace {

struct LayerCache {
    Matrix q, k, v, ctx, r1, n1, z1, g, r2;
    std::vector<double> probs;  // H*T*T
    std::vector<double> ln1_mu, ln1_rstd, ln2_mu, ln2_rstd;
    Matrix attn_out, f;             // forward-only intermediates
    std::vector<double> score_buf;
};

struct TrainCache {
    std::vector<Matrix> xs;  // L+1 entries; xs[0] = embedding output
    std::vector<LayerCache> layers;
    std::vector<double> pooled;
    std::array<double, 2> logits{}, probs{};
    int n_real = 0;

    // backward scratch
    Matrix d_cur, d_n1, d_r, dq, dk, dv, d_ctx, d_z1, d_g;
    std::vector<double> dp_buf;
};

/// Forward pass that preserves every intermediate needed by backward(). Built
/// from the same kernels as rgf::forward, so activations are bit-identical
/// with the inference path.
double forward_train(const ModelParams& params, const TokenSequence& seq, int label,
                     TrainCache& cache) {
    const auto& cfg = params.config;
    const int L = cfg.n_layers;
    const int T = cfg.max_len;

    cache.n_real = seq.n_real;
    cache.xs.resize(static_cast<std::size_t>(L) + 1);
    cache.layers.resize(static_cast<std::size_t>(L));

    embed_tokens(params, seq, nullptr, cache.xs[0]);

    for (int l = 1; l <= L; ++l) {
        const auto& lp = params.layers[static_cast<std::size_t>(l) - 1];
        auto& C = cache.layers[static_cast<std::size_t>(l) - 1];
        const Matrix& in = cache.xs[static_cast<std::size_t>(l) - 1];

        attention_forward(cfg, lp, in, seq.n_real, C.q, C.k, C.v, C.probs, C.ctx, C.attn_out,
                          C.score_buf);
        C.r1.resize(T, cfg.d_model);
        for (std::size_t i = 0; i < C.r1.a.size(); ++i) C.r1.a[i] = in.a[i] + C.attn_out.a[i];

        C.n1.resize(T, cfg.d_model);
        C.ln1_mu.resize(static_cast<std::size_t>(T));
        C.ln1_rstd.resize(static_cast<std::size_t>(T));
        for (int i = 0; i < T; ++i) {
            layernorm_row(C.r1.row(i), lp.ln1_g.row(0), lp.ln1_b.row(0), cfg.d_model, C.n1.row(i),
                          C.ln1_mu[static_cast<std::size_t>(i)],
                          C.ln1_rstd[static_cast<std::size_t>(i)]);
        }
        ffn_forward(lp, C.n1, C.z1, C.g, C.f);
        C.r2.resize(T, cfg.d_model);
        for (std::size_t i = 0; i < C.r2.a.size(); ++i) C.r2.a[i] = C.n1.a[i] + C.f.a[i];

        Matrix& out = cache.xs[static_cast<std::size_t>(l)];
        out.resize(T, cfg.d_model);
        C.ln2_mu.resize(static_cast<std::size_t>(T));
        C.ln2_rstd.resize(static_cast<std::size_t>(T));
        for (int i = 0; i < T; ++i) {
            layernorm_row(C.r2.row(i), lp.ln2_g.row(0), lp.ln2_b.row(0), cfg.d_model, out.row(i),
                          C.ln2_mu[static_cast<std::size_t>(i)],
                          C.ln2_rstd[static_cast<std::size_t>(i)]);
        }
    }

    readout(params, cache.xs[static_cast<std::size_t>(L)], seq.n_real, cache.logits, cache.probs,
            &cache.pooled);
    return cross_entropy(cache.probs, label);
}

/// dL/dx for one layer-norm row given dL/dy. `accumulate` gates the
/// gain/bias gradients (skipped for frozen layers); dx must not alias dy.
void layernorm_backward_row(const double* x, const double* g, double mu, double rstd, int d,
                            const double* dy, double* dx, double* dg, double* db,
                            bool accumulate) {
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < d; ++j) {
        const double xhat = (x[j] - mu) * rstd;
        const double dyg = dy[j] * g[j];
        m1 += dyg;
        m2 += dyg * xhat;
        if (accumulate) {
            dg[j] += dy[j] * xhat;
            db[j] += dy[j];
        }
    }
    m1 /= d;
    m2 /= d;
    for (int j = 0; j < d; ++j) {
        const double xhat = (x[j] - mu) * rstd;
        dx[j] = rstd * (dy[j] * g[j] - m1 - xhat * m2);
    }
}

void add_colsum(const Matrix& m, int n_rows, Matrix& out) {
    for (int i = 0; i < n_rows; ++i) {
        const double* r = m.row(i);
        double* o = out.row(0);
        for (int j = 0; j < m.cols; ++j) o[j] += r[j];
    }
}

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

/// Accumulates dL/dparams for one sample into `grads` (unscaled; the caller
/// divides by the batch size). Gradients of layers 1..frozen_layers are
/// skipped, but the activation gradient still flows through them so the
/// embeddings receive their exact gradient. Pad positions carry an exactly
/// zero gradient (pooling skips them and they are masked out as keys), so
/// every loop runs over the non-pad prefix only.
void backward(const ModelParams& params, const TokenSequence& seq, int label, TrainCache& cache,
              int frozen_layers, ModelGrads& grads) {
    const auto& cfg = params.config;
    const int L = cfg.n_layers;
    const int T = cfg.max_len;
    const int d = cfg.d_model;
    const int H = cfg.n_heads;
    const int dh = cfg.head_dim();
    const int n = cache.n_real;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // softmax + cross-entropy
    std::array<double, 2> dlogits = cache.probs;
    dlogits[static_cast<std::size_t>(label)] -= 1.0;

    // classifier head
    for (int c = 0; c < 2; ++c) {
        grads.head_b.at(0, c) += dlogits[static_cast<std::size_t>(c)];
        for (int j = 0; j < d; ++j) {
            grads.head_w.at(j, c) +=
                cache.pooled[static_cast<std::size_t>(j)] * dlogits[static_cast<std::size_t>(c)];
        }
    }

    // mean pooling: every non-pad row receives dpooled / n
    cache.d_cur.resize(T, d);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
        double* di = cache.d_cur.row(i);
        for (int j = 0; j < d; ++j) {
            di[j] = (params.head_w.at(j, 0) * dlogits[0] + params.head_w.at(j, 1) * dlogits[1]) *
                    inv_n;
        }
    }

    for (int l = L; l >= 1; --l) {
        const auto& lp = params.layers[static_cast<std::size_t>(l) - 1];
        auto& lg = grads.layers[static_cast<std::size_t>(l) - 1];
        auto& C = cache.layers[static_cast<std::size_t>(l) - 1];
        const Matrix& in = cache.xs[static_cast<std::size_t>(l) - 1];
        const bool acc = l > frozen_layers;

        // LN2 (r2 -> layer output); d_r becomes dL/dr2
        cache.d_r.resize(T, d);
        for (int i = 0; i < n; ++i) {
            layernorm_backward_row(C.r2.row(i), lp.ln2_g.row(0),
                                   C.ln2_mu[static_cast<std::size_t>(i)],
                                   C.ln2_rstd[static_cast<std::size_t>(i)], d, cache.d_cur.row(i),
                                   cache.d_r.row(i), lg.ln2_g.row(0), lg.ln2_b.row(0), acc);
        }

        // r2 = n1 + f: the residual copy of d_r2 seeds d_n1, and d_f = d_r2.
        // FFN: f = gelu(n1 w1 + b1) w2 + b2
        cache.d_g.resize(T, cfg.d_ff);
        for (int i = 0; i < n; ++i) {
            const double* dfi = cache.d_r.row(i);
            double* dgi = cache.d_g.row(i);
            for (int t = 0; t < cfg.d_ff; ++t) dgi[t] = dot(dfi, lp.w2.row(t), d);
        }
        if (acc) {
            for (int i = 0; i < n; ++i) {
                const double* gi = C.g.row(i);
                const double* dfi = cache.d_r.row(i);
                for (int t = 0; t < cfg.d_ff; ++t) {
                    double* w2g = lg.w2.row(t);
                    const double gv = gi[t];
                    for (int j = 0; j < d; ++j) w2g[j] += gv * dfi[j];
                }
            }
            add_colsum(cache.d_r, n, lg.b2);
        }
        cache.d_z1.resize(T, cfg.d_ff);
        for (int i = 0; i < n; ++i) {
            const double* z1i = C.z1.row(i);
            const double* dgi = cache.d_g.row(i);
            double* dzi = cache.d_z1.row(i);
            for (int t = 0; t < cfg.d_ff; ++t) dzi[t] = dgi[t] * gelu_grad(z1i[t]);
        }
        cache.d_n1.resize(T, d);
        for (int i = 0; i < n; ++i) {
            const double* dzi = cache.d_z1.row(i);
            const double* dri = cache.d_r.row(i);
            double* dni = cache.d_n1.row(i);
            for (int j = 0; j < d; ++j) dni[j] = dri[j] + dot(dzi, lp.w1.row(j), cfg.d_ff);
        }
        if (acc) {
            for (int i = 0; i < n; ++i) {
                const double* ni = C.n1.row(i);
                const double* dzi = cache.d_z1.row(i);
                for (int j = 0; j < d; ++j) {
                    double* w1g = lg.w1.row(j);
                    const double nv = ni[j];
                    for (int t = 0; t < cfg.d_ff; ++t) w1g[t] += nv * dzi[t];
                }
            }
            add_colsum(cache.d_z1, n, lg.b1);
        }

        // LN1 (r1 -> n1); d_r becomes dL/dr1
        for (int i = 0; i < n; ++i) {
            layernorm_backward_row(C.r1.row(i), lp.ln1_g.row(0),
                                   C.ln1_mu[static_cast<std::size_t>(i)],
                                   C.ln1_rstd[static_cast<std::size_t>(i)], d, cache.d_n1.row(i),
                                   cache.d_r.row(i), lg.ln1_g.row(0), lg.ln1_b.row(0), acc);
        }

        // r1 = in + attn_out: d_attn_out = d_r1; the residual part of d_in is
        // added after the attention backward below.
        // out-projection: attn_out = ctx wo + bo
        cache.d_ctx.resize(T, d);
        for (int i = 0; i < n; ++i) {
            const double* dai = cache.d_r.row(i);
            double* dci = cache.d_ctx.row(i);
            for (int t = 0; t < d; ++t) dci[t] = dot(dai, lp.wo.row(t), d);
        }
        if (acc) {
            for (int i = 0; i < n; ++i) {
                const double* ci = C.ctx.row(i);
                const double* dai = cache.d_r.row(i);
                for (int t = 0; t < d; ++t) {
                    double* wog = lg.wo.row(t);
                    const double cv = ci[t];
                    for (int j = 0; j < d; ++j) wog[j] += cv * dai[j];
                }
            }
            add_colsum(cache.d_r, n, lg.bo);
        }

        // attention core: per head, softmax backward over the non-pad keys
        cache.dq.resize(T, d);
        cache.dk.resize(T, d);
        cache.dv.resize(T, d);
        cache.dp_buf.resize(static_cast<std::size_t>(n));
        for (int h = 0; h < H; ++h) {
            const int off = h * dh;
            for (int i = 0; i < n; ++i) {
                const double* prow = C.probs.data() + (static_cast<std::size_t>(h) * T + i) * T;
                const double* dci = cache.d_ctx.row(i) + off;
                double dsum = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dp = dot(dci, C.v.row(j) + off, dh);
                    cache.dp_buf[static_cast<std::size_t>(j)] = dp;
                    dsum += dp * prow[j];
                }
                double* dqi = cache.dq.row(i) + off;
                const double* qi = C.q.row(i) + off;
                for (int j = 0; j < n; ++j) {
                    const double pij = prow[j];
                    const double dss =
                        pij * (cache.dp_buf[static_cast<std::size_t>(j)] - dsum) * scale;
                    double* dvj = cache.dv.row(j) + off;
                    double* dkj = cache.dk.row(j) + off;
                    const double* kj = C.k.row(j) + off;
                    for (int t = 0; t < dh; ++t) {
                        dvj[t] += pij * dci[t];
                        dqi[t] += dss * kj[t];
                        dkj[t] += dss * qi[t];
                    }
                }
            }
        }

        // projections: q = in wq + bq (k, v alike); d_cur becomes dL/d(in)
        cache.d_cur.resize(T, d);
        for (int i = 0; i < n; ++i) {
            std::memcpy(cache.d_cur.row(i), cache.d_r.row(i),
                        sizeof(double) * static_cast<std::size_t>(d));
        }
        auto proj_backward = [&](const Matrix& w, Matrix& wg, Matrix& bg, const Matrix& dout) {
            for (int i = 0; i < n; ++i) {
                const double* doi = dout.row(i);
                double* dii = cache.d_cur.row(i);
                for (int t = 0; t < d; ++t) dii[t] += dot(doi, w.row(t), d);
            }
            if (acc) {
                for (int i = 0; i < n; ++i) {
                    const double* xi = in.row(i);
                    const double* doi = dout.row(i);
                    for (int t = 0; t < d; ++t) {
                        double* wgr = wg.row(t);
                        const double xv = xi[t];
                        for (int j = 0; j < d; ++j) wgr[j] += xv * doi[j];
                    }
                }
                add_colsum(dout, n, bg);
            }
        };
        proj_backward(lp.wq, lg.wq, lg.bq, cache.dq);
        proj_backward(lp.wk, lg.wk, lg.bk, cache.dk);
        proj_backward(lp.wv, lg.wv, lg.bv, cache.dv);
    }

    // embeddings (always trainable)
    for (int i = 0; i < n; ++i) {
        const TokenId tok = seq.tokens[static_cast<std::size_t>(i)];
        const double* di = cache.d_cur.row(i);
        double* te = grads.tok_embed.row(tok);
        double* pe = grads.pos_embed.row(i);
        for (int j = 0; j < d; ++j) {
            te[j] += di[j];
            pe[j] += di[j];
        }
    }
}

struct GradWorkspace {
    std::vector<ModelGrads> chunk_grads;
    std::vector<double> chunk_loss;
    std::vector<TrainCache> worker_caches;
};

// Fixed chunking of the batch: the reduction runs over chunks in index
// order, so gradients are bit-identical for any worker count.
constexpr std::size_t kGradChunk = 4;

bool grads_match_config(const ModelGrads& g, const ModelConfig& c) {
    return g.config.vocab_size == c.vocab_size && g.config.n_layers == c.n_layers &&
           g.config.d_model == c.d_model && g.config.d_ff == c.d_ff &&
           g.config.max_len == c.max_len && g.config.n_classes == c.n_classes;
}

void compute_gradients_impl(const ModelParams& params, std::span<const TrainSample> batch,
                            int frozen_layers, int workers, GradWorkspace& ws, ModelGrads& out,
                            double* mean_loss_out) {
    require(!batch.empty(), "compute_gradients: empty batch");
    const int L = params.config.n_layers;
    require(frozen_layers >= 0 && frozen_layers < L,
            "compute_gradients: frozen_layers must be in [0, n_layers)");

    const std::size_t n_chunks = (batch.size() + kGradChunk - 1) / kGradChunk;
    if (ws.chunk_grads.size() < n_chunks) ws.chunk_grads.resize(n_chunks);
    ws.chunk_loss.assign(n_chunks, 0.0);
    const int n_workers = resolve_workers(workers);
    if (ws.worker_caches.size() < static_cast<std::size_t>(n_workers)) {
        ws.worker_caches.resize(static_cast<std::size_t>(n_workers));
    }

    parallel_for(n_chunks, workers, [&](std::size_t ci, int wi) {
        ModelGrads& g = ws.chunk_grads[ci];
        if (!grads_match_config(g, params.config)) {
            g.allocate(params.config);
        } else {
            for_each_tensor(g, [](const std::string&, int, Matrix& m) { m.zero(); });
        }
        TrainCache& cache = ws.worker_caches[static_cast<std::size_t>(wi)];
        double loss = 0.0;
        const std::size_t begin = ci * kGradChunk;
        const std::size_t end = std::min(begin + kGradChunk, batch.size());
        for (std::size_t s = begin; s < end; ++s) {
            const TrainSample& sample = batch[s];
            loss += forward_train(params, sample.seq, sample.label, cache);
            backward(params, sample.seq, sample.label, cache, frozen_layers, g);
        }
        ws.chunk_loss[ci] = loss;
    });

    out.allocate(params.config);
    std::vector<Matrix*> dst;
    for_each_tensor(out, [&](const std::string&, int, Matrix& m) { dst.push_back(&m); });
    double loss_sum = 0.0;
    for (std::size_t ci = 0; ci < n_chunks; ++ci) {
        loss_sum += ws.chunk_loss[ci];
        std::vector<const Matrix*> src;
        for_each_tensor(std::as_const(ws.chunk_grads[ci]),
                        [&](const std::string&, int, const Matrix& m) { src.push_back(&m); });
        for (std::size_t t = 0; t < dst.size(); ++t) {
            for (std::size_t j = 0; j < dst[t]->a.size(); ++j) dst[t]->a[j] += src[t]->a[j];
        }
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (Matrix* m : dst) {
        for (double& x : m->a) x *= inv_b;
    }
    if (mean_loss_out != nullptr) *mean_loss_out = loss_sum * inv_b;
}

}  // namespace

ModelGrads compute_gradients(const ModelParams& params, std::span<const TrainSample> batch,
                             int frozen_layers, int workers, double* mean_loss_out) {
    GradWorkspace ws;
    ModelGrads out;
    compute_gradients_impl(params, batch, frozen_layers, workers, ws, out, mean_loss_out);
    return out;
}

// ---- optimizer ----

AdamState AdamState::make(const ModelConfig& config) {
    AdamState st;
    st.m.allocate(config);
    st.v.allocate(config);
    st.step = 0;
    return st;
}

void optimizer_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
                    const TrainConfig& config) {
    const int L = params.config.n_layers;
    const int frozen = config.resolved_frozen(L);
    require(frozen >= 0 && frozen < L, "optimizer_step: frozen_layers must be in [0, n_layers)");

    std::vector<std::pair<int, Matrix*>> ps, ms, vs;
    std::vector<const Matrix*> gs;
    for_each_tensor(params, [&](const std::string&, int l, Matrix& m) { ps.emplace_back(l, &m); });
    for_each_tensor(grads, [&](const std::string&, int, const Matrix& m) { gs.push_back(&m); });
    for_each_tensor(state.m, [&](const std::string&, int l, Matrix& m) { ms.emplace_back(l, &m); });
    for_each_tensor(state.v, [&](const std::string&, int l, Matrix& m) { vs.emplace_back(l, &m); });
    require(ps.size() == gs.size() && ps.size() == ms.size() && ps.size() == vs.size(),
            "optimizer_step: tensor count mismatch");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

    for (std::size_t t = 0; t < ps.size(); ++t) {
        const int layer = ps[t].first;
        Matrix& p = *ps[t].second;
        const Matrix& g = *gs[t];
        require(p.same_shape(g), "optimizer_step: gradient shape mismatch");
        if (layer >= 1 && layer <= frozen) continue;  // frozen: leave untouched
        Matrix& m = *ms[t].second;
        Matrix& v = *vs[t].second;
        for (std::size_t j = 0; j < p.a.size(); ++j) {
            m.a[j] = config.beta1 * m.a[j] + (1.0 - config.beta1) * g.a[j];
            v.a[j] = config.beta2 * v.a[j] + (1.0 - config.beta2) * g.a[j] * g.a[j];
            const double mhat = m.a[j] / bc1;
            const double vhat = v.a[j] / bc2;
            p.a[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
        }
    }
}

// ---- metrics ----

double metric_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    require(scores.size() == labels.size(), "metric_auc: size mismatch");
    require(!scores.empty(), "metric_auc: empty input");
    std::size_t n1 = 0, n0 = 0;
    for (int l : labels) {
        require(l == 0 || l == 1, "metric_auc: invalid label");
        (l == 1 ? n1 : n0) += 1;
    }
    require(n1 > 0 && n0 > 0, "metric_auc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Average ranks over tied blocks (1-based); equivalent to counting tied
    // pairs with credit 0.5.
    std::vector<double> rank(scores.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] == 1) rank_sum_pos += rank[t];
    }
    const double u = rank_sum_pos - static_cast<double>(n1) * (static_cast<double>(n1) + 1.0) / 2.0;
    return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

SensSpecF1 metric_sens_spec_f1(const std::vector<double>& probs, const std::vector<int>& labels,
                               double threshold) {
    require(probs.size() == labels.size(), "metric_sens_spec_f1: size mismatch");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        require(labels[i] == 0 || labels[i] == 1, "metric_sens_spec_f1: invalid label");
        const bool pred = probs[i] >= threshold;
        if (labels[i] == 1) {
            (pred ? tp : fn) += 1;
        } else {
            (pred ? fp : tn) += 1;
        }
    }
    require(tp + fn > 0 && tn + fp > 0, "metric_sens_spec_f1: both classes must be present");
    SensSpecF1 out;
    out.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
    out.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
    const double precision =
        tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = out.sensitivity;
    out.f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    return out;
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    s.per_fold = values;
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return s;
}

// ---- prediction and fitting ----

std::vector<double> predict_probs(const ModelParams& params, std::span<const TrainSample> samples,
                                  int workers) {
    std::vector<double> probs(samples.size(), 0.0);
    parallel_for(samples.size(), workers, [&](std::size_t i, int) {
        const RunTrace t = forward(params, samples[i].seq);
        probs[i] = t.probs[1];
    });
    return probs;
}

FitResult fit(const ModelParams& init, std::span<const TrainSample> train,
              std::span<const TrainSample> val, const TrainConfig& config) {
    require(!train.empty(), "fit: empty training split");
    require(!val.empty(), "fit: empty validation split");
    require(config.epochs >= 1, "fit: epochs must be >= 1");
    require(config.batch_size >= 1, "fit: batch_size must be >= 1");
    const int L = init.config.n_layers;
    const int frozen = config.resolved_frozen(L);
    require(frozen >= 0 && frozen < L, "fit: frozen_layers must be in [0, n_layers)");

    ModelParams params = init;
    AdamState state = AdamState::make(init.config);
    GradWorkspace ws;
    ModelGrads grads;
    Rng rng(config.seed);

    std::vector<int> val_labels;
    val_labels.reserve(val.size());
    for (const auto& s : val) val_labels.push_back(s.label);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<TrainSample> batch;

    FitResult result;
    result.best_val_f1 = -1.0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order.data(), order.size());
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
            double batch_loss = 0.0;
            compute_gradients_impl(params, batch, frozen, config.workers, ws, grads, &batch_loss);
            optimizer_step(params, grads, state, config);
            loss_sum += batch_loss * static_cast<double>(batch.size());
        }

        const std::vector<double> val_probs = predict_probs(params, val, config.workers);
        const SensSpecF1 ssf = metric_sens_spec_f1(val_probs, val_labels);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train.size());
        stats.val_f1 = ssf.f1;
        stats.val_sensitivity = ssf.sensitivity;
        stats.val_specificity = ssf.specificity;
        stats.val_auc = metric_auc(val_probs, val_labels);
        result.history.push_back(stats);

        // Strictly-greater comparison: on ties the earliest epoch wins.
        if (stats.val_f1 > result.best_val_f1) {
            result.best_val_f1 = stats.val_f1;
            result.best_epoch = epoch;
            result.params = params;
        }
    }
    return result;
}

MetricsReport cross_validate(const std::vector<TrainSample>& samples, const ModelConfig& model_cfg,
                             const std::vector<TrainConfig>& configs, const CvOptions& opts) {
    require(!configs.empty(), "cross_validate: empty config grid");
    require(opts.k >= 2, "cross_validate: k must be >= 2");

    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label);
    const FoldAssignment folds =
        stratified_kfold_labels(labels, opts.k, derive_seed(opts.seed, "folds"));

    struct FoldOutcome {
        double val_f1 = 0.0;
        double auc = 0.0, sens = 0.0, spec = 0.0, f1 = 0.0;
    };
    std::vector<std::vector<FoldOutcome>> outcomes(
        configs.size(), std::vector<FoldOutcome>(static_cast<std::size_t>(opts.k)));

    for (std::size_t ci = 0; ci < configs.size(); ++ci) {
        for (int f = 0; f < opts.k; ++f) {
            const TrialIndices trial =
                make_trial_indices(labels, folds, f, opts.val_fraction,
                                   derive_seed(opts.seed, "trial-" + std::to_string(f)));
            std::vector<TrainSample> tr, va, te;
            for (std::size_t i : trial.train) tr.push_back(samples[i]);
            for (std::size_t i : trial.val) va.push_back(samples[i]);
            for (std::size_t i : trial.test) te.push_back(samples[i]);

            // One init/train seed for every fold: folds already differ by
            // their data, and identical fold data must give identical runs.
            ModelConfig mc = model_cfg;
            mc.init_seed = derive_seed(opts.seed, "init");
            TrainConfig tc = configs[ci];
            tc.seed = derive_seed(opts.seed, "train");
            const FitResult fitres = fit(init_model(mc), tr, va, tc);

            std::vector<int> te_labels;
            te_labels.reserve(te.size());
            for (const auto& s : te) te_labels.push_back(s.label);
            const std::vector<double> te_probs = predict_probs(fitres.params, te, tc.workers);

            FoldOutcome& o = outcomes[ci][static_cast<std::size_t>(f)];
            o.val_f1 = fitres.best_val_f1;
            o.auc = metric_auc(te_probs, te_labels);
            const SensSpecF1 ssf = metric_sens_spec_f1(te_probs, te_labels);
            o.sens = ssf.sensitivity;
            o.spec = ssf.specificity;
            o.f1 = ssf.f1;
        }
    }

    std::size_t best = 0;
    double best_val = -1.0;
    for (std::size_t ci = 0; ci < configs.size(); ++ci) {
        double mean_val = 0.0;
        for (const auto& o : outcomes[ci]) mean_val += o.val_f1;
        mean_val /= static_cast<double>(opts.k);
        if (mean_val > best_val) {
            best_val = mean_val;
            best = ci;
        }
    }

    MetricsReport report;
    std::vector<double> aucs, senss, specs, f1s;
    for (const auto& o : outcomes[best]) {
        aucs.push_back(o.auc);
        senss.push_back(o.sens);
        specs.push_back(o.spec);
        f1s.push_back(o.f1);
    }
    report.auc = summarize(aucs);
    report.sensitivity = summarize(senss);
    report.specificity = summarize(specs);
    report.f1 = summarize(f1s);
    report.best_config_index = static_cast<int>(best);
    report.best_config_lr = configs[best].learning_rate;
    report.best_mean_val_f1 = best_val;
    return report;
}

}  // namespace rgf
