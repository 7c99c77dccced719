#include "rgf/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "rgf/kernels.hpp"
#include "rgf/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

namespace rgf {

void ModelConfig::validate() const {
    require(n_layers >= 1, "model config: n_layers must be >= 1");
    require(n_heads >= 1, "model config: n_heads must be >= 1");
    require(d_model >= 1 && d_model % n_heads == 0,
            "model config: d_model must be a positive multiple of n_heads");
    require(d_ff >= 1, "model config: d_ff must be >= 1");
    require(vocab_size >= 2, "model config: vocab_size must be >= 2 (pad + at least one gene)");
    require(max_len >= 2, "model config: max_len must be >= 2");
    require(n_classes == 2, "model config: binary classifier only");
}

void ModelParams::allocate(const ModelConfig& cfg) {
    cfg.validate();
    config = cfg;
    tok_embed.resize(cfg.vocab_size, cfg.d_model);
    pos_embed.resize(cfg.max_len, cfg.d_model);
    layers.assign(static_cast<std::size_t>(cfg.n_layers), LayerParams{});
    for (auto& l : layers) {
        l.wq.resize(cfg.d_model, cfg.d_model);
        l.wk.resize(cfg.d_model, cfg.d_model);
        l.wv.resize(cfg.d_model, cfg.d_model);
        l.wo.resize(cfg.d_model, cfg.d_model);
        l.bq.resize(1, cfg.d_model);
        l.bk.resize(1, cfg.d_model);
        l.bv.resize(1, cfg.d_model);
        l.bo.resize(1, cfg.d_model);
        l.ln1_g.resize(1, cfg.d_model);
        l.ln1_b.resize(1, cfg.d_model);
        l.w1.resize(cfg.d_model, cfg.d_ff);
        l.b1.resize(1, cfg.d_ff);
        l.w2.resize(cfg.d_ff, cfg.d_model);
        l.b2.resize(1, cfg.d_model);
        l.ln2_g.resize(1, cfg.d_model);
        l.ln2_b.resize(1, cfg.d_model);
    }
    head_w.resize(cfg.d_model, cfg.n_classes);
    head_b.resize(1, cfg.n_classes);
}

namespace {

template <typename Params, typename Fn>
void visit_tensors(Params& p, const Fn& fn) {
    fn("tok_embed", 0, p.tok_embed);
    fn("pos_embed", 0, p.pos_embed);
    for (int l = 1; l <= static_cast<int>(p.layers.size()); ++l) {
        auto& lp = p.layers[static_cast<std::size_t>(l) - 1];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        fn(prefix + "wq", l, lp.wq);
        fn(prefix + "wk", l, lp.wk);
        fn(prefix + "wv", l, lp.wv);
        fn(prefix + "wo", l, lp.wo);
        fn(prefix + "bq", l, lp.bq);
        fn(prefix + "bk", l, lp.bk);
        fn(prefix + "bv", l, lp.bv);
        fn(prefix + "bo", l, lp.bo);
        fn(prefix + "ln1.g", l, lp.ln1_g);
        fn(prefix + "ln1.b", l, lp.ln1_b);
        fn(prefix + "w1", l, lp.w1);
        fn(prefix + "b1", l, lp.b1);
        fn(prefix + "w2", l, lp.w2);
        fn(prefix + "b2", l, lp.b2);
        fn(prefix + "ln2.g", l, lp.ln2_g);
        fn(prefix + "ln2.b", l, lp.ln2_b);
    }
    fn("head.w", 0, p.head_w);
    fn("head.b", 0, p.head_b);
}

}  // namespace

void for_each_tensor(ModelParams& p,
                     const std::function<void(const std::string&, int, Matrix&)>& fn) {
    visit_tensors(p, fn);
}

void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, int, const Matrix&)>& fn) {
    visit_tensors(p, fn);
}

// ---- initialization ----

ModelParams init_model(const ModelConfig& config) {
    ModelParams p;
    p.allocate(config);
    Rng rng(config.init_seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    auto fill_uniform = [&](Matrix& m) {
        for (auto& x : m.a) x = rng.uniform(-bound, bound);
    };
    auto fill_const = [](Matrix& m, double v) {
        std::fill(m.a.begin(), m.a.end(), v);
    };
    // Weight matrices are drawn; biases start at zero and norm gains at one.
    fill_uniform(p.tok_embed);
    fill_uniform(p.pos_embed);
    for (auto& l : p.layers) {
        fill_uniform(l.wq);
        fill_uniform(l.wk);
        fill_uniform(l.wv);
        fill_uniform(l.wo);
        fill_uniform(l.w1);
        fill_uniform(l.w2);
        fill_const(l.bq, 0.0);
        fill_const(l.bk, 0.0);
        fill_const(l.bv, 0.0);
        fill_const(l.bo, 0.0);
        fill_const(l.b1, 0.0);
        fill_const(l.b2, 0.0);
        fill_const(l.ln1_g, 1.0);
        fill_const(l.ln1_b, 0.0);
        fill_const(l.ln2_g, 1.0);
        fill_const(l.ln2_b, 0.0);
    }
    fill_uniform(p.head_w);
    fill_const(p.head_b, 0.0);
    return p;
}

// ---- kernels ----

void attention_forward(const ModelConfig& config, const LayerParams& layer, const Matrix& in,
                       int n_real, Matrix& q, Matrix& k, Matrix& v, std::vector<double>& probs,
                       Matrix& ctx, Matrix& attn_out, std::vector<double>& score_buf) {
    const int T = in.rows;
    const int d = config.d_model;
    const int H = config.n_heads;
    const int dh = config.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    matmul(in, layer.wq, q);
    add_bias_rows(q, layer.bq);
    matmul(in, layer.wk, k);
    add_bias_rows(k, layer.bk);
    matmul(in, layer.wv, v);
    add_bias_rows(v, layer.bv);

    probs.assign(static_cast<std::size_t>(H) * T * T, 0.0);
    score_buf.resize(static_cast<std::size_t>(n_real));
    ctx.resize(T, d);

    for (int h = 0; h < H; ++h) {
        const int off = h * dh;
        for (int i = 0; i < T; ++i) {
            const double* qi = q.row(i) + off;
            double maxs = -1e300;
            for (int j = 0; j < n_real; ++j) {
                const double* kj = k.row(j) + off;
                double s = 0.0;
                for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
                s *= scale;
                score_buf[static_cast<std::size_t>(j)] = s;
                if (s > maxs) maxs = s;
            }
            double z = 0.0;
            for (int j = 0; j < n_real; ++j) {
                const double e = std::exp(score_buf[static_cast<std::size_t>(j)] - maxs);
                score_buf[static_cast<std::size_t>(j)] = e;
                z += e;
            }
            double* prow = probs.data() + (static_cast<std::size_t>(h) * T + i) * T;
            double* ci = ctx.row(i) + off;
            for (int t = 0; t < dh; ++t) ci[t] = 0.0;
            const double inv_z = 1.0 / z;
            for (int j = 0; j < n_real; ++j) {
                const double pij = score_buf[static_cast<std::size_t>(j)] * inv_z;
                prow[j] = pij;
                const double* vj = v.row(j) + off;
                for (int t = 0; t < dh; ++t) ci[t] += pij * vj[t];
            }
        }
    }

    matmul(ctx, layer.wo, attn_out);
    add_bias_rows(attn_out, layer.bo);
}

void ffn_forward(const LayerParams& layer, const Matrix& in, Matrix& z1, Matrix& g, Matrix& out) {
    matmul(in, layer.w1, z1);
    add_bias_rows(z1, layer.b1);
    g.resize(z1.rows, z1.cols);
    for (std::size_t i = 0; i < z1.a.size(); ++i) g.a[i] = gelu(z1.a[i]);
    matmul(g, layer.w2, out);
    add_bias_rows(out, layer.b2);
}

void embed_tokens(const ModelParams& params, const TokenSequence& seq,
                  const Intervention* intervention, Matrix& x0) {
    const auto& cfg = params.config;
    const int T = cfg.max_len;
    const int d = cfg.d_model;
    require(seq.max_len() == T, "forward: sequence length does not match model max_len");
    require(seq.n_real >= 1 && seq.n_real <= T, "forward: n_real out of range");
    x0.resize(T, d);
    for (int i = 0; i < T; ++i) {
        const TokenId tok = seq.tokens[static_cast<std::size_t>(i)];
        require(tok >= 0 && tok < cfg.vocab_size,
                "forward: token id out of range: " + std::to_string(tok));
        const double* te = params.tok_embed.row(tok);
        const double* pe = params.pos_embed.row(i);
        double* xi = x0.row(i);
        for (int j = 0; j < d; ++j) xi[j] = te[j] + pe[j];
    }
    if (intervention != nullptr) {
        require(intervention->sigma >= 0.0, "forward: sigma must be non-negative");
        for (int pos : intervention->corrupt_positions) {
            require(pos >= 0 && pos < T, "forward: corrupt position out of range");
        }
        if (intervention->sigma > 0.0 && !intervention->corrupt_positions.empty()) {
            Rng noise(intervention->noise_seed);
            for (int pos : intervention->corrupt_positions) {
                double* xi = x0.row(pos);
                for (int j = 0; j < d; ++j) xi[j] += intervention->sigma * noise.normal();
            }
        }
    }
}

void run_layer(const ModelParams& params, int layer, const Matrix& in, int n_real, Matrix& out,
               ForwardScratch& scratch, std::vector<double>* record_probs) {
    const auto& cfg = params.config;
    require(layer >= 1 && layer <= cfg.n_layers, "run_layer: layer out of range");
    const auto& lp = params.layers[static_cast<std::size_t>(layer) - 1];
    const int T = in.rows;
    const int d = cfg.d_model;

    attention_forward(cfg, lp, in, n_real, scratch.q, scratch.k, scratch.v, scratch.attn_probs,
                      scratch.ctx, scratch.attn_out, scratch.head_scores);
    if (record_probs != nullptr) *record_probs = scratch.attn_probs;

    scratch.r1.resize(T, d);
    for (std::size_t i = 0; i < scratch.r1.a.size(); ++i) {
        scratch.r1.a[i] = in.a[i] + scratch.attn_out.a[i];
    }
    scratch.n1.resize(T, d);
    scratch.mu.resize(static_cast<std::size_t>(T));
    scratch.rstd.resize(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
        layernorm_row(scratch.r1.row(i), lp.ln1_g.row(0), lp.ln1_b.row(0), d, scratch.n1.row(i),
                      scratch.mu[static_cast<std::size_t>(i)],
                      scratch.rstd[static_cast<std::size_t>(i)]);
    }
    ffn_forward(lp, scratch.n1, scratch.z1, scratch.g, scratch.f);
    scratch.r2.resize(T, d);
    for (std::size_t i = 0; i < scratch.r2.a.size(); ++i) {
        scratch.r2.a[i] = scratch.n1.a[i] + scratch.f.a[i];
    }
    out.resize(T, d);
    for (int i = 0; i < T; ++i) {
        layernorm_row(scratch.r2.row(i), lp.ln2_g.row(0), lp.ln2_b.row(0), d, out.row(i),
                      scratch.mu[static_cast<std::size_t>(i)],
                      scratch.rstd[static_cast<std::size_t>(i)]);
    }
}

void readout(const ModelParams& params, const Matrix& x_final, int n_real,
             std::array<double, 2>& logits, std::array<double, 2>& probs,
             std::vector<double>* pooled_out) {
    const int d = params.config.d_model;
    std::vector<double> pooled(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n_real; ++i) {
        const double* xi = x_final.row(i);
        for (int j = 0; j < d; ++j) pooled[static_cast<std::size_t>(j)] += xi[j];
    }
    const double inv_n = 1.0 / static_cast<double>(n_real);
    for (int j = 0; j < d; ++j) pooled[static_cast<std::size_t>(j)] *= inv_n;

    for (int c = 0; c < 2; ++c) {
        double s = params.head_b.at(0, c);
        for (int j = 0; j < d; ++j) s += pooled[static_cast<std::size_t>(j)] * params.head_w.at(j, c);
        logits[static_cast<std::size_t>(c)] = s;
    }
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    probs[0] = e0 / (e0 + e1);
    probs[1] = e1 / (e0 + e1);
    if (pooled_out != nullptr) *pooled_out = std::move(pooled);
}

RunTrace forward(const ModelParams& params, const TokenSequence& seq,
                 const Intervention* intervention, const ForwardOptions& opts) {
    const auto& cfg = params.config;
    if (intervention != nullptr && intervention->restore.has_value()) {
        const auto& r = *intervention->restore;
        require(r.layer >= 1 && r.layer <= cfg.n_layers, "forward: restore layer out of range");
        require(r.position >= 0 && r.position < cfg.max_len,
                "forward: restore position out of range");
        require(static_cast<int>(r.clean_hidden.size()) == cfg.d_model,
                "forward: restore vector has wrong dimension");
    }

    RunTrace trace;
    trace.n_real = seq.n_real;

    Matrix cur, next;
    embed_tokens(params, seq, intervention, cur);
    if (opts.record_hidden) trace.hidden.push_back(cur);

    ForwardScratch scratch;
    std::vector<double> probs_buf;
    for (int l = 1; l <= cfg.n_layers; ++l) {
        run_layer(params, l, cur, seq.n_real, next, scratch,
                  opts.record_attention ? &probs_buf : nullptr);
        if (intervention != nullptr && intervention->restore.has_value() &&
            intervention->restore->layer == l) {
            const auto& r = *intervention->restore;
            std::memcpy(next.row(r.position), r.clean_hidden.data(),
                        sizeof(double) * static_cast<std::size_t>(cfg.d_model));
        }
        if (opts.record_attention) {
            AttentionRecord rec;
            rec.p = probs_buf;
            rec.n_heads = cfg.n_heads;
            rec.len = cfg.max_len;
            trace.attention.push_back(std::move(rec));
        }
        if (opts.record_hidden) trace.hidden.push_back(next);
        std::swap(cur, next);
    }
    readout(params, cur, seq.n_real, trace.logits, trace.probs);
    return trace;
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[4] = {'R', 'G', 'F', 'M'};
constexpr std::uint32_t kVersion = 1;

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    return nlohmann::ordered_json{
        {"n_layers", c.n_layers}, {"n_heads", c.n_heads},   {"d_model", c.d_model},
        {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
        {"n_classes", c.n_classes}, {"init_seed", c.init_seed},
    };
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    nlohmann::ordered_json header;
    header["config"] = config_to_json(params.config);
    auto tensors = nlohmann::ordered_json::array();
    for_each_tensor(params, [&](const std::string& name, int, const Matrix& m) {
        tensors.push_back(nlohmann::ordered_json{
            {"name", name}, {"rows", m.rows}, {"cols", m.cols}});
    });
    header["tensors"] = std::move(tensors);
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint32_t header_len = static_cast<std::uint32_t>(header_text.size());
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for_each_tensor(params, [&](const std::string&, int, const Matrix& m) {
        out.write(reinterpret_cast<const char*>(m.a.data()),
                  static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    });
    require(out.good(), "checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    require(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0,
            "checkpoint " + path + ": bad magic bytes");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    require(in.gcount() == sizeof(version), "checkpoint " + path + ": truncated header");
    require(version == kVersion,
            "checkpoint " + path + ": unsupported version " + std::to_string(version));
    std::uint32_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    require(in.gcount() == sizeof(header_len), "checkpoint " + path + ": truncated header");
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    require(in.gcount() == static_cast<std::streamsize>(header_len),
            "checkpoint " + path + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        fail("checkpoint " + path + ": malformed header: " + e.what());
    }

    ModelParams params;
    params.allocate(config_from_json(header.at("config")));

    const auto& tensors = header.at("tensors");
    std::size_t idx = 0;
    bool ok = true;
    for_each_tensor(params, [&](const std::string& name, int, Matrix& m) {
        if (!ok) return;
        if (idx >= tensors.size()) {
            ok = false;
            return;
        }
        const auto& t = tensors[idx++];
        if (t.at("name").get<std::string>() != name || t.at("rows").get<int>() != m.rows ||
            t.at("cols").get<int>() != m.cols) {
            ok = false;
            return;
        }
        in.read(reinterpret_cast<char*>(m.a.data()),
                static_cast<std::streamsize>(m.a.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(m.a.size() * sizeof(double))) {
            ok = false;
        }
    });
    require(ok && idx == tensors.size(),
            "checkpoint " + path + ": tensor index does not match config (truncated or corrupt)");
    for_each_tensor(std::as_const(params), [&](const std::string& name, int, const Matrix& m) {
        for (double x : m.a) {
            require(std::isfinite(x), "checkpoint " + path + ": non-finite value in " + name);
        }
    });
    return params;
}

}  // namespace rgf
