#include "rgf/backtrack.hpp"

#include <algorithm>
#include <map>

#include "rgf/parallel.hpp"
#include "rgf/text.hpp"

namespace rgf {

LayerWeights attention_to_weights(const RunTrace& trace, HeadMode head_mode) {
    require(!trace.attention.empty(), "attention_to_weights: trace has no recorded attention");
    const int L = static_cast<int>(trace.attention.size());
    const int n = trace.n_real;

    LayerWeights out;
    out.n_layers = L;
    out.len = n;
    out.w.resize(static_cast<std::size_t>(std::max(L - 1, 0)));
    for (int l = 1; l <= L - 1; ++l) {
        // W[l][i][k] reads layer (l+1)'s attention: query k attending key i.
        const AttentionRecord& rec = trace.attention[static_cast<std::size_t>(l)];
        const int H = rec.n_heads;
        Matrix& w = out.w[static_cast<std::size_t>(l) - 1];
        w.resize(n, n);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < n; ++k) {
                if (head_mode == HeadMode::Mean) {
                    double s = 0.0;
                    for (int h = 0; h < H; ++h) s += rec.at(h, k, i);
                    w.at(i, k) = s / static_cast<double>(H);
                } else {
                    double m = 0.0;
                    for (int h = 0; h < H; ++h) m = std::max(m, rec.at(h, k, i));
                    w.at(i, k) = m;
                }
            }
        }
    }
    return out;
}

BacktrackScores backtrack_sample(const LayerWeights& weights, const std::vector<McnEntry>& mcns,
                                 BacktrackMode mode) {
    const int L = weights.n_layers;
    const int n = weights.len;
    require(L >= 1, "backtrack_sample: weights cover no layers");
    require(static_cast<int>(weights.w.size()) == L - 1,
            "backtrack_sample: expected L-1 weight matrices");
    for (const auto& w : weights.w) {
        require(w.rows == n && w.cols == n, "backtrack_sample: weight matrix shape mismatch");
    }

    // Indirect effects by (layer, position); positions beyond this sample's
    // non-pad prefix cannot be reached and are dropped.
    std::vector<std::vector<std::pair<int, double>>> mcn_at(static_cast<std::size_t>(L) + 1);
    for (const auto& e : mcns) {
        require(e.layer >= 1, "backtrack_sample: MCN layer out of range");
        if (e.layer > L || e.position >= n) continue;
        mcn_at[static_cast<std::size_t>(e.layer)].emplace_back(e.position, e.mean_ie);
    }

    BacktrackScores out;
    out.mode = mode;
    out.s.resize(L, n);  // zero-filled; row L-1 stays the s[L] = 0 base case

    for (int l = L - 1; l >= 1; --l) {
        const Matrix& w = weights.w[static_cast<std::size_t>(l) - 1];
        const double* s_next = out.s.row(l);          // s[l+1][.]
        double* s_cur = out.s.row(l - 1);             // s[l][.]
        if (mode == BacktrackMode::Strict) {
            for (const auto& [k, ie] : mcn_at[static_cast<std::size_t>(l) + 1]) {
                const double contribution = ie + s_next[k];
                for (int i = 0; i < n; ++i) s_cur[i] += w.at(i, k) * contribution;
            }
        } else {
            std::vector<double> ie_next(static_cast<std::size_t>(n), 0.0);
            for (const auto& [k, ie] : mcn_at[static_cast<std::size_t>(l) + 1]) {
                ie_next[static_cast<std::size_t>(k)] = ie;
            }
            for (int k = 0; k < n; ++k) {
                const double contribution = ie_next[static_cast<std::size_t>(k)] + s_next[k];
                for (int i = 0; i < n; ++i) s_cur[i] += w.at(i, k) * contribution;
            }
        }
    }
    return out;
}

GeneScoreReport score_tokens(const ModelParams& params, std::span<const TrainSample> samples,
                             const McnSet& mcns, const GeneVocabulary& vocab,
                             const BacktrackOptions& opts) {
    require(!samples.empty(), "score_tokens: empty sample set");

    struct PerSample {
        std::vector<TokenId> tokens;
        std::vector<double> scores;
    };
    std::vector<PerSample> partial(samples.size());

    parallel_for(samples.size(), opts.workers, [&](std::size_t si, int) {
        const TrainSample& sample = samples[si];
        ForwardOptions fo;
        fo.record_attention = true;
        const RunTrace trace = forward(params, sample.seq, nullptr, fo);
        const LayerWeights weights = attention_to_weights(trace, opts.head_mode);
        const BacktrackScores scores = backtrack_sample(weights, mcns.entries, opts.mode);
        PerSample& p = partial[si];
        p.tokens.assign(sample.seq.tokens.begin(),
                        sample.seq.tokens.begin() + sample.seq.n_real);
        p.scores = scores.input_scores();
    });

    // Deterministic merge: samples in input order, genes in map order.
    std::map<std::string, std::pair<double, long long>> acc;
    for (const auto& p : partial) {
        for (std::size_t i = 0; i < p.tokens.size(); ++i) {
            auto& slot = acc[vocab.symbol_of(p.tokens[i])];
            slot.first += p.scores[i];
            slot.second += 1;
        }
    }

    GeneScoreReport report;
    report.ranking.reserve(acc.size());
    for (const auto& [gene, sum_count] : acc) {
        report.ranking.push_back(GeneScore{
            gene, sum_count.first / static_cast<double>(sum_count.second), sum_count.second});
    }
    std::sort(report.ranking.begin(), report.ranking.end(),
              [](const GeneScore& a, const GeneScore& b) {
                  if (a.mean_score != b.mean_score) return a.mean_score > b.mean_score;
                  return a.gene < b.gene;
              });
    return report;
}

std::vector<GeneScore> top_mcgs(const GeneScoreReport& report, int k, bool exclude_known,
                                const std::vector<std::string>& known_genes) {
    require(k > 0, "top_mcgs: k must be positive");
    std::vector<GeneScore> out;
    for (const auto& g : report.ranking) {
        if (exclude_known &&
            std::find(known_genes.begin(), known_genes.end(), g.gene) != known_genes.end()) {
            continue;
        }
        out.push_back(g);
        if (static_cast<int>(out.size()) == k) break;
    }
    return out;
}

void write_gene_scores_csv(const GeneScoreReport& report, const std::string& path) {
    std::string out = "rank,gene,mean_score,count\n";
    int rank = 1;
    for (const auto& g : report.ranking) {
        out += std::to_string(rank++);
        out += ',';
        out += g.gene;
        out += ',';
        out += format_double(g.mean_score);
        out += ',';
        out += std::to_string(g.count);
        out += '\n';
    }
    write_text_file(path, out);
}

void write_mcgs_txt(const std::vector<GeneScore>& top, const std::string& path) {
    std::string out;
    for (const auto& g : top) {
        out += g.gene;
        out += " (";
        out += format_fixed(g.mean_score, 3);
        out += ")\n";
    }
    write_text_file(path, out);
}

std::vector<std::string> load_mcgs_txt(const std::string& path) {
    std::vector<std::string> genes;
    for (const auto& line : read_lines(path)) {
        auto t = trim(line);
        if (t.empty()) continue;
        const auto paren = t.find(" (");
        genes.emplace_back(paren == std::string_view::npos ? t : t.substr(0, paren));
    }
    require(!genes.empty(), "mcgs file " + path + ": no entries");
    return genes;
}

}  // namespace rgf
