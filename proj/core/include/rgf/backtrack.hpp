#pragma once

#include <string>
#include <vector>

#include "rgf/corpus.hpp"
#include "rgf/mat.hpp"
#include "rgf/model.hpp"
#include "rgf/trace.hpp"
#include "rgf/train.hpp"

namespace rgf {

/// Whether the layer-wise sum in the backtracking recursion ranges over the
/// next layer's MCNs only (strict) or over every non-pad unit with zero
/// indirect effect off-MCN (relaxed).
enum class BacktrackMode { Strict, Relaxed };

/// How per-head attention matrices are combined into one weight matrix.
enum class HeadMode { Mean, Max };

/// Interconnection strengths between consecutive layers, derived from
/// attention. w[l-1].at(i, k) is the weight between unit i at layer l and
/// unit k at layer l+1: the attention paid by query k (producing layer l+1)
/// to key i (reading layer l). Only the non-pad prefix is represented.
struct LayerWeights {
    int n_layers = 0;        // L
    int len = 0;             // non-pad length of the sample
    std::vector<Matrix> w;   // L-1 matrices, each len x len

    double at(int layer, int i, int k) const {
        return w[static_cast<std::size_t>(layer) - 1].at(i, k);
    }
};

/// Per-layer backtracked scores; row l-1 holds s[l][i]. s[L][.] is zero by
/// construction.
struct BacktrackScores {
    Matrix s;  // L x len
    BacktrackMode mode = BacktrackMode::Strict;

    double at(int layer, int i) const { return s.at(layer - 1, i); }
    std::vector<double> input_scores() const {
        return {s.row(0), s.row(0) + s.cols};
    }
};

struct GeneScore {
    std::string gene;
    double mean_score = 0.0;
    long long count = 0;
};

/// Per-gene mean backtracked score over every occurrence across samples,
/// ranked by mean descending (ties by symbol).
struct GeneScoreReport {
    std::vector<GeneScore> ranking;
};

struct BacktrackOptions {
    BacktrackMode mode = BacktrackMode::Strict;
    HeadMode head_mode = HeadMode::Mean;
    int workers = 0;
};

/// Collapses a clean-run trace's attention into backtracking weights.
/// Requires a trace recorded with record_attention.
LayerWeights attention_to_weights(const RunTrace& trace, HeadMode head_mode = HeadMode::Mean);

/// The backtracking recursion: s[L][.] = 0, then for l = L-1 down to 1,
/// s[l][i] = sum_k W[l][i][k] * (IE(k at l+1) + s[l+1][k]), where k ranges
/// over the next layer's MCNs (strict) or all units (relaxed, IE = 0 off
/// MCN). MCN entries beyond the sample's non-pad prefix are ignored.
BacktrackScores backtrack_sample(const LayerWeights& weights, const std::vector<McnEntry>& mcns,
                                 BacktrackMode mode = BacktrackMode::Strict);

/// Clean run + attention_to_weights + backtrack_sample per sample, then
/// position -> token -> gene aggregation across samples.
GeneScoreReport score_tokens(const ModelParams& params, std::span<const TrainSample> samples,
                             const McnSet& mcns, const GeneVocabulary& vocab,
                             const BacktrackOptions& opts = {});

/// Top-k genes by mean score; with exclude_known, the known genes are
/// removed before ranking.
std::vector<GeneScore> top_mcgs(const GeneScoreReport& report, int k = 10,
                                bool exclude_known = false,
                                const std::vector<std::string>& known_genes = {});

// ---- artifacts ----

/// Header `rank,gene,mean_score,count`.
void write_gene_scores_csv(const GeneScoreReport& report, const std::string& path);

/// Top-k lines formatted `SYMBOL (score)` with three decimals.
void write_mcgs_txt(const std::vector<GeneScore>& top, const std::string& path);
std::vector<std::string> load_mcgs_txt(const std::string& path);

}  // namespace rgf
