#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rgf/error.hpp"

namespace rgf {

using TokenId = std::int32_t;

constexpr TokenId kPadId = 0;

/// The ten AlzGene-curated genes used as the default corruption target list.
inline const std::vector<std::string> kDefaultKnownGenes = {
    "APOE", "BIN1", "CLU", "ABCA7", "CR1",
    "PICALM", "MS4A6A", "CD33", "MS4A4E", "CD2AP",
};

/// Bijective gene-symbol <-> token-id map. Ids are contiguous 1..G; id 0 is
/// reserved for padding and never maps to a gene.
class GeneVocabulary {
public:
    GeneVocabulary() = default;

    /// Symbols get ids 1..G in lexicographic order, which makes the mapping
    /// reproducible without an external token dictionary.
    static GeneVocabulary build(const std::vector<std::string>& symbols);

    int size() const { return static_cast<int>(symbols_.size()); }  // G, excludes pad
    int vocab_size() const { return size() + 1; }                   // includes pad id 0

    bool contains(const std::string& symbol) const { return entries_.count(symbol) > 0; }
    TokenId token_of(const std::string& symbol) const;
    const std::string& symbol_of(TokenId id) const;

    const std::map<std::string, TokenId>& entries() const { return entries_; }

    void save(const std::string& path) const;          // symbol<TAB>token_id lines
    static GeneVocabulary load(const std::string& path);

private:
    std::map<std::string, TokenId> entries_;
    std::vector<std::string> symbols_;  // symbols_[id-1] = symbol
};

/// One cell's labelled sparse expression profile.
struct CellRecord {
    std::string cell_id;
    int label = 0;  // 0 = non-AD, 1 = early-AD
    std::map<std::string, double> expression;
};

/// Rank-ordered gene tokens for one cell, padded to a fixed length. Non-pad
/// tokens form a prefix and are unique.
struct TokenSequence {
    std::vector<TokenId> tokens;
    int n_real = 0;

    int max_len() const { return static_cast<int>(tokens.size()); }
};

struct QcThresholds {
    int min_features = 200;
    int max_features = 2500;
    double max_mito = 0.05;
};

enum class QcReason { TooFewFeatures, TooManyFeatures, HighMitoFraction };

const char* qc_reason_name(QcReason r);

struct QcResult {
    std::vector<CellRecord> kept;
    std::vector<std::pair<CellRecord, QcReason>> rejected;
};

/// Fold index per cell (parallel to the cell list it was built from).
struct FoldAssignment {
    std::vector<int> fold;
    int k = 0;
};

struct TrialSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

struct SyntheticSpec {
    int n_cells = 0;
    int n_genes = 0;
    std::vector<std::string> planted_genes;
    std::vector<std::string> designated_known;  // subset of planted_genes
    double effect_size = 1.0;                   // multiplicative mean shift, >= 1
    double base_mean = 2.0;
    double dispersion = 2.0;
    std::uint64_t seed = 0;
};

struct GroundTruth {
    std::vector<std::string> planted_genes;
    std::vector<std::string> designated_known;

    void save(const std::string& path) const;
    static GroundTruth load(const std::string& path);
};

// ---- operations ----

GeneVocabulary build_vocabulary(const std::vector<std::string>& symbols);

QcResult qc_filter(const std::vector<CellRecord>& cells, const QcThresholds& thresholds = {});

/// Tokens of genes with positive expression, most expressed first. Ties are
/// broken by ascending token id so the encoding is deterministic.
std::vector<TokenId> encode_rank_values(const CellRecord& cell, const GeneVocabulary& vocab);

/// Sequences longer than max_len keep the first ceil(max_len/2) and last
/// floor(max_len/2) tokens (most up- and downregulated genes); shorter ones
/// are padded with pad_id.
TokenSequence truncate_and_pad(const std::vector<TokenId>& ranked, int max_len = 256,
                               TokenId pad_id = kPadId);

/// Stratified k-fold assignment: fold sizes differ by at most one and each
/// fold's class counts are within one cell of proportionality.
FoldAssignment stratified_kfold(const std::vector<CellRecord>& cells, int k, std::uint64_t seed);

/// Same assignment rule, driven by bare labels (used wherever cells have
/// already been encoded).
FoldAssignment stratified_kfold_labels(const std::vector<int>& labels, int k, std::uint64_t seed);

struct TrialIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// test = the chosen fold; the remainder is split per class into val
/// (ceil(class_size * val_fraction) members) and train.
TrialIndices make_trial_indices(const std::vector<int>& labels, const FoldAssignment& folds,
                                int test_fold, double val_fraction, std::uint64_t seed);

/// Cell-id view of make_trial_indices; each returned set is sorted.
TrialSplit make_trial(const std::vector<CellRecord>& cells, const FoldAssignment& folds,
                      int test_fold, double val_fraction, std::uint64_t seed);

std::pair<std::vector<CellRecord>, GroundTruth> generate_synthetic(const SyntheticSpec& spec);

// ---- file formats ----

/// Line-delimited records: cell_id<TAB>label<TAB>gene=count;gene=count;...
void save_dataset(const std::vector<CellRecord>& cells, const std::string& path);
std::vector<CellRecord> load_dataset(const std::string& path);

void save_known_genes(const std::vector<std::string>& genes, const std::string& path);
std::vector<std::string> load_known_genes(const std::string& path);

/// Union of gene symbols across records, sorted.
std::vector<std::string> collect_symbols(const std::vector<CellRecord>& cells);

}  // namespace rgf
