#include "rgf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "rgf/rng.hpp"
#include "rgf/text.hpp"

namespace rgf {

// ---- GeneVocabulary ----

GeneVocabulary GeneVocabulary::build(const std::vector<std::string>& symbols) {
    require(!symbols.empty(), "build_vocabulary: empty symbol list");
    std::vector<std::string> cleaned;
    cleaned.reserve(symbols.size());
    for (const auto& s : symbols) {
        std::string t(trim(s));
        require(!t.empty(), "build_vocabulary: empty symbol");
        cleaned.push_back(std::move(t));
    }
    std::sort(cleaned.begin(), cleaned.end());
    for (std::size_t i = 1; i < cleaned.size(); ++i) {
        require(cleaned[i] != cleaned[i - 1],
                "build_vocabulary: duplicate symbol '" + cleaned[i] + "'");
    }
    GeneVocabulary v;
    v.symbols_ = std::move(cleaned);
    TokenId id = 1;
    for (const auto& s : v.symbols_) v.entries_.emplace(s, id++);
    return v;
}

TokenId GeneVocabulary::token_of(const std::string& symbol) const {
    auto it = entries_.find(symbol);
    require(it != entries_.end(), "unknown gene symbol: '" + symbol + "'");
    return it->second;
}

const std::string& GeneVocabulary::symbol_of(TokenId id) const {
    require(id >= 1 && id <= size(), "token id out of range: " + std::to_string(id));
    return symbols_[static_cast<std::size_t>(id) - 1];
}

void GeneVocabulary::save(const std::string& path) const {
    std::string out;
    for (const auto& [symbol, id] : entries_) {
        out += symbol;
        out += '\t';
        out += std::to_string(id);
        out += '\n';
    }
    write_text_file(path, out);
}

GeneVocabulary GeneVocabulary::load(const std::string& path) {
    std::vector<std::pair<TokenId, std::string>> pairs;
    for (const auto& line : read_lines(path)) {
        if (trim(line).empty()) continue;
        auto fields = split(line, '\t');
        require(fields.size() == 2, "vocabulary file: malformed line '" + line + "'");
        pairs.emplace_back(static_cast<TokenId>(parse_int(fields[1], "vocabulary id")),
                           std::string(trim(fields[0])));
    }
    require(!pairs.empty(), "vocabulary file: no entries in " + path);
    std::sort(pairs.begin(), pairs.end());
    GeneVocabulary v;
    TokenId expect = 1;
    for (auto& [id, symbol] : pairs) {
        require(id == expect, "vocabulary file: token ids must be contiguous 1..G");
        require(!symbol.empty(), "vocabulary file: empty symbol");
        require(v.entries_.emplace(symbol, id).second,
                "vocabulary file: duplicate symbol '" + symbol + "'");
        v.symbols_.push_back(std::move(symbol));
        ++expect;
    }
    return v;
}

GeneVocabulary build_vocabulary(const std::vector<std::string>& symbols) {
    return GeneVocabulary::build(symbols);
}

// ---- quality control ----

const char* qc_reason_name(QcReason r) {
    switch (r) {
        case QcReason::TooFewFeatures: return "too_few_features";
        case QcReason::TooManyFeatures: return "too_many_features";
        case QcReason::HighMitoFraction: return "high_mito_fraction";
    }
    return "unknown";
}

namespace {

bool is_mito_symbol(const std::string& symbol) {
    return symbol.rfind("MT-", 0) == 0;
}

}  // namespace

QcResult qc_filter(const std::vector<CellRecord>& cells, const QcThresholds& t) {
    require(t.min_features > 0 && t.max_features > 0 && t.max_mito > 0,
            "qc_filter: thresholds must be positive");
    QcResult result;
    for (const auto& cell : cells) {
        int features = 0;
        double total = 0.0, mito = 0.0;
        for (const auto& [symbol, count] : cell.expression) {
            if (count > 0.0) {
                ++features;
                total += count;
                if (is_mito_symbol(symbol)) mito += count;
            }
        }
        const double mito_fraction = total > 0.0 ? mito / total : 0.0;
        if (features < t.min_features) {
            result.rejected.emplace_back(cell, QcReason::TooFewFeatures);
        } else if (features > t.max_features) {
            result.rejected.emplace_back(cell, QcReason::TooManyFeatures);
        } else if (mito_fraction > t.max_mito) {
            result.rejected.emplace_back(cell, QcReason::HighMitoFraction);
        } else {
            result.kept.push_back(cell);
        }
    }
    return result;
}

// ---- rank value encoding ----

std::vector<TokenId> encode_rank_values(const CellRecord& cell, const GeneVocabulary& vocab) {
    std::vector<std::pair<double, TokenId>> expressed;
    expressed.reserve(cell.expression.size());
    for (const auto& [symbol, count] : cell.expression) {
        require(count >= 0.0, "encode_rank_values: negative expression for '" + symbol + "'");
        if (count > 0.0) expressed.emplace_back(count, vocab.token_of(symbol));
    }
    require(!expressed.empty(),
            "encode_rank_values: cell '" + cell.cell_id + "' has no positive expression");
    std::sort(expressed.begin(), expressed.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;  // expression descending
        return x.second < y.second;                        // then token id ascending
    });
    std::vector<TokenId> out;
    out.reserve(expressed.size());
    for (const auto& [count, id] : expressed) out.push_back(id);
    return out;
}

TokenSequence truncate_and_pad(const std::vector<TokenId>& ranked, int max_len, TokenId pad_id) {
    require(max_len >= 2, "truncate_and_pad: max_len must be >= 2");
    TokenSequence seq;
    const int n = static_cast<int>(ranked.size());
    if (n > max_len) {
        const int head = (max_len + 1) / 2;
        const int tail = max_len / 2;
        seq.tokens.assign(ranked.begin(), ranked.begin() + head);
        seq.tokens.insert(seq.tokens.end(), ranked.end() - tail, ranked.end());
        seq.n_real = max_len;
    } else {
        seq.tokens = ranked;
        seq.tokens.resize(static_cast<std::size_t>(max_len), pad_id);
        seq.n_real = n;
    }
    return seq;
}

// ---- folds and trials ----

FoldAssignment stratified_kfold_labels(const std::vector<int>& labels, int k, std::uint64_t seed) {
    require(k >= 2, "stratified_kfold: k must be >= 2");
    FoldAssignment out;
    out.k = k;
    out.fold.assign(labels.size(), -1);

    Rng rng(seed);
    int offset = 0;
    for (int label : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == label) idx.push_back(i);
        }
        if (idx.empty()) continue;
        require(static_cast<int>(idx.size()) >= k,
                "stratified_kfold: class " + std::to_string(label) + " has fewer than k members");
        rng.shuffle(idx.data(), idx.size());
        // Consecutive assignment starting at `offset` spreads each class's
        // remainder over different folds, keeping total fold sizes within 1.
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out.fold[idx[j]] = static_cast<int>((j + offset) % k);
        }
        offset = static_cast<int>((offset + idx.size()) % k);
    }
    return out;
}

FoldAssignment stratified_kfold(const std::vector<CellRecord>& cells, int k, std::uint64_t seed) {
    std::vector<int> labels;
    labels.reserve(cells.size());
    for (const auto& c : cells) labels.push_back(c.label);
    return stratified_kfold_labels(labels, k, seed);
}

TrialIndices make_trial_indices(const std::vector<int>& labels, const FoldAssignment& folds,
                                int test_fold, double val_fraction, std::uint64_t seed) {
    require(folds.fold.size() == labels.size(), "make_trial: fold assignment size mismatch");
    require(test_fold >= 0 && test_fold < folds.k, "make_trial: invalid fold index");
    require(val_fraction >= 0.0 && val_fraction < 1.0, "make_trial: val_fraction must be in [0,1)");

    TrialIndices split;
    Rng rng(seed);
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (folds.fold[i] == test_fold) {
            split.test.push_back(i);
        } else {
            rest.push_back(i);
        }
    }
    for (int label : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i : rest) {
            if (labels[i] == label) idx.push_back(i);
        }
        rng.shuffle(idx.data(), idx.size());
        const std::size_t n_val =
            static_cast<std::size_t>(std::ceil(static_cast<double>(idx.size()) * val_fraction));
        for (std::size_t j = 0; j < idx.size(); ++j) {
            (j < n_val ? split.val : split.train).push_back(idx[j]);
        }
    }
    return split;
}

TrialSplit make_trial(const std::vector<CellRecord>& cells, const FoldAssignment& folds,
                      int test_fold, double val_fraction, std::uint64_t seed) {
    std::vector<int> labels;
    labels.reserve(cells.size());
    for (const auto& c : cells) labels.push_back(c.label);
    const TrialIndices idx = make_trial_indices(labels, folds, test_fold, val_fraction, seed);

    TrialSplit split;
    auto to_ids = [&](const std::vector<std::size_t>& from, std::vector<std::string>& to) {
        to.reserve(from.size());
        for (std::size_t i : from) to.push_back(cells[i].cell_id);
        std::sort(to.begin(), to.end());
    };
    to_ids(idx.train, split.train);
    to_ids(idx.val, split.val);
    to_ids(idx.test, split.test);
    return split;
}

// ---- synthetic data ----

namespace {

void validate_spec(const SyntheticSpec& spec) {
    require(spec.n_cells >= 2, "synthetic spec: n_cells must be >= 2");
    require(spec.n_genes >= static_cast<int>(spec.planted_genes.size()),
            "synthetic spec: n_genes smaller than planted gene list");
    require(spec.effect_size >= 1.0, "synthetic spec: effect_size must be >= 1");
    require(spec.base_mean > 0.0, "synthetic spec: base_mean must be positive");
    require(spec.dispersion > 0.0, "synthetic spec: dispersion must be positive");
    std::set<std::string> planted(spec.planted_genes.begin(), spec.planted_genes.end());
    require(planted.size() == spec.planted_genes.size(),
            "synthetic spec: duplicate planted gene");
    for (const auto& g : spec.designated_known) {
        require(planted.count(g) > 0,
                "synthetic spec: designated known gene '" + g + "' is not planted");
    }
}

}  // namespace

std::pair<std::vector<CellRecord>, GroundTruth> generate_synthetic(const SyntheticSpec& spec) {
    validate_spec(spec);

    // Universe = planted symbols + zero-padded filler symbols.
    std::set<std::string> used(spec.planted_genes.begin(), spec.planted_genes.end());
    std::vector<std::string> universe = spec.planted_genes;
    int width = 1;
    for (int v = spec.n_genes; v >= 10; v /= 10) ++width;
    for (int i = 1; static_cast<int>(universe.size()) < spec.n_genes; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "G%0*d", width, i);
        if (used.insert(buf).second) universe.push_back(buf);
    }
    std::sort(universe.begin(), universe.end());

    std::set<std::string> planted(spec.planted_genes.begin(), spec.planted_genes.end());
    Rng rng(spec.seed);
    std::vector<CellRecord> cells;
    cells.reserve(static_cast<std::size_t>(spec.n_cells));
    int id_width = 1;
    for (int v = spec.n_cells; v >= 10; v /= 10) ++id_width;
    for (int c = 0; c < spec.n_cells; ++c) {
        CellRecord cell;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "C%0*d", id_width, c + 1);
        cell.cell_id = buf;
        cell.label = c % 2;  // alternating labels keep any prefix balanced
        for (const auto& gene : universe) {
            const bool boosted = cell.label == 1 && planted.count(gene) > 0;
            const double mean = spec.base_mean * (boosted ? spec.effect_size : 1.0);
            const auto count = rng.negative_binomial(mean, spec.dispersion);
            if (count > 0) cell.expression.emplace(gene, static_cast<double>(count));
        }
        if (cell.expression.empty()) cell.expression.emplace(universe.front(), 1.0);
        cells.push_back(std::move(cell));
    }

    GroundTruth truth;
    truth.planted_genes = spec.planted_genes;
    truth.designated_known = spec.designated_known;
    std::sort(truth.planted_genes.begin(), truth.planted_genes.end());
    std::sort(truth.designated_known.begin(), truth.designated_known.end());
    return {std::move(cells), std::move(truth)};
}

void GroundTruth::save(const std::string& path) const {
    std::string out;
    for (const auto& g : planted_genes) out += "planted\t" + g + "\n";
    for (const auto& g : designated_known) out += "known\t" + g + "\n";
    write_text_file(path, out);
}

GroundTruth GroundTruth::load(const std::string& path) {
    GroundTruth t;
    for (const auto& line : read_lines(path)) {
        if (trim(line).empty()) continue;
        auto fields = split(line, '\t');
        require(fields.size() == 2, "ground-truth file: malformed line '" + line + "'");
        if (fields[0] == "planted") {
            t.planted_genes.emplace_back(fields[1]);
        } else if (fields[0] == "known") {
            t.designated_known.emplace_back(fields[1]);
        } else {
            fail("ground-truth file: unknown record type '" + std::string(fields[0]) + "'");
        }
    }
    return t;
}

// ---- dataset files ----

void save_dataset(const std::vector<CellRecord>& cells, const std::string& path) {
    std::string out;
    for (const auto& cell : cells) {
        out += cell.cell_id;
        out += '\t';
        out += std::to_string(cell.label);
        out += '\t';
        bool first = true;
        for (const auto& [gene, count] : cell.expression) {
            if (!first) out += ';';
            first = false;
            out += gene;
            out += '=';
            out += format_double(count);
        }
        out += '\n';
    }
    write_text_file(path, out);
}

std::vector<CellRecord> load_dataset(const std::string& path) {
    std::vector<CellRecord> cells;
    std::size_t line_no = 0;
    for (const auto& line : read_lines(path)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        auto fields = split(line, '\t');
        require(fields.size() == 3, "dataset " + where + ": expected 3 tab-separated fields");
        CellRecord cell;
        cell.cell_id = std::string(fields[0]);
        require(!cell.cell_id.empty(), "dataset " + where + ": empty cell id");
        const long long label = parse_int(fields[1], "dataset label at " + where);
        require(label == 0 || label == 1, "dataset " + where + ": label must be 0 or 1");
        cell.label = static_cast<int>(label);
        for (auto entry : split(fields[2], ';')) {
            if (entry.empty()) continue;
            auto eq = entry.find('=');
            require(eq != std::string_view::npos,
                    "dataset " + where + ": expected gene=count entries");
            std::string gene(entry.substr(0, eq));
            require(!gene.empty(), "dataset " + where + ": empty gene symbol");
            const double count = parse_double(entry.substr(eq + 1), "count at " + where);
            require(count >= 0.0, "dataset " + where + ": negative count");
            require(cell.expression.emplace(gene, count).second,
                    "dataset " + where + ": duplicate gene '" + gene + "'");
        }
        require(!cell.expression.empty(), "dataset " + where + ": cell has no expression");
        cells.push_back(std::move(cell));
    }
    require(!cells.empty(), "dataset " + path + ": no records");
    return cells;
}

void save_known_genes(const std::vector<std::string>& genes, const std::string& path) {
    std::string out;
    for (const auto& g : genes) out += g + "\n";
    write_text_file(path, out);
}

std::vector<std::string> load_known_genes(const std::string& path) {
    std::vector<std::string> genes;
    for (const auto& line : read_lines(path)) {
        auto t = trim(line);
        if (!t.empty()) genes.emplace_back(t);
    }
    require(!genes.empty(), "known-genes file " + path + ": no symbols");
    return genes;
}

std::vector<std::string> collect_symbols(const std::vector<CellRecord>& cells) {
    std::set<std::string> symbols;
    for (const auto& cell : cells) {
        for (const auto& [gene, count] : cell.expression) symbols.insert(gene);
    }
    return {symbols.begin(), symbols.end()};
}

}  // namespace rgf
