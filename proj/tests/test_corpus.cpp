#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "rgf/corpus.hpp"
#include "rgf/text.hpp"

using namespace rgf;

namespace {

CellRecord make_cell(std::string id, int label, std::map<std::string, double> expr) {
    CellRecord c;
    c.cell_id = std::move(id);
    c.label = label;
    c.expression = std::move(expr);
    return c;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("build_vocabulary assigns lexicographic ids from 1") {
    const auto v = build_vocabulary({"BIN1", "APOE"});
    CHECK(v.token_of("APOE") == 1);
    CHECK(v.token_of("BIN1") == 2);
    CHECK(v.size() == 2);
    CHECK(v.vocab_size() == 3);
    CHECK(v.symbol_of(1) == "APOE");
    CHECK_THROWS_AS(build_vocabulary({"APOE", "APOE"}), Error);
    CHECK_THROWS_AS(build_vocabulary({}), Error);
    CHECK_THROWS_AS(build_vocabulary({"A", " A "}), Error);  // duplicate after trimming
}

TEST_CASE("vocabulary file round-trips") {
    const auto v = build_vocabulary({"BIN1", "APOE", "CLU"});
    const std::string path = temp_path("rgf_vocab_test.tsv");
    v.save(path);
    const auto loaded = GeneVocabulary::load(path);
    CHECK(loaded.entries() == v.entries());
    std::filesystem::remove(path);
}

TEST_CASE("qc_filter applies the three reject rules") {
    std::map<std::string, double> big;
    for (int i = 0; i < 2600; ++i) big["GENE" + std::to_string(i)] = 1.0;
    std::map<std::string, double> mito_heavy, ok;
    for (int i = 0; i < 299; ++i) {
        mito_heavy["G" + std::to_string(i)] = 1.0;
        ok["G" + std::to_string(i)] = 1.0;
    }
    // 299 counts + MT share: 6% of total means mt/(mt+299) = 0.06
    mito_heavy["MT-CO1"] = 299.0 * 0.06 / 0.94;
    ok["MT-CO1"] = 299.0 * 0.02 / 0.98;

    const auto result = qc_filter({
        make_cell("too_many", 0, big),
        make_cell("mito", 0, mito_heavy),
        make_cell("fine", 1, ok),
        make_cell("too_few", 1, {{"A", 1.0}}),
    });
    REQUIRE(result.kept.size() == 1);
    CHECK(result.kept[0].cell_id == "fine");
    REQUIRE(result.rejected.size() == 3);
    std::map<std::string, QcReason> reasons;
    for (const auto& [cell, reason] : result.rejected) reasons[cell.cell_id] = reason;
    CHECK(reasons.at("too_many") == QcReason::TooManyFeatures);
    CHECK(reasons.at("mito") == QcReason::HighMitoFraction);
    CHECK(reasons.at("too_few") == QcReason::TooFewFeatures);
}

TEST_CASE("qc_filter is a fixed point on its kept set") {
    std::vector<CellRecord> cells;
    for (int c = 0; c < 20; ++c) {
        std::map<std::string, double> expr;
        for (int i = 0; i < 150 + 10 * c; ++i) expr["G" + std::to_string(i)] = 1.0;
        cells.push_back(make_cell("c" + std::to_string(c), c % 2, expr));
    }
    const auto once = qc_filter(cells);
    const auto twice = qc_filter(once.kept);
    CHECK(twice.kept.size() == once.kept.size());
    CHECK(twice.rejected.empty());
}

TEST_CASE("encode_rank_values sorts by expression then token id") {
    const auto vocab = build_vocabulary({"A", "B", "C"});  // A:1 B:2 C:3
    CHECK(encode_rank_values(make_cell("x", 0, {{"A", 5}, {"B", 2}, {"C", 9}}), vocab) ==
          std::vector<TokenId>{3, 1, 2});
    CHECK(encode_rank_values(make_cell("x", 0, {{"A", 5}, {"B", 5}}), vocab) ==
          std::vector<TokenId>{1, 2});
    CHECK_THROWS_AS(encode_rank_values(make_cell("x", 0, {{"A", 0.0}}), vocab), Error);
    CHECK_THROWS_AS(encode_rank_values(make_cell("x", 0, {{"ZZZ", 1.0}}), vocab), Error);
}

TEST_CASE("encode_rank_values output is non-increasing in expression") {
    std::vector<std::string> symbols;
    for (int i = 0; i < 40; ++i) symbols.push_back("G" + std::to_string(i));
    const auto vocab = build_vocabulary(symbols);
    std::map<std::string, double> expr;
    for (int i = 0; i < 40; ++i) expr[symbols[static_cast<std::size_t>(i)]] = (i * 7) % 11;
    const auto cell = make_cell("x", 0, expr);
    const auto ranked = encode_rank_values(cell, vocab);
    for (std::size_t i = 1; i < ranked.size(); ++i) {
        const double prev = expr.at(vocab.symbol_of(ranked[i - 1]));
        const double cur = expr.at(vocab.symbol_of(ranked[i]));
        CHECK(prev >= cur);
        if (prev == cur) CHECK(ranked[i - 1] < ranked[i]);
    }
}

TEST_CASE("truncate_and_pad keeps head and tail and pads short input") {
    const std::vector<TokenId> ten{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto t1 = truncate_and_pad(ten, 6);
    CHECK(t1.tokens == std::vector<TokenId>{1, 2, 3, 8, 9, 10});
    CHECK(t1.n_real == 6);

    const auto t2 = truncate_and_pad({4, 3, 2, 1}, 6);
    CHECK(t2.tokens == std::vector<TokenId>{4, 3, 2, 1, 0, 0});
    CHECK(t2.n_real == 4);

    std::vector<TokenId> exact(256);
    for (int i = 0; i < 256; ++i) exact[static_cast<std::size_t>(i)] = i + 1;
    const auto t3 = truncate_and_pad(exact, 256);
    CHECK(t3.tokens == exact);
    CHECK(t3.n_real == 256);

    // odd max_len keeps the extra token at the head
    const auto t4 = truncate_and_pad(ten, 5);
    CHECK(t4.tokens == std::vector<TokenId>{1, 2, 3, 9, 10});
    CHECK_THROWS_AS(truncate_and_pad(ten, 1), Error);
}

TEST_CASE("stratified_kfold balances folds and classes") {
    // 550 class-0 and 215 class-1 cells: 765 total, folds of 153.
    std::vector<CellRecord> cells;
    for (int i = 0; i < 765; ++i) {
        cells.push_back(make_cell("c" + std::to_string(i), i < 550 ? 0 : 1, {{"A", 1.0}}));
    }
    const auto folds = stratified_kfold(cells, 5, 123);

    std::vector<int> fold_sizes(5, 0);
    std::vector<int> fold_pos(5, 0);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        REQUIRE(folds.fold[i] >= 0);
        REQUIRE(folds.fold[i] < 5);
        fold_sizes[static_cast<std::size_t>(folds.fold[i])] += 1;
        if (cells[i].label == 1) fold_pos[static_cast<std::size_t>(folds.fold[i])] += 1;
    }
    for (int f = 0; f < 5; ++f) {
        CHECK(fold_sizes[static_cast<std::size_t>(f)] == 153);
        CHECK(fold_pos[static_cast<std::size_t>(f)] == 43);  // 215 / 5
    }

    const auto again = stratified_kfold(cells, 5, 123);
    CHECK(folds.fold == again.fold);
    const auto other = stratified_kfold(cells, 5, 124);
    CHECK(folds.fold != other.fold);

    SUBCASE("trial split reproduces the 489/123/153 shape") {
        const auto trial = make_trial(cells, folds, 0, 0.2, 7);
        CHECK(trial.test.size() == 153);
        CHECK(trial.val.size() == 123);
        CHECK(trial.train.size() == 489);

        std::set<std::string> all;
        for (const auto& id : trial.train) all.insert(id);
        for (const auto& id : trial.val) all.insert(id);
        for (const auto& id : trial.test) all.insert(id);
        CHECK(all.size() == cells.size());  // disjoint and exhaustive
    }
    SUBCASE("val_fraction of zero means no validation set") {
        const auto trial = make_trial(cells, folds, 1, 0.0, 7);
        CHECK(trial.val.empty());
        CHECK(trial.train.size() + trial.test.size() == cells.size());
    }
    SUBCASE("invalid fold index") {
        CHECK_THROWS_AS(make_trial(cells, folds, 5, 0.2, 7), Error);
    }
}

TEST_CASE("stratified_kfold puts one cell per class in each fold at 5/5") {
    std::vector<CellRecord> cells;
    for (int i = 0; i < 10; ++i) {
        cells.push_back(make_cell("c" + std::to_string(i), i % 2, {{"A", 1.0}}));
    }
    const auto folds = stratified_kfold(cells, 5, 5);
    std::map<int, std::pair<int, int>> per_fold;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        auto& [n0, n1] = per_fold[folds.fold[i]];
        (cells[i].label == 0 ? n0 : n1) += 1;
    }
    REQUIRE(per_fold.size() == 5);
    for (const auto& [f, counts] : per_fold) {
        CHECK(counts.first == 1);
        CHECK(counts.second == 1);
    }
    CHECK_THROWS_AS(stratified_kfold(cells, 6, 5), Error);  // class smaller than k
}

TEST_CASE("generate_synthetic is deterministic and plants the requested effect") {
    SyntheticSpec spec;
    spec.n_cells = 10000;
    spec.n_genes = 60;
    spec.planted_genes = {"PG1", "PG2", "PG3"};
    spec.designated_known = {"PG1"};
    spec.effect_size = 3.0;
    spec.base_mean = 2.0;
    spec.dispersion = 2.0;
    spec.seed = 31;

    const auto [cells, truth] = generate_synthetic(spec);
    REQUIRE(cells.size() == 10000);
    CHECK(truth.planted_genes.size() == 3);
    CHECK(truth.designated_known == std::vector<std::string>{"PG1"});

    int n1 = 0;
    for (const auto& c : cells) n1 += c.label;
    CHECK(n1 == 5000);

    // Sample-mean oracle: the label-1 / label-0 mean ratio of planted genes
    // should be within 5% of the effect size.
    for (const auto& gene : spec.planted_genes) {
        double sum0 = 0.0, sum1 = 0.0;
        for (const auto& c : cells) {
            const auto it = c.expression.find(gene);
            const double v = it == c.expression.end() ? 0.0 : it->second;
            (c.label == 1 ? sum1 : sum0) += v;
        }
        const double ratio = (sum1 / n1) / (sum0 / (static_cast<double>(cells.size()) - n1));
        CHECK(ratio == doctest::Approx(3.0).epsilon(0.05));
    }

    // a non-planted gene is unshifted
    double sum0 = 0.0, sum1 = 0.0;
    for (const auto& c : cells) {
        const auto it = c.expression.find("G01");
        const double v = it == c.expression.end() ? 0.0 : it->second;
        (c.label == 1 ? sum1 : sum0) += v;
    }
    CHECK(sum1 / n1 == doctest::Approx(sum0 / (cells.size() - n1)).epsilon(0.06));

    SUBCASE("same seed gives a byte-identical dataset") {
        const auto [cells2, truth2] = generate_synthetic(spec);
        const std::string p1 = temp_path("rgf_synth_a.tsv");
        const std::string p2 = temp_path("rgf_synth_b.tsv");
        save_dataset(cells, p1);
        save_dataset(cells2, p2);
        CHECK(read_text_file(p1) == read_text_file(p2));
        std::filesystem::remove(p1);
        std::filesystem::remove(p2);
    }
    SUBCASE("invalid specs are rejected") {
        SyntheticSpec bad = spec;
        bad.effect_size = 0.5;
        CHECK_THROWS_AS(generate_synthetic(bad), Error);
        bad = spec;
        bad.designated_known = {"NOT_PLANTED"};
        CHECK_THROWS_AS(generate_synthetic(bad), Error);
        bad = spec;
        bad.n_genes = 2;
        CHECK_THROWS_AS(generate_synthetic(bad), Error);
    }
}

TEST_CASE("dataset file round-trips") {
    std::vector<CellRecord> cells{
        make_cell("c1", 0, {{"A", 1.5}, {"B", 2.0}}),
        make_cell("c2", 1, {{"C", 7.0}}),
    };
    const std::string path = temp_path("rgf_dataset_test.tsv");
    save_dataset(cells, path);
    const auto loaded = load_dataset(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].cell_id == "c1");
    CHECK(loaded[0].label == 0);
    CHECK(loaded[0].expression == cells[0].expression);
    CHECK(loaded[1].expression == cells[1].expression);
    std::filesystem::remove(path);

    const std::string bad = temp_path("rgf_dataset_bad.tsv");
    write_text_file(bad, "c1\t2\tA=1\n");
    CHECK_THROWS_AS(load_dataset(bad), Error);  // label out of range
    write_text_file(bad, "c1\t1\tA=\n");
    CHECK_THROWS_AS(load_dataset(bad), Error);
    std::filesystem::remove(bad);
}

TEST_CASE("ground truth and known-genes files round-trip") {
    GroundTruth t;
    t.planted_genes = {"A", "B"};
    t.designated_known = {"A"};
    const std::string path = temp_path("rgf_truth_test.txt");
    t.save(path);
    const auto loaded = GroundTruth::load(path);
    CHECK(loaded.planted_genes == t.planted_genes);
    CHECK(loaded.designated_known == t.designated_known);
    std::filesystem::remove(path);

    const std::string kp = temp_path("rgf_known_test.txt");
    save_known_genes(kDefaultKnownGenes, kp);
    CHECK(load_known_genes(kp) == kDefaultKnownGenes);
    std::filesystem::remove(kp);
}
