#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace rgf {

/// Named gene sets plus the background universe they are tested against.
/// Every set member belongs to the background.
struct GeneSetCollection {
    std::map<std::string, std::set<std::string>> sets;
    std::set<std::string> background;

    /// Intersects all sets and the background with `universe`. Used to pin
    /// the testable universe to the model vocabulary.
    void restrict_background(const std::vector<std::string>& universe);
};

/// GMT parser: `name<TAB>description<TAB>gene1<TAB>gene2...` per line.
/// Duplicate genes within a set are collapsed; a duplicate set name or an
/// empty gene list is an error. The background starts as the union of all
/// sets.
GeneSetCollection load_gmt(const std::string& path);

/// Upper tail P(X >= k) for X ~ Hypergeometric(N, K, n), computed through
/// log-factorials.
double hypergeom_sf(long long k, long long K, long long n, long long N);

/// Benjamini-Hochberg step-up q-values, returned in input order.
std::vector<double> bh_fdr(const std::vector<double>& pvalues);

struct EnrichedPathway {
    std::string name;
    long long overlap = 0;
    long long set_size = 0;
    double p = 0.0;
    double q = 0.0;
};

struct EnrichResult {
    std::vector<EnrichedPathway> pathways;  // q < alpha, sorted by (q, name)
    std::size_t dropped_query_symbols = 0;  // query genes outside the background
};

/// One-sided over-representation test per set with BH correction across all
/// tested sets.
EnrichResult enrich(const std::vector<std::string>& query, const GeneSetCollection& sets,
                    double alpha = 0.05);

/// Header `pathway,overlap,set_size,p,q`.
void write_enrichment_csv(const EnrichResult& result, const std::string& path);

}  // namespace rgf
