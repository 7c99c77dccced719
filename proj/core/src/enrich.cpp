#include "rgf/enrich.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rgf/error.hpp"
#include "rgf/text.hpp"

namespace rgf {

void GeneSetCollection::restrict_background(const std::vector<std::string>& universe) {
    const std::set<std::string> uni(universe.begin(), universe.end());
    background = uni;
    for (auto& [name, members] : sets) {
        std::set<std::string> kept;
        for (const auto& g : members) {
            if (uni.count(g) > 0) kept.insert(g);
        }
        members = std::move(kept);
    }
}

GeneSetCollection load_gmt(const std::string& path) {
    GeneSetCollection out;
    std::size_t line_no = 0;
    for (const auto& line : read_lines(path)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        auto fields = split(line, '\t');
        require(fields.size() >= 3, "gmt " + where + ": expected name, description, genes");
        std::string name(trim(fields[0]));
        require(!name.empty(), "gmt " + where + ": empty set name");
        std::set<std::string> members;
        for (std::size_t i = 2; i < fields.size(); ++i) {
            auto g = trim(fields[i]);
            if (!g.empty()) members.emplace(g);
        }
        require(!members.empty(), "gmt " + where + ": set '" + name + "' has no genes");
        require(out.sets.emplace(name, members).second,
                "gmt " + where + ": duplicate set name '" + name + "'");
        out.background.insert(members.begin(), members.end());
    }
    require(!out.sets.empty(), "gmt " + path + ": no sets");
    return out;
}

namespace {

double log_choose(long long n, long long k) {
    return std::lgamma(static_cast<double>(n) + 1.0) -
           std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

}  // namespace

double hypergeom_sf(long long k, long long K, long long n, long long N) {
    require(N >= 0 && K >= 0 && n >= 0, "hypergeom_sf: negative count");
    require(K <= N && n <= N, "hypergeom_sf: set or query larger than background");
    require(k >= 0 && k <= std::min(K, n), "hypergeom_sf: overlap out of range");
    if (k == 0) return 1.0;
    const long long lo = std::max<long long>(k, std::max<long long>(0, n + K - N));
    const long long hi = std::min(K, n);
    const double log_denom = log_choose(N, n);
    double sf = 0.0;
    for (long long j = lo; j <= hi; ++j) {
        sf += std::exp(log_choose(K, j) + log_choose(N - K, n - j) - log_denom);
    }
    return std::min(sf, 1.0);
}

std::vector<double> bh_fdr(const std::vector<double>& pvalues) {
    const std::size_t m = pvalues.size();
    for (double p : pvalues) {
        require(p >= 0.0 && p <= 1.0, "bh_fdr: p-value outside [0,1]");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });
    std::vector<double> q(m, 0.0);
    double running = 1.0;
    for (std::size_t i = m; i-- > 0;) {
        const double adj =
            pvalues[order[i]] * static_cast<double>(m) / static_cast<double>(i + 1);
        running = std::min(running, std::min(adj, 1.0));
        q[order[i]] = running;
    }
    return q;
}

EnrichResult enrich(const std::vector<std::string>& query, const GeneSetCollection& sets,
                    double alpha) {
    require(!sets.background.empty(), "enrich: empty background");

    EnrichResult result;
    std::set<std::string> q_set;
    for (const auto& g : query) {
        if (sets.background.count(g) > 0) {
            q_set.insert(g);
        } else {
            ++result.dropped_query_symbols;
        }
    }
    const long long N = static_cast<long long>(sets.background.size());
    const long long n = static_cast<long long>(q_set.size());

    std::vector<EnrichedPathway> tested;
    std::vector<double> pvals;
    for (const auto& [name, members] : sets.sets) {
        long long overlap = 0;
        for (const auto& g : members) {
            if (q_set.count(g) > 0) ++overlap;
        }
        EnrichedPathway row;
        row.name = name;
        row.overlap = overlap;
        row.set_size = static_cast<long long>(members.size());
        row.p = hypergeom_sf(overlap, row.set_size, n, N);
        tested.push_back(row);
        pvals.push_back(row.p);
    }
    const std::vector<double> qvals = bh_fdr(pvals);
    for (std::size_t i = 0; i < tested.size(); ++i) tested[i].q = qvals[i];

    for (auto& row : tested) {
        if (row.q < alpha) result.pathways.push_back(row);
    }
    std::sort(result.pathways.begin(), result.pathways.end(),
              [](const EnrichedPathway& a, const EnrichedPathway& b) {
                  if (a.q != b.q) return a.q < b.q;
                  return a.name < b.name;
              });
    return result;
}

void write_enrichment_csv(const EnrichResult& result, const std::string& path) {
    std::string out = "pathway,overlap,set_size,p,q\n";
    for (const auto& row : result.pathways) {
        out += row.name;
        out += ',';
        out += std::to_string(row.overlap);
        out += ',';
        out += std::to_string(row.set_size);
        out += ',';
        out += format_double(row.p);
        out += ',';
        out += format_double(row.q);
        out += '\n';
    }
    write_text_file(path, out);
}

}  // namespace rgf
