#include "rgf/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "rgf/parallel.hpp"
#include "rgf/text.hpp"

namespace rgf {

std::vector<int> known_positions(const TokenSequence& seq,
                                 const std::vector<TokenId>& known_tokens) {
    std::vector<int> out;
    for (int i = 0; i < seq.n_real; ++i) {
        const TokenId tok = seq.tokens[static_cast<std::size_t>(i)];
        if (std::find(known_tokens.begin(), known_tokens.end(), tok) != known_tokens.end()) {
            out.push_back(i);
        }
    }
    return out;
}

Triplet run_triplet(const ModelParams& params, const TokenSequence& seq,
                    const std::vector<int>& positions, double sigma, std::uint64_t noise_seed,
                    int target_layer, int target_position) {
    require(!positions.empty(), "run_triplet: empty corruption position set");
    require(target_layer >= 1 && target_layer <= params.config.n_layers,
            "run_triplet: target layer out of range");
    require(target_position >= 0 && target_position < params.config.max_len,
            "run_triplet: target position out of range");

    ForwardOptions record_hidden{.record_hidden = true};
    const RunTrace clean = forward(params, seq, nullptr, record_hidden);

    Intervention corrupt;
    corrupt.corrupt_positions = positions;
    corrupt.sigma = sigma;
    corrupt.noise_seed = noise_seed;
    const RunTrace corrupted = forward(params, seq, &corrupt);

    Intervention restore = corrupt;
    restore.restore = Intervention::Restore{
        .layer = target_layer,
        .position = target_position,
        .clean_hidden =
            {clean.hidden[static_cast<std::size_t>(target_layer)].row(target_position),
             clean.hidden[static_cast<std::size_t>(target_layer)].row(target_position) +
                 params.config.d_model},
    };
    const RunTrace restored = forward(params, seq, &restore);

    return Triplet{clean.probs[1], corrupted.probs[1], restored.probs[1]};
}

IEGrid build_ie_grid(const ModelParams& params, std::span<const TrainSample> samples,
                     const TraceConfig& cfg, const GeneVocabulary& vocab) {
    const auto& mc = params.config;
    require(cfg.sigma >= 0.0, "build_ie_grid: sigma must be non-negative");
    require(mc.max_len == cfg.max_len || cfg.max_len == 0,
            "build_ie_grid: trace max_len does not match the model");

    std::vector<TokenId> known_tokens;
    for (const auto& symbol : cfg.known_genes) {
        if (vocab.contains(symbol)) known_tokens.push_back(vocab.token_of(symbol));
    }
    require(!known_tokens.empty(), "build_ie_grid: no known gene is present in the vocabulary");

    const int L = mc.n_layers;
    const int T = mc.max_len;

    IEGrid grid;
    grid.n_layers = L;
    grid.max_len = T;
    grid.sum.resize(L, T);
    grid.count.assign(static_cast<std::size_t>(L) * T, 0);

    struct Eligible {
        const TrainSample* sample;
        std::vector<int> positions;
    };
    std::vector<Eligible> eligible;
    for (const auto& s : samples) {
        auto pos = known_positions(s.seq, known_tokens);
        if (pos.empty()) {
            ++grid.skipped_samples;
            continue;
        }
        if (cfg.sample_limit > 0 && eligible.size() >= cfg.sample_limit) continue;
        eligible.push_back(Eligible{&s, std::move(pos)});
    }
    require(!eligible.empty(), "build_ie_grid: no sample carries a known-gene token");
    grid.used_samples = eligible.size();

    const double sign = cfg.ie_sign == IeSign::RestoredMinusCorrupted ? 1.0 : -1.0;

    struct WorkerState {
        ForwardScratch scratch;
        Matrix h, next;
    };
    std::vector<WorkerState> workers_state(
        static_cast<std::size_t>(resolve_workers(cfg.workers)));
    std::vector<Matrix> per_sample_ie(eligible.size());
    std::vector<int> per_sample_n(eligible.size(), 0);

    parallel_for(eligible.size(), cfg.workers, [&](std::size_t si, int wi) {
        const Eligible& e = eligible[si];
        const TokenSequence& seq = e.sample->seq;
        const int n = seq.n_real;
        WorkerState& st = workers_state[static_cast<std::size_t>(wi)];

        ForwardOptions record_hidden{.record_hidden = true};
        const RunTrace clean = forward(params, seq, nullptr, record_hidden);

        Intervention corrupt;
        corrupt.corrupt_positions = e.positions;
        corrupt.sigma = cfg.sigma;
        corrupt.noise_seed = noise_seed_for(cfg.seed, e.sample->cell_id);
        const RunTrace corrupted = forward(params, seq, &corrupt, record_hidden);
        const double p_corr = corrupted.probs[1];

        Matrix& ie = per_sample_ie[si];
        ie.resize(L, T);
        per_sample_n[si] = n;

        std::array<double, 2> logits{}, probs{};
        for (int l = 1; l <= L; ++l) {
            for (int i = 0; i < n; ++i) {
                // Resume the corrupted run with hidden (l, i) reverted to its
                // clean value; only layers above l need recomputing.
                st.h = corrupted.hidden[static_cast<std::size_t>(l)];
                std::memcpy(st.h.row(i), clean.hidden[static_cast<std::size_t>(l)].row(i),
                            sizeof(double) * static_cast<std::size_t>(mc.d_model));
                for (int m = l + 1; m <= L; ++m) {
                    run_layer(params, m, st.h, n, st.next, st.scratch);
                    std::swap(st.h, st.next);
                }
                readout(params, st.h, n, logits, probs);
                ie.at(l - 1, i) = sign * indirect_effect(p_corr, probs[1]);
            }
        }
    });

    // Ordered reduction keeps the grid byte-stable across worker counts.
    for (std::size_t si = 0; si < eligible.size(); ++si) {
        const Matrix& ie = per_sample_ie[si];
        const int n = per_sample_n[si];
        for (int l = 1; l <= L; ++l) {
            for (int i = 0; i < n; ++i) {
                grid.sum.at(l - 1, i) += ie.at(l - 1, i);
                grid.count[(static_cast<std::size_t>(l) - 1) * T + i] += 1;
            }
        }
    }
    return grid;
}

McnSet select_mcns(const IEGrid& grid, double percentile) {
    require(percentile > 0.0 && percentile < 100.0, "select_mcns: percentile must be in (0,100)");
    std::vector<double> values;
    for (int l = 1; l <= grid.n_layers; ++l) {
        for (int i = 0; i < grid.max_len; ++i) {
            if (grid.count_at(l, i) > 0) values.push_back(grid.mean_at(l, i));
        }
    }
    require(!values.empty(), "select_mcns: empty grid");

    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(
                           std::floor(percentile / 100.0 * static_cast<double>(n))) +
                       1;
    if (rank > n) rank = n;
    const double cutoff = sorted[rank - 1];

    McnSet out;
    out.cutoff = cutoff;
    for (int l = 1; l <= grid.n_layers; ++l) {
        for (int i = 0; i < grid.max_len; ++i) {
            if (grid.count_at(l, i) > 0 && grid.mean_at(l, i) >= cutoff) {
                out.entries.push_back(McnEntry{l, i, grid.mean_at(l, i)});
            }
        }
    }
    std::sort(out.entries.begin(), out.entries.end(), [](const McnEntry& a, const McnEntry& b) {
        if (a.mean_ie != b.mean_ie) return a.mean_ie > b.mean_ie;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.position < b.position;
    });
    return out;
}

void write_ie_grid_csv(const IEGrid& grid, const std::string& path) {
    std::string out = "layer,position,mean_ie,count\n";
    for (int l = 1; l <= grid.n_layers; ++l) {
        for (int i = 0; i < grid.max_len; ++i) {
            const long long c = grid.count_at(l, i);
            if (c == 0) continue;
            out += std::to_string(l);
            out += ',';
            out += std::to_string(i);
            out += ',';
            out += format_double(grid.mean_at(l, i));
            out += ',';
            out += std::to_string(c);
            out += '\n';
        }
    }
    write_text_file(path, out);
}

void write_mcns_csv(const McnSet& mcns, const std::string& path) {
    std::string out = "layer,position,mean_ie\n";
    for (const auto& e : mcns.entries) {
        out += std::to_string(e.layer);
        out += ',';
        out += std::to_string(e.position);
        out += ',';
        out += format_double(e.mean_ie);
        out += '\n';
    }
    write_text_file(path, out);
}

McnSet load_mcns_csv(const std::string& path) {
    const auto lines = read_lines(path);
    require(!lines.empty() && lines[0] == "layer,position,mean_ie",
            "mcns file " + path + ": missing header");
    McnSet out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        auto fields = split(lines[i], ',');
        require(fields.size() == 3, "mcns file " + path + ": malformed line " + lines[i]);
        McnEntry e;
        e.layer = static_cast<int>(parse_int(fields[0], "mcn layer"));
        e.position = static_cast<int>(parse_int(fields[1], "mcn position"));
        e.mean_ie = parse_double(fields[2], "mcn mean_ie");
        out.entries.push_back(e);
    }
    require(!out.entries.empty(), "mcns file " + path + ": no entries");
    out.cutoff = out.entries.back().mean_ie;
    return out;
}

}  // namespace rgf
