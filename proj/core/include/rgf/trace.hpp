#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rgf/corpus.hpp"
#include "rgf/mat.hpp"
#include "rgf/model.hpp"
#include "rgf/rng.hpp"
#include "rgf/train.hpp"

namespace rgf {

/// Sign convention for the indirect effect. The default follows the causal
/// mediation reading: restoration recovering a damaged prediction gives a
/// positive effect.
enum class IeSign { RestoredMinusCorrupted, CorruptedMinusRestored };

struct TraceConfig {
    double sigma = 1.0;
    double percentile = 95.0;
    std::vector<std::string> known_genes;
    int max_len = 256;
    std::size_t sample_limit = 0;  // 0 = use every eligible sample
    std::uint64_t seed = 0;
    IeSign ie_sign = IeSign::RestoredMinusCorrupted;
    int workers = 0;
};

/// Layer x position grid of sample-mean indirect effects. Rows are layers
/// 1..L; a cell's count is the number of samples whose non-pad prefix covers
/// that position.
struct IEGrid {
    int n_layers = 0;
    int max_len = 0;
    Matrix sum;                    // accumulated IE per cell
    std::vector<long long> count;  // contributing samples per cell
    std::size_t used_samples = 0;
    std::size_t skipped_samples = 0;  // samples with no known-gene token

    long long count_at(int layer, int position) const {
        return count[(static_cast<std::size_t>(layer) - 1) * max_len + position];
    }
    double mean_at(int layer, int position) const {
        const long long c = count_at(layer, position);
        return c > 0 ? sum.at(layer - 1, position) / static_cast<double>(c) : 0.0;
    }
};

struct McnEntry {
    int layer = 0;     // 1..L
    int position = 0;  // 0..max_len-1
    double mean_ie = 0.0;
};

/// Selected Most Causal Neurons, sorted by mean indirect effect descending
/// (ties: layer, then position).
struct McnSet {
    std::vector<McnEntry> entries;
    double cutoff = 0.0;
};

/// Positions (ascending) of non-pad tokens whose id is in `known_tokens`.
std::vector<int> known_positions(const TokenSequence& seq,
                                 const std::vector<TokenId>& known_tokens);

/// Per-sample corruption noise seed: the trace seed folded with the cell id.
inline std::uint64_t noise_seed_for(std::uint64_t trace_seed, const std::string& cell_id) {
    return derive_seed(trace_seed, cell_id);
}

struct Triplet {
    double clean = 0.0;
    double corrupted = 0.0;
    double restored = 0.0;
};

/// The three-run protocol for one (layer, position) target: a clean run, a
/// corrupted run (Gaussian noise on the known-gene embeddings), and a
/// corrupted run with that hidden state restored to its clean value. All
/// three are full forward passes; the corrupted and restored runs share the
/// same noise seed. Returns class-1 probabilities.
Triplet run_triplet(const ModelParams& params, const TokenSequence& seq,
                    const std::vector<int>& positions, double sigma, std::uint64_t noise_seed,
                    int target_layer, int target_position);

/// IE = p_restored - p_corrupted.
inline double indirect_effect(double p_corrupted, double p_restored) {
    return p_restored - p_corrupted;
}

/// Runs one triplet per (layer, non-pad position) cell for every sample with
/// at least one known-gene token; samples without one are skipped and
/// counted. Restored runs resume from the corrupted run's cached activations
/// instead of re-running the whole network, which is equivalent to the
/// brute-force protocol because restoration only affects layers above the
/// target.
IEGrid build_ie_grid(const ModelParams& params, std::span<const TrainSample> samples,
                     const TraceConfig& cfg, const GeneVocabulary& vocab);

/// Percentile cutoff over the populated cells; cells with mean IE >= cutoff
/// are selected. The rank is exclusive (floor(p/100 * N) + 1) so that e.g.
/// 100 distinct values at the 95th percentile select exactly 5.
McnSet select_mcns(const IEGrid& grid, double percentile = 95.0);

// ---- artifacts ----

/// Header `layer,position,mean_ie,count`; one row per populated cell.
void write_ie_grid_csv(const IEGrid& grid, const std::string& path);

/// Header `layer,position,mean_ie`, sorted by mean_ie descending.
void write_mcns_csv(const McnSet& mcns, const std::string& path);
McnSet load_mcns_csv(const std::string& path);

}  // namespace rgf
