#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rgf/backtrack.hpp"
#include "rgf/corpus.hpp"
#include "rgf/enrich.hpp"
#include "rgf/model.hpp"
#include "rgf/trace.hpp"
#include "rgf/train.hpp"

namespace rgf {

struct PipelinePaths {
    std::string dataset;
    std::string vocab;        // optional; built from the dataset when empty
    std::string known_genes;  // optional; default AlzGene list when empty
    std::string gmt;          // optional; enrichment is skipped when empty
    std::string out_dir;
};

/// Whole-run configuration: file locations, model/training/tracing settings,
/// and the seeds. One root seed fans out to per-stage seeds by stable name
/// hashing.
struct PipelineConfig {
    PipelinePaths paths;
    ModelConfig model;
    TrainConfig train;
    TraceConfig trace;
    BacktrackOptions backtrack;
    QcThresholds qc;
    int top_k = 10;
    bool exclude_known = false;
    double enrich_alpha = 0.05;
    int folds = 5;
    int test_fold = 0;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    int workers = 0;
};

PipelineConfig load_pipeline_config(const std::string& path);

SyntheticSpec load_synthetic_spec(const std::string& path);

/// QC-filtered, encoded dataset plus the vocabulary in effect.
struct PreparedData {
    GeneVocabulary vocab;
    std::vector<TrainSample> samples;
    std::vector<int> labels;
    std::size_t rejected_cells = 0;
};

PreparedData prepare_data(const std::vector<CellRecord>& cells, const PipelineConfig& cfg);

struct TrainStageResult {
    ModelParams params;
    MetricsReport metrics;     // single-trial metrics (one fold)
    TrialIndices trial;
    int best_epoch = 0;
    double best_val_f1 = 0.0;
};

/// One stratified trial (the configured test fold held out), Adam fine-tuning
/// with the best-validation-F1 snapshot, test metrics.
TrainStageResult run_train_stage(const PreparedData& data, const PipelineConfig& cfg);

/// Full k-fold cross-validation over a small learning-rate grid.
MetricsReport run_cv_stage(const PreparedData& data, const PipelineConfig& cfg);

struct TraceStageResult {
    IEGrid grid;
    McnSet mcns;
};

TraceStageResult run_trace_stage(const ModelParams& params,
                                 std::span<const TrainSample> test_samples,
                                 const PipelineConfig& cfg, const GeneVocabulary& vocab);

struct BacktrackStageResult {
    GeneScoreReport report;
    std::vector<GeneScore> top;
};

BacktrackStageResult run_backtrack_stage(const ModelParams& params,
                                         std::span<const TrainSample> test_samples,
                                         const McnSet& mcns, const PipelineConfig& cfg,
                                         const GeneVocabulary& vocab);

void write_metrics_json(const MetricsReport& report, const std::string& path);

/// Layer x position heatmap of mean indirect effects with the selected MCN
/// cells highlighted. One rect per populated grid cell.
void write_heatmap_svg(const IEGrid& grid, const McnSet& mcns, const std::string& path);

/// Known-gene list in effect for a config: the configured file, or the
/// built-in AlzGene default.
std::vector<std::string> resolve_known_genes(const PipelineConfig& cfg);

struct PipelineResult {
    std::vector<std::string> artifacts;  // paths written, in order
    MetricsReport metrics;
    std::size_t n_mcns = 0;
    std::vector<GeneScore> top_genes;
};

/// End-to-end run: load + QC + encode, train, trace, backtrack, and (when a
/// GMT file is configured) enrich. Writes metrics.json, checkpoint.rgfm,
/// ie_grid.csv, mcns.csv, heatmap.svg, gene_scores.csv, mcgs.txt and
/// enrichment.csv into out_dir.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace rgf
