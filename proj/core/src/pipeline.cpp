#include "rgf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "rgf/rng.hpp"
#include "rgf/text.hpp"

namespace rgf {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail("config " + path + ": " + e.what());
    }
    PipelineConfig cfg;
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        read_if(p, "dataset", cfg.paths.dataset);
        read_if(p, "vocab", cfg.paths.vocab);
        read_if(p, "known_genes", cfg.paths.known_genes);
        read_if(p, "gmt", cfg.paths.gmt);
        read_if(p, "out_dir", cfg.paths.out_dir);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        read_if(m, "n_layers", cfg.model.n_layers);
        read_if(m, "n_heads", cfg.model.n_heads);
        read_if(m, "d_model", cfg.model.d_model);
        read_if(m, "d_ff", cfg.model.d_ff);
        read_if(m, "max_len", cfg.model.max_len);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        read_if(t, "learning_rate", cfg.train.learning_rate);
        read_if(t, "epochs", cfg.train.epochs);
        read_if(t, "batch_size", cfg.train.batch_size);
        read_if(t, "frozen_layers", cfg.train.frozen_layers);
    }
    if (j.contains("trace")) {
        const auto& t = j.at("trace");
        read_if(t, "sigma", cfg.trace.sigma);
        read_if(t, "percentile", cfg.trace.percentile);
        std::size_t limit = cfg.trace.sample_limit;
        read_if(t, "sample_limit", limit);
        cfg.trace.sample_limit = limit;
        std::string sign;
        read_if(t, "ie_sign", sign);
        if (!sign.empty()) {
            if (sign == "restored_minus_corrupted") {
                cfg.trace.ie_sign = IeSign::RestoredMinusCorrupted;
            } else if (sign == "corrupted_minus_restored") {
                cfg.trace.ie_sign = IeSign::CorruptedMinusRestored;
            } else {
                fail("config: ie_sign must be restored_minus_corrupted or corrupted_minus_restored");
            }
        }
    }
    if (j.contains("backtrack")) {
        const auto& b = j.at("backtrack");
        std::string mode;
        read_if(b, "mode", mode);
        if (!mode.empty()) {
            if (mode == "strict") {
                cfg.backtrack.mode = BacktrackMode::Strict;
            } else if (mode == "relaxed") {
                cfg.backtrack.mode = BacktrackMode::Relaxed;
            } else {
                fail("config: backtrack mode must be strict or relaxed");
            }
        }
        std::string head;
        read_if(b, "head_mode", head);
        if (!head.empty()) {
            if (head == "mean") {
                cfg.backtrack.head_mode = HeadMode::Mean;
            } else if (head == "max") {
                cfg.backtrack.head_mode = HeadMode::Max;
            } else {
                fail("config: head_mode must be mean or max");
            }
        }
    }
    if (j.contains("qc")) {
        const auto& q = j.at("qc");
        read_if(q, "min_features", cfg.qc.min_features);
        read_if(q, "max_features", cfg.qc.max_features);
        read_if(q, "max_mito", cfg.qc.max_mito);
    }
    read_if(j, "top_k", cfg.top_k);
    read_if(j, "exclude_known", cfg.exclude_known);
    read_if(j, "enrich_alpha", cfg.enrich_alpha);
    read_if(j, "folds", cfg.folds);
    read_if(j, "test_fold", cfg.test_fold);
    read_if(j, "val_fraction", cfg.val_fraction);
    read_if(j, "seed", cfg.seed);
    read_if(j, "workers", cfg.workers);
    return cfg;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail("synthetic spec " + path + ": " + e.what());
    }
    SyntheticSpec spec;
    read_if(j, "n_cells", spec.n_cells);
    read_if(j, "n_genes", spec.n_genes);
    read_if(j, "planted_genes", spec.planted_genes);
    read_if(j, "designated_known", spec.designated_known);
    read_if(j, "effect_size", spec.effect_size);
    read_if(j, "base_mean", spec.base_mean);
    read_if(j, "dispersion", spec.dispersion);
    read_if(j, "seed", spec.seed);
    return spec;
}

std::vector<std::string> resolve_known_genes(const PipelineConfig& cfg) {
    if (!cfg.paths.known_genes.empty()) return load_known_genes(cfg.paths.known_genes);
    return kDefaultKnownGenes;
}

PreparedData prepare_data(const std::vector<CellRecord>& cells, const PipelineConfig& cfg) {
    PreparedData data;
    if (!cfg.paths.vocab.empty()) {
        data.vocab = GeneVocabulary::load(cfg.paths.vocab);
    } else {
        data.vocab = build_vocabulary(collect_symbols(cells));
    }
    QcResult qc = qc_filter(cells, cfg.qc);
    data.rejected_cells = qc.rejected.size();
    require(!qc.kept.empty(), "prepare_data: every cell was rejected by quality control");
    data.samples.reserve(qc.kept.size());
    for (const auto& cell : qc.kept) {
        TrainSample s;
        s.cell_id = cell.cell_id;
        s.label = cell.label;
        s.seq = truncate_and_pad(encode_rank_values(cell, data.vocab), cfg.model.max_len);
        data.samples.push_back(std::move(s));
        data.labels.push_back(cell.label);
    }
    return data;
}

TrainStageResult run_train_stage(const PreparedData& data, const PipelineConfig& cfg) {
    const FoldAssignment folds =
        stratified_kfold_labels(data.labels, cfg.folds, derive_seed(cfg.seed, "folds"));
    TrainStageResult out;
    out.trial = make_trial_indices(data.labels, folds, cfg.test_fold, cfg.val_fraction,
                                   derive_seed(cfg.seed, "trial"));

    std::vector<TrainSample> tr, va, te;
    for (std::size_t i : out.trial.train) tr.push_back(data.samples[i]);
    for (std::size_t i : out.trial.val) va.push_back(data.samples[i]);
    for (std::size_t i : out.trial.test) te.push_back(data.samples[i]);

    ModelConfig mc = cfg.model;
    mc.vocab_size = data.vocab.vocab_size();
    mc.init_seed = derive_seed(cfg.seed, "init");
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train");
    tc.workers = cfg.workers;

    FitResult fitres = fit(init_model(mc), tr, va, tc);
    out.best_epoch = fitres.best_epoch;
    out.best_val_f1 = fitres.best_val_f1;
    out.params = std::move(fitres.params);

    std::vector<int> te_labels;
    for (const auto& s : te) te_labels.push_back(s.label);
    const std::vector<double> te_probs = predict_probs(out.params, te, cfg.workers);
    out.metrics.auc = summarize({metric_auc(te_probs, te_labels)});
    const SensSpecF1 ssf = metric_sens_spec_f1(te_probs, te_labels);
    out.metrics.sensitivity = summarize({ssf.sensitivity});
    out.metrics.specificity = summarize({ssf.specificity});
    out.metrics.f1 = summarize({ssf.f1});
    out.metrics.best_config_lr = tc.learning_rate;
    out.metrics.best_mean_val_f1 = fitres.best_val_f1;
    return out;
}

MetricsReport run_cv_stage(const PreparedData& data, const PipelineConfig& cfg) {
    TrainConfig base = cfg.train;
    base.workers = cfg.workers;
    TrainConfig alt = base;
    alt.learning_rate = base.learning_rate / 3.0;
    // A small fixed grid around the configured rate.
    const std::vector<TrainConfig> grid = {base, alt};
    CvOptions opts;
    opts.k = cfg.folds;
    opts.val_fraction = cfg.val_fraction;
    opts.seed = cfg.seed;
    ModelConfig mc = cfg.model;
    mc.vocab_size = data.vocab.vocab_size();
    return cross_validate(data.samples, mc, grid, opts);
}

TraceStageResult run_trace_stage(const ModelParams& params,
                                 std::span<const TrainSample> test_samples,
                                 const PipelineConfig& cfg, const GeneVocabulary& vocab) {
    TraceConfig tc = cfg.trace;
    tc.max_len = params.config.max_len;
    tc.seed = derive_seed(cfg.seed, "trace");
    tc.workers = cfg.workers;
    if (tc.known_genes.empty()) tc.known_genes = resolve_known_genes(cfg);
    TraceStageResult out;
    out.grid = build_ie_grid(params, test_samples, tc, vocab);
    out.mcns = select_mcns(out.grid, tc.percentile);
    return out;
}

BacktrackStageResult run_backtrack_stage(const ModelParams& params,
                                         std::span<const TrainSample> test_samples,
                                         const McnSet& mcns, const PipelineConfig& cfg,
                                         const GeneVocabulary& vocab) {
    BacktrackOptions opts = cfg.backtrack;
    opts.workers = cfg.workers;
    BacktrackStageResult out;
    out.report = score_tokens(params, test_samples, mcns, vocab, opts);
    out.top = top_mcgs(out.report, cfg.top_k, cfg.exclude_known, resolve_known_genes(cfg));
    return out;
}

namespace {

ordered_json summary_to_json(const MetricSummary& s) {
    return ordered_json{{"per_fold", s.per_fold}, {"mean", s.mean}, {"std", s.stddev}};
}

}  // namespace

void write_metrics_json(const MetricsReport& report, const std::string& path) {
    ordered_json j;
    j["auc"] = summary_to_json(report.auc);
    j["sensitivity"] = summary_to_json(report.sensitivity);
    j["specificity"] = summary_to_json(report.specificity);
    j["f1"] = summary_to_json(report.f1);
    j["n_folds"] = report.auc.per_fold.size();
    j["best_config"] = ordered_json{{"index", report.best_config_index},
                                    {"learning_rate", report.best_config_lr},
                                    {"mean_val_f1", report.best_mean_val_f1}};
    write_text_file(path, j.dump(2) + "\n");
}

void write_heatmap_svg(const IEGrid& grid, const McnSet& mcns, const std::string& path) {
    require(grid.n_layers > 0 && grid.max_len > 0, "write_heatmap_svg: empty grid");
    bool any = false;
    double vmax = 0.0;
    for (int l = 1; l <= grid.n_layers; ++l) {
        for (int i = 0; i < grid.max_len; ++i) {
            if (grid.count_at(l, i) > 0) {
                any = true;
                vmax = std::max(vmax, std::abs(grid.mean_at(l, i)));
            }
        }
    }
    require(any, "write_heatmap_svg: no populated cells");
    if (vmax == 0.0) vmax = 1.0;

    std::set<std::pair<int, int>> mcn_cells;
    for (const auto& e : mcns.entries) mcn_cells.emplace(e.layer, e.position);

    const int cell = 8;
    const int ml = 40, mt = 28, mr = 10, mb = 34;
    const int width = ml + grid.max_len * cell + mr;
    const int height = mt + grid.n_layers * cell + mb;

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
           " " + std::to_string(height) + "\">\n";
    svg += "<style>text{font-family:sans-serif;font-size:10px}.title{font-size:12px}"
           ".cell.mcn{stroke:#000;stroke-width:1.2}</style>\n";
    svg += "<text class=\"title\" x=\"" + std::to_string(ml) +
           "\" y=\"16\">Mean indirect effect by layer and position (MCNs outlined)</text>\n";

    for (int l = 1; l <= grid.n_layers; ++l) {
        svg += "<text x=\"4\" y=\"" + std::to_string(mt + (l - 1) * cell + cell - 1) + "\">L" +
               std::to_string(l) + "</text>\n";
        for (int i = 0; i < grid.max_len; ++i) {
            if (grid.count_at(l, i) == 0) continue;
            const double v = grid.mean_at(l, i) / vmax;  // [-1, 1]
            int r = 255, g = 255, b = 255;
            if (v >= 0.0) {
                g = b = static_cast<int>(std::lround(255.0 * (1.0 - v)));
            } else {
                r = g = static_cast<int>(std::lround(255.0 * (1.0 + v)));
            }
            char color[8];
            std::snprintf(color, sizeof(color), "#%02x%02x%02x", r, g, b);
            const bool is_mcn = mcn_cells.count({l, i}) > 0;
            svg += "<rect class=\"cell";
            if (is_mcn) svg += " mcn";
            svg += "\" x=\"" + std::to_string(ml + i * cell) + "\" y=\"" +
                   std::to_string(mt + (l - 1) * cell) + "\" width=\"" + std::to_string(cell) +
                   "\" height=\"" + std::to_string(cell) + "\" fill=\"" + color + "\"/>\n";
        }
    }
    svg += "<text x=\"" + std::to_string(ml) + "\" y=\"" + std::to_string(height - 12) +
           "\">position 0.." + std::to_string(grid.max_len - 1) + " (rank order)</text>\n";
    svg += "</svg>\n";
    write_text_file(path, svg);
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    require(!cfg.paths.dataset.empty(), "pipeline: no dataset configured");
    require(!cfg.paths.out_dir.empty(), "pipeline: no output directory configured");
    require(fs::is_directory(cfg.paths.out_dir),
            "pipeline: output directory does not exist: " + cfg.paths.out_dir);

    const auto cells = load_dataset(cfg.paths.dataset);
    const PreparedData data = prepare_data(cells, cfg);

    PipelineResult result;
    const std::string out = cfg.paths.out_dir;
    auto emit = [&](const std::string& name) {
        result.artifacts.push_back(out + "/" + name);
        return result.artifacts.back();
    };

    // train
    TrainStageResult train_out = run_train_stage(data, cfg);
    save_checkpoint(train_out.params, emit("checkpoint.rgfm"));
    write_metrics_json(train_out.metrics, emit("metrics.json"));
    result.metrics = train_out.metrics;

    std::vector<TrainSample> test_samples;
    for (std::size_t i : train_out.trial.test) test_samples.push_back(data.samples[i]);

    // trace
    TraceStageResult trace_out = run_trace_stage(train_out.params, test_samples, cfg, data.vocab);
    write_ie_grid_csv(trace_out.grid, emit("ie_grid.csv"));
    write_mcns_csv(trace_out.mcns, emit("mcns.csv"));
    write_heatmap_svg(trace_out.grid, trace_out.mcns, emit("heatmap.svg"));
    result.n_mcns = trace_out.mcns.entries.size();

    // backtrack
    BacktrackStageResult bt_out =
        run_backtrack_stage(train_out.params, test_samples, trace_out.mcns, cfg, data.vocab);
    write_gene_scores_csv(bt_out.report, emit("gene_scores.csv"));
    write_mcgs_txt(bt_out.top, emit("mcgs.txt"));
    result.top_genes = bt_out.top;

    // enrichment (optional)
    if (!cfg.paths.gmt.empty()) {
        GeneSetCollection sets = load_gmt(cfg.paths.gmt);
        std::vector<std::string> universe;
        for (const auto& [symbol, id] : data.vocab.entries()) universe.push_back(symbol);
        sets.restrict_background(universe);
        std::vector<std::string> query;
        for (const auto& g : bt_out.top) query.push_back(g.gene);
        const EnrichResult enriched = enrich(query, sets, cfg.enrich_alpha);
        write_enrichment_csv(enriched, emit("enrichment.csv"));
    }
    return result;
}

}  // namespace rgf
