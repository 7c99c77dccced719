#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rgf/model.hpp"

namespace rgf {

/// One encoded, labelled cell.
struct TrainSample {
    std::string cell_id;
    TokenSequence seq;
    int label = 0;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 10;
    int batch_size = 32;
    int frozen_layers = -1;  // count from the bottom; -1 = floor(L/3)
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int workers = 0;

    int resolved_frozen(int n_layers) const {
        return frozen_layers < 0 ? n_layers / 3 : frozen_layers;
    }
};

/// Gradients share the parameter layout; frozen tensors stay identically zero.
using ModelGrads = ModelParams;

/// -log p(label), with probabilities floored at 1e-12.
double cross_entropy(const std::array<double, 2>& probs, int label);

/// Exact reverse-mode gradients of the mean cross-entropy over the batch.
/// Layers 1..frozen_layers contribute zero gradient tensors; embeddings and
/// the head are always trainable. The reduction over the batch is chunked in
/// a fixed order, so the result does not depend on `workers`.
ModelGrads compute_gradients(const ModelParams& params, std::span<const TrainSample> batch,
                             int frozen_layers, int workers = 1,
                             double* mean_loss_out = nullptr);

struct AdamState {
    ModelParams m;
    ModelParams v;
    long long step = 0;

    static AdamState make(const ModelConfig& config);
};

/// Bias-corrected Adam update. Tensors of frozen layers are left untouched.
void optimizer_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
                    const TrainConfig& config);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_f1 = 0.0;
    double val_auc = 0.0;
    double val_sensitivity = 0.0;
    double val_specificity = 0.0;
};

struct FitResult {
    ModelParams params;  // snapshot of the best validation-F1 epoch
    std::vector<EpochStats> history;
    int best_epoch = 0;      // 1-based
    double best_val_f1 = 0.0;
};

/// Adam fine-tuning; returns the epoch snapshot with the highest validation
/// F1 (earliest epoch on ties).
FitResult fit(const ModelParams& init, std::span<const TrainSample> train,
              std::span<const TrainSample> val, const TrainConfig& config);

/// Class-1 probability per sample; order matches the input.
std::vector<double> predict_probs(const ModelParams& params, std::span<const TrainSample> samples,
                                  int workers = 0);

/// Mann-Whitney AUC with 0.5 credit for tied pairs.
double metric_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct SensSpecF1 {
    double sensitivity = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
};

/// Confusion-matrix metrics; a sample is predicted positive iff p >= threshold.
SensSpecF1 metric_sens_spec_f1(const std::vector<double>& probs, const std::vector<int>& labels,
                               double threshold = 0.5);

struct MetricSummary {
    std::vector<double> per_fold;
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation over folds
};

MetricSummary summarize(const std::vector<double>& values);

struct MetricsReport {
    MetricSummary auc;
    MetricSummary sensitivity;
    MetricSummary specificity;
    MetricSummary f1;
    int best_config_index = 0;
    double best_config_lr = 0.0;
    double best_mean_val_f1 = 0.0;
};

struct CvOptions {
    int k = 5;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
};

/// Per-fold test metrics of the grid configuration with the best mean
/// validation F1. `configs` is the (small, fixed) hyperparameter grid.
MetricsReport cross_validate(const std::vector<TrainSample>& samples, const ModelConfig& model_cfg,
                             const std::vector<TrainConfig>& configs, const CvOptions& opts);

}  // namespace rgf
