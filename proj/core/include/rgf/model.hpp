#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rgf/corpus.hpp"
#include "rgf/mat.hpp"

namespace rgf {

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 64;
    int d_ff = 128;
    int vocab_size = 0;  // includes pad id 0
    int max_len = 256;
    int n_classes = 2;
    std::uint64_t init_seed = 0;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

struct LayerParams {
    Matrix wq, wk, wv, wo;      // d_model x d_model
    Matrix bq, bk, bv, bo;      // 1 x d_model
    Matrix ln1_g, ln1_b;        // 1 x d_model
    Matrix w1;                  // d_model x d_ff
    Matrix b1;                  // 1 x d_ff
    Matrix w2;                  // d_ff x d_model
    Matrix b2;                  // 1 x d_model
    Matrix ln2_g, ln2_b;        // 1 x d_model
};

/// All trainable tensors. Post-norm encoder blocks with learned positional
/// embeddings; the classifier head reads the mean of the final-layer hidden
/// states over non-pad positions.
struct ModelParams {
    ModelConfig config;
    Matrix tok_embed;  // vocab_size x d_model
    Matrix pos_embed;  // max_len x d_model
    std::vector<LayerParams> layers;
    Matrix head_w;  // d_model x n_classes
    Matrix head_b;  // 1 x n_classes

    void allocate(const ModelConfig& cfg);
};

/// Visits every tensor in a fixed order (also the serialization order).
/// `layer` is 1-based for per-layer tensors and 0 for shared ones.
void for_each_tensor(ModelParams& p,
                     const std::function<void(const std::string&, int layer, Matrix&)>& fn);
void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, int layer, const Matrix&)>& fn);

/// In-silico perturbation of a run: Gaussian corruption of selected input
/// embeddings, and optionally one hidden-state restoration.
struct Intervention {
    std::vector<int> corrupt_positions;
    double sigma = 0.0;
    std::uint64_t noise_seed = 0;

    struct Restore {
        int layer = 0;     // 1..L; applied after this layer computes
        int position = 0;  // 0..max_len-1
        std::vector<double> clean_hidden;  // d_model values from the clean run
    };
    std::optional<Restore> restore;
};

struct ForwardOptions {
    bool record_hidden = false;
    bool record_attention = false;
};

/// Attention probabilities of one layer, flattened [head][query][key] with
/// query/key in 0..max_len-1. Entries for pad keys are exactly zero.
struct AttentionRecord {
    std::vector<double> p;
    int n_heads = 0;
    int len = 0;

    double at(int head, int query, int key) const {
        return p[(static_cast<std::size_t>(head) * len + query) * len + key];
    }
};

/// Everything observable about one run. hidden[0] is the embedding-layer
/// output; hidden[l] is the output of layer l (after any restoration).
struct RunTrace {
    std::vector<Matrix> hidden;             // L+1 entries when recorded
    std::vector<AttentionRecord> attention; // L entries when recorded
    std::array<double, 2> logits{};
    std::array<double, 2> probs{};
    int n_real = 0;
};

ModelParams init_model(const ModelConfig& config);

RunTrace forward(const ModelParams& params, const TokenSequence& seq,
                 const Intervention* intervention = nullptr, const ForwardOptions& opts = {});

// -- stepping interface (used by the tracer to resume a run from a layer) --

/// Reusable per-worker scratch buffers for the layer kernels.
struct ForwardScratch {
    Matrix q, k, v, ctx, attn_out, r1, n1, z1, g, f, r2;
    std::vector<double> head_scores;
    std::vector<double> mu, rstd;
    std::vector<double> attn_probs;  // H*T*T, current layer
};

/// Embedding-layer output (token + positional embeddings), with corruption
/// noise applied when `intervention` asks for it.
void embed_tokens(const ModelParams& params, const TokenSequence& seq,
                  const Intervention* intervention, Matrix& x0);

/// One encoder layer: `out` may not alias `in`. When `record_probs` is not
/// null it receives the layer's attention probabilities (H*T*T).
void run_layer(const ModelParams& params, int layer, const Matrix& in, int n_real, Matrix& out,
               ForwardScratch& scratch, std::vector<double>* record_probs = nullptr);

/// Mean-pool over non-pad positions, classifier head, softmax.
void readout(const ModelParams& params, const Matrix& x_final, int n_real,
             std::array<double, 2>& logits, std::array<double, 2>& probs,
             std::vector<double>* pooled_out = nullptr);

// -- checkpoint container --

/// Binary container: magic "RGFM", little-endian u32 version, a canonical
/// JSON header (config + named tensor index), then row-major little-endian
/// float64 payloads.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace rgf
