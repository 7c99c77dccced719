#pragma once

#include <cmath>
#include <vector>

#include "rgf/mat.hpp"
#include "rgf/model.hpp"

// Shared numeric kernels. The inference path (forward) and the training path
// (cached forward + backward) must produce bit-identical activations, so both
// are built from these.

namespace rgf {

constexpr double kLayerNormEps = 1e-5;

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

/// y = g * (x - mu) / sqrt(var + eps) + b over one row of length d.
inline void layernorm_row(const double* x, const double* g, const double* b, int d, double* y,
                          double& mu_out, double& rstd_out) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += x[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
        const double c = x[j] - mu;
        var += c * c;
    }
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int j = 0; j < d; ++j) y[j] = g[j] * ((x[j] - mu) * rstd) + b[j];
    mu_out = mu;
    rstd_out = rstd;
}

inline void add_bias_rows(Matrix& m, const Matrix& bias) {
    for (int i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        const double* b = bias.row(0);
        for (int j = 0; j < m.cols; ++j) r[j] += b[j];
    }
}

/// Multi-head self-attention with key-side padding mask. Writes the
/// projections, the attention probabilities (flattened [head][query][key],
/// zero on pad keys), the concatenated per-head context, and the output
/// projection.
void attention_forward(const ModelConfig& config, const LayerParams& layer, const Matrix& in,
                       int n_real, Matrix& q, Matrix& k, Matrix& v, std::vector<double>& probs,
                       Matrix& ctx, Matrix& attn_out, std::vector<double>& score_buf);

/// Position-wise feed-forward: z1 = in*w1+b1, g = gelu(z1), out = g*w2+b2.
void ffn_forward(const LayerParams& layer, const Matrix& in, Matrix& z1, Matrix& g, Matrix& out);

}  // namespace rgf
