#pragma once

#include "nn.hpp"
#include "tensor.hpp"

namespace dwtnet {

// Tokens with their distance-based weights. weights sums to 1; k_nn is the
// neighbor count actually used (0 means the uniform fallback was taken).
struct TokenSet {
    Tensor tokens;   // N x C
    Tensor weights;  // N
    int k_nn = 0;
};

// k nearest neighbors per row of a squared-distance matrix. A token is never
// its own neighbor; distance ties break toward the lower index so runs are
// reproducible.
std::vector<std::vector<int>> knn_neighbors(const Tensor& sqdist, int k);

// tau_i = exp(-(1/k) sum_{j in KNN(i)} ||x_i - x_j||^2). For a single token
// (no possible neighbor) the density degenerates to 1.
Tensor distance_density(Tape* tp, const Tensor& tokens, int k);

// w_i = (1 - tau_i) / sum_j (1 - tau_j); falls back to the uniform
// distribution when the denominator vanishes (all tokens coincide, or N=1).
Tensor token_weights(Tape* tp, const Tensor& tau);

TokenSet make_token_set(Tape* tp, const Tensor& tokens, int k);

// Distance-weighted transformer block: token weights modulate the value rows
// of every attention head, and the block is wired residually without any
// normalization layers.
struct DwtBlock {
    int channels = 0;
    int heads = 0;
    int patch = 0;   // DSL/USL rate P
    int knn_k = 8;   // capped at N-1 per token set
    double lambda_c = 0.5;

    std::vector<Linear> w_q, w_k, w_v;  // per head, C x d_k, no bias
    Linear out_proj;                    // C x C, no bias
    Linear mlp_in, mlp_out;             // C -> hidden -> C, GELU between
    Tensor usl_depth;                   // C x P x P
    Tensor usl_point;                   // C x C

    DwtBlock() = default;
    DwtBlock(int channels, int heads, int patch, double lambda_c, Rng& rng, int knn_k = 8);

    // tokens: N x C with weights w (length N) -> N x C
    Tensor attention(Tape* tp, const Tensor& tokens, const Tensor& w) const;
    // full block: C x H x W -> C x H x W (P must divide H and W)
    Tensor forward(Tape* tp, const Tensor& f) const;

    void collect(NamedTensors& out, const std::string& prefix) const;
};

// layout helpers between feature maps and token matrices
Tensor tokens_from_map(Tape* tp, const Tensor& x);                 // C x h x w -> (hw) x C
Tensor map_from_tokens(Tape* tp, const Tensor& t, int h, int w);   // N x C -> C x h x w

}  // namespace dwtnet
