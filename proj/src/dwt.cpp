#include "dwt.hpp"

#include <algorithm>
#include <cmath>

namespace dwtnet {

std::vector<std::vector<int>> knn_neighbors(const Tensor& sqdist, int k) {
    const int n = sqdist.extent(0);
    if (sqdist.ndim() != 2 || sqdist.extent(1) != n)
        throw DimensionError("knn_neighbors expects a square distance matrix");
    if (k < 1 || k > n - 1) throw UsageError("knn_neighbors: k must be in [1, N-1]");
    const auto& d = sqdist.data();
    std::vector<std::vector<int>> nbr(n);
    std::vector<std::pair<double, int>> cand;
    cand.reserve(n - 1);
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(d[static_cast<size_t>(i) * n + j], j);
        std::sort(cand.begin(), cand.end());  // pair ordering breaks ties by index
        nbr[i].reserve(k);
        for (int t = 0; t < k; ++t) nbr[i].push_back(cand[t].second);
    }
    return nbr;
}

Tensor distance_density(Tape* tp, const Tensor& tokens, int k) {
    if (tokens.ndim() != 2) throw DimensionError("distance_density expects N x C tokens");
    const int n = tokens.extent(0);
    if (n == 0) throw DimensionError("distance_density: empty token set");
    const int eff_k = std::min(k, n - 1);
    if (eff_k < 1) return Tensor::full({n}, 1.0);  // single token: no neighbors
    Tensor d = pairwise_sqdist(tp, tokens);
    auto nbr = knn_neighbors(d, eff_k);
    Tensor mean_d = knn_mean(tp, d, nbr);
    return exp_op(tp, mul_scalar(tp, mean_d, -1.0));
}

Tensor token_weights(Tape* tp, const Tensor& tau) {
    if (tau.ndim() != 1) throw DimensionError("token_weights expects a vector");
    const int n = tau.extent(0);
    Tensor unnorm = sub_from_scalar(tp, 1.0, tau);
    double total = 0.0;
    for (double v : unnorm.data()) total += v;
    if (total < 1e-12) return Tensor::full({n}, 1.0 / n);
    return div_by_scalar_tensor(tp, unnorm, sum_all(tp, unnorm));
}

TokenSet make_token_set(Tape* tp, const Tensor& tokens, int k) {
    const int n = tokens.extent(0);
    const int eff_k = std::min(k, n - 1);
    Tensor tau = distance_density(tp, tokens, k);
    Tensor w = token_weights(tp, tau);
    return TokenSet{tokens, w, std::max(eff_k, 0)};
}

DwtBlock::DwtBlock(int channels_, int heads_, int patch_, double lambda, Rng& rng, int knn)
    : channels(channels_), heads(heads_), patch(patch_), knn_k(knn), lambda_c(lambda) {
    if (heads < 1 || channels % heads != 0)
        throw ConfigError("DwtBlock: heads must divide channels (" + std::to_string(channels) +
                          " / " + std::to_string(heads) + ")");
    if (lambda_c <= 0.0) throw ConfigError("DwtBlock: lambda_c must be positive");
    const int dk = channels / heads;
    for (int h = 0; h < heads; ++h) {
        w_q.emplace_back(channels, dk, rng, /*bias=*/false);
        w_k.emplace_back(channels, dk, rng, /*bias=*/false);
        w_v.emplace_back(channels, dk, rng, /*bias=*/false);
    }
    out_proj = Linear(channels, channels, rng, /*bias=*/false);
    const int hidden = 2 * channels;
    mlp_in = Linear(channels, hidden, rng);
    mlp_out = Linear(hidden, channels, rng);
    usl_depth = orthogonal_init({channels, patch, patch}, 1.0, rng);
    usl_point = orthogonal_init({channels, channels}, 1.0, rng);
}

Tensor DwtBlock::attention(Tape* tp, const Tensor& tokens, const Tensor& w) const {
    const int n = tokens.extent(0);
    if (tokens.ndim() != 2 || tokens.extent(1) != channels)
        throw DimensionError("DwtBlock::attention: tokens " + shape_str(tokens.shape()));
    if (w.ndim() != 1 || w.extent(0) != n)
        throw DimensionError("DwtBlock::attention: weight vector length " +
                             std::to_string(w.numel()) + " != N " + std::to_string(n));
    const int dk = channels / heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    Tensor row_scale_vec = add_scalar(tp, w, lambda_c);  // lambda_c + w_i

    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor q = w_q[h].forward(tp, tokens);
        Tensor k = w_k[h].forward(tp, tokens);
        Tensor v = w_v[h].forward(tp, tokens);
        Tensor scores = mul_scalar(tp, matmul(tp, q, transpose2d(tp, k)), inv_sqrt_dk);
        Tensor attn = softmax(tp, scores, 1);
        Tensor v_mod = scale_rows(tp, v, row_scale_vec);  // (lambda_c I + diag(w)) V
        head_outs.push_back(matmul(tp, attn, v_mod));
    }
    Tensor cat = heads == 1 ? head_outs[0] : concat(tp, head_outs, 1);
    return out_proj.forward(tp, cat);
}

Tensor DwtBlock::forward(Tape* tp, const Tensor& f) const {
    if (f.ndim() != 3 || f.extent(0) != channels)
        throw DimensionError("DwtBlock::forward: feature map " + shape_str(f.shape()));
    const int h = f.extent(1), w = f.extent(2);
    if (h % patch != 0 || w % patch != 0)
        throw DimensionError("DwtBlock: patch rate " + std::to_string(patch) +
                             " does not divide " + shape_str(f.shape()));
    const int th = h / patch, tw = w / patch;

    Tensor pooled = avg_pool2d(tp, f, patch);              // DSL
    Tensor xp = tokens_from_map(tp, pooled);               // N x C
    TokenSet ts = make_token_set(tp, xp, knn_k);

    Tensor z = add(tp, attention(tp, xp, ts.weights), xp);
    Tensor mlp = mlp_out.forward(tp, gelu(tp, mlp_in.forward(tp, z)));
    Tensor z2 = add(tp, mlp, z);

    Tensor grid = map_from_tokens(tp, z2, th, tw);
    Tensor up = sep_transposed_conv2d(tp, grid, usl_depth, usl_point, patch);  // USL
    return add(tp, up, f);
}

void DwtBlock::collect(NamedTensors& out, const std::string& prefix) const {
    for (int h = 0; h < heads; ++h) {
        w_q[h].collect(out, prefix + ".q" + std::to_string(h));
        w_k[h].collect(out, prefix + ".k" + std::to_string(h));
        w_v[h].collect(out, prefix + ".v" + std::to_string(h));
    }
    out_proj.collect(out, prefix + ".out");
    mlp_in.collect(out, prefix + ".mlp_in");
    mlp_out.collect(out, prefix + ".mlp_out");
    out.emplace_back(prefix + ".usl_depth", usl_depth);
    out.emplace_back(prefix + ".usl_point", usl_point);
}

Tensor tokens_from_map(Tape* tp, const Tensor& x) {
    if (x.ndim() != 3) throw DimensionError("tokens_from_map expects C x h x w");
    const int c = x.extent(0), hw = x.extent(1) * x.extent(2);
    return transpose2d(tp, reshape(tp, x, {c, hw}));
}

Tensor map_from_tokens(Tape* tp, const Tensor& t, int h, int w) {
    if (t.ndim() != 2 || t.extent(0) != h * w)
        throw DimensionError("map_from_tokens: tokens " + shape_str(t.shape()) + " vs grid " +
                             std::to_string(h) + "x" + std::to_string(w));
    const int c = t.extent(1);
    return reshape(tp, transpose2d(tp, t), {c, h, w});
}

}  // namespace dwtnet
