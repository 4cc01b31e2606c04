#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dwt.hpp"
#include "test_util.hpp"

using namespace dwtnet;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

// Brute-force oracle: tau_i from all pairwise distances, no shared code with
// the tape path.
std::vector<double> brute_tau(const std::vector<std::vector<double>>& pts, int k) {
    const int n = static_cast<int>(pts.size());
    std::vector<double> tau(n);
    for (int i = 0; i < n; ++i) {
        std::vector<double> d;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double acc = 0.0;
            for (size_t c = 0; c < pts[i].size(); ++c) {
                const double dd = pts[i][c] - pts[j][c];
                acc += dd * dd;
            }
            d.push_back(acc);
        }
        std::sort(d.begin(), d.end());
        double mean = 0.0;
        for (int t = 0; t < k; ++t) mean += d[t];
        mean /= k;
        tau[i] = std::exp(-mean);
    }
    return tau;
}

Tensor tokens_from(const std::vector<std::vector<double>>& pts) {
    const int n = static_cast<int>(pts.size());
    const int c = static_cast<int>(pts[0].size());
    std::vector<double> flat;
    for (const auto& p : pts) flat.insert(flat.end(), p.begin(), p.end());
    return Tensor::from({n, c}, std::move(flat));
}

}  // namespace

TEST_CASE("distance density on the three-token configuration") {
    std::vector<std::vector<double>> pts = {{0, 0}, {1, 0}, {0, 1}};
    Tensor tau = distance_density(nullptr, tokens_from(pts), 2);
    auto oracle = brute_tau(pts, 2);
    CHECK(tau.at({0}) == doctest::Approx(oracle[0]).epsilon(1e-12));
    CHECK(tau.at({1}) == doctest::Approx(oracle[1]).epsilon(1e-12));
    CHECK(tau.at({2}) == doctest::Approx(oracle[2]).epsilon(1e-12));
    // frozen values: (e^-1, e^-1.5, e^-1.5)
    CHECK(tau.at({0}) == doctest::Approx(0.36787944117144233).epsilon(1e-10));
    CHECK(tau.at({1}) == doctest::Approx(0.22313016014842982).epsilon(1e-10));
    CHECK(tau.at({2}) == doctest::Approx(0.22313016014842982).epsilon(1e-10));

    Tensor w = token_weights(nullptr, tau);
    // frozen from the brute-force tau: w = (1-tau)/sum(1-tau)
    CHECK(w.at({0}) == doctest::Approx(0.2891899196243474).epsilon(1e-5));
    CHECK(w.at({1}) == doctest::Approx(0.3554050401878263).epsilon(1e-5));
    CHECK(w.at({2}) == doctest::Approx(0.3554050401878263).epsilon(1e-5));
    double sum = w.at({0}) + w.at({1}) + w.at({2});
    CHECK(std::fabs(sum - 1.0) < 1e-12);
}

TEST_CASE("identical tokens hit the degenerate paths") {
    Tensor tokens = Tensor::full({5, 3}, 0.25);
    Tensor tau = distance_density(nullptr, tokens, 2);
    for (int i = 0; i < 5; ++i) CHECK(tau.at({i}) == doctest::Approx(1.0));
    Tensor w = token_weights(nullptr, tau);
    for (int i = 0; i < 5; ++i) CHECK(w.at({i}) == doctest::Approx(0.2));
}

TEST_CASE("single token falls back to weight 1") {
    Tensor tokens = Tensor::from({1, 4}, {1.0, 2.0, 3.0, 4.0});
    TokenSet ts = make_token_set(nullptr, tokens, 8);
    CHECK(ts.weights.numel() == 1);
    CHECK(ts.weights.at({0}) == doctest::Approx(1.0));
    CHECK(ts.k_nn == 0);
}

TEST_CASE("scaling tokens by 2 raises tau to the fourth power") {
    Rng rng(31);
    Tensor tokens = rand_tensor({7, 4}, rng, 0.4);
    Tensor scaled = mul_scalar(nullptr, tokens, 2.0);
    Tensor tau = distance_density(nullptr, tokens, 3);
    Tensor tau2 = distance_density(nullptr, scaled, 3);
    for (int i = 0; i < 7; ++i) {
        const double t = tau.at({i});
        CHECK(tau2.at({i}) == doctest::Approx(t * t * t * t).epsilon(1e-10));
    }
}

TEST_CASE("weight simplex over random token sets") {
    Rng rng(32);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(0, 30));
        Tensor tokens = rand_tensor({n, 8}, rng);
        TokenSet ts = make_token_set(nullptr, tokens, 8);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            CHECK(ts.weights.at({i}) >= 0.0);
            sum += ts.weights.at({i});
        }
        CHECK(std::fabs(sum - 1.0) < 1e-10);
    }
}

TEST_CASE("isolated tokens carry more unnormalized weight than clustered ones") {
    // five tokens in a tight cluster, one far away
    std::vector<std::vector<double>> pts = {{0, 0},     {0.1, 0},  {0, 0.1},
                                            {0.1, 0.1}, {0.05, 0}, {6.0, 6.0}};
    Tensor tau = distance_density(nullptr, tokens_from(pts), 3);
    const int isolated = 5;
    for (int i = 0; i < 5; ++i) {
        CHECK(tau.at({isolated}) < tau.at({i}));
        CHECK(1.0 - tau.at({isolated}) > 1.0 - tau.at({i}));
    }
}

TEST_CASE("knn ties break toward the lower index") {
    // token 0 equidistant from 1, 2, 3; k=2 must pick {1, 2}
    Tensor d = Tensor::from({4, 4}, {0, 1, 1, 1,  //
                                     1, 0, 5, 5,  //
                                     1, 5, 0, 5,  //
                                     1, 5, 5, 0});
    auto nbr = knn_neighbors(d, 2);
    CHECK(nbr[0] == std::vector<int>{1, 2});
}

TEST_CASE("single-token attention reduces to outProj((lambda_c + 1) v)") {
    Rng rng(33);
    DwtBlock block(4, 2, 2, 0.5, rng);
    Tensor x = rand_tensor({1, 4}, rng);
    TokenSet ts = make_token_set(nullptr, x, 8);
    Tensor out = block.attention(nullptr, x, ts.weights);

    std::vector<Tensor> heads;
    for (int h = 0; h < 2; ++h)
        heads.push_back(mul_scalar(nullptr, matmul(nullptr, x, block.w_v[h].w), 1.5));
    Tensor expect = matmul(nullptr, concat(nullptr, heads, 1), block.out_proj.w);
    CHECK(max_abs_diff(out, expect) < 1e-15);
}

TEST_CASE("identical tokens produce identical attention rows") {
    Rng rng(34);
    DwtBlock block(8, 4, 2, 0.5, rng);
    Tensor tokens = rand_tensor({5, 8}, rng);
    // make rows 0 and 3 identical
    for (int c = 0; c < 8; ++c)
        tokens.mutable_data()[3 * 8 + c] = tokens.data()[c];
    TokenSet ts = make_token_set(nullptr, tokens, 8);
    Tensor out = block.attention(nullptr, tokens, ts.weights);
    for (int c = 0; c < 8; ++c)
        CHECK(out.at({0, c}) == doctest::Approx(out.at({3, c})).epsilon(1e-12));
}

TEST_CASE("weighted attention is permutation equivariant") {
    Rng rng(35);
    DwtBlock block(8, 2, 2, 0.5, rng);
    Tensor tokens = rand_tensor({6, 8}, rng);
    TokenSet ts = make_token_set(nullptr, tokens, 3);
    Tensor out = block.attention(nullptr, tokens, ts.weights);

    const std::vector<int> perm = {4, 2, 0, 5, 1, 3};
    Tensor ptokens = gather_rows(nullptr, tokens, perm);
    TokenSet pts = make_token_set(nullptr, ptokens, 3);
    Tensor pout = block.attention(nullptr, ptokens, pts.weights);
    Tensor expected = gather_rows(nullptr, out, perm);
    CHECK(max_abs_diff(pout, expected) < 1e-10);
}

TEST_CASE("dwt block shape law") {
    Rng rng(36);
    DwtBlock block(8, 4, 2, 0.5, rng);
    Tensor f = rand_tensor({8, 16, 16}, rng);
    Tensor out = block.forward(nullptr, f);
    CHECK(out.shape() == Shape{8, 16, 16});

    CHECK_THROWS_AS(block.forward(nullptr, rand_tensor({8, 15, 15}, rng)), DimensionError);
}

TEST_CASE("zeroed output projections make the block an identity") {
    Rng rng(37);
    DwtBlock block(4, 2, 2, 0.5, rng);
    std::fill(block.out_proj.w.mutable_data().begin(), block.out_proj.w.mutable_data().end(), 0.0);
    std::fill(block.mlp_out.w.mutable_data().begin(), block.mlp_out.w.mutable_data().end(), 0.0);
    std::fill(block.mlp_out.b.mutable_data().begin(), block.mlp_out.b.mutable_data().end(), 0.0);
    std::fill(block.usl_point.mutable_data().begin(), block.usl_point.mutable_data().end(), 0.0);
    Tensor f = rand_tensor({4, 8, 8}, rng);
    CHECK(max_abs_diff(block.forward(nullptr, f), f) == 0.0);
}

TEST_CASE("dwt block gradients match finite differences") {
    Rng rng(38);
    DwtBlock block(4, 2, 2, 0.5, rng);
    Tensor f = rand_tensor({4, 8, 8}, rng, 0.5);
    Tensor target = rand_tensor({4, 8, 8}, rng);
    auto loss = [&](Tape* tp) {
        return mean_all(tp, square(tp, sub(tp, block.forward(tp, f), target)));
    };
    std::vector<Tensor> leaves = {f,
                                  block.w_q[0].w,
                                  block.w_k[1].w,
                                  block.w_v[0].w,
                                  block.out_proj.w,
                                  block.mlp_in.w,
                                  block.mlp_out.w,
                                  block.usl_depth,
                                  block.usl_point};
    CHECK(finite_diff_check_multi(loss, leaves, 1e-5, 40, 99) < 1e-4);
}
