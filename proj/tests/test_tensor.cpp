#include <doctest.h>

#include <cmath>
#include <fstream>

#include "checkpoint.hpp"
#include "fft.hpp"
#include "nn.hpp"
#include "test_util.hpp"

using namespace dwtnet;
using testutil::max_abs;
using testutil::max_abs_diff;
using testutil::rand_tensor;

TEST_CASE("matmul basics") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(max_abs_diff(matmul(nullptr, eye, b), b) == 0.0);

    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor ones = Tensor::from({2, 1}, {1, 1});
    Tensor r = matmul(nullptr, a, ones);
    CHECK(r.at({0, 0}) == doctest::Approx(3.0));
    CHECK(r.at({1, 0}) == doctest::Approx(7.0));

    CHECK_THROWS_AS(matmul(nullptr, a, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(11);
    Tensor a = rand_tensor({4, 5}, rng);
    Tensor b = rand_tensor({5, 3}, rng);
    auto f = [&](Tape* tp) { return sum_all(tp, tanh_op(tp, matmul(tp, a, b))); };
    CHECK(finite_diff_check_multi(f, {a, b}) < 1e-6);
}

TEST_CASE("conv2d basics") {
    SUBCASE("1x1 identity kernel") {
        Rng rng(3);
        Tensor x = rand_tensor({1, 4, 4}, rng);
        Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
        CHECK(max_abs_diff(conv2d(nullptr, x, w, 1, 0), x) == 0.0);
    }
    SUBCASE("3x3 ones on 3x3 ones") {
        Tensor x = Tensor::full({1, 3, 3}, 1.0);
        Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
        Tensor y = conv2d(nullptr, x, w, 1, 0);
        CHECK(y.numel() == 1);
        CHECK(y.value() == doctest::Approx(9.0));
    }
    SUBCASE("non-integral output is rejected") {
        Tensor x = Tensor::zeros({1, 6, 6});
        Tensor w = Tensor::zeros({1, 1, 3, 3});
        CHECK_THROWS_AS(conv2d(nullptr, x, w, 2, 0), DimensionError);
    }
    SUBCASE("gradients") {
        Rng rng(4);
        Tensor x = rand_tensor({2, 8, 8}, rng);
        Tensor w = rand_tensor({4, 2, 3, 3}, rng, 0.3);
        auto f = [&](Tape* tp) { return mean_all(tp, square(tp, conv2d(tp, x, w, 1, 1))); };
        CHECK(finite_diff_check_multi(f, {x, w}) < 1e-5);
    }
    SUBCASE("strided gradients") {
        Rng rng(5);
        Tensor x = rand_tensor({2, 7, 7}, rng);
        Tensor w = rand_tensor({3, 2, 3, 3}, rng, 0.3);
        auto f = [&](Tape* tp) { return mean_all(tp, square(tp, conv2d(tp, x, w, 2, 0))); };
        CHECK(finite_diff_check_multi(f, {x, w}) < 1e-5);
    }
}

TEST_CASE("avg_pool2d") {
    Tensor x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
    CHECK(avg_pool2d(nullptr, x, 2).value() == doctest::Approx(2.5));

    Tensor c = Tensor::full({3, 4, 4}, 7.5);
    Tensor y = avg_pool2d(nullptr, c, 2);
    CHECK(max_abs_diff(y, Tensor::full({3, 2, 2}, 7.5)) < 1e-15);

    CHECK_THROWS_AS(avg_pool2d(nullptr, Tensor::zeros({1, 6, 6}), 4), DimensionError);

    Rng rng(6);
    Tensor r = rand_tensor({3, 8, 8}, rng);
    auto f = [&](Tape* tp) { return sum_all(tp, square(tp, avg_pool2d(tp, r, 2))); };
    CHECK(finite_diff_check_multi(f, {r}) < 1e-6);
}

TEST_CASE("avg_pool then nearest upsample preserves per-cell means") {
    Rng rng(7);
    Tensor x = rand_tensor({2, 8, 8}, rng);
    Tensor up = upsample_nearest(nullptr, avg_pool2d(nullptr, x, 2), 2);
    Tensor cell_means = avg_pool2d(nullptr, x, 2);
    Tensor up_means = avg_pool2d(nullptr, up, 2);
    CHECK(max_abs_diff(cell_means, up_means) < 1e-15);
}

TEST_CASE("sep_transposed_conv2d") {
    SUBCASE("p=1 identity") {
        Rng rng(8);
        Tensor x = rand_tensor({3, 4, 4}, rng);
        Tensor wd = Tensor::full({3, 1, 1}, 1.0);
        Tensor wp = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        CHECK(max_abs_diff(sep_transposed_conv2d(nullptr, x, wd, wp, 1), x) == 0.0);
    }
    SUBCASE("p=2 constant block expansion") {
        Tensor x = Tensor::full({1, 2, 2}, 3.25);
        Tensor wd = Tensor::full({1, 2, 2}, 1.0);
        Tensor wp = Tensor::from({1, 1}, {1.0});
        Tensor y = sep_transposed_conv2d(nullptr, x, wd, wp, 2);
        CHECK(y.shape() == Shape{1, 4, 4});
        CHECK(max_abs_diff(y, Tensor::full({1, 4, 4}, 3.25)) == 0.0);
    }
    SUBCASE("shape law and gradients") {
        Rng rng(9);
        Tensor x = rand_tensor({4, 3, 5}, rng);
        Tensor wd = rand_tensor({4, 2, 2}, rng);
        Tensor wp = rand_tensor({4, 4}, rng, 0.5);
        Tensor y = sep_transposed_conv2d(nullptr, x, wd, wp, 2);
        CHECK(y.shape() == Shape{4, 6, 10});
        auto f = [&](Tape* tp) {
            return mean_all(tp, square(tp, sep_transposed_conv2d(tp, x, wd, wp, 2)));
        };
        CHECK(finite_diff_check_multi(f, {x, wd, wp}) < 1e-5);
    }
    SUBCASE("channel mismatch between stages") {
        Tensor x = Tensor::zeros({4, 2, 2});
        Tensor wd = Tensor::zeros({4, 2, 2});
        Tensor wp = Tensor::zeros({4, 3});
        CHECK_THROWS_AS(sep_transposed_conv2d(nullptr, x, wd, wp, 2), DimensionError);
    }
}

TEST_CASE("softmax") {
    Tensor x = Tensor::from({2}, {0.0, 0.0});
    Tensor y = softmax(nullptr, x, 0);
    CHECK(y.at({0}) == doctest::Approx(0.5));

    Tensor a = Tensor::from({3}, {1.0, 2.0, 3.0});
    Tensor sa = softmax(nullptr, a, 0);
    // frozen from direct evaluation of exp(x_i)/sum_j exp(x_j)
    CHECK(sa.at({0}) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
    CHECK(sa.at({1}) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
    CHECK(sa.at({2}) == doctest::Approx(0.6652409557748219).epsilon(1e-12));

    SUBCASE("shift invariance") {
        Tensor shifted = add_scalar(nullptr, a, 11.75);
        CHECK(max_abs_diff(softmax(nullptr, shifted, 0), sa) < 1e-15);
    }
    SUBCASE("rows sum to one and are strictly positive") {
        Rng rng(10);
        for (int trial = 0; trial < 50; ++trial) {
            Tensor r = rand_tensor({6, 9}, rng, 4.0);
            Tensor s = softmax(nullptr, r, 1);
            for (int i = 0; i < 6; ++i) {
                double sum = 0.0;
                for (int j = 0; j < 9; ++j) {
                    CHECK(s.at({i, j}) > 0.0);
                    sum += s.at({i, j});
                }
                CHECK(std::fabs(sum - 1.0) < 1e-12);
            }
        }
    }
    SUBCASE("gradient along middle axis") {
        Rng rng(12);
        Tensor r = rand_tensor({2, 5, 3}, rng);
        Tensor c = rand_tensor({2, 5, 3}, rng);
        auto f = [&](Tape* tp) { return sum_all(tp, mul(tp, softmax(tp, r, 1), c)); };
        CHECK(finite_diff_check_multi(f, {r}) < 1e-6);
    }
}

TEST_CASE("activations") {
    CHECK(gelu(nullptr, Tensor::scalar(0.0)).value() == 0.0);
    CHECK(lrelu(nullptr, Tensor::scalar(-1.0), 0.1).value() == doctest::Approx(-0.1));
    CHECK(tanh_op(nullptr, Tensor::scalar(0.0)).value() == 0.0);

    auto g = [](Tape* tp, const Tensor& x) { return sum_all(tp, gelu(tp, x)); };
    CHECK(finite_diff_check(g, Tensor::scalar(0.5)) < 1e-6);

    Rng rng(13);
    Tensor x = rand_tensor({17}, rng);
    auto all = [&](Tape* tp) {
        Tensor y = gelu(tp, x);
        y = lrelu(tp, y, 0.1);
        y = tanh_op(tp, y);
        y = sigmoid(tp, y);
        return sum_all(tp, y);
    };
    CHECK(finite_diff_check_multi(all, {x}) < 1e-6);
}

TEST_CASE("fft2d basics") {
    SUBCASE("delta image has flat unit spectrum") {
        Tensor x = Tensor::zeros({1, 4, 4});
        x.mutable_data()[0] = 1.0;
        ComplexGrid g = fft2d(x);
        for (int u = 0; u < 4; ++u)
            for (int v = 0; v < 3; ++v) {
                CHECK(g.re[g.idx(0, u, v)] == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(std::fabs(g.im[g.idx(0, u, v)]) < 1e-12);
            }
    }
    SUBCASE("constant image concentrates in the DC bin") {
        Tensor x = Tensor::full({1, 8, 8}, 0.75);
        ComplexGrid g = fft2d(x);
        CHECK(g.re[g.idx(0, 0, 0)] == doctest::Approx(0.75 * 64).epsilon(1e-12));
        double off_dc = 0.0;
        for (int u = 0; u < 8; ++u)
            for (int v = 0; v < 5; ++v)
                if (u || v)
                    off_dc = std::max(off_dc, std::hypot(g.re[g.idx(0, u, v)], g.im[g.idx(0, u, v)]));
        CHECK(off_dc < 1e-12);
    }
    SUBCASE("round-trip") {
        Rng rng(14);
        Tensor x = rand_tensor({4, 8, 8}, rng);
        CHECK(max_abs_diff(ifft2d(fft2d(x)), x) < 1e-10);
    }
    SUBCASE("Parseval") {
        Rng rng(15);
        Tensor x = rand_tensor({2, 16, 8}, rng);
        double spatial = 0.0;
        for (double v : x.data()) spatial += v * v;
        const double spectral = spectral_energy(fft2d(x)) / (16.0 * 8.0);
        CHECK(std::fabs(spatial - spectral) / spatial < 1e-10);
    }
    SUBCASE("non-power-of-two extents rejected") {
        CHECK_THROWS_AS(fft2d(Tensor::zeros({1, 6, 8})), DimensionError);
    }
}

TEST_CASE("rfft2_stack / irfft2_unstack adjoint and gradient") {
    Rng rng(16);
    SUBCASE("inner product identity <Lx, g> == <x, L^T g>") {
        Tensor x = rand_tensor({2, 8, 8}, rng);
        Tensor y = rfft2_stack(nullptr, x);
        Tensor gy = rand_tensor(y.shape(), rng);
        // <Lx, gy>
        double lhs = 0.0;
        for (int i = 0; i < y.numel(); ++i) lhs += y.data()[i] * gy.data()[i];
        // <x, L^T gy> via the tape
        Tape tape;
        Tensor yt = rfft2_stack(&tape, x);
        Tensor s = sum_all(&tape, mul(&tape, yt, gy));
        tape.backward(s);
        double rhs = 0.0;
        for (int i = 0; i < x.numel(); ++i) rhs += x.data()[i] * (*x.grad_if())[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
    SUBCASE("round-trip through the stacked representation") {
        Tensor x = rand_tensor({3, 8, 16}, rng);
        Tensor y = irfft2_unstack(nullptr, rfft2_stack(nullptr, x), 16);
        CHECK(max_abs_diff(y, x) < 1e-10);
    }
    SUBCASE("gradient through both transforms") {
        Tensor x = rand_tensor({1, 8, 8}, rng);
        Tensor c = rand_tensor({2, 8, 5}, rng);
        auto f = [&](Tape* tp) {
            Tensor y = rfft2_stack(tp, x);
            y = mul(tp, y, c);  // break symmetry before the inverse
            Tensor z = irfft2_unstack(tp, y, 8);
            return mean_all(tp, square(tp, z));
        };
        CHECK(finite_diff_check_multi(f, {x}) < 1e-6);
    }
}

TEST_CASE("backward semantics") {
    SUBCASE("loss = sum(x) gives unit gradients") {
        Tensor x = Tensor::full({3, 2}, 2.0);
        Tape tape;
        Tensor loss = sum_all(&tape, x);
        tape.backward(loss);
        for (double g : *x.grad_if()) CHECK(g == 1.0);
    }
    SUBCASE("stop-gradient blocks flow") {
        Tensor x = Tensor::full({4}, 1.5);
        Tape tape;
        Tensor loss = sum_all(&tape, square(&tape, stop_gradient(&tape, x)));
        tape.backward(loss);
        CHECK(x.grad_if() == nullptr);
    }
    SUBCASE("same leaf used twice accumulates") {
        Tensor x = Tensor::full({2}, 3.0);
        Tape tape;
        Tensor loss = sum_all(&tape, add(&tape, x, x));
        tape.backward(loss);
        for (double g : *x.grad_if()) CHECK(g == 2.0);
    }
    SUBCASE("backward on non-scalar is a usage error") {
        Tensor x = Tensor::full({2}, 1.0);
        Tape tape;
        Tensor y = add(&tape, x, x);
        CHECK_THROWS_AS(tape.backward(y), UsageError);
    }
    SUBCASE("composite conv->pool->softmax->sum graph") {
        Rng rng(17);
        Tensor x = rand_tensor({2, 4, 4}, rng);
        Tensor w = rand_tensor({3, 2, 3, 3}, rng, 0.4);
        Tensor c = rand_tensor({3, 2, 2}, rng);
        auto f = [&](Tape* tp) {
            Tensor y = conv2d(tp, x, w, 1, 1);
            y = avg_pool2d(tp, y, 2);
            y = softmax(tp, y, 0);
            return sum_all(tp, mul(tp, y, c));
        };
        CHECK(finite_diff_check_multi(f, {x, w}) < 1e-4);
    }
}

TEST_CASE("finite_diff_check oracle sanity") {
    Rng rng(18);
    SUBCASE("f = 0.5||x||^2 has gradient x") {
        Tensor x = rand_tensor({10}, rng);
        auto f = [](Tape* tp, const Tensor& t) {
            return mul_scalar(tp, sum_all(tp, square(tp, t)), 0.5);
        };
        CHECK(finite_diff_check(f, x) < 1e-9);
    }
    SUBCASE("f = sum(softmax(x)) is constant") {
        Tensor x = rand_tensor({7}, rng);
        Tape tape;
        Tensor loss = sum_all(&tape, softmax(&tape, x, 0));
        tape.backward(loss);
        CHECK(max_abs(Tensor::from({7}, *x.grad_if())) < 1e-8);
    }
}

TEST_CASE("elementwise and reduction gradients") {
    Rng rng(19);
    Tensor a = rand_tensor({11}, rng);
    Tensor b = rand_tensor({11}, rng, 0.5);
    // keep b away from zero for divide
    for (auto& v : const_cast<std::vector<double>&>(b.data())) v += (v >= 0 ? 1.0 : -1.0);
    auto f = [&](Tape* tp) {
        Tensor y = divide(tp, mul(tp, a, b), add_scalar(tp, square(tp, b), 1.0));
        y = add(tp, y, exp_op(tp, mul_scalar(tp, a, 0.3)));
        y = sub(tp, y, abs_op(tp, a));
        y = add(tp, y, sub_from_scalar(tp, 2.0, a));
        Tensor denom = add_scalar(tp, sum_all(tp, square(tp, b)), 1.0);
        y = div_by_scalar_tensor(tp, y, denom);
        return mean_all(tp, y);
    };
    CHECK(finite_diff_check_multi(f, {a, b}) < 1e-6);

    Tensor pos = add_scalar(nullptr, square(nullptr, a), 0.5);
    auto g = [&](Tape* tp) { return mean_all(tp, log_op(tp, add_scalar(tp, square(tp, pos), 0.5))); };
    CHECK(finite_diff_check_multi(g, {pos}) < 1e-6);
}

TEST_CASE("shape ops gradients") {
    Rng rng(20);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({2, 4}, rng);
    Tensor c = rand_tensor({5, 2}, rng);
    auto f = [&](Tape* tp) {
        Tensor cat = concat(tp, {a, b}, 0);              // 5 x 4
        Tensor sl = slice(tp, cat, 1, 1, 3);             // 5 x 2
        Tensor t = transpose2d(tp, mul(tp, sl, c));      // 2 x 5
        Tensor r = reshape(tp, t, {10});
        return mean_all(tp, square(tp, r));
    };
    CHECK(finite_diff_check_multi(f, {a, b, c}) < 1e-6);

    Tensor ch = rand_tensor({4, 2, 2}, rng);
    Tensor bias = rand_tensor({4}, rng);
    auto g = [&](Tape* tp) {
        Tensor y = add_channel_bias(tp, ch, bias);
        Tensor parts = concat(tp, {slice(tp, y, 0, 0, 1), slice(tp, y, 0, 1, 4)}, 0);
        return mean_all(tp, square(tp, parts));
    };
    CHECK(finite_diff_check_multi(g, {ch, bias}) < 1e-6);
}

TEST_CASE("row ops gradients") {
    Rng rng(21);
    Tensor x = rand_tensor({5, 3}, rng);
    Tensor s = rand_tensor({5}, rng);
    Tensor rb = rand_tensor({3}, rng);
    auto f = [&](Tape* tp) {
        Tensor y = scale_rows(tp, add_row_bias(tp, x, rb), s);
        Tensor g = gather_rows(tp, y, {4, 0, 0, 2});
        return mean_all(tp, square(tp, g));
    };
    CHECK(finite_diff_check_multi(f, {x, s, rb}) < 1e-6);
}

TEST_CASE("pairwise_sqdist and knn_mean gradients") {
    Rng rng(22);
    Tensor x = rand_tensor({6, 3}, rng);
    std::vector<std::vector<int>> nbr = {{1, 2}, {0, 3}, {0, 1}, {4, 5}, {3, 5}, {3, 4}};
    auto f = [&](Tape* tp) {
        Tensor d = pairwise_sqdist(tp, x);
        Tensor m = knn_mean(tp, d, nbr);
        return mean_all(tp, exp_op(tp, mul_scalar(tp, m, -1.0)));
    };
    CHECK(finite_diff_check_multi(f, {x}) < 1e-6);
}

TEST_CASE("cross_entropy_rows") {
    SUBCASE("uniform logits give ln(k)") {
        Tensor logits = Tensor::zeros({3, 64});
        Tensor l = cross_entropy_rows(nullptr, logits, {5, 10, 63});
        CHECK(l.value() == doctest::Approx(std::log(64.0)).epsilon(1e-12));
    }
    SUBCASE("gradients") {
        Rng rng(23);
        Tensor logits = rand_tensor({4, 7}, rng);
        auto f = [&](Tape* tp) { return cross_entropy_rows(tp, logits, {1, 0, 6, 3}); };
        CHECK(finite_diff_check_multi(f, {logits}) < 1e-6);
    }
}

TEST_CASE("clamp gradient gates") {
    Tensor x = Tensor::from({3}, {-2.0, 0.3, 2.0});
    Tape tape;
    Tensor loss = sum_all(&tape, clamp(&tape, x, -1.0, 1.0));
    tape.backward(loss);
    const auto& g = *x.grad_if();
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 1.0);
    CHECK(g[2] == 0.0);
}

TEST_CASE("orthogonal initialization") {
    Rng rng(24);
    SUBCASE("square") {
        Tensor w = orthogonal_init({8, 8}, 1.0, rng);
        Tensor wwt = matmul(nullptr, w, transpose2d(nullptr, w));
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                CHECK(std::fabs(wwt.at({i, j}) - (i == j ? 1.0 : 0.0)) < 1e-10);
    }
    SUBCASE("gain scales the product") {
        Tensor w = orthogonal_init({6, 6}, 2.0, rng);
        Tensor wwt = matmul(nullptr, w, transpose2d(nullptr, w));
        for (int i = 0; i < 6; ++i) CHECK(wwt.at({i, i}) == doctest::Approx(4.0).epsilon(1e-10));
    }
    SUBCASE("wide matrices are row-orthonormal") {
        Tensor w = orthogonal_init({4, 16}, 1.0, rng);
        Tensor wwt = matmul(nullptr, w, transpose2d(nullptr, w));
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(std::fabs(wwt.at({i, j}) - (i == j ? 1.0 : 0.0)) < 1e-10);
    }
    SUBCASE("tall matrices are column-orthonormal") {
        Tensor w = orthogonal_init({16, 4}, 1.0, rng);
        Tensor wtw = matmul(nullptr, transpose2d(nullptr, w), w);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(std::fabs(wtw.at({i, j}) - (i == j ? 1.0 : 0.0)) < 1e-10);
    }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(25);
    NamedTensors ts;
    ts.emplace_back("enc.conv.w", rand_tensor({4, 3, 3, 3}, rng));
    ts.emplace_back("enc.conv.b", rand_tensor({4}, rng));
    ts.emplace_back("codebook.v", rand_tensor({8, 16}, rng));

    const std::string p1 = "ck_test_a.bin", p2 = "ck_test_b.bin";
    save_checkpoint(p1, ts);
    NamedTensors loaded = load_checkpoint(p1);
    REQUIRE(loaded.size() == ts.size());
    for (size_t i = 0; i < ts.size(); ++i) {
        CHECK(loaded[i].first == ts[i].first);
        CHECK(loaded[i].second.shape() == ts[i].second.shape());
        CHECK(loaded[i].second.data() == ts[i].second.data());
    }
    save_checkpoint(p2, loaded);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(c1 == c2);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("adam descends a quadratic") {
    Tensor x = Tensor::from({3}, {5.0, -4.0, 2.0});
    Adam opt({x}, 0.1, 0.0, 0.9);
    for (int i = 0; i < 400; ++i) {
        Tape tape;
        Tensor loss = sum_all(&tape, square(&tape, x));
        tape.backward(loss);
        opt.step();
    }
    CHECK(max_abs(x) < 0.05);
}
