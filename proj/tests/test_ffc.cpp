#include <doctest.h>

#include <cmath>

#include "ffc.hpp"
#include "test_util.hpp"

using namespace dwtnet;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

void zero_tensor(Tensor& t) {
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
}

void zero_conv(Conv2d& c) {
    zero_tensor(c.w);
    zero_tensor(c.b);
}

// input whose half spectrum is entrywise nonnegative: constant + delta
Tensor nonneg_spectrum_input(int c, int h, int w) {
    Tensor x = Tensor::full({c, h, w}, 0.5);
    for (int ch = 0; ch < c; ++ch) x.mutable_data()[static_cast<size_t>(ch) * h * w] += 2.0;
    return x;
}

}  // namespace

TEST_CASE("fourier unit with identity mixing passes suitable inputs through") {
    Rng rng(41);
    FourierUnit fu(2, rng);
    zero_conv(fu.mix);
    for (int i = 0; i < 4; ++i) fu.mix.w.mutable_data()[(static_cast<size_t>(i) * 4 + i)] = 1.0;

    Tensor x = nonneg_spectrum_input(2, 8, 8);
    CHECK(max_abs_diff(fu.forward(nullptr, x), x) < 1e-10);
}

TEST_CASE("fourier unit keeps constant inputs spatially constant") {
    Rng rng(42);
    FourierUnit fu(3, rng);
    Tensor x = Tensor::full({3, 8, 8}, -0.4);
    Tensor y = fu.forward(nullptr, x);
    for (int c = 0; c < 3; ++c) {
        const double v0 = y.at({c, 0, 0});
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) CHECK(y.at({c, i, j}) == doctest::Approx(v0).epsilon(1e-12));
    }
}

TEST_CASE("fourier unit gradients") {
    Rng rng(43);
    FourierUnit fu(4, rng);
    Tensor x = rand_tensor({4, 8, 8}, rng);
    // random target keeps the gradient coordinates well away from zero, where
    // finite differences would be dominated by round-off
    Tensor target = rand_tensor({4, 8, 8}, rng);
    auto f = [&](Tape* tp) {
        return mean_all(tp, square(tp, sub(tp, fu.forward(tp, x), target)));
    };
    CHECK(finite_diff_check_multi(f, {x, fu.mix.w, fu.mix.b}, 1e-5, 60, 7) < 1e-4);
}

TEST_CASE("spectral transform") {
    Rng rng(44);
    SUBCASE("channel count must divide by 4") {
        CHECK_THROWS_AS(SpectralTransform(6, rng), ConfigError);
    }
    SUBCASE("zero out-conv gives zero output") {
        SpectralTransform st(8, rng);
        zero_conv(st.conv_out);
        Tensor x = rand_tensor({8, 8, 8}, rng);
        CHECK(testutil::max_abs(st.forward(nullptr, x)) == 0.0);
    }
    SUBCASE("shape preservation") {
        SpectralTransform st(8, rng);
        Tensor x = rand_tensor({8, 8, 8}, rng);
        CHECK(st.forward(nullptr, x).shape() == Shape{8, 8, 8});
    }
    SUBCASE("gradients") {
        SpectralTransform st(4, rng);
        Tensor x = rand_tensor({4, 8, 8}, rng);
        auto f = [&](Tape* tp) { return mean_all(tp, square(tp, st.forward(tp, x))); };
        CHECK(finite_diff_check_multi(f, {x, st.conv_in.w, st.conv_out.w, st.fu_left.mix.w,
                                          st.fu_right.mix.w},
                                      1e-5, 40, 9) < 1e-4);
    }
}

TEST_CASE("ffc layer") {
    Rng rng(45);
    SUBCASE("minimal global branch on 16 channels preserves shape") {
        FfcLayer ffc(16, 0.25, rng);
        CHECK(ffc.c_global == 4);
        Tensor x = rand_tensor({16, 8, 8}, rng);
        CHECK(ffc.forward(nullptr, x).shape() == Shape{16, 8, 8});
    }
    SUBCASE("invalid split is rejected") {
        CHECK_THROWS_AS(FfcLayer(16, 0.1, rng), ConfigError);   // Cg = 2
        CHECK_THROWS_AS(FfcLayer(20, 0.5, rng), ConfigError);   // Cg = 10
    }
    SUBCASE("zero global paths degenerate to a plain local conv") {
        FfcLayer ffc(8, 0.5, rng);
        zero_conv(ffc.local_global);
        zero_conv(ffc.global_local);
        zero_conv(ffc.global_global.conv_in);
        zero_conv(ffc.global_global.conv_out);
        zero_conv(ffc.global_global.fu_left.mix);
        zero_conv(ffc.global_global.fu_right.mix);

        Tensor x = rand_tensor({8, 8, 8}, rng);
        Tensor y = ffc.forward(nullptr, x);
        Tensor xl = slice(nullptr, x, 0, 0, 4);
        Tensor ref = lrelu(nullptr, ffc.local_local.forward(nullptr, xl), 0.1);
        CHECK(max_abs_diff(slice(nullptr, y, 0, 0, 4), ref) < 1e-12);
        CHECK(testutil::max_abs(slice(nullptr, y, 0, 4, 8)) == 0.0);
    }
    SUBCASE("gradients") {
        FfcLayer ffc(8, 0.5, rng);
        Tensor x = rand_tensor({8, 8, 8}, rng);
        auto f = [&](Tape* tp) { return mean_all(tp, square(tp, ffc.forward(tp, x))); };
        CHECK(finite_diff_check_multi(f, {x, ffc.local_local.w, ffc.local_global.w,
                                          ffc.global_local.w, ffc.global_global.fu_left.mix.w},
                                      1e-5, 30, 11) < 1e-4);
    }
}

TEST_CASE("res-ffc fusion") {
    Rng rng(46);
    SUBCASE("zero ffc path reduces to the decoder features") {
        ResFfc fuse(8, 0.5, rng);
        zero_conv(fuse.reduce);
        zero_conv(fuse.ffc.local_local);
        zero_conv(fuse.ffc.local_global);
        zero_conv(fuse.ffc.global_local);
        zero_conv(fuse.ffc.global_global.conv_in);
        zero_conv(fuse.ffc.global_global.conv_out);
        zero_conv(fuse.ffc.global_global.fu_left.mix);
        zero_conv(fuse.ffc.global_global.fu_right.mix);
        Tensor dec = rand_tensor({8, 8, 8}, rng);
        Tensor skip = rand_tensor({8, 8, 8}, rng);
        CHECK(max_abs_diff(fuse.forward(nullptr, dec, skip), dec) == 0.0);
    }
    SUBCASE("shape and shape errors") {
        ResFfc fuse(8, 0.5, rng);
        Tensor x = rand_tensor({8, 8, 8}, rng);
        CHECK(fuse.forward(nullptr, x, x).shape() == x.shape());
        CHECK_THROWS_AS(fuse.forward(nullptr, x, rand_tensor({8, 4, 4}, rng)), DimensionError);
    }
    SUBCASE("gradient reaches both decoder and skip inputs") {
        ResFfc fuse(8, 0.5, rng);
        Tensor dec = rand_tensor({8, 8, 8}, rng);
        Tensor skip = rand_tensor({8, 8, 8}, rng);
        Tape tape;
        Tensor loss = mean_all(&tape, square(&tape, fuse.forward(&tape, dec, skip)));
        tape.backward(loss);
        REQUIRE(dec.grad_if() != nullptr);
        REQUIRE(skip.grad_if() != nullptr);
        double gdec = 0.0, gskip = 0.0;
        for (double v : *dec.grad_if()) gdec += std::fabs(v);
        for (double v : *skip.grad_if()) gskip += std::fabs(v);
        CHECK(gdec > 1e-6);
        CHECK(gskip > 1e-6);

        auto f = [&](Tape* tp) { return mean_all(tp, square(tp, fuse.forward(tp, dec, skip))); };
        CHECK(finite_diff_check_multi(f, {dec, skip}, 1e-5, 30, 13) < 1e-4);
    }
}

TEST_CASE("convolution theorem: spectral product equals circular convolution") {
    Rng rng(47);
    Tensor a = rand_tensor({1, 8, 8}, rng);
    Tensor b = rand_tensor({1, 8, 8}, rng);

    // spatial circular convolution, brute force
    Tensor ref = Tensor::zeros({1, 8, 8});
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int u = 0; u < 8; ++u)
                for (int v = 0; v < 8; ++v)
                    acc += a.at({0, u, v}) * b.at({0, (i - u + 8) % 8, (j - v + 8) % 8});
            ref.mutable_data()[static_cast<size_t>(i) * 8 + j] = acc;
        }

    ComplexGrid ga = fft2d(a), gb = fft2d(b);
    ComplexGrid gc = ga;
    for (size_t i = 0; i < ga.re.size(); ++i) {
        gc.re[i] = ga.re[i] * gb.re[i] - ga.im[i] * gb.im[i];
        gc.im[i] = ga.re[i] * gb.im[i] + ga.im[i] * gb.re[i];
    }
    Tensor fft_route = ifft2d(gc);
    double worst = 0.0;
    for (int i = 0; i < 64; ++i)
        worst = std::max(worst, std::fabs(fft_route.data()[i] - ref.data()[i]) /
                                    std::max(1.0, std::fabs(ref.data()[i])));
    CHECK(worst < 1e-5);
}

TEST_CASE("fourier unit has a global receptive field, plain conv a local one") {
    Rng rng(48);
    FourierUnit fu(1, rng);
    Tensor x = rand_tensor({1, 8, 8}, rng);
    Tensor y0 = fu.forward(nullptr, x);
    Tensor xp = Tensor::from(x.shape(), x.data());
    xp.mutable_data()[3 * 8 + 5] += 0.37;
    Tensor y1 = fu.forward(nullptr, xp);
    int changed = 0;
    for (int i = 0; i < 64; ++i)
        if (std::fabs(y1.data()[i] - y0.data()[i]) > 1e-12) ++changed;
    CHECK(changed == 64);

    Conv2d conv(1, 1, 3, 1, 1, rng);
    Tensor c0 = conv.forward(nullptr, x);
    Tensor c1 = conv.forward(nullptr, xp);
    int conv_changed = 0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            if (std::fabs(c1.at({0, i, j}) - c0.at({0, i, j})) > 1e-12) {
                ++conv_changed;
                CHECK(std::abs(i - 3) <= 1);
                CHECK(std::abs(j - 5) <= 1);
            }
    CHECK(conv_changed <= 9);
    CHECK(conv_changed >= 1);
}
