#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "normreg.hpp"
#include "test_util.hpp"

using namespace dwtnet;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
    const int r = t.extent(0);
    const int c = t.numel() / r;
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = t.data()[static_cast<size_t>(i) * c + j];
    return m;
}

Tensor random_spd(int n, Rng& rng) {
    Tensor b = rand_tensor({n, n}, rng);
    Tensor bt = transpose2d(nullptr, b);
    Tensor a = matmul(nullptr, bt, b);
    for (int i = 0; i < n; ++i) a.mutable_data()[static_cast<size_t>(i) * n + i] += 0.1;
    return a;
}

double rel_residual(const Tensor& y, const Tensor& a) {
    Tensor yy = matmul(nullptr, y, y);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < a.numel(); ++i) {
        const double d = yy.data()[i] - a.data()[i];
        num += d * d;
        den += a.data()[i] * a.data()[i];
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("newton-schulz square root") {
    Rng rng(51);
    SUBCASE("identity is a fixed point") {
        Tensor eye = Tensor::zeros({4, 4});
        for (int i = 0; i < 4; ++i) eye.mutable_data()[static_cast<size_t>(i) * 4 + i] = 1.0;
        SqrtResult r = newton_schulz_sqrt(eye);
        CHECK(max_abs_diff(r.y, eye) < 1e-8);
        CHECK(max_abs_diff(r.z, eye) < 1e-8);
    }
    SUBCASE("diagonal matrices take elementwise roots") {
        Tensor a = Tensor::from({2, 2}, {4.0, 0.0, 0.0, 9.0});
        SqrtResult r = newton_schulz_sqrt(a);
        CHECK(r.y.at({0, 0}) == doctest::Approx(2.0).epsilon(1e-5));
        CHECK(r.y.at({1, 1}) == doctest::Approx(3.0).epsilon(1e-5));
        CHECK(std::fabs(r.y.at({0, 1})) < 1e-6);
    }
    SUBCASE("random SPD matrices: YY ~ A, validated against the eigendecomposition") {
        for (int trial = 0; trial < 5; ++trial) {
            Tensor a = random_spd(16, rng);
            SqrtResult r = newton_schulz_sqrt(a);
            CHECK(r.iters <= 30);
            CHECK(rel_residual(r.y, a) < 1e-4);

            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a));
            Eigen::MatrixXd root = es.operatorSqrt();
            Eigen::MatrixXd diff = to_eigen(r.y) - root;
            CHECK(diff.norm() / root.norm() < 1e-4);

            // inverse-root consistency: Y Z ~ I
            Tensor yz = matmul(nullptr, r.y, r.z);
            for (int i = 0; i < 16; ++i)
                for (int j = 0; j < 16; ++j)
                    CHECK(std::fabs(yz.at({i, j}) - (i == j ? 1.0 : 0.0)) < 1e-4);
        }
    }
    SUBCASE("asymmetric input is rejected") {
        Tensor a = Tensor::from({2, 2}, {1.0, 0.5, -0.5, 1.0});
        CHECK_THROWS_AS(newton_schulz_sqrt(a), NumericError);
    }
}

TEST_CASE("norm-preserving rescale") {
    Rng rng(52);
    SUBCASE("target formula") {
        CHECK(norm_preserve_target(8, 8) == doctest::Approx(1.0));
        CHECK(norm_preserve_target(36, 36) == doctest::Approx(1.0));
        CHECK(norm_preserve_target(128, 64) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    }
    SUBCASE("singular values hit the target (SVD oracle)") {
        Tensor w = rand_tensor({8, 4, 3, 3}, rng);  // d=8, m=36, target 1
        Tensor r = norm_preserve_rescale(w);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(r));
        for (int i = 0; i < svd.singularValues().size(); ++i)
            CHECK(std::fabs(svd.singularValues()(i) - 1.0) < 1e-3);
    }
    SUBCASE("tall operator: d > m") {
        Tensor w = rand_tensor({24, 6}, rng);  // target sqrt(24/6) = 2
        Tensor r = norm_preserve_rescale(w);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(r));
        for (int i = 0; i < svd.singularValues().size(); ++i)
            CHECK(std::fabs(svd.singularValues()(i) - 2.0) < 1e-3);
    }
    SUBCASE("idempotence") {
        Tensor w = rand_tensor({16, 8, 3, 3}, rng);
        Tensor once = norm_preserve_rescale(w);
        Tensor twice = norm_preserve_rescale(once);
        double num = 0.0, den = 0.0;
        for (int i = 0; i < once.numel(); ++i) {
            const double d = twice.data()[i] - once.data()[i];
            num += d * d;
            den += once.data()[i] * once.data()[i];
        }
        CHECK(std::sqrt(num / den) < 1e-6);
    }
    SUBCASE("row space is preserved") {
        Tensor w = rand_tensor({6, 20}, rng);
        Tensor r = norm_preserve_rescale(w);
        // projector onto the row space of w from its SVD (test oracle only)
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(w), Eigen::ComputeFullV);
        Eigen::MatrixXd v = svd.matrixV().leftCols(6);
        Eigen::MatrixXd proj = v * v.transpose();
        Eigen::MatrixXd rm = to_eigen(r);
        Eigen::MatrixXd outside = rm - rm * proj;
        CHECK(outside.norm() / rm.norm() < 1e-6);
    }
}

TEST_CASE("spectral normalization") {
    Rng rng(53);
    SUBCASE("scaled identity") {
        Tensor w = Tensor::zeros({5, 5});
        for (int i = 0; i < 5; ++i) w.mutable_data()[static_cast<size_t>(i) * 5 + i] = 3.0;
        Tensor r = spectral_normalize(w, 20);
        for (int i = 0; i < 5; ++i) CHECK(r.at({i, i}) == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("unit rank-1 matrices are unchanged") {
        Rng r2(54);
        Tensor u = rand_tensor({4}, r2);
        Tensor v = rand_tensor({6}, r2);
        double nu = 0.0, nv = 0.0;
        for (double x : u.data()) nu += x * x;
        for (double x : v.data()) nv += x * x;
        Tensor w = Tensor::zeros({4, 6});
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 6; ++j)
                w.mutable_data()[static_cast<size_t>(i) * 6 + j] =
                    u.data()[i] / std::sqrt(nu) * v.data()[j] / std::sqrt(nv);
        Tensor r = spectral_normalize(w, 20);
        CHECK(max_abs_diff(r, w) < 1e-10);
    }
    SUBCASE("estimate within 2% of the SVD oracle") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor w = rand_tensor({16, 32}, rng);
            const double est = spectral_norm_estimate(w, 20);
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(w));
            const double truth = svd.singularValues()(0);
            CHECK(std::fabs(est - truth) / truth < 0.02);

            Tensor n = spectral_normalize(w, 20);
            Eigen::JacobiSVD<Eigen::MatrixXd> svd2(to_eigen(n));
            CHECK(svd2.singularValues()(0) <= 1.02);
        }
    }
}

TEST_CASE("gradient ratio probe") {
    SUBCASE("single orthonormal 1x1 layer has ratio exactly 1") {
        Rng rng(55);
        ProbeNet net;
        net.in_channels = 8;
        net.spatial = 8;
        ProbeNet::Layer layer;
        layer.conv = Conv2d(8, 8, 1, 1, 0, rng);
        layer.conv.w = reshape(nullptr, orthogonal_init({8, 8}, 1.0, rng), {8, 8, 1, 1});
        net.layers.push_back(std::move(layer));
        auto reports = grad_ratio_probe(net, 5, 99);
        CHECK(reports.size() == 1);
        CHECK(reports[0].ratio == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("rescaled 4-layer net sits near ratio 1; raw gaussian drifts by layer shape") {
        for (auto [c, d] : {std::pair{8, 16}, std::pair{16, 16}, std::pair{16, 8}}) {
            ProbeNet raw = make_probe_net(c, d, 16, {}, 1234);
            ProbeNet scaled = make_probe_net(c, d, 16, {}, 1234);
            rescale_probe_net(scaled);

            auto rs = grad_ratio_probe(scaled, 10, 77);
            for (const auto& r : rs) {
                CHECK(r.ratio > 0.85);
                CHECK(r.ratio < 1.15);
            }
            if (c != d) {
                auto rr = grad_ratio_probe(raw, 10, 77);
                for (const auto& r : rr) CHECK(std::fabs(r.ratio - 1.0) > 0.15);
            }
        }
    }
    SUBCASE("probe is deterministic under a fixed seed") {
        ProbeNet a = make_probe_net(8, 16, 16, {true, false, true, false}, 5);
        ProbeNet b = make_probe_net(8, 16, 16, {true, false, true, false}, 5);
        auto ra = grad_ratio_probe(a, 4, 11);
        auto rb = grad_ratio_probe(b, 4, 11);
        for (size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].ratio == rb[i].ratio);
    }
}

TEST_CASE("ratio drift grows without rescaling during training") {
    ProbeNet net = make_probe_net(8, 16, 16, {true, false, true, false}, 321);
    auto points = grad_ratio_drift(net, 100, 10, 5, /*with_rescale=*/false, 654);
    // mean |ratio - 1| across layers per snapshot
    std::vector<double> dev;
    for (size_t i = 0; i < points.size(); i += 4) {
        double acc = 0.0;
        for (size_t j = i; j < i + 4; ++j) acc += std::fabs(points[j].ratio - 1.0);
        dev.push_back(acc / 4.0);
    }
    REQUIRE(dev.size() >= 6);
    double first = 0.0, last = 0.0;
    const size_t third = dev.size() / 3;
    for (size_t i = 0; i < third; ++i) first += dev[i];
    for (size_t i = dev.size() - third; i < dev.size(); ++i) last += dev[i];
    CHECK(last > first);
}
