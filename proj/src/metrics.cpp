#include "metrics.hpp"

#include <cmath>

namespace dwtnet {

namespace {

void check_images(const Tensor& a, const Tensor& b, const Tensor* mask) {
    if (a.ndim() != 3 || a.extent(0) != 3) throw DimensionError("metrics expect 3 x H x W images");
    if (a.shape() != b.shape())
        throw DimensionError("metric shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    if (mask && mask->numel() != a.extent(1) * a.extent(2))
        throw DimensionError("mask extent mismatch");
}

inline bool masked_at(const Tensor* mask, int i, int j, int w) {
    if (!mask) return true;  // no mask: every pixel counts
    return mask->data()[static_cast<size_t>(i) * w + j] == 0.0;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, const Tensor* mask) {
    check_images(a, b, mask);
    const int h = a.extent(1), w = a.extent(2);
    double se = 0.0;
    long count = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            if (!masked_at(mask, i, j, w)) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = a.at({c, i, j}) - b.at({c, i, j});
                se += d * d;
            }
            count += 3;
        }
    if (count == 0) throw UsageError("psnr: empty measurement region");
    const double mse = se / count;
    if (mse < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor& a, const Tensor& b, const Tensor* mask) {
    check_images(a, b, mask);
    const int h = a.extent(1), w = a.extent(2);
    constexpr int kHalf = 3;  // 7x7 window
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    if (h < 7 || w < 7) throw UsageError("ssim: image smaller than the 7x7 window");

    double acc = 0.0;
    long count = 0;
    for (int i = kHalf; i < h - kHalf; ++i)
        for (int j = kHalf; j < w - kHalf; ++j) {
            if (!masked_at(mask, i, j, w)) continue;
            double pixel_ssim = 0.0;
            for (int c = 0; c < 3; ++c) {
                double ma = 0.0, mb = 0.0;
                for (int di = -kHalf; di <= kHalf; ++di)
                    for (int dj = -kHalf; dj <= kHalf; ++dj) {
                        ma += a.at({c, i + di, j + dj});
                        mb += b.at({c, i + di, j + dj});
                    }
                ma /= 49.0;
                mb /= 49.0;
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (int di = -kHalf; di <= kHalf; ++di)
                    for (int dj = -kHalf; dj <= kHalf; ++dj) {
                        const double da = a.at({c, i + di, j + dj}) - ma;
                        const double db = b.at({c, i + di, j + dj}) - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= 48.0;
                vb /= 48.0;
                cov /= 48.0;
                pixel_ssim += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                              ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
            }
            acc += pixel_ssim / 3.0;
            ++count;
        }
    if (count == 0) throw UsageError("ssim: empty measurement region");
    return acc / count;
}

}  // namespace dwtnet
