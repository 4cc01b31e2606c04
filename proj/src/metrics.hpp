#pragma once

#include "tensor.hpp"

namespace dwtnet {

// Fidelity metrics on 3 x H x W images scaled to [0, 1]. An optional mask
// (1 x H x W or H x W, 1 = observed) restricts the measurement to the masked
// region, i.e. to pixels where the mask is 0.

// 10*log10(1 / MSE), capped at 99 dB when MSE < 1e-10.
double psnr(const Tensor& a, const Tensor& b, const Tensor* masked_region_of = nullptr);

// Mean SSIM over a 7x7 uniform window, K1=0.01, K2=0.03, dynamic range 1;
// windows are evaluated where they fit entirely, channels averaged.
double ssim(const Tensor& a, const Tensor& b, const Tensor* masked_region_of = nullptr);

}  // namespace dwtnet
