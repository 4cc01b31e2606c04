#pragma once

#include <cmath>

#include "common.hpp"
#include "tensor.hpp"

namespace dwtnet::testutil {

inline Tensor rand_tensor(const Shape& shape, Rng& rng, double stddev = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.mutable_data()) v = rng.normal(0.0, stddev);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
    return worst;
}

inline double max_abs(const Tensor& a) {
    double worst = 0.0;
    for (double v : a.data()) worst = std::max(worst, std::fabs(v));
    return worst;
}

}  // namespace dwtnet::testutil
