#pragma once

#include <string>

#include "checkpoint.hpp"
#include "tensor.hpp"

namespace dwtnet {

// Orthogonal initialization: QR of a Gaussian sample with the R-diagonal sign
// correction, so the result is deterministic given the RNG stream. The
// smaller of the two matrix-view dimensions ends up orthonormal, scaled by
// gain. Rank > 2 shapes are treated as (extent0) x (rest).
Tensor orthogonal_init(const Shape& shape, double gain, Rng& rng);

Tensor gaussian_init(const Shape& shape, double stddev, Rng& rng);

struct Linear {
    Tensor w;  // in x out
    Tensor b;  // out
    bool has_bias = true;

    Linear() = default;
    Linear(int in, int out, Rng& rng, bool bias = true, double gain = 1.0);

    Tensor forward(Tape* tp, const Tensor& x) const;  // x: N x in
    void collect(NamedTensors& out, const std::string& prefix) const;
};

struct Conv2d {
    Tensor w;  // out_ch x in_ch x k x k
    Tensor b;  // out_ch
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng, double gain = 1.0);

    Tensor forward(Tape* tp, const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

// Adam with per-parameter state. Step order follows the parameter list, so
// updates are deterministic.
class Adam {
   public:
    Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps = 1e-8);

    void step();
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

   private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

// Applies params from a loaded checkpoint to live tensors by name, with
// shape validation. Unknown names in either direction are errors.
void apply_named_tensors(const NamedTensors& live, const NamedTensors& loaded);

}  // namespace dwtnet
