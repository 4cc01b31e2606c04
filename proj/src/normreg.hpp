#pragma once

#include <cstdint>

#include "nn.hpp"
#include "tensor.hpp"

namespace dwtnet {

// Coupled Newton-Schulz iteration for the matrix square root of a symmetric
// positive definite A: returns (Y, Z) with Y*Y ~ A and Z ~ A^{-1/2}. The
// input is pre-scaled by 1/||A||_F so the iteration contracts, then the
// results are un-scaled. Throws NumericError when A is visibly asymmetric or
// the relative residual ||YY - A||_F / ||A||_F fails to reach tol within
// max_iters.
struct SqrtResult {
    Tensor y;         // ~ A^{1/2}
    Tensor z;         // ~ A^{-1/2}
    int iters = 0;
    double residual = 0.0;
};
SqrtResult newton_schulz_sqrt(const Tensor& a, int max_iters = 30, double tol = 1e-4);

// Target singular value of the norm-preserving rescale for a d x m operator.
double norm_preserve_target(int d, int m);

// Sets every (numerically nonzero) singular value of the matrix view of w to
// sqrt(d / min(d, m)) where d = extent(0) and m = numel/d, without SVD: the
// Gram matrix on the smaller side is inverted through its Newton-Schulz
// square root. A tiny relative ridge keeps near-singular Grams tractable;
// directions at the ridge floor keep their (near zero) magnitude.
Tensor norm_preserve_rescale(const Tensor& w, int max_iters = 30);
void norm_preserve_rescale_inplace(Tensor& w, int max_iters = 30);

// Power-iteration estimate of the top singular value of the matrix view.
double spectral_norm_estimate(const Tensor& w, int iters);
// w / sigma_max with sigma_max estimated by `iters` power iterations.
Tensor spectral_normalize(const Tensor& w, int iters);
void spectral_normalize_inplace(Tensor& w, int iters);

// ---- gradient-norm-ratio probe ----

struct GradReport {
    int layer = 0;  // 1-based
    int cin = 0;
    int cout = 0;
    bool pool = false;
    double ratio = 0.0;  // E||grad_in||_2 / E||grad_out||_2 over trials
    int trials = 0;
};

// Conv stack used by the probe: odd layers are 3x3, even layers 1x1; pool
// flags add a 2x2 average pooling after the layer. Weights are Gaussian,
// fan-out scaled (stddev 1/sqrt(cout*k^2)), so the gradient-norm ratio of an
// unregularized layer trends like sqrt(cin/cout).
struct ProbeNet {
    struct Layer {
        Conv2d conv;
        bool pool = false;
    };
    std::vector<Layer> layers;
    int in_channels = 0;
    int spatial = 16;
};

// Standard 4-layer probe: 3x3 c->d, 1x1 d->c, 3x3 c->d, 1x1 d->c.
ProbeNet make_probe_net(int c, int d, int spatial, const std::vector<bool>& pool_flags,
                        std::uint64_t seed);

void rescale_probe_net(ProbeNet& net);

// Backpropagates Gaussian upstream gradients through the net for Gaussian
// inputs and reports the per-layer ratio of mean gradient norms around each
// convolution. Deterministic given the seed.
std::vector<GradReport> grad_ratio_probe(const ProbeNet& net, int trials, std::uint64_t seed);

// Trains the probe net on a throwaway Gaussian regression task and records
// the per-layer ratios every `probe_every` steps, optionally applying the
// norm-preserving rescale every 10 optimizer steps.
struct DriftPoint {
    int step = 0;
    int layer = 0;
    double ratio = 0.0;
};
std::vector<DriftPoint> grad_ratio_drift(ProbeNet& net, int steps, int probe_every, int trials,
                                         bool with_rescale, std::uint64_t seed);

// CSV dump of one probe: layer, c, d, pooling, trial, ratio.
void write_grad_reports(const std::string& path, const std::vector<GradReport>& reports);

}  // namespace dwtnet
