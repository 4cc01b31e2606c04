#pragma once

#include "nn.hpp"
#include "tensor.hpp"

namespace dwtnet {

struct LossWeights {
    double alpha_g = 5.0;
    double alpha_a = 0.1;
    double alpha_p = 0.1;
    double alpha_s = 250.0;
    double beta = 0.25;
};

// mean |a - b|
Tensor pixel_loss(Tape* tp, const Tensor& a, const Tensor& b);

// mean |grad(a) - grad(b)| with forward differences in x and y (the last
// column/row of each difference map is zero padding), channels averaged.
Tensor gradient_loss(Tape* tp, const Tensor& a, const Tensor& b);

// Fixed random feature pyramid standing in for a pretrained perceptual
// network: four conv+pool stages with frozen orthogonal weights. Relative
// distances in this space are still meaningful even though the features are
// untrained; this repository never ships pretrained weights.
struct FeatureExtractor {
    std::vector<Conv2d> convs;  // 3->12->24->48->96, 3x3 pad 1, pool 2 each stage

    explicit FeatureExtractor(std::uint64_t seed);
    // taps after every stage; inputs are 3 x H x W with H, W divisible by 16
    std::vector<Tensor> features(Tape* tp, const Tensor& x) const;
};

// Gram matrix of flattened C x (HW) features scaled by 1/(C*H*W).
Tensor gram_matrix(Tape* tp, const Tensor& fmap);

// perceptual: sum over all 4 taps of mean|rho_l(a) - rho_l(b)|
// style: sum over taps 2..4 of mean|G(rho_l(a)) - G(rho_l(b))|
std::pair<Tensor, Tensor> perceptual_style_loss(Tape* tp, const Tensor& a, const Tensor& b,
                                                const FeatureExtractor& fx);

// Four spectrally-normalized conv stages and a linear head; returns one
// probability per image through a sigmoid.
struct Discriminator {
    std::vector<Conv2d> convs;  // 3->16->32->32->32, pool after each of the first three
    Linear head;

    explicit Discriminator(std::uint64_t seed);
    Tensor prob(Tape* tp, const Tensor& image) const;  // scalar in (0,1)
    std::vector<Tensor> params() const;
    void collect(NamedTensors& out, const std::string& prefix) const;
    void apply_spectral_norm(int iters);
};

// loss_D = -mean log D(real) - mean log(1 - D(fake))   (the printed form)
// loss_G = -mean log D(fake)                            (non-saturating)
// Probabilities are clamped to [1e-7, 1 - 1e-7] before the logarithms.
struct AdvLoss {
    Tensor generator;
    Tensor discriminator;
};
AdvLoss adversarial_loss(Tape* tp, const Discriminator& d, const Tensor& fake, const Tensor& real);

// Weighted sum of all terms; every term must be finite. `adv` is the
// generator-side adversarial term.
struct LossTerms {
    Tensor pixel, grad, adv, perc, style, commit, mal;
};
Tensor total_loss(Tape* tp, const LossTerms& t, const LossWeights& w);

}  // namespace dwtnet
