#include "losses.hpp"

#include <cmath>

#include "normreg.hpp"

namespace dwtnet {

Tensor pixel_loss(Tape* tp, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("pixel_loss shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    return mean_all(tp, abs_op(tp, sub(tp, a, b)));
}

namespace {

// forward difference along the given spatial axis, zero-padded at the end
Tensor forward_diff(Tape* tp, const Tensor& x, int axis) {
    const int n = x.extent(axis);
    Tensor hi = slice(tp, x, axis, 1, n);
    Tensor lo = slice(tp, x, axis, 0, n - 1);
    Shape pad_shape = x.shape();
    pad_shape[axis] = 1;
    return concat(tp, {sub(tp, hi, lo), Tensor::zeros(pad_shape)}, axis);
}

}  // namespace

Tensor gradient_loss(Tape* tp, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("gradient_loss shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor dx = abs_op(tp, sub(tp, forward_diff(tp, a, 2), forward_diff(tp, b, 2)));
    Tensor dy = abs_op(tp, sub(tp, forward_diff(tp, a, 1), forward_diff(tp, b, 1)));
    return mul_scalar(tp, add(tp, mean_all(tp, dx), mean_all(tp, dy)), 0.5);
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "feature-extractor"));
    const int widths[5] = {3, 12, 24, 48, 96};
    for (int s = 0; s < 4; ++s) convs.emplace_back(widths[s], widths[s + 1], 3, 1, 1, rng);
}

std::vector<Tensor> FeatureExtractor::features(Tape* tp, const Tensor& x) const {
    std::vector<Tensor> taps;
    Tensor h = x;
    for (const auto& conv : convs) {
        h = avg_pool2d(tp, lrelu(tp, conv.forward(tp, h), 0.1), 2);
        taps.push_back(h);
    }
    return taps;
}

Tensor gram_matrix(Tape* tp, const Tensor& fmap) {
    if (fmap.ndim() != 3) throw DimensionError("gram_matrix expects C x H x W");
    const int c = fmap.extent(0), hw = fmap.extent(1) * fmap.extent(2);
    Tensor flat = reshape(tp, fmap, {c, hw});
    Tensor g = matmul(tp, flat, transpose2d(tp, flat));
    return mul_scalar(tp, g, 1.0 / (static_cast<double>(c) * hw));
}

std::pair<Tensor, Tensor> perceptual_style_loss(Tape* tp, const Tensor& a, const Tensor& b,
                                                const FeatureExtractor& fx) {
    if (a.shape() != b.shape())
        throw DimensionError("perceptual_style_loss shape mismatch");
    auto fa = fx.features(tp, a);
    auto fb = fx.features(tp, b);
    Tensor perc = Tensor::scalar(0.0);
    Tensor style = Tensor::scalar(0.0);
    for (size_t l = 0; l < fa.size(); ++l) {
        perc = add(tp, perc, mean_all(tp, abs_op(tp, sub(tp, fa[l], fb[l]))));
        if (l >= 1) {
            Tensor ga = gram_matrix(tp, fa[l]);
            Tensor gb = gram_matrix(tp, fb[l]);
            style = add(tp, style, mean_all(tp, abs_op(tp, sub(tp, ga, gb))));
        }
    }
    return {perc, style};
}

Discriminator::Discriminator(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "discriminator"));
    const int widths[5] = {3, 16, 32, 32, 32};
    for (int s = 0; s < 4; ++s) convs.emplace_back(widths[s], widths[s + 1], 3, 1, 1, rng);
    head = Linear(32, 1, rng);
}

Tensor Discriminator::prob(Tape* tp, const Tensor& image) const {
    Tensor h = image;
    for (size_t s = 0; s < convs.size(); ++s) {
        h = lrelu(tp, convs[s].forward(tp, h), 0.1);
        if (s < 3) h = avg_pool2d(tp, h, 2);
    }
    h = avg_pool2d(tp, h, h.extent(1));          // global average, 32 x 1 x 1
    Tensor logit = head.forward(tp, reshape(tp, h, {1, 32}));
    return reshape(tp, sigmoid(tp, logit), {1});
}

std::vector<Tensor> Discriminator::params() const {
    std::vector<Tensor> out;
    for (const auto& c : convs) {
        out.push_back(c.w);
        out.push_back(c.b);
    }
    out.push_back(head.w);
    out.push_back(head.b);
    return out;
}

void Discriminator::collect(NamedTensors& out, const std::string& prefix) const {
    for (size_t s = 0; s < convs.size(); ++s)
        convs[s].collect(out, prefix + ".conv" + std::to_string(s));
    head.collect(out, prefix + ".head");
}

void Discriminator::apply_spectral_norm(int iters) {
    for (auto& c : convs) spectral_normalize_inplace(c.w, iters);
    spectral_normalize_inplace(const_cast<Tensor&>(head.w), iters);
}

AdvLoss adversarial_loss(Tape* tp, const Discriminator& d, const Tensor& fake,
                         const Tensor& real) {
    Tensor pf = clamp(tp, d.prob(tp, fake), 1e-7, 1.0 - 1e-7);
    Tensor pr = clamp(tp, d.prob(tp, real), 1e-7, 1.0 - 1e-7);
    Tensor loss_d = mul_scalar(
        tp,
        add(tp, mean_all(tp, log_op(tp, pr)),
            mean_all(tp, log_op(tp, sub_from_scalar(tp, 1.0, pf)))),
        -1.0);
    Tensor loss_g = mul_scalar(tp, mean_all(tp, log_op(tp, pf)), -1.0);
    return {loss_g, loss_d};
}

Tensor total_loss(Tape* tp, const LossTerms& t, const LossWeights& w) {
    auto check = [](const Tensor& v, const char* name) {
        if (v.numel() != 1 || !std::isfinite(v.value()))
            throw NumericError(std::string("total_loss: non-finite term '") + name + "'");
    };
    check(t.pixel, "pixel");
    check(t.grad, "grad");
    check(t.adv, "adv");
    check(t.perc, "perc");
    check(t.style, "style");
    check(t.commit, "commit");
    check(t.mal, "mal");
    Tensor total = t.pixel;
    total = add(tp, total, mul_scalar(tp, t.grad, w.alpha_g));
    total = add(tp, total, mul_scalar(tp, t.adv, w.alpha_a));
    total = add(tp, total, mul_scalar(tp, t.perc, w.alpha_p));
    total = add(tp, total, mul_scalar(tp, t.style, w.alpha_s));
    total = add(tp, total, mul_scalar(tp, t.commit, w.beta));
    total = add(tp, total, t.mal);
    return total;
}

}  // namespace dwtnet
