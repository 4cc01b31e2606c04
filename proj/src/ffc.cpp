#include "ffc.hpp"

#include <cmath>

namespace dwtnet {

FourierUnit::FourierUnit(int channels, Rng& rng)
    : mix(2 * channels, 2 * channels, 1, 1, 0, rng) {}

Tensor FourierUnit::forward(Tape* tp, const Tensor& x) const {
    const int w = x.extent(2);
    Tensor spec = rfft2_stack(tp, x);
    spec = lrelu(tp, mix.forward(tp, spec), 0.1);
    return irfft2_unstack(tp, spec, w);
}

void FourierUnit::collect(NamedTensors& out, const std::string& prefix) const {
    mix.collect(out, prefix + ".mix");
}

SpectralTransform::SpectralTransform(int channels_, Rng& rng)
    : conv_in(channels_, channels_, 1, 1, 0, rng),
      conv_out(channels_, channels_, 1, 1, 0, rng),
      fu_left(channels_, rng),
      fu_right(channels_ / 4, rng),
      channels(channels_) {
    if (channels_ % 4 != 0)
        throw ConfigError("SpectralTransform: channel count " + std::to_string(channels_) +
                          " must be divisible by 4");
}

Tensor SpectralTransform::forward(Tape* tp, const Tensor& x) const {
    if (x.ndim() != 3 || x.extent(0) != channels)
        throw DimensionError("SpectralTransform: input " + shape_str(x.shape()) + ", expected " +
                             std::to_string(channels) + " channels");
    const int q = channels / 4;
    Tensor s = conv_in.forward(tp, x);
    Tensor left = fu_left.forward(tp, s);                            // global context
    Tensor right = fu_right.forward(tp, slice(tp, s, 0, 0, q));      // semi-global quarter
    Tensor head = add(tp, slice(tp, left, 0, 0, q), right);
    Tensor combined = concat(tp, {head, slice(tp, left, 0, q, channels)}, 0);
    return conv_out.forward(tp, add(tp, combined, s));
}

void SpectralTransform::collect(NamedTensors& out, const std::string& prefix) const {
    conv_in.collect(out, prefix + ".in");
    fu_left.collect(out, prefix + ".fu_left");
    fu_right.collect(out, prefix + ".fu_right");
    conv_out.collect(out, prefix + ".out");
}

FfcLayer::FfcLayer(int channels, double global_ratio, Rng& rng) {
    c_global = static_cast<int>(std::lround(global_ratio * channels));
    c_local = channels - c_global;
    if (c_global < 4 || c_global % 4 != 0)
        throw ConfigError("FfcLayer: global channel count " + std::to_string(c_global) +
                          " must be >= 4 and divisible by 4");
    if (c_local < 1) throw ConfigError("FfcLayer: no local channels left");
    local_local = Conv2d(c_local, c_local, 3, 1, 1, rng);
    local_global = Conv2d(c_local, c_global, 3, 1, 1, rng);
    global_local = Conv2d(c_global, c_local, 3, 1, 1, rng);
    global_global = SpectralTransform(c_global, rng);
}

Tensor FfcLayer::forward(Tape* tp, const Tensor& x) const {
    if (x.ndim() != 3 || x.extent(0) != channels())
        throw DimensionError("FfcLayer: input " + shape_str(x.shape()) + ", expected " +
                             std::to_string(channels()) + " channels");
    Tensor xl = slice(tp, x, 0, 0, c_local);
    Tensor xg = slice(tp, x, 0, c_local, channels());
    Tensor yl = lrelu(tp, add(tp, local_local.forward(tp, xl), global_local.forward(tp, xg)), 0.1);
    Tensor yg = lrelu(tp, add(tp, local_global.forward(tp, xl), global_global.forward(tp, xg)), 0.1);
    return concat(tp, {yl, yg}, 0);
}

void FfcLayer::collect(NamedTensors& out, const std::string& prefix) const {
    local_local.collect(out, prefix + ".ll");
    local_global.collect(out, prefix + ".lg");
    global_local.collect(out, prefix + ".gl");
    global_global.collect(out, prefix + ".st");
}

ResFfc::ResFfc(int channels, double global_ratio, Rng& rng)
    : reduce(2 * channels, channels, 1, 1, 0, rng), ffc(channels, global_ratio, rng) {}

Tensor ResFfc::forward(Tape* tp, const Tensor& dec, const Tensor& skip) const {
    if (dec.shape() != skip.shape())
        throw DimensionError("ResFfc: decoder " + shape_str(dec.shape()) + " vs skip " +
                             shape_str(skip.shape()));
    Tensor h = concat(tp, {dec, skip}, 0);
    h = reduce.forward(tp, h);
    h = ffc.forward(tp, h);
    return add(tp, h, dec);
}

void ResFfc::collect(NamedTensors& out, const std::string& prefix) const {
    reduce.collect(out, prefix + ".reduce");
    ffc.collect(out, prefix + ".ffc");
}

}  // namespace dwtnet
