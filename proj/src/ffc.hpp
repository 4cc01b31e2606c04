#pragma once

#include "fft.hpp"
#include "nn.hpp"

namespace dwtnet {

// FFT -> 1x1 channel mix in frequency space (real/imag planes stacked as
// channels) + LReLU -> inverse FFT. Spatial extents must be powers of two.
struct FourierUnit {
    Conv2d mix;  // 1x1 on 2C stacked channels

    FourierUnit() = default;
    FourierUnit(int channels, Rng& rng);
    Tensor forward(Tape* tp, const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

// 1x1 conv in -> left FU over all channels plus right FU over the first
// quarter (added back onto its quarter) -> residual sum with the conv-in
// features -> 1x1 conv out. Channel count must be divisible by 4.
struct SpectralTransform {
    Conv2d conv_in, conv_out;
    FourierUnit fu_left, fu_right;
    int channels = 0;

    SpectralTransform() = default;
    SpectralTransform(int channels, Rng& rng);
    Tensor forward(Tape* tp, const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

// Channel-split fast Fourier convolution: a local 3x3 branch, a global
// spectral branch, and the two cross paths, LReLU on both outputs.
struct FfcLayer {
    int c_local = 0;
    int c_global = 0;
    Conv2d local_local, local_global, global_local;  // 3x3, pad 1
    SpectralTransform global_global;

    FfcLayer() = default;
    FfcLayer(int channels, double global_ratio, Rng& rng);
    int channels() const { return c_local + c_global; }
    Tensor forward(Tape* tp, const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

// Residual fusion of decoder features with encoder skip features:
// concat -> 1x1 reduce -> FFC -> + decoder features.
struct ResFfc {
    Conv2d reduce;  // 1x1, 2C -> C
    FfcLayer ffc;

    ResFfc() = default;
    ResFfc(int channels, double global_ratio, Rng& rng);
    Tensor forward(Tape* tp, const Tensor& dec, const Tensor& skip) const;
    void collect(NamedTensors& out, const std::string& prefix) const;
};

}  // namespace dwtnet
