#pragma once

#include <vector>

#include "tensor.hpp"

namespace dwtnet {

// Half-spectrum of a real 2-D transform, per channel: bins (u, v) with
// v in [0, W/2]; the remaining columns are implied by Hermitian symmetry.
struct ComplexGrid {
    int channels = 0;
    int height = 0;
    int half_width = 0;  // W/2 + 1
    int full_width = 0;  // W
    std::vector<double> re;
    std::vector<double> im;

    size_t idx(int c, int u, int v) const {
        return (static_cast<size_t>(c) * height + u) * half_width + v;
    }
};

// Radix-2 in-place complex FFT over planar re/im, length a power of two.
// inverse=true uses the conjugate exponent and does NOT apply 1/N scaling.
void fft_radix2(std::vector<double>& re, std::vector<double>& im, bool inverse);

// Real-to-complex 2-D transform per channel (unnormalized forward).
ComplexGrid fft2d(const Tensor& x);
// Inverse of fft2d: Hermitian-extends the half spectrum, applies the
// normalized inverse transform and returns the real part.
Tensor ifft2d(const ComplexGrid& g);

// sum over stored bins of |X|^2 with Hermitian-half double counting, i.e.
// the full-spectrum energy; Parseval: sum(x^2) = spectral_energy / (H*W).
double spectral_energy(const ComplexGrid& g);

// Tape ops used by the Fourier Unit: the half spectrum stacked as channels
// (first C channels = real planes, next C = imaginary planes).
Tensor rfft2_stack(Tape* tp, const Tensor& x);                  // C x H x W -> 2C x H x (W/2+1)
Tensor irfft2_unstack(Tape* tp, const Tensor& y, int full_w);   // 2C x H x (W/2+1) -> C x H x W

}  // namespace dwtnet
