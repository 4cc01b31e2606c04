#include "fft.hpp"

#include <cmath>
#include <numbers>

namespace dwtnet {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

void require_pow2_extents(int h, int w, const char* what) {
    if (!is_pow2(h) || !is_pow2(w))
        throw DimensionError(std::string(what) + ": extents " + std::to_string(h) + "x" +
                             std::to_string(w) + " must be powers of two");
}

// 2-D transform on one H x W complex plane: rows, then columns.
void fft2_plane(std::vector<double>& re, std::vector<double>& im, int h, int w, bool inverse) {
    std::vector<double> row_re(w), row_im(w);
    for (int r = 0; r < h; ++r) {
        std::copy(re.begin() + static_cast<size_t>(r) * w, re.begin() + static_cast<size_t>(r + 1) * w, row_re.begin());
        std::copy(im.begin() + static_cast<size_t>(r) * w, im.begin() + static_cast<size_t>(r + 1) * w, row_im.begin());
        fft_radix2(row_re, row_im, inverse);
        std::copy(row_re.begin(), row_re.end(), re.begin() + static_cast<size_t>(r) * w);
        std::copy(row_im.begin(), row_im.end(), im.begin() + static_cast<size_t>(r) * w);
    }
    std::vector<double> col_re(h), col_im(h);
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) {
            col_re[r] = re[static_cast<size_t>(r) * w + c];
            col_im[r] = im[static_cast<size_t>(r) * w + c];
        }
        fft_radix2(col_re, col_im, inverse);
        for (int r = 0; r < h; ++r) {
            re[static_cast<size_t>(r) * w + c] = col_re[r];
            im[static_cast<size_t>(r) * w + c] = col_im[r];
        }
    }
}

}  // namespace

void fft_radix2(std::vector<double>& re, std::vector<double>& im, bool inverse) {
    const int n = static_cast<int>(re.size());
    if (!is_pow2(n)) throw DimensionError("fft_radix2 length must be a power of two");
    if (n == 1) return;
    // bit reversal
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / len;
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (int i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (int k = 0; k < len / 2; ++k) {
                const int a = i + k, b = i + k + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

ComplexGrid fft2d(const Tensor& x) {
    if (x.ndim() != 3) throw DimensionError("fft2d expects C x H x W");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    require_pow2_extents(h, w, "fft2d");
    ComplexGrid g;
    g.channels = c;
    g.height = h;
    g.half_width = w / 2 + 1;
    g.full_width = w;
    g.re.assign(static_cast<size_t>(c) * h * g.half_width, 0.0);
    g.im.assign(static_cast<size_t>(c) * h * g.half_width, 0.0);

    std::vector<double> re(static_cast<size_t>(h) * w), im(static_cast<size_t>(h) * w);
    const auto& xv = x.data();
    for (int ch = 0; ch < c; ++ch) {
        std::copy(xv.begin() + static_cast<size_t>(ch) * h * w,
                  xv.begin() + static_cast<size_t>(ch + 1) * h * w, re.begin());
        std::fill(im.begin(), im.end(), 0.0);
        fft2_plane(re, im, h, w, false);
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < g.half_width; ++v) {
                g.re[g.idx(ch, u, v)] = re[static_cast<size_t>(u) * w + v];
                g.im[g.idx(ch, u, v)] = im[static_cast<size_t>(u) * w + v];
            }
    }
    return g;
}

Tensor ifft2d(const ComplexGrid& g) {
    const int c = g.channels, h = g.height, w = g.full_width;
    require_pow2_extents(h, w, "ifft2d");
    Tensor out = Tensor::zeros({c, h, w});
    auto& y = out.mutable_data();
    std::vector<double> re(static_cast<size_t>(h) * w), im(static_cast<size_t>(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < g.half_width; ++v) {
                re[static_cast<size_t>(u) * w + v] = g.re[g.idx(ch, u, v)];
                im[static_cast<size_t>(u) * w + v] = g.im[g.idx(ch, u, v)];
            }
        // Hermitian extension of the missing columns.
        for (int u = 0; u < h; ++u)
            for (int v = g.half_width; v < w; ++v) {
                const int su = (h - u) % h, sv = w - v;
                re[static_cast<size_t>(u) * w + v] = re[static_cast<size_t>(su) * w + sv];
                im[static_cast<size_t>(u) * w + v] = -im[static_cast<size_t>(su) * w + sv];
            }
        fft2_plane(re, im, h, w, true);
        const double inv = 1.0 / (static_cast<double>(h) * w);
        for (int i = 0; i < h * w; ++i) y[static_cast<size_t>(ch) * h * w + i] = re[i] * inv;
    }
    return out;
}

double spectral_energy(const ComplexGrid& g) {
    double acc = 0.0;
    for (int c = 0; c < g.channels; ++c)
        for (int u = 0; u < g.height; ++u)
            for (int v = 0; v < g.half_width; ++v) {
                const size_t i = g.idx(c, u, v);
                const double e = g.re[i] * g.re[i] + g.im[i] * g.im[i];
                const bool self_conjugate_col = (v == 0) || (v == g.full_width / 2);
                acc += self_conjugate_col ? e : 2.0 * e;
            }
    return acc;
}

namespace {

// Adjoint of the real->half-spectrum map: zero-pad the half-grid cotangent
// into a full complex grid, apply the unnormalized inverse-exponent
// transform, keep the real part.
void rfft2_stack_backward(const std::vector<double>& gy, std::vector<double>& gx, int c, int h,
                          int w) {
    const int hw = w / 2 + 1;
    std::vector<double> re(static_cast<size_t>(h) * w), im(static_cast<size_t>(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < hw; ++v) {
                re[static_cast<size_t>(u) * w + v] = gy[(static_cast<size_t>(ch) * h + u) * hw + v];
                im[static_cast<size_t>(u) * w + v] =
                    gy[(static_cast<size_t>(c + ch) * h + u) * hw + v];
            }
        fft2_plane(re, im, h, w, true);
        for (int i = 0; i < h * w; ++i) gx[static_cast<size_t>(ch) * h * w + i] += re[i];
    }
}

// Adjoint of the half-spectrum->real map: forward transform of the real
// cotangent scaled by 1/(HW), then fold the Hermitian-extended bins back
// onto their sources with conjugation.
void irfft2_unstack_backward(const std::vector<double>& gx, std::vector<double>& gy, int c, int h,
                             int w) {
    const int hw = w / 2 + 1;
    std::vector<double> re(static_cast<size_t>(h) * w), im(static_cast<size_t>(h) * w);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h * w; ++i) {
            re[i] = gx[static_cast<size_t>(ch) * h * w + i];
            im[i] = 0.0;
        }
        fft2_plane(re, im, h, w, false);
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < hw; ++v) {
                double gr = re[static_cast<size_t>(u) * w + v];
                double gi = im[static_cast<size_t>(u) * w + v];
                if (v != 0 && v != w / 2) {
                    const int su = (h - u) % h, sv = w - v;
                    gr += re[static_cast<size_t>(su) * w + sv];
                    gi -= im[static_cast<size_t>(su) * w + sv];
                }
                gy[(static_cast<size_t>(ch) * h + u) * hw + v] += gr * inv;
                gy[(static_cast<size_t>(c + ch) * h + u) * hw + v] += gi * inv;
            }
    }
}

}  // namespace

Tensor rfft2_stack(Tape* tp, const Tensor& x) {
    if (x.ndim() != 3) throw DimensionError("rfft2_stack expects C x H x W");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    ComplexGrid g = fft2d(x);
    const int hw = g.half_width;
    Tensor out = Tensor::zeros({2 * c, h, hw});
    auto& y = out.mutable_data();
    for (int ch = 0; ch < c; ++ch)
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < hw; ++v) {
                y[(static_cast<size_t>(ch) * h + u) * hw + v] = g.re[g.idx(ch, u, v)];
                y[(static_cast<size_t>(c + ch) * h + u) * hw + v] = g.im[g.idx(ch, u, v)];
            }
    if (tp) {
        tp->record({"rfft2_stack",
                    {x},
                    out,
                    [c, h, w](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        rfft2_stack_backward(*g, r.inputs[0].grad_acc(), c, h, w);
                    }});
    }
    return out;
}

Tensor irfft2_unstack(Tape* tp, const Tensor& yin, int full_w) {
    if (yin.ndim() != 3 || yin.extent(0) % 2 != 0)
        throw DimensionError("irfft2_unstack expects 2C x H x (W/2+1)");
    const int c = yin.extent(0) / 2, h = yin.extent(1), hw = yin.extent(2);
    if (hw != full_w / 2 + 1)
        throw DimensionError("irfft2_unstack: stored width " + std::to_string(hw) +
                             " inconsistent with full width " + std::to_string(full_w));
    ComplexGrid g;
    g.channels = c;
    g.height = h;
    g.half_width = hw;
    g.full_width = full_w;
    g.re.resize(static_cast<size_t>(c) * h * hw);
    g.im.resize(static_cast<size_t>(c) * h * hw);
    const auto& yv = yin.data();
    for (int ch = 0; ch < c; ++ch)
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < hw; ++v) {
                g.re[g.idx(ch, u, v)] = yv[(static_cast<size_t>(ch) * h + u) * hw + v];
                g.im[g.idx(ch, u, v)] = yv[(static_cast<size_t>(c + ch) * h + u) * hw + v];
            }
    Tensor out = ifft2d(g);
    if (tp) {
        tp->record({"irfft2_unstack",
                    {yin},
                    out,
                    [c, h, full_w](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        irfft2_unstack_backward(*g, r.inputs[0].grad_acc(), c, h, full_w);
                    }});
    }
    return out;
}

}  // namespace dwtnet
