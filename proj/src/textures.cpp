#include "textures.hpp"

#include <cmath>

namespace dwtnet {

namespace {

struct Rgb {
    double r, g, b;
};

Rgb random_color(Rng& rng) {
    return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
}

// two palette entries far enough apart that the pattern has real contrast
std::pair<Rgb, Rgb> contrasting_pair(Rng& rng) {
    for (;;) {
        Rgb a = random_color(rng), b = random_color(rng);
        const double sep = std::fabs(a.r - b.r) + std::fabs(a.g - b.g) + std::fabs(a.b - b.b);
        if (sep >= 0.6) return {a, b};
    }
}

void put(Tensor& img, int size, int i, int j, const Rgb& c) {
    auto& d = img.mutable_data();
    d[(0 * size + i) * static_cast<size_t>(size) + j] = c.r;
    d[(1 * size + i) * static_cast<size_t>(size) + j] = c.g;
    d[(2 * size + i) * static_cast<size_t>(size) + j] = c.b;
}

Tensor stripes(int size, Rng& rng) {
    Tensor img = Tensor::zeros({3, size, size});
    const bool horizontal = rng.uniform_int(0, 1) == 0;
    const int band = static_cast<int>(rng.uniform_int(3, 4));
    const int phase = static_cast<int>(rng.uniform_int(0, 2 * band - 1));
    auto [c0, c1] = contrasting_pair(rng);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const int coord = horizontal ? i : j;
            const bool on = ((coord + phase) / band) % 2 == 0;
            put(img, size, i, j, on ? c0 : c1);
        }
    return img;
}

Tensor checkers(int size, Rng& rng) {
    Tensor img = Tensor::zeros({3, size, size});
    const int cell = static_cast<int>(rng.uniform_int(0, 1)) ? 4 : 8;
    const int oi = static_cast<int>(rng.uniform_int(0, cell - 1));
    const int oj = static_cast<int>(rng.uniform_int(0, cell - 1));
    auto [c0, c1] = contrasting_pair(rng);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const bool on = (((i + oi) / cell) + ((j + oj) / cell)) % 2 == 0;
            put(img, size, i, j, on ? c0 : c1);
        }
    return img;
}

Tensor blobs(int size, Rng& rng) {
    Tensor img = Tensor::zeros({3, size, size});
    const Rgb bg = random_color(rng);
    const int count = static_cast<int>(rng.uniform_int(3, 6));
    struct Blob {
        double ci, cj, sigma;
        Rgb color;
    };
    std::vector<Blob> bs;
    for (int b = 0; b < count; ++b)
        bs.push_back({rng.uniform(0, size - 1), rng.uniform(0, size - 1),
                      rng.uniform(2.0, size / 5.0), random_color(rng)});
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            Rgb c = bg;
            for (const auto& b : bs) {
                const double r2 = (i - b.ci) * (i - b.ci) + (j - b.cj) * (j - b.cj);
                const double a = std::exp(-r2 / (2.0 * b.sigma * b.sigma));
                c.r += (b.color.r - bg.r) * a;
                c.g += (b.color.g - bg.g) * a;
                c.b += (b.color.b - bg.b) * a;
            }
            c.r = std::min(1.0, std::max(0.0, c.r));
            c.g = std::min(1.0, std::max(0.0, c.g));
            c.b = std::min(1.0, std::max(0.0, c.b));
            put(img, size, i, j, c);
        }
    return img;
}

}  // namespace

TextureKind texture_kind_from_string(const std::string& s) {
    if (s == "stripes") return TextureKind::Stripes;
    if (s == "checkers") return TextureKind::Checkers;
    if (s == "blobs") return TextureKind::Blobs;
    if (s == "mixed") return TextureKind::Mixed;
    throw ConfigError("unknown texture kind: " + s);
}

Tensor make_texture(TextureKind kind, int size, Rng& rng) {
    if (kind == TextureKind::Mixed) {
        const int pick = static_cast<int>(rng.uniform_int(0, 2));
        kind = pick == 0 ? TextureKind::Stripes
                         : (pick == 1 ? TextureKind::Checkers : TextureKind::Blobs);
    }
    switch (kind) {
        case TextureKind::Stripes: return stripes(size, rng);
        case TextureKind::Checkers: return checkers(size, rng);
        default: return blobs(size, rng);
    }
}

Tensor to_model_range(const Tensor& img01) {
    Tensor out = Tensor::from(img01.shape(), img01.data());
    for (auto& v : out.mutable_data()) v = v * 2.0 - 1.0;
    return out;
}

Tensor to_unit_range(const Tensor& img_pm1) {
    Tensor out = Tensor::from(img_pm1.shape(), img_pm1.data());
    for (auto& v : out.mutable_data()) v = (v + 1.0) * 0.5;
    return out;
}

}  // namespace dwtnet
