#include "nn.hpp"

#include <cmath>
#include <set>

namespace dwtnet {

namespace {

// Modified Gram-Schmidt with one re-orthogonalization pass; rows of g
// (n x m, n <= m) become orthonormal in place.
void orthonormalize_rows(std::vector<double>& g, int n, int m) {
    for (int i = 0; i < n; ++i) {
        double* vi = &g[static_cast<size_t>(i) * m];
        for (int pass = 0; pass < 2; ++pass)
            for (int j = 0; j < i; ++j) {
                const double* vj = &g[static_cast<size_t>(j) * m];
                double dot = 0.0;
                for (int k = 0; k < m; ++k) dot += vi[k] * vj[k];
                for (int k = 0; k < m; ++k) vi[k] -= dot * vj[k];
            }
        double nrm = 0.0;
        for (int k = 0; k < m; ++k) nrm += vi[k] * vi[k];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw NumericError("orthogonal_init: degenerate sample");
        for (int k = 0; k < m; ++k) vi[k] /= nrm;
    }
}

}  // namespace

Tensor orthogonal_init(const Shape& shape, double gain, Rng& rng) {
    const int total = shape_numel(shape);
    const int rows = shape[0];
    const int cols = total / rows;
    std::vector<double> g(static_cast<size_t>(total));
    for (auto& v : g) v = rng.normal();

    if (rows <= cols) {
        orthonormalize_rows(g, rows, cols);
    } else {
        // Orthonormalize columns via the transpose.
        std::vector<double> t(static_cast<size_t>(total));
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) t[static_cast<size_t>(j) * rows + i] = g[static_cast<size_t>(i) * cols + j];
        orthonormalize_rows(t, cols, rows);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) g[static_cast<size_t>(i) * cols + j] = t[static_cast<size_t>(j) * rows + i];
    }
    for (auto& v : g) v *= gain;
    return Tensor::from(shape, std::move(g));
}

Tensor gaussian_init(const Shape& shape, double stddev, Rng& rng) {
    std::vector<double> g(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : g) v = rng.normal(0.0, stddev);
    return Tensor::from(shape, std::move(g));
}

Linear::Linear(int in, int out, Rng& rng, bool bias, double gain)
    : w(orthogonal_init({in, out}, gain, rng)), has_bias(bias) {
    if (bias) b = Tensor::zeros({out});
}

Tensor Linear::forward(Tape* tp, const Tensor& x) const {
    Tensor y = matmul(tp, x, w);
    if (has_bias) y = add_row_bias(tp, y, b);
    return y;
}

void Linear::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    if (has_bias) out.emplace_back(prefix + ".b", b);
}

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng, double gain)
    : w(orthogonal_init({out_ch, in_ch, k, k}, gain, rng)),
      b(Tensor::zeros({out_ch})),
      stride(stride_),
      pad(pad_) {}

Tensor Conv2d::forward(Tape* tp, const Tensor& x) const {
    return add_channel_bias(tp, conv2d(tp, x, w, stride, pad), b);
}

void Conv2d::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].numel(), 0.0);
        v_[i].assign(params_[i].numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t p = 0; p < params_.size(); ++p) {
        const auto* g = params_[p].grad_if();
        if (!g) continue;
        auto& data = params_[p].mutable_data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (size_t i = 0; i < data.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * (*g)[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * (*g)[i] * (*g)[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void apply_named_tensors(const NamedTensors& live, const NamedTensors& loaded) {
    std::set<std::string> seen;
    for (const auto& [name, src] : loaded) {
        const Tensor* dst = find_tensor(live, name);
        if (!dst) throw IoError("checkpoint tensor has no destination: " + name);
        if (dst->shape() != src.shape())
            throw DimensionError("checkpoint shape mismatch for " + name + ": " +
                                 shape_str(src.shape()) + " vs " + shape_str(dst->shape()));
        const_cast<Tensor*>(dst)->mutable_data() = src.data();
        seen.insert(name);
    }
    for (const auto& [name, t] : live)
        if (!seen.count(name)) throw IoError("checkpoint missing tensor: " + name);
}

}  // namespace dwtnet
