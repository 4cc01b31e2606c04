#include "normreg.hpp"

#include <cmath>
#include <sstream>

#include "csv.hpp"

namespace dwtnet {

namespace {

// Row-major n x n helpers on raw buffers; the matrices here are small
// (channel-sized), so plain loops are fine.
void mat_mul(const std::vector<double>& a, const std::vector<double>& b, std::vector<double>& out,
             int n) {
    std::fill(out.begin(), out.end(), 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const double av = a[static_cast<size_t>(i) * n + k];
            if (av == 0.0) continue;
            const double* brow = &b[static_cast<size_t>(k) * n];
            double* orow = &out[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
}

double frob_norm(const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

}  // namespace

SqrtResult newton_schulz_sqrt(const Tensor& a, int max_iters, double tol) {
    if (a.ndim() != 2 || a.extent(0) != a.extent(1))
        throw DimensionError("newton_schulz_sqrt expects a square matrix");
    const int n = a.extent(0);
    const auto& av = a.data();

    double scale_probe = 0.0, asym = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            scale_probe = std::max(scale_probe, std::fabs(av[static_cast<size_t>(i) * n + j]));
            asym = std::max(asym, std::fabs(av[static_cast<size_t>(i) * n + j] -
                                            av[static_cast<size_t>(j) * n + i]));
        }
    if (scale_probe == 0.0) throw NumericError("newton_schulz_sqrt: zero matrix is not SPD");
    if (asym > 1e-8 * scale_probe)
        throw NumericError("newton_schulz_sqrt: input asymmetry " + std::to_string(asym));

    const double s = frob_norm(av);
    std::vector<double> y(av);
    for (auto& v : y) v /= s;
    std::vector<double> z(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) z[static_cast<size_t>(i) * n + i] = 1.0;

    std::vector<double> zy(static_cast<size_t>(n) * n), t(static_cast<size_t>(n) * n),
        tmp(static_cast<size_t>(n) * n);
    std::vector<double> best_y, best_z;
    double best_residual = 1e300;
    int best_iter = 0;
    // The stop tolerance `tol` is the acceptance bar; the iteration itself is
    // cheap and quadratically convergent, so keep going to (near) machine
    // precision and keep the best iterate. A growing residual means the input
    // was not positive definite.
    for (int it = 0; it < max_iters; ++it) {
        mat_mul(z, y, zy, n);
        // T = (3I - Z Y) / 2
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                t[static_cast<size_t>(i) * n + j] =
                    0.5 * ((i == j ? 3.0 : 0.0) - zy[static_cast<size_t>(i) * n + j]);
        mat_mul(y, t, tmp, n);
        y.swap(tmp);
        mat_mul(t, z, tmp, n);
        z.swap(tmp);

        mat_mul(y, y, tmp, n);  // residual in the scaled domain, ||A/s||_F == 1
        double num = 0.0;
        bool finite = true;
        for (size_t i = 0; i < tmp.size(); ++i) {
            const double d = tmp[i] - av[i] / s;
            if (!std::isfinite(d)) finite = false;
            num += d * d;
        }
        const double residual = std::sqrt(num);
        if (!finite || residual > 4.0 * std::max(best_residual, 1.0)) break;
        if (residual < best_residual) {
            best_residual = residual;
            best_y = y;
            best_z = z;
            best_iter = it + 1;
        }
        if (residual < 1e-13) break;
    }
    if (best_residual >= tol) {
        std::ostringstream os;
        os << "newton_schulz_sqrt did not converge: n=" << n << " best_iter=" << best_iter
           << " residual=" << best_residual << " tol=" << tol
           << " (input may not be positive definite)";
        throw NumericError(os.str());
    }

    const double rs = std::sqrt(s);
    for (auto& v : best_y) v *= rs;
    for (auto& v : best_z) v /= rs;
    return SqrtResult{Tensor::from({n, n}, std::move(best_y)),
                      Tensor::from({n, n}, std::move(best_z)), best_iter, best_residual};
}

double norm_preserve_target(int d, int m) {
    return std::sqrt(static_cast<double>(d) / std::min(d, m));
}

Tensor norm_preserve_rescale(const Tensor& w, int max_iters) {
    const int d = w.extent(0);
    const int m = w.numel() / d;
    const double target = norm_preserve_target(d, m);
    const auto& wv = w.data();

    // Gram matrix on the smaller side, which is almost surely full rank.
    const bool left = d <= m;
    const int n = left ? d : m;
    std::vector<double> gram(static_cast<size_t>(n) * n, 0.0);
    if (left) {
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < m; ++k)
                    acc += wv[static_cast<size_t>(i) * m + k] * wv[static_cast<size_t>(j) * m + k];
                gram[static_cast<size_t>(i) * n + j] = acc;
                gram[static_cast<size_t>(j) * n + i] = acc;
            }
    } else {
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < d; ++k)
                    acc += wv[static_cast<size_t>(k) * m + i] * wv[static_cast<size_t>(k) * m + j];
                gram[static_cast<size_t>(i) * n + j] = acc;
                gram[static_cast<size_t>(j) * n + i] = acc;
            }
    }
    double trace = 0.0;
    for (int i = 0; i < n; ++i) trace += gram[static_cast<size_t>(i) * n + i];
    const double ridge = 1e-9 * std::max(trace / n, 1e-30);
    for (int i = 0; i < n; ++i) gram[static_cast<size_t>(i) * n + i] += ridge;

    SqrtResult r = newton_schulz_sqrt(Tensor::from({n, n}, std::move(gram)), max_iters);
    const auto& z = r.z.data();

    Tensor out = Tensor::zeros(w.shape());
    auto& ov = out.mutable_data();
    if (left) {
        // W' = t * (W W^T)^{-1/2} W
        for (int i = 0; i < d; ++i)
            for (int k = 0; k < d; ++k) {
                const double zv = z[static_cast<size_t>(i) * d + k] * target;
                if (zv == 0.0) continue;
                for (int j = 0; j < m; ++j)
                    ov[static_cast<size_t>(i) * m + j] += zv * wv[static_cast<size_t>(k) * m + j];
            }
    } else {
        // W' = t * W (W^T W)^{-1/2}
        for (int i = 0; i < d; ++i)
            for (int k = 0; k < m; ++k) {
                const double wvv = wv[static_cast<size_t>(i) * m + k] * target;
                if (wvv == 0.0) continue;
                for (int j = 0; j < m; ++j)
                    ov[static_cast<size_t>(i) * m + j] += wvv * z[static_cast<size_t>(k) * m + j];
            }
    }
    return out;
}

void norm_preserve_rescale_inplace(Tensor& w, int max_iters) {
    w.mutable_data() = norm_preserve_rescale(w, max_iters).data();
}

double spectral_norm_estimate(const Tensor& w, int iters) {
    if (iters < 1) throw UsageError("spectral_norm_estimate: iters must be >= 1");
    const int d = w.extent(0);
    const int m = w.numel() / d;
    const auto& wv = w.data();
    // Deterministic start vector with a mild tilt so it is never exactly
    // orthogonal to the leading singular direction of structured matrices.
    std::vector<double> v(m), u(d);
    for (int j = 0; j < m; ++j) v[j] = 1.0 + 1e-3 * j;
    double nrm = frob_norm(v);
    for (auto& x : v) x /= nrm;

    double sigma = 0.0;
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += wv[static_cast<size_t>(i) * m + j] * v[j];
            u[i] = acc;
        }
        nrm = frob_norm(u);
        if (nrm == 0.0) return 0.0;
        for (auto& x : u) x /= nrm;
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int i = 0; i < d; ++i) acc += wv[static_cast<size_t>(i) * m + j] * u[i];
            v[j] = acc;
        }
        sigma = frob_norm(v);
        if (sigma == 0.0) return 0.0;
        for (auto& x : v) x /= sigma;
    }
    return sigma;
}

Tensor spectral_normalize(const Tensor& w, int iters) {
    const double sigma = spectral_norm_estimate(w, iters);
    if (sigma <= 0.0) return w.detached();
    Tensor out = Tensor::from(w.shape(), w.data());
    for (auto& v : out.mutable_data()) v /= sigma;
    return out;
}

void spectral_normalize_inplace(Tensor& w, int iters) {
    const double sigma = spectral_norm_estimate(w, iters);
    if (sigma <= 0.0) return;
    for (auto& v : w.mutable_data()) v /= sigma;
}

ProbeNet make_probe_net(int c, int d, int spatial, const std::vector<bool>& pool_flags,
                        std::uint64_t seed) {
    Rng rng(derive_seed(seed, "probe-net"));
    ProbeNet net;
    net.in_channels = c;
    net.spatial = spatial;
    const int plan[4][3] = {{3, c, d}, {1, d, c}, {3, c, d}, {1, d, c}};
    for (int i = 0; i < 4; ++i) {
        const int k = plan[i][0], cin = plan[i][1], cout = plan[i][2];
        ProbeNet::Layer layer;
        layer.conv = Conv2d(cin, cout, k, 1, k / 2, rng);
        layer.conv.w = gaussian_init({cout, cin, k, k}, 1.0 / std::sqrt(double(cout) * k * k), rng);
        layer.pool = i < static_cast<int>(pool_flags.size()) && pool_flags[i];
        net.layers.push_back(std::move(layer));
    }
    return net;
}

void rescale_probe_net(ProbeNet& net) {
    for (auto& layer : net.layers) norm_preserve_rescale_inplace(layer.conv.w);
}

namespace {

double grad_norm(const Tensor& t) {
    const auto* g = t.grad_if();
    if (!g) return 0.0;
    double s = 0.0;
    for (double v : *g) s += v * v;
    return std::sqrt(s);
}

}  // namespace

std::vector<GradReport> grad_ratio_probe(const ProbeNet& net, int trials, std::uint64_t seed) {
    if (trials < 1) throw UsageError("grad_ratio_probe: trials must be >= 1");
    Rng rng(derive_seed(seed, "probe-trials"));
    const int n_layers = static_cast<int>(net.layers.size());
    std::vector<double> sum_in(n_layers, 0.0), sum_out(n_layers, 0.0);

    for (int trial = 0; trial < trials; ++trial) {
        Tensor x = Tensor::zeros({net.in_channels, net.spatial, net.spatial});
        for (auto& v : x.mutable_data()) v = rng.normal();

        Tape tape;
        std::vector<Tensor> ins(n_layers), outs(n_layers);
        Tensor h = x;
        for (int i = 0; i < n_layers; ++i) {
            ins[i] = h;
            outs[i] = net.layers[i].conv.forward(&tape, h);
            h = lrelu(&tape, outs[i], 0.1);
            if (net.layers[i].pool) h = avg_pool2d(&tape, h, 2);
        }
        Tensor upstream = Tensor::zeros(h.shape());
        for (auto& v : upstream.mutable_data()) v = rng.normal();
        Tensor loss = sum_all(&tape, mul(&tape, h, upstream));
        tape.backward(loss);

        for (int i = 0; i < n_layers; ++i) {
            sum_in[i] += grad_norm(ins[i]);
            sum_out[i] += grad_norm(outs[i]);
        }
    }

    std::vector<GradReport> reports;
    for (int i = 0; i < n_layers; ++i) {
        GradReport r;
        r.layer = i + 1;
        r.cin = net.layers[i].conv.w.extent(1);
        r.cout = net.layers[i].conv.w.extent(0);
        r.pool = net.layers[i].pool;
        r.ratio = sum_in[i] / sum_out[i];
        r.trials = trials;
        reports.push_back(r);
    }
    return reports;
}

std::vector<DriftPoint> grad_ratio_drift(ProbeNet& net, int steps, int probe_every, int trials,
                                         bool with_rescale, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "probe-drift"));
    // Both conditions start norm-preserving; the question is whether training
    // updates pull the ratios away from 1 when the rescale is not reapplied.
    rescale_probe_net(net);
    std::vector<Tensor> params;
    for (auto& layer : net.layers) {
        params.push_back(layer.conv.w);
        params.push_back(layer.conv.b);
    }
    Adam opt(params, 1e-2, 0.0, 0.9);

    std::vector<DriftPoint> points;
    auto snapshot = [&](int step) {
        auto reports = grad_ratio_probe(net, trials, derive_seed(seed, "probe-eval"));
        for (const auto& r : reports) points.push_back({step, r.layer, r.ratio});
    };
    snapshot(0);
    for (int step = 1; step <= steps; ++step) {
        Tensor x = Tensor::zeros({net.in_channels, net.spatial, net.spatial});
        for (auto& v : x.mutable_data()) v = rng.normal();
        Tape tape;
        Tensor h = x;
        for (auto& layer : net.layers) {
            h = lrelu(&tape, layer.conv.forward(&tape, h), 0.1);
            if (layer.pool) h = avg_pool2d(&tape, h, 2);
        }
        Tensor target = Tensor::zeros(h.shape());
        for (auto& v : target.mutable_data()) v = rng.normal();
        Tensor loss = mean_all(&tape, square(&tape, sub(&tape, h, target)));
        tape.backward(loss);
        opt.step();
        if (with_rescale && step % 10 == 0)
            for (auto& layer : net.layers) norm_preserve_rescale_inplace(layer.conv.w);
        if (step % probe_every == 0) snapshot(step);
    }
    return points;
}

void write_grad_reports(const std::string& path, const std::vector<GradReport>& reports) {
    CsvWriter csv(path, {"layer", "c", "d", "pooling", "trial", "ratio"});
    for (const auto& r : reports)
        csv.row({CsvWriter::num(r.layer), CsvWriter::num(r.cin), CsvWriter::num(r.cout),
                 r.pool ? "1" : "0", CsvWriter::num(r.trials), CsvWriter::num(r.ratio)});
}

}  // namespace dwtnet
