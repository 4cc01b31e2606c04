#include "model.hpp"

#include <algorithm>
#include <cmath>

namespace dwtnet {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

void ModelConfig::validate() const {
    if (!is_pow2(image_size) || image_size < 16)
        throw ConfigError("image_size must be a power of two >= 16, got " +
                          std::to_string(image_size));
    if (base_channels < 8 || base_channels % 8 != 0)
        throw ConfigError("base_channels must be a positive multiple of 8 (FFC channel split)");
    if (dwt_blocks < 1) throw ConfigError("dwt_blocks must be >= 1");
    if (code_dim != bottleneck_channels())
        throw ConfigError("code_dim must equal 4*base_channels = " +
                          std::to_string(bottleneck_channels()) + ", got " +
                          std::to_string(code_dim));
    if (codebook_size < 1) throw ConfigError("codebook_size must be >= 1");
    if (heads < 1 || bottleneck_channels() % heads != 0)
        throw ConfigError("heads must divide the bottleneck width " +
                          std::to_string(bottleneck_channels()));
    if (patch_rate < 1 || dwt_site() % patch_rate != 0)
        throw ConfigError("patch_rate must divide the DWT site extent " +
                          std::to_string(dwt_site()));
    if (lambda_c <= 0.0) throw ConfigError("lambda_c must be positive");
    if (knn_k < 1) throw ConfigError("knn_k must be >= 1");
    if (ffc_global_ratio <= 0.0 || ffc_global_ratio >= 1.0)
        throw ConfigError("ffc_global_ratio must be in (0, 1)");
    if (latent_grid() < 2) throw ConfigError("image too small for the latent grid");
}

MaskSpec MaskSpec::parse(const std::string& text) {
    MaskSpec spec;
    if (text == "center") {
        spec.kind = Kind::Center;
        spec.coverage = 0.25;
        return spec;
    }
    if (text.rfind("rects:", 0) == 0) {
        spec.kind = Kind::RandomRects;
        try {
            spec.coverage = std::stod(text.substr(6));
        } catch (const std::exception&) {
            throw ConfigError("bad mask fraction in '" + text + "'");
        }
        return spec;
    }
    throw ConfigError("unknown mask spec '" + text + "' (expected center or rects:FRACTION)");
}

std::string MaskSpec::str() const {
    if (kind == Kind::Center) return "center";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "rects:%g", coverage);
    return buf;
}

Tensor make_mask(const MaskSpec& spec, int h, int w, std::uint64_t seed) {
    if (spec.coverage > 0.9)
        throw ConfigError("mask coverage target > 0.9 is not learnable at this scale");
    Tensor m = Tensor::full({1, h, w}, 1.0);
    auto& d = m.mutable_data();
    if (spec.kind == MaskSpec::Kind::Center) {
        for (int i = h / 4; i < h / 4 + h / 2; ++i)
            for (int j = w / 4; j < w / 4 + w / 2; ++j) d[static_cast<size_t>(i) * w + j] = 0.0;
        return m;
    }
    if (spec.coverage <= 0.0) return m;  // nothing missing

    Rng rng(derive_seed(seed, "mask-rects"));
    const double lo = std::max(spec.coverage - 0.05, 0.0);
    const double hi = spec.coverage + 0.05;
    int max_side = std::max(2, h / 3);
    auto coverage = [&] {
        double s = 0.0;
        for (double v : d) s += v;
        return 1.0 - s / (static_cast<double>(h) * w);
    };
    for (int attempt = 0; attempt < 10000; ++attempt) {
        if (coverage() >= lo) break;
        const int rh = static_cast<int>(rng.uniform_int(2, max_side));
        const int rw = static_cast<int>(rng.uniform_int(2, max_side));
        const int ri = static_cast<int>(rng.uniform_int(0, h - rh));
        const int rj = static_cast<int>(rng.uniform_int(0, w - rw));
        std::vector<double> saved;
        saved.reserve(static_cast<size_t>(rh) * rw);
        for (int i = ri; i < ri + rh; ++i)
            for (int j = rj; j < rj + rw; ++j) {
                saved.push_back(d[static_cast<size_t>(i) * w + j]);
                d[static_cast<size_t>(i) * w + j] = 0.0;
            }
        if (coverage() > hi) {
            // undo the overshooting rectangle and try smaller ones
            size_t idx = 0;
            for (int i = ri; i < ri + rh; ++i)
                for (int j = rj; j < rj + rw; ++j)
                    d[static_cast<size_t>(i) * w + j] = saved[idx++];
            max_side = std::max(2, max_side - 1);
        }
    }
    const double cov = coverage();
    if (cov < lo || cov > hi)
        throw NumericError("mask generation failed to reach coverage target " +
                           std::to_string(spec.coverage));
    return m;
}

double mask_coverage(const Tensor& m) {
    double s = 0.0;
    for (double v : m.data()) s += v;
    return 1.0 - s / m.numel();
}

Codebook::Codebook(int k, int c, Rng& rng)
    : vectors(gaussian_init({k, c}, 0.2, rng)),
      usage(Tensor::zeros({k})),
      ema_count(Tensor::zeros({k})),
      ema_sum(Tensor::zeros({k, c})) {}

std::vector<int> Codebook::nearest(const Tensor& f) const {
    if (f.ndim() != 2 || f.extent(1) != dim())
        throw DimensionError("Codebook::nearest: features " + shape_str(f.shape()) +
                             " vs code dim " + std::to_string(dim()));
    if (size() < 1) throw ConfigError("empty codebook");
    const int n = f.extent(0), k = size(), c = dim();
    const auto& fv = f.data();
    const auto& vv = vectors.data();
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) {
        double best = 1e300;
        int best_j = 0;
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int t = 0; t < c; ++t) {
                const double dd = fv[static_cast<size_t>(i) * c + t] - vv[static_cast<size_t>(j) * c + t];
                acc += dd * dd;
            }
            if (acc < best) {
                best = acc;
                best_j = j;
            }
        }
        idx[i] = best_j;
    }
    return idx;
}

void Codebook::ema_update(const Tensor& f, const std::vector<int>& idx) {
    const int c = dim();
    auto& counts = ema_count.mutable_data();
    auto& sums = ema_sum.mutable_data();
    const auto& fv = f.data();
    for (auto& v : counts) v *= decay;
    for (auto& v : sums) v *= decay;
    for (size_t i = 0; i < idx.size(); ++i) {
        counts[idx[i]] += 1.0 - decay;
        for (int t = 0; t < c; ++t)
            sums[static_cast<size_t>(idx[i]) * c + t] += (1.0 - decay) * fv[i * c + t];
    }
    auto& vv = vectors.mutable_data();
    for (int j = 0; j < size(); ++j) {
        if (counts[j] < 1e-6) continue;  // untouched codes keep their position
        for (int t = 0; t < c; ++t)
            vv[static_cast<size_t>(j) * c + t] = sums[static_cast<size_t>(j) * c + t] / counts[j];
    }
}

void Codebook::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".vectors", vectors);
    out.emplace_back(prefix + ".usage", usage);
    out.emplace_back(prefix + ".ema_count", ema_count);
    out.emplace_back(prefix + ".ema_sum", ema_sum);
}

QuantizeResult quantize(Tape* tp, const Tensor& f, Codebook& cb) {
    QuantizeResult r;
    r.indices = cb.nearest(f);
    {
        auto& usage = cb.usage.mutable_data();
        for (int j : r.indices) usage[j] += 1.0;
    }
    r.quantized = gather_rows(nullptr, cb.vectors.detached(), r.indices);
    // decoder input: values of q, gradients of f
    r.ste = add(tp, f, stop_gradient(tp, sub(tp, r.quantized, f)));
    Tensor diff = sub(tp, r.quantized, f);  // quantized is constant: sg[q] - f
    r.commit = mul_scalar(tp, sum_all(tp, square(tp, diff)), 1.0 / f.extent(0));
    return r;
}

MalPrior::MalPrior(int k, int n, int embed_, int heads_, int depth, Rng& rng)
    : codebook_size(k), positions(n), embed(embed_), heads(heads_) {
    if (embed % heads != 0) throw ConfigError("MalPrior: heads must divide embed dim");
    embeddings = gaussian_init({k + 1, embed}, 0.2, rng);
    pos_embed = gaussian_init({n, embed}, 0.2, rng);
    const int dk = embed / heads;
    for (int b = 0; b < depth; ++b) {
        Block blk;
        for (int h = 0; h < heads; ++h) {
            blk.w_q.emplace_back(embed, dk, rng, false);
            blk.w_k.emplace_back(embed, dk, rng, false);
            blk.w_v.emplace_back(embed, dk, rng, false);
        }
        blk.out_proj = Linear(embed, embed, rng, false);
        blk.mlp_in = Linear(embed, 2 * embed, rng);
        blk.mlp_out = Linear(2 * embed, embed, rng);
        blocks.push_back(std::move(blk));
    }
    head = Linear(embed, k, rng);
    std::fill(head.w.mutable_data().begin(), head.w.mutable_data().end(), 0.0);
}

Tensor MalPrior::logits(Tape* tp, const std::vector<int>& tokens,
                        const std::vector<bool>& masked) const {
    if (static_cast<int>(tokens.size()) != positions ||
        static_cast<int>(masked.size()) != positions)
        throw DimensionError("MalPrior::logits: sequence length mismatch");
    std::vector<int> rows(positions);
    for (int i = 0; i < positions; ++i) {
        if (!masked[i] && (tokens[i] < 0 || tokens[i] >= codebook_size))
            throw DimensionError("MalPrior::logits: token index out of range");
        rows[i] = masked[i] ? codebook_size : tokens[i];
    }
    Tensor h = add(tp, gather_rows(tp, embeddings, rows), pos_embed);

    // additive causal bias: position i attends to j <= i
    Tensor causal = Tensor::zeros({positions, positions});
    for (int i = 0; i < positions; ++i)
        for (int j = i + 1; j < positions; ++j)
            causal.mutable_data()[static_cast<size_t>(i) * positions + j] = -1e30;

    const int dk = embed / heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    for (const auto& blk : blocks) {
        std::vector<Tensor> outs;
        for (int hd = 0; hd < heads; ++hd) {
            Tensor q = blk.w_q[hd].forward(tp, h);
            Tensor k = blk.w_k[hd].forward(tp, h);
            Tensor v = blk.w_v[hd].forward(tp, h);
            Tensor scores = mul_scalar(tp, matmul(tp, q, transpose2d(tp, k)), inv_sqrt_dk);
            Tensor attn = softmax(tp, add(tp, scores, causal), 1);
            outs.push_back(matmul(tp, attn, v));
        }
        Tensor cat = heads == 1 ? outs[0] : concat(tp, outs, 1);
        h = add(tp, blk.out_proj.forward(tp, cat), h);
        Tensor m = blk.mlp_out.forward(tp, gelu(tp, blk.mlp_in.forward(tp, h)));
        h = add(tp, m, h);
    }
    return head.forward(tp, h);
}

Tensor MalPrior::loss(Tape* tp, const std::vector<int>& indices,
                      const std::vector<int>& pi) const {
    if (pi.empty()) throw UsageError("MalPrior::loss: no masked positions");
    std::vector<bool> masked(positions, false);
    for (int p : pi) {
        if (p < 0 || p >= positions) throw UsageError("MalPrior::loss: position out of range");
        masked[p] = true;
    }
    Tensor lg = logits(tp, indices, masked);
    std::vector<int> targets;
    targets.reserve(pi.size());
    for (int p : pi) targets.push_back(indices[p]);
    return cross_entropy_rows(tp, gather_rows(tp, lg, pi), targets);
}

std::vector<int> MalPrior::sample(const std::vector<int>& indices, const std::vector<int>& pi,
                                  double temperature, Rng& rng) const {
    std::vector<int> filled = indices;
    std::vector<int> order = pi;
    std::sort(order.begin(), order.end());
    std::vector<bool> masked(positions, false);
    for (int p : order) masked[p] = true;

    for (int p : order) {
        Tensor lg = logits(nullptr, filled, masked);
        const double* row = &lg.data()[static_cast<size_t>(p) * codebook_size];
        int pick = 0;
        if (temperature <= 0.0) {
            for (int j = 1; j < codebook_size; ++j)
                if (row[j] > row[pick]) pick = j;  // strict: ties keep the lower index
        } else {
            double mx = row[0];
            for (int j = 1; j < codebook_size; ++j) mx = std::max(mx, row[j]);
            std::vector<double> p_cdf(codebook_size);
            double acc = 0.0;
            for (int j = 0; j < codebook_size; ++j) {
                acc += std::exp((row[j] - mx) / temperature);
                p_cdf[j] = acc;
            }
            const double u = rng.uniform(0.0, acc);
            pick = static_cast<int>(std::lower_bound(p_cdf.begin(), p_cdf.end(), u) -
                                    p_cdf.begin());
            pick = std::min(pick, codebook_size - 1);
        }
        filled[p] = pick;
        masked[p] = false;  // later positions condition on the sampled code
    }
    return filled;
}

std::vector<Tensor> MalPrior::params() const {
    std::vector<Tensor> out = {embeddings, pos_embed};
    for (const auto& blk : blocks) {
        for (int h = 0; h < heads; ++h) {
            out.push_back(blk.w_q[h].w);
            out.push_back(blk.w_k[h].w);
            out.push_back(blk.w_v[h].w);
        }
        out.push_back(blk.out_proj.w);
        out.push_back(blk.mlp_in.w);
        out.push_back(blk.mlp_in.b);
        out.push_back(blk.mlp_out.w);
        out.push_back(blk.mlp_out.b);
    }
    out.push_back(head.w);
    out.push_back(head.b);
    return out;
}

void MalPrior::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".embeddings", embeddings);
    out.emplace_back(prefix + ".pos", pos_embed);
    for (size_t b = 0; b < blocks.size(); ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        for (int h = 0; h < heads; ++h) {
            blocks[b].w_q[h].collect(out, bp + ".q" + std::to_string(h));
            blocks[b].w_k[h].collect(out, bp + ".k" + std::to_string(h));
            blocks[b].w_v[h].collect(out, bp + ".v" + std::to_string(h));
        }
        blocks[b].out_proj.collect(out, bp + ".out");
        blocks[b].mlp_in.collect(out, bp + ".mlp_in");
        blocks[b].mlp_out.collect(out, bp + ".mlp_out");
    }
    head.collect(out, prefix + ".head");
}

ResBlockDown::ResBlockDown(int cin, int cout, Rng& rng)
    : conv1(cin, cout, 3, 1, 1, rng),
      conv2(cout, cout, 3, 1, 1, rng),
      skip(cin, cout, 1, 1, 0, rng) {}

Tensor ResBlockDown::forward(Tape* tp, const Tensor& x) const {
    Tensor h = lrelu(tp, conv1.forward(tp, x), 0.1);
    h = lrelu(tp, conv2.forward(tp, h), 0.1);
    h = avg_pool2d(tp, h, 2);
    Tensor s = skip.forward(tp, avg_pool2d(tp, x, 2));
    return add(tp, h, s);
}

void ResBlockDown::collect(NamedTensors& out, const std::string& prefix) const {
    conv1.collect(out, prefix + ".conv1");
    conv2.collect(out, prefix + ".conv2");
    skip.collect(out, prefix + ".skip");
}

ResBlockUp::ResBlockUp(int cin, int cout, Rng& rng)
    : conv1(cin, cout, 3, 1, 1, rng),
      conv2(cout, cout, 3, 1, 1, rng),
      skip(cin, cout, 1, 1, 0, rng) {}

Tensor ResBlockUp::forward(Tape* tp, const Tensor& x) const {
    Tensor u = upsample_nearest(tp, x, 2);
    Tensor h = lrelu(tp, conv1.forward(tp, u), 0.1);
    h = lrelu(tp, conv2.forward(tp, h), 0.1);
    Tensor s = skip.forward(tp, u);
    return add(tp, h, s);
}

void ResBlockUp::collect(NamedTensors& out, const std::string& prefix) const {
    conv1.collect(out, prefix + ".conv1");
    conv2.collect(out, prefix + ".conv2");
    skip.collect(out, prefix + ".skip");
}

DwtNetModel::DwtNetModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.seed, "model-init"));
    const int ch = cfg_.base_channels;
    const int bc = cfg_.bottleneck_channels();

    stem_ = Conv2d(4, ch, 3, 1, 1, rng);
    down1_ = ResBlockDown(ch, 2 * ch, rng);
    down2_ = ResBlockDown(2 * ch, bc, rng);
    for (int b = 0; b < cfg_.dwt_blocks; ++b)
        enc_dwt_.emplace_back(bc, cfg_.heads, cfg_.patch_rate, cfg_.lambda_c, rng, cfg_.knn_k);
    down3_ = ResBlockDown(bc, bc, rng);

    up1_ = ResBlockUp(bc, bc, rng);
    for (int b = 0; b < cfg_.dwt_blocks; ++b)
        dec_dwt_.emplace_back(bc, cfg_.heads, cfg_.patch_rate, cfg_.lambda_c, rng, cfg_.knn_k);
    fuse8_ = ResFfc(bc, cfg_.ffc_global_ratio, rng);
    up2_ = ResBlockUp(bc, 2 * ch, rng);
    fuse16_ = ResFfc(2 * ch, cfg_.ffc_global_ratio, rng);
    up3_ = ResBlockUp(2 * ch, ch, rng);
    fuse32_ = ResFfc(ch, cfg_.ffc_global_ratio, rng);
    out_conv_ = Conv2d(ch, 3, 3, 1, 1, rng);
    noise_log_sigma_ = Tensor::full({bc}, -2.0);

    codebook_ = Codebook(cfg_.codebook_size, cfg_.code_dim, rng);
    const int n = cfg_.latent_grid() * cfg_.latent_grid();
    prior_ = MalPrior(cfg_.codebook_size, n, 32, 2, 2, rng);
}

DwtNetModel::Encoded DwtNetModel::encode(Tape* tp, const Tensor& x_in) const {
    const int s = cfg_.image_size;
    if (x_in.ndim() != 3 || x_in.extent(0) != 4 || x_in.extent(1) != s || x_in.extent(2) != s)
        throw DimensionError("encode expects 4 x " + std::to_string(s) + " x " +
                             std::to_string(s) + ", got " + shape_str(x_in.shape()));
    Encoded e;
    Tensor h = lrelu(tp, stem_.forward(tp, x_in), 0.1);
    e.skip32 = h;
    h = down1_.forward(tp, h);
    e.skip16 = h;
    h = down2_.forward(tp, h);
    for (const auto& blk : enc_dwt_) h = blk.forward(tp, h);
    e.skip8 = h;
    h = down3_.forward(tp, h);
    e.tokens = tokens_from_map(tp, h);
    return e;
}

Tensor DwtNetModel::decode(Tape* tp, const Tensor& latent_tokens, const Encoded& skips,
                           Rng* noise_rng) const {
    const int grid = cfg_.latent_grid();
    Tensor h = map_from_tokens(tp, latent_tokens, grid, grid);
    if (cfg_.decoder_noise && noise_rng) {
        // diagonal-covariance latent noise, per-channel learned scale
        Tensor noise = Tensor::zeros(h.shape());
        for (auto& v : noise.mutable_data()) v = noise_rng->normal();
        Tensor sigma_map = upsample_nearest(
            tp, reshape(tp, exp_op(tp, noise_log_sigma_), {h.extent(0), 1, 1}), grid);
        h = add(tp, h, mul(tp, noise, sigma_map));
    }
    h = up1_.forward(tp, h);
    for (const auto& blk : dec_dwt_) h = blk.forward(tp, h);
    h = fuse8_.forward(tp, h, skips.skip8);
    h = up2_.forward(tp, h);
    h = fuse16_.forward(tp, h, skips.skip16);
    h = up3_.forward(tp, h);
    h = fuse32_.forward(tp, h, skips.skip32);
    return tanh_op(tp, out_conv_.forward(tp, h));
}

DwtNetModel::TrainForward DwtNetModel::forward_train(Tape* tp, const Tensor& image_pm1,
                                                     const Tensor& mask, Rng* noise_rng) {
    Tensor mask3 = broadcast_mask3(tp, mask);
    Tensor observed = mul(tp, image_pm1, mask3);
    Tensor x_in = concat(tp, {observed, mask}, 0);
    TrainForward f;
    f.enc = encode(tp, x_in);
    f.q = quantize(tp, f.enc.tokens, codebook_);
    f.prediction = decode(tp, f.q.ste, f.enc, noise_rng);
    return f;
}

std::vector<int> DwtNetModel::masked_token_positions(const Tensor& mask) const {
    const int s = cfg_.image_size;
    if (mask.numel() != s * s) throw DimensionError("mask extent mismatch");
    const int grid = cfg_.latent_grid();
    const int cell = s / grid;
    std::vector<int> pi;
    for (int gi = 0; gi < grid; ++gi)
        for (int gj = 0; gj < grid; ++gj) {
            bool any_missing = false;
            for (int i = gi * cell; i < (gi + 1) * cell && !any_missing; ++i)
                for (int j = gj * cell; j < (gj + 1) * cell; ++j)
                    if (mask.data()[static_cast<size_t>(i) * s + j] == 0.0) {
                        any_missing = true;
                        break;
                    }
            if (any_missing) pi.push_back(gi * grid + gj);
        }
    return pi;
}

Tensor DwtNetModel::inpaint(const Tensor& x_m_pm1, const Tensor& mask, double temperature,
                            Rng& rng) {
    const int s = cfg_.image_size;
    if (x_m_pm1.ndim() != 3 || x_m_pm1.extent(0) != 3 || x_m_pm1.extent(1) != s ||
        x_m_pm1.extent(2) != s)
        throw DimensionError("inpaint expects a 3 x " + std::to_string(s) + " x " +
                             std::to_string(s) + " image, got " + shape_str(x_m_pm1.shape()));

    Tensor mask3 = broadcast_mask3(nullptr, mask);
    Tensor observed = mul(nullptr, x_m_pm1, mask3);
    Tensor x_in = concat(nullptr, {observed, mask}, 0);

    Encoded enc = encode(nullptr, x_in);
    std::vector<int> indices = codebook_.nearest(enc.tokens);
    {
        auto& usage = codebook_.usage.mutable_data();
        for (int j : indices) usage[j] += 1.0;
    }
    std::vector<int> pi = masked_token_positions(mask);
    if (!pi.empty()) indices = prior_.sample(indices, pi, temperature, rng);

    Tensor latent = gather_rows(nullptr, codebook_.vectors.detached(), indices);
    Rng noise_rng = rng.fork("decoder-noise");
    Tensor decoded = decode(nullptr, latent, enc, cfg_.decoder_noise ? &noise_rng : nullptr);
    return composite_by_mask(nullptr, mask, x_m_pm1, decoded);
}

std::vector<Tensor> DwtNetModel::generator_params() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_tensors()) {
        if (name.rfind("codebook.", 0) == 0 || name.rfind("prior.", 0) == 0) continue;
        if (name == "dec.noise_log_sigma" && !cfg_.decoder_noise) continue;
        out.push_back(t);
    }
    return out;
}

std::vector<Tensor> DwtNetModel::rescalable_conv_weights() const {
    // the 3x3/1x1 conv weights of the residual blocks; stem and output conv
    // keep their own scale
    std::vector<Tensor> out;
    for (const auto* blk : {&down1_, &down2_, &down3_}) {
        out.push_back(blk->conv1.w);
        out.push_back(blk->conv2.w);
        out.push_back(blk->skip.w);
    }
    for (const auto* blk : {&up1_, &up2_, &up3_}) {
        out.push_back(blk->conv1.w);
        out.push_back(blk->conv2.w);
        out.push_back(blk->skip.w);
    }
    return out;
}

NamedTensors DwtNetModel::named_tensors() const {
    NamedTensors out;
    stem_.collect(out, "enc.stem");
    down1_.collect(out, "enc.down1");
    down2_.collect(out, "enc.down2");
    for (size_t b = 0; b < enc_dwt_.size(); ++b)
        enc_dwt_[b].collect(out, "dwt.enc" + std::to_string(b));
    down3_.collect(out, "enc.down3");
    up1_.collect(out, "dec.up1");
    for (size_t b = 0; b < dec_dwt_.size(); ++b)
        dec_dwt_[b].collect(out, "dwt.dec" + std::to_string(b));
    fuse8_.collect(out, "ffc.fuse8");
    up2_.collect(out, "dec.up2");
    fuse16_.collect(out, "ffc.fuse16");
    up3_.collect(out, "dec.up3");
    fuse32_.collect(out, "ffc.fuse32");
    out_conv_.collect(out, "dec.out");
    out.emplace_back("dec.noise_log_sigma", noise_log_sigma_);
    codebook_.collect(out, "codebook");
    prior_.collect(out, "prior");
    return out;
}

void DwtNetModel::save(const std::string& path) const { save_checkpoint(path, named_tensors()); }

void DwtNetModel::load(const std::string& path) {
    apply_named_tensors(named_tensors(), load_checkpoint(path));
}

long DwtNetModel::parameter_count() const {
    long n = 0;
    for (const auto& [name, t] : named_tensors()) n += t.numel();
    return n;
}

Tensor broadcast_mask3(Tape* tp, const Tensor& mask) {
    if (mask.ndim() != 3 || mask.extent(0) != 1)
        throw DimensionError("mask must be 1 x H x W, got " + shape_str(mask.shape()));
    return concat(tp, {mask, mask, mask}, 0);
}

Tensor composite_by_mask(Tape* tp, const Tensor& mask, const Tensor& observed,
                         const Tensor& filled) {
    if (observed.shape() != filled.shape())
        throw DimensionError("composite shape mismatch: " + shape_str(observed.shape()) + " vs " +
                             shape_str(filled.shape()));
    Tensor m3 = broadcast_mask3(tp, mask);
    Tensor inv = sub_from_scalar(tp, 1.0, m3);
    return add(tp, mul(tp, observed, m3), mul(tp, filled, inv));
}

}  // namespace dwtnet
