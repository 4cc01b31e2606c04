#include "train.hpp"

#include <cmath>
#include <filesystem>

#include "csv.hpp"
#include "image_io.hpp"
#include "normreg.hpp"

namespace dwtnet {

double masked_l1(const Tensor& a_pm1, const Tensor& b_pm1, const Tensor& mask) {
    if (a_pm1.shape() != b_pm1.shape()) throw DimensionError("masked_l1 shape mismatch");
    const int h = a_pm1.extent(1), w = a_pm1.extent(2);
    double acc = 0.0;
    long count = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            if (mask.data()[static_cast<size_t>(i) * w + j] != 0.0) continue;
            for (int c = 0; c < 3; ++c) {
                acc += std::fabs(a_pm1.at({c, i, j}) - b_pm1.at({c, i, j})) * 0.5;
                ++count;
            }
        }
    if (count == 0) throw UsageError("masked_l1: mask has no missing pixels");
    return acc / count;
}

namespace {

// horizontal strip: ground truth | masked input | raw prediction | composite
void write_sample_grid(const std::string& path, const Tensor& x01, const Tensor& mask,
                       const Tensor& pred01, const Tensor& comp01) {
    const int h = x01.extent(1), w = x01.extent(2);
    Tensor grid = Tensor::full({3, h, 4 * w + 6}, 1.0);
    auto blit = [&](const Tensor& img, int x_off) {
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    grid.mutable_data()[(static_cast<size_t>(c) * h + i) * (4 * w + 6) + x_off +
                                        j] = img.at({c, i, j});
    };
    Tensor masked = Tensor::from(x01.shape(), x01.data());
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                if (mask.data()[static_cast<size_t>(i) * w + j] == 0.0)
                    masked.mutable_data()[(static_cast<size_t>(c) * h + i) * w + j] = 0.0;
    blit(x01, 0);
    blit(masked, w + 2);
    blit(pred01, 2 * w + 4);
    blit(comp01, 3 * w + 6);
    write_png_rgb8(path, grid);
}

}  // namespace

TrainStats train_model(DwtNetModel& model, Discriminator& disc, const TrainConfig& tc,
                       const MaskSpec& mask_spec, std::uint64_t seed,
                       const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto& cfg = model.config();
    const TextureKind kind = texture_kind_from_string(tc.texture);

    Rng tex_rng(derive_seed(seed, "textures"));
    Rng noise_rng(derive_seed(seed, "decoder-noise"));
    FeatureExtractor fx(derive_seed(seed, "feature-extractor"));

    Adam opt_g(model.generator_params(), tc.lr, 0.0, 0.9);
    Adam opt_d(disc.params(), tc.lr, 0.0, 0.9);
    Adam opt_p(model.prior_params(), tc.lr_prior, 0.0, 0.9);

    CsvWriter losses_csv(out_dir + "/losses.csv",
                         {"step", "pixel", "grad", "adv_g", "adv_d", "perc", "style", "commit",
                          "mal", "total"});
    CsvWriter metrics_csv(out_dir + "/metrics.csv", {"step", "masked_l1"});

    TrainStats stats;
    const std::string ckpt_path = out_dir + "/model.ckpt";

    if (tc.batch < 1) throw ConfigError("batch must be >= 1");
    const double inv_b = 1.0 / tc.batch;

    for (int step = 1; step <= tc.steps; ++step) {
        const std::uint64_t mask_seed =
            mask_spec.kind == MaskSpec::Kind::Center ? seed : derive_seed(seed, "mask") + step;
        Tensor mask = make_mask(mask_spec, cfg.image_size, cfg.image_size, mask_seed);
        std::vector<int> pi = model.masked_token_positions(mask);

        // one tape for the whole batch; losses are averaged before backward
        Tape gtape, dtape, ptape;
        Tensor sum_pixel = Tensor::scalar(0.0), sum_grad = sum_pixel, sum_adv_g = sum_pixel,
               sum_perc = sum_pixel, sum_style = sum_pixel, sum_commit = sum_pixel;
        Tensor sum_adv_d = Tensor::scalar(0.0), sum_mal = Tensor::scalar(0.0);
        Tensor x01_first, x_first, pred_first;
        double ml1_acc = 0.0;

        for (int b = 0; b < tc.batch; ++b) {
            Tensor x01 = make_texture(kind, cfg.image_size, tex_rng);
            Tensor x = to_model_range(x01);
            auto fwd =
                model.forward_train(&gtape, x, mask, cfg.decoder_noise ? &noise_rng : nullptr);
            sum_pixel = add(&gtape, sum_pixel, pixel_loss(&gtape, fwd.prediction, x));
            sum_grad = add(&gtape, sum_grad, gradient_loss(&gtape, fwd.prediction, x));
            AdvLoss adv = adversarial_loss(&gtape, disc, fwd.prediction, x);
            sum_adv_g = add(&gtape, sum_adv_g, adv.generator);
            auto [l_perc, l_style] = perceptual_style_loss(&gtape, fwd.prediction, x, fx);
            sum_perc = add(&gtape, sum_perc, l_perc);
            sum_style = add(&gtape, sum_style, l_style);
            sum_commit = add(&gtape, sum_commit, fwd.q.commit);

            AdvLoss adv_d = adversarial_loss(&dtape, disc, fwd.prediction.detached(), x);
            sum_adv_d = add(&dtape, sum_adv_d, adv_d.discriminator);

            if (!pi.empty())
                sum_mal = add(&ptape, sum_mal, model.prior().loss(&ptape, fwd.q.indices, pi));

            model.codebook().ema_update(fwd.enc.tokens.detached(), fwd.q.indices);
            ml1_acc += masked_l1(fwd.prediction, x, mask);
            if (b == 0) {
                x01_first = x01;
                x_first = x;
                pred_first = fwd.prediction;
            }
        }

        Tensor l_pixel = mul_scalar(&gtape, sum_pixel, inv_b);
        Tensor l_grad = mul_scalar(&gtape, sum_grad, inv_b);
        Tensor l_adv_g = mul_scalar(&gtape, sum_adv_g, inv_b);
        Tensor l_perc = mul_scalar(&gtape, sum_perc, inv_b);
        Tensor l_style = mul_scalar(&gtape, sum_style, inv_b);
        Tensor l_commit = mul_scalar(&gtape, sum_commit, inv_b);
        Tensor l_adv_d = mul_scalar(&dtape, sum_adv_d, inv_b);
        Tensor l_mal = mul_scalar(&ptape, sum_mal, inv_b);

        LossTerms terms{l_pixel, l_grad,   l_adv_g,
                        l_perc,  l_style,  l_commit,
                        Tensor::scalar(l_mal.value())};
        Tensor total;
        try {
            total = total_loss(&gtape, terms, tc.weights);
        } catch (const NumericError&) {
            // diagnostic dump of the batch that broke
            NamedTensors dump;
            dump.emplace_back("batch.image", x_first);
            dump.emplace_back("batch.mask", mask);
            dump.emplace_back("batch.prediction", pred_first);
            save_checkpoint(out_dir + "/abort_batch.ckpt", dump);
            model.save(out_dir + "/abort_model.ckpt");
            throw;
        }
        gtape.backward(total);
        opt_g.step();

        dtape.backward(l_adv_d);
        opt_d.step();
        disc.apply_spectral_norm(tc.sn_iters);

        if (!pi.empty()) {
            ptape.backward(l_mal);
            opt_p.step();
        }

        if (tc.rescale_every > 0 && step % tc.rescale_every == 0)
            for (auto w : model.rescalable_conv_weights()) norm_preserve_rescale_inplace(w);

        const double ml1 = ml1_acc * inv_b;
        stats.masked_l1.push_back(ml1);
        losses_csv.row({CsvWriter::num(step), CsvWriter::num(l_pixel.value()),
                        CsvWriter::num(l_grad.value()), CsvWriter::num(l_adv_g.value()),
                        CsvWriter::num(l_adv_d.value()), CsvWriter::num(l_perc.value()),
                        CsvWriter::num(l_style.value()), CsvWriter::num(l_commit.value()),
                        CsvWriter::num(l_mal.value()), CsvWriter::num(total.value())});
        metrics_csv.row({CsvWriter::num(step), CsvWriter::num(ml1)});

        if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) model.save(ckpt_path);
        if (tc.sample_every > 0 && step % tc.sample_every == 0) {
            Tensor comp = composite_by_mask(nullptr, mask, x_first, pred_first);
            char name[64];
            std::snprintf(name, sizeof(name), "/samples_step%05d.png", step);
            write_sample_grid(out_dir + name, x01_first, mask, to_unit_range(pred_first),
                              to_unit_range(comp));
        }
    }
    model.save(ckpt_path);
    stats.checkpoint_path = ckpt_path;
    return stats;
}

}  // namespace dwtnet
