#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "csv.hpp"
#include "image_io.hpp"
#include "metrics.hpp"
#include "normreg.hpp"

namespace dwtnet {

namespace {

long to_long(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + value + "'");
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + value + "'");
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "on") return true;
    if (value == "0" || value == "false" || value == "off") return false;
    throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "image_size") model.image_size = static_cast<int>(to_long(key, value));
    else if (key == "base_channels") model.base_channels = static_cast<int>(to_long(key, value));
    else if (key == "dwt_blocks") model.dwt_blocks = static_cast<int>(to_long(key, value));
    else if (key == "patch_rate") model.patch_rate = static_cast<int>(to_long(key, value));
    else if (key == "codebook_size") model.codebook_size = static_cast<int>(to_long(key, value));
    else if (key == "code_dim") model.code_dim = static_cast<int>(to_long(key, value));
    else if (key == "heads") model.heads = static_cast<int>(to_long(key, value));
    else if (key == "lambda_c") model.lambda_c = to_double(key, value);
    else if (key == "knn_k") model.knn_k = static_cast<int>(to_long(key, value));
    else if (key == "ffc_global_ratio") model.ffc_global_ratio = to_double(key, value);
    else if (key == "decoder_noise") model.decoder_noise = to_bool(key, value);
    else if (key == "seed") {
        seed = static_cast<std::uint64_t>(to_long(key, value));
        model.seed = seed;
    }
    else if (key == "steps") train.steps = static_cast<int>(to_long(key, value));
    else if (key == "batch") train.batch = static_cast<int>(to_long(key, value));
    else if (key == "lr") train.lr = to_double(key, value);
    else if (key == "lr_prior") train.lr_prior = to_double(key, value);
    else if (key == "rescale_every") train.rescale_every = static_cast<int>(to_long(key, value));
    else if (key == "checkpoint_every")
        train.checkpoint_every = static_cast<int>(to_long(key, value));
    else if (key == "sample_every") train.sample_every = static_cast<int>(to_long(key, value));
    else if (key == "sn_iters") train.sn_iters = static_cast<int>(to_long(key, value));
    else if (key == "texture") train.texture = value;
    else if (key == "alpha_g") train.weights.alpha_g = to_double(key, value);
    else if (key == "alpha_a") train.weights.alpha_a = to_double(key, value);
    else if (key == "alpha_p") train.weights.alpha_p = to_double(key, value);
    else if (key == "alpha_s") train.weights.alpha_s = to_double(key, value);
    else if (key == "beta") train.weights.beta = to_double(key, value);
    else if (key == "mask") mask = MaskSpec::parse(value);
    else if (key == "out") out_dir = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "image") image = value;
    else if (key == "dataset_dir") dataset_dir = value;
    else if (key == "temperature") temperature = to_double(key, value);
    else if (key == "probe_c") probe_c = static_cast<int>(to_long(key, value));
    else if (key == "probe_d") probe_d = static_cast<int>(to_long(key, value));
    else if (key == "probe_runs") probe_runs = static_cast<int>(to_long(key, value));
    else if (key == "probe_trials") probe_trials = static_cast<int>(to_long(key, value));
    else if (key == "probe_steps") probe_steps = static_cast<int>(to_long(key, value));
    else if (key == "probe_pool") probe_pool = value;
    else throw ConfigError("unknown config key: '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

void cmd_train(const RunConfig& rc) {
    rc.model.validate();
    std::filesystem::create_directories(rc.out_dir);
    DwtNetModel model(rc.model);
    Discriminator disc(derive_seed(rc.seed, "discriminator"));
    if (!rc.checkpoint.empty()) model.load(rc.checkpoint);
    std::printf("training: %d steps, texture=%s, mask=%s, %ld parameters\n", rc.train.steps,
                rc.train.texture.c_str(), rc.mask.str().c_str(), model.parameter_count());
    TrainStats stats = train_model(model, disc, rc.train, rc.mask, rc.seed, rc.out_dir);
    double last = stats.masked_l1.empty() ? 0.0 : stats.masked_l1.back();
    std::printf("done: checkpoint %s, final masked L1 %.5f\n", stats.checkpoint_path.c_str(),
                last);
}

EvalSummary cmd_eval(const RunConfig& rc) {
    rc.model.validate();
    if (rc.checkpoint.empty()) throw UsageError("eval requires a checkpoint");
    if (rc.dataset_dir.empty()) throw UsageError("eval requires a dataset directory");
    std::filesystem::create_directories(rc.out_dir);

    DwtNetModel model(rc.model);
    model.load(rc.checkpoint);

    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(rc.dataset_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());

    EvalSummary summary;
    summary.csv_path = rc.out_dir + "/eval.csv";
    CsvWriter csv(summary.csv_path,
                  {"image", "status", "psnr", "ssim", "psnr_masked", "ssim_masked"});
    for (const auto& path : files) {
        const std::string name = std::filesystem::path(path).filename().string();
        Tensor img01;
        try {
            img01 = read_png_rgb8(path);
            if (img01.extent(1) != rc.model.image_size || img01.extent(2) != rc.model.image_size)
                throw IoError("extent mismatch: expected " + std::to_string(rc.model.image_size));
        } catch (const Error& e) {
            std::fprintf(stderr, "warning: skipping %s: %s\n", name.c_str(), e.what());
            csv.row({name, "skipped", "", "", "", ""});
            ++summary.skipped;
            continue;
        }
        Tensor mask =
            make_mask(rc.mask, rc.model.image_size, rc.model.image_size, derive_seed(rc.seed, name));
        Tensor x = to_model_range(img01);
        Rng rng(derive_seed(rc.seed, "eval:" + name));
        Tensor x_r = model.inpaint(x, mask, rc.temperature, rng);
        Tensor out01 = to_unit_range(x_r);
        csv.row({name, "ok", CsvWriter::num(psnr(out01, img01)),
                 CsvWriter::num(ssim(out01, img01)), CsvWriter::num(psnr(out01, img01, &mask)),
                 CsvWriter::num(ssim(out01, img01, &mask))});
        ++summary.evaluated;
    }
    std::printf("eval: %d evaluated, %d skipped -> %s\n", summary.evaluated, summary.skipped,
                summary.csv_path.c_str());
    return summary;
}

void cmd_inpaint(const RunConfig& rc) {
    rc.model.validate();
    if (rc.checkpoint.empty()) throw UsageError("inpaint requires a checkpoint");
    if (rc.image.empty()) throw UsageError("inpaint requires an input image");
    std::filesystem::create_directories(rc.out_dir);

    DwtNetModel model(rc.model);
    model.load(rc.checkpoint);

    Tensor img01 = read_png_rgb8(rc.image);
    if (img01.extent(1) != rc.model.image_size || img01.extent(2) != rc.model.image_size)
        throw DimensionError("input image is " + std::to_string(img01.extent(1)) + "x" +
                             std::to_string(img01.extent(2)) + ", model expects " +
                             std::to_string(rc.model.image_size) + "x" +
                             std::to_string(rc.model.image_size));

    Tensor mask = make_mask(rc.mask, rc.model.image_size, rc.model.image_size, rc.seed);
    Rng rng(derive_seed(rc.seed, "inpaint"));
    Tensor x_r = model.inpaint(to_model_range(img01), mask, rc.temperature, rng);

    const std::string out_png = rc.out_dir + "/inpainted.png";
    write_png_rgb8(out_png, to_unit_range(x_r));
    write_png_gray8(rc.out_dir + "/mask.png", mask);
    std::printf("inpaint: %s (mask %s, coverage %.3f)\n", out_png.c_str(), rc.mask.str().c_str(),
                mask_coverage(mask));
}

void cmd_grad_probe(const RunConfig& rc) {
    std::filesystem::create_directories(rc.out_dir);
    std::vector<bool> pool;
    for (char c : rc.probe_pool) pool.push_back(c == '1');

    CsvWriter ratio_csv(rc.out_dir + "/grad_ratio.csv",
                        {"condition", "layer", "c", "d", "pooling", "run", "ratio"});
    for (const char* condition : {"raw", "rescaled"}) {
        const bool rescaled = std::string(condition) == "rescaled";
        for (int run = 0; run < rc.probe_runs; ++run) {
            ProbeNet net = make_probe_net(rc.probe_c, rc.probe_d, 16, pool,
                                          derive_seed(rc.seed, "probe-run") + run);
            if (rescaled) rescale_probe_net(net);
            auto reports =
                grad_ratio_probe(net, rc.probe_trials, derive_seed(rc.seed, "probe-eval") + run);
            for (const auto& r : reports)
                ratio_csv.row({condition, CsvWriter::num(r.layer), CsvWriter::num(r.cin),
                               CsvWriter::num(r.cout), r.pool ? "1" : "0", CsvWriter::num(run),
                               CsvWriter::num(r.ratio)});
        }
    }
    std::printf("grad-probe: wrote %s/grad_ratio.csv (c=%d d=%d, %d runs)\n", rc.out_dir.c_str(),
                rc.probe_c, rc.probe_d, rc.probe_runs);

    if (rc.probe_steps > 0) {
        CsvWriter drift_csv(rc.out_dir + "/grad_drift.csv",
                            {"condition", "step", "layer", "ratio"});
        for (const char* condition : {"raw", "rescaled"}) {
            const bool rescaled = std::string(condition) == "rescaled";
            ProbeNet net = make_probe_net(rc.probe_c, rc.probe_d, 16, pool,
                                          derive_seed(rc.seed, "probe-drift-net"));
            auto points = grad_ratio_drift(net, rc.probe_steps, 10, rc.probe_trials, rescaled,
                                           derive_seed(rc.seed, "probe-drift"));
            for (const auto& p : points)
                drift_csv.row({condition, CsvWriter::num(p.step), CsvWriter::num(p.layer),
                               CsvWriter::num(p.ratio)});
        }
        std::printf("grad-probe: wrote %s/grad_drift.csv (%d steps)\n", rc.out_dir.c_str(),
                    rc.probe_steps);
    }
}

}  // namespace dwtnet
