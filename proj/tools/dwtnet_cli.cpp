// Command-line front end. Links only the public C API.
#include <CLI11.hpp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "dwtnet/dwtnet.h"

namespace {

struct RunDeleter {
    void operator()(dwtnet_run* r) const { dwtnet_run_destroy(r); }
};
using RunPtr = std::unique_ptr<dwtnet_run, RunDeleter>;

int fail(dwtnet_status s) {
    std::fprintf(stderr, "error (%s): %s\n", dwtnet_status_name(s), dwtnet_last_error());
    return 1;
}

// CLI flag values staged as (key, value) pairs; --config applies first so
// explicit flags override file entries.
struct Staged {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> kv;

    int apply_and_run(dwtnet_status (*cmd)(dwtnet_run_t)) {
        dwtnet_run_t raw = nullptr;
        dwtnet_status s = dwtnet_run_create(&raw);
        if (s != DWTNET_OK) return fail(s);
        RunPtr run(raw);
        if (!config_path.empty()) {
            s = dwtnet_run_load_config(run.get(), config_path.c_str());
            if (s != DWTNET_OK) return fail(s);
        }
        for (const auto& [k, v] : kv) {
            s = dwtnet_run_set(run.get(), k.c_str(), v.c_str());
            if (s != DWTNET_OK) return fail(s);
        }
        s = cmd(run.get());
        if (s != DWTNET_OK) return fail(s);
        return 0;
    }
};

void add_common_flags(CLI::App* app, Staged& staged) {
    app->add_option_function<std::string>(
           "--config", [&](const std::string& v) { staged.config_path = v; },
           "key=value config file");
    auto stage = [&staged](const char* key) {
        return [&staged, key](const std::string& v) { staged.kv.emplace_back(key, v); };
    };
    app->add_option_function<std::string>("--seed", stage("seed"), "RNG seed (u64)");
    app->add_option_function<std::string>("--steps", stage("steps"), "iteration count");
    app->add_option_function<std::string>("--out", stage("out"), "output directory");
    app->add_option_function<std::string>("--mask", stage("mask"),
                                          "mask spec: center | rects:FRACTION");
    app->add_option_function<std::string>("--checkpoint", stage("checkpoint"),
                                          "checkpoint path");
    app->add_option_function<std::string>("--temperature", stage("temperature"),
                                          "sampling temperature (0 = argmax)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string("dwtnet ") + dwtnet_version() +
                 " - distance-weighted transformer inpainting on synthetic textures"};
    app.require_subcommand(1);

    Staged train_s, eval_s, inpaint_s, probe_s;

    CLI::App* train = app.add_subcommand("train", "train a tiny inpainting model");
    add_common_flags(train, train_s);

    CLI::App* eval = app.add_subcommand("eval", "PSNR/SSIM over a directory of PNGs");
    add_common_flags(eval, eval_s);
    eval->add_option_function<std::string>(
        "--dataset",
        [&](const std::string& v) { eval_s.kv.emplace_back("dataset_dir", v); },
        "directory of ground-truth PNGs")->required();

    CLI::App* inpaint = app.add_subcommand("inpaint", "inpaint a single image");
    add_common_flags(inpaint, inpaint_s);
    inpaint->add_option_function<std::string>(
        "--image", [&](const std::string& v) { inpaint_s.kv.emplace_back("image", v); },
        "input PNG (must match the model image size)")->required();

    CLI::App* probe = app.add_subcommand("grad-probe", "gradient-norm-ratio experiment");
    add_common_flags(probe, probe_s);
    probe->add_option_function<std::string>(
        "--probe-c", [&](const std::string& v) { probe_s.kv.emplace_back("probe_c", v); },
        "probe input channels");
    probe->add_option_function<std::string>(
        "--probe-d", [&](const std::string& v) { probe_s.kv.emplace_back("probe_d", v); },
        "probe output channels");
    probe->add_option_function<std::string>(
        "--probe-pool", [&](const std::string& v) { probe_s.kv.emplace_back("probe_pool", v); },
        "pooling flags per layer, e.g. 1010");
    probe->add_option_function<std::string>(
        "--probe-steps", [&](const std::string& v) { probe_s.kv.emplace_back("probe_steps", v); },
        "drift experiment steps (0 to skip)");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) return train_s.apply_and_run(dwtnet_cmd_train);
    if (eval->parsed()) return eval_s.apply_and_run(dwtnet_cmd_eval);
    if (inpaint->parsed()) return inpaint_s.apply_and_run(dwtnet_cmd_inpaint);
    if (probe->parsed()) return probe_s.apply_and_run(dwtnet_cmd_grad_probe);
    return 1;
}
