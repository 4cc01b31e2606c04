#pragma once

#include <string>

#include "model.hpp"
#include "train.hpp"

namespace dwtnet {

// Everything a CLI command needs, assembled from an optional key=value
// config file plus individual overrides. One seed drives the whole run.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    MaskSpec mask;
    std::string out_dir = "out";
    std::string checkpoint;
    std::string image;
    std::string dataset_dir;
    double temperature = 0.0;
    std::uint64_t seed = 1;

    // grad-probe options
    int probe_c = 8;
    int probe_d = 16;
    int probe_runs = 5;
    int probe_trials = 20;
    int probe_steps = 100;       // drift experiment length; 0 skips it
    std::string probe_pool;      // e.g. "1010": pool after layers 1 and 3

    void set(const std::string& key, const std::string& value);  // throws ConfigError
    void load_file(const std::string& path);
};

void cmd_train(const RunConfig& rc);

struct EvalSummary {
    int evaluated = 0;
    int skipped = 0;
    std::string csv_path;
};
EvalSummary cmd_eval(const RunConfig& rc);

void cmd_inpaint(const RunConfig& rc);
void cmd_grad_probe(const RunConfig& rc);

}  // namespace dwtnet
