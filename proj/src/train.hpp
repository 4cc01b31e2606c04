#pragma once

#include <string>

#include "losses.hpp"
#include "model.hpp"
#include "textures.hpp"

namespace dwtnet {

struct TrainConfig {
    int steps = 300;
    int batch = 4;           // textures averaged per optimizer step
    double lr = 2e-3;        // generator/discriminator step size at this scale
    double lr_prior = 3e-3;  // masked-language prior step size
    int rescale_every = 10;  // norm-preserving rescale cadence; 0 disables
    int checkpoint_every = 100;
    int sample_every = 100;
    int sn_iters = 5;  // discriminator spectral-norm power iterations per step
    std::string texture = "stripes";
    LossWeights weights;
};

struct TrainStats {
    std::vector<double> masked_l1;  // per-step masked-region L1 in [0,1] scale
    std::string checkpoint_path;
};

// Trains model and discriminator on the procedural corpus, writing
// losses.csv / metrics.csv, periodic checkpoints and sample grids under
// out_dir. Fully deterministic given the seed. A non-finite loss aborts with
// a diagnostic dump of the offending batch.
TrainStats train_model(DwtNetModel& model, Discriminator& disc, const TrainConfig& tc,
                       const MaskSpec& mask_spec, std::uint64_t seed, const std::string& out_dir);

// masked-region L1 between two [-1,1] images, reported in [0,1] scale
double masked_l1(const Tensor& a_pm1, const Tensor& b_pm1, const Tensor& mask);

}  // namespace dwtnet
