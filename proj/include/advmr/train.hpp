#pragma once

#include <cstdint>
#include <vector>

#include "advmr/model.hpp"
#include "advmr/phantom.hpp"

namespace advmr {

enum class LossKind { l1, one_minus_ssim };

const char* loss_name(LossKind k);
LossKind loss_from_name(const std::string& name);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 2;
    double learning_rate = 1e-3;
    LossKind loss = LossKind::one_minus_ssim;
    std::uint64_t seed = 0;
    // acquisition used to form the training inputs
    int accel = 4;
    double center_fraction = 0; // <= 0: convention for accel
    double noise_sigma = 0;
    bool random_mask = false;
};

struct TrainResult {
    ReconOperator model;
    std::vector<double> loss_curve; // mean loss per epoch
};

// Adam on the model parameters. The k-space for each phantom is synthesized
// once and cached; masks vary per (epoch, sample) via seeded offsets.
// Deterministic per cfg.seed. Throws when the loss goes non-finite, naming
// the epoch.
TrainResult train(const ReconOperator& init, const std::vector<Phantom>& ds, const TrainConfig& cfg);

} // namespace advmr
