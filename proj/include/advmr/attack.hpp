#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "advmr/metrics.hpp"
#include "advmr/model.hpp"
#include "advmr/mri.hpp"
#include "advmr/phantom.hpp"

namespace advmr {

struct NoiseAttackConfig {
    double eta = 0;        // per-coil relative L2 budget
    int steps = 10;
    double step_size = 0.5;
    std::uint64_t seed = 0;
    bool track_best_iterate = true;
    // step rule: by default each coil moves along its normalized gradient by
    // step_size * eta * ||k_i||; raw adds step_size * gradient as-is
    bool raw_gradient_step = false;
    int restarts = 0; // extra random feasible starts, best-of
    Tensor warm_start; // optional initial z (projected into budget); empty = 0
};

struct RotationAttackConfig {
    double theta_max = 0;  // degrees
    double grid_step = 0.1;
};

struct AttackMetrics {
    double ssim = 0;
    double psnr = 0;
};

struct AttackReport {
    Tensor z;              // [N,H,W] k-space noise; empty for rotation runs
    double theta_star = 0; // worst angle found (rotation runs)
    std::vector<double> objective_trace;           // objective after each step
    std::vector<std::array<double, 3>> angle_curve; // {theta, objective, region ssim}
    AttackMetrics baseline, attacked;               // region-restricted
    std::vector<double> constraint_slack;           // ||z_i|| / (eta ||k_i||)
    double objective_base = 0, objective_adv = 0;
    Tensor recon_base, recon_adv; // output images, for dumps
};

// Maximize || S * (f(mask(k + z)) - target) ||_2 over noise z with
// ||z_i||_2 <= eta * ||k_i||_2 for every coil independently. Projected
// ascent from z = 0; with best-iterate tracking the reported z is the best
// feasible iterate seen (the zero start included). maps may be null for
// models that don't use them.
AttackReport pgd_noise_attack(const ReconOperator& f, const MultiCoilKSpace& k, const SamplingMask& mask,
                              const Tensor& target, const RegionMask& s, const NoiseAttackConfig& cfg,
                              const SensitivityMaps* maps, const MetricConfig& mcfg = {});

// Worst-case in-plane rotation via grid search over [-theta_max, theta_max]:
// rotate the acquisition, reconstruct, rotate the output back, evaluate the
// same objective. Ties break toward the smallest |theta|.
AttackReport rotation_attack(const ReconOperator& f, const MultiCoilKSpace& k, const SamplingMask& mask,
                             const Tensor& target, const RegionMask& s, const RotationAttackConfig& cfg,
                             const SensitivityMaps* maps, const MetricConfig& mcfg = {});

// Per coil: ifft2c -> bilinear rotation about the image center (zero fill
// outside) -> fft2c.
MultiCoilKSpace rotate_kspace(const MultiCoilKSpace& k, double theta_deg);

enum class AttackKind { noise, rotation };
enum class SelectionMode { annotated, full };

const char* attack_name(AttackKind k);
const char* smode_name(SelectionMode m);

struct SweepModelEntry {
    std::string model; // name for the output table
    int accel = 4;
    ReconOperator op;
};

struct SweepConfig {
    AttackKind kind = AttackKind::noise;
    std::vector<double> params; // eta values or theta_max values, ascending
    SelectionMode smode = SelectionMode::annotated;
    std::uint64_t seed = 0;
    double noise_sigma = 0;   // thermal noise added to the acquisition
    int pgd_steps = 10;
    double pgd_step_size = 0.5;
    double rot_grid_step = 0.1;
    int workers = 0; // 0: logical processors (ADVMR_WORKERS overrides)
};

struct SweepRow {
    std::string model;
    int accel = 0;
    std::string attack;
    std::string smode;
    double param = 0;
    std::uint64_t seed = 0;
    int sample = 0;
    double ssim_base = 0, ssim_adv = 0;
    double psnr_base = 0, psnr_adv = 0;
    double objective = 0;
};

// Attack every (model, sample, parameter) combination. For the noise attack
// the per-sample candidate pool is nested across ascending budgets: each
// budget's run warm-starts from the best lower-budget candidate and the
// reported columns take the pool-worst values, so the attacked SSIM is
// non-increasing and the objective non-decreasing in the budget by
// construction. Jobs run on a bounded worker pool; row order is
// deterministic.
std::vector<SweepRow> sweep(const std::vector<SweepModelEntry>& models, const std::vector<Phantom>& ds,
                            const SweepConfig& cfg);

} // namespace advmr
