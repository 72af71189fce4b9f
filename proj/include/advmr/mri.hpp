#pragma once

#include <cstdint>

#include "advmr/tensor.hpp"

namespace advmr {

// Per-coil k-space grids stored as one [N,H,W] complex tensor.
struct MultiCoilKSpace {
    Tensor coils;

    int num_coils() const { return coils.dim(0); }
    int h() const { return coils.dim(1); }
    int w() const { return coils.dim(2); }
    void check() const; // rank 3, N >= 1
};

// Complex coil sensitivities, [N,H,W], voxelwise RSS normalized to 1.
struct SensitivityMaps {
    Tensor maps;

    int num_coils() const { return maps.dim(0); }
    int h() const { return maps.dim(1); }
    int w() const { return maps.dim(2); }
};

// Cartesian column-sampling pattern: value 0/1 per column, applied down
// every row.
struct SamplingMask {
    Tensor columns; // [W], real 0/1
    int accel = 0;
    double center_fraction = 0;

    int w() const { return columns.dim(0); }
    // expand to a [H,W] (or with coils > 0, [coils,H,W]) multiplier plane
    Tensor plane(int h, int coils = 0) const;
};

struct NoiseModel {
    real_t sigma = 0; // std per real/imag component of each sample
    std::uint64_t seed = 0;
};

// k_i = fft2c(maps_i * image). Building block for ground-truth acquisition.
MultiCoilKSpace synthesize_kspace(const Tensor& image, const SensitivityMaps& maps);

// Zero unsampled columns in every coil; sampled columns pass through untouched.
MultiCoilKSpace apply_mask(const MultiCoilKSpace& k, const SamplingMask& mask);

// The usual column pattern: a fully sampled center block of
// floor(center_fraction*W) columns plus equispaced extras so the sampled
// count is round(W/R). center_fraction <= 0 picks the convention for R
// (0.08 at R=4, 0.04 at R=8). random_fill draws the extras uniformly
// (seeded) instead of equispaced.
SamplingMask make_cartesian_mask(int w, int accel, double center_fraction, std::uint64_t seed,
                                 bool random_fill = false);

double default_center_fraction(int accel);

// Independent Gaussian noise, std sigma on each of re/im, per sample.
MultiCoilKSpace add_thermal_noise(const MultiCoilKSpace& k, const NoiseModel& noise);

// X = sqrt(sum_i |x_i|^2) voxelwise over [N,H,W] coil images -> real [H,W].
Tensor rss_combine(const Tensor& coil_images);

// Sigma estimate from background magnitudes via the median of the RSS noise
// magnitude distribution (chi with 2*num_coils degrees of freedom). Robust
// to residual signal in the mask. background_mask: real 0/1, same shape.
double estimate_background_noise(const Tensor& image, const Tensor& background_mask, int num_coils = 1);

// Smooth simulated coil profiles: Gaussian-bump magnitudes placed around the
// FOV with linear phase ramps, normalized so the voxelwise RSS is 1.
SensitivityMaps simulate_maps(int h, int w, int num_coils, std::uint64_t seed);

} // namespace advmr
