#pragma once

#include "advmr/tape.hpp"
#include "advmr/tensor.hpp"

namespace advmr {

struct MetricConfig {
    int window = 7;       // odd, >= 3
    double k1 = 0.01;
    double k2 = 0.03;
    double fixed_range = 0; // <= 0: use the max of the reference image

    double range_for(const Tensor& reference) const;
};

enum class RegionKind { annotation_box, full_image };

// Binary selector over the output image grid.
struct RegionMask {
    Tensor mask; // real 0/1, [H,W]
    RegionKind kind = RegionKind::full_image;

    static RegionMask full(int h, int w);
    static RegionMask box(int h, int w, int x, int y, int bw, int bh);
    // tight bounding box of the set voxels: x0, y0, width, height
    void bbox(int& x0, int& y0, int& bw, int& bh) const;
};

// Mean local SSIM over uniform windows, valid (fully inside) positions only.
// b is the reference image for the default data range.
double ssim(const Tensor& a, const Tensor& b, const MetricConfig& cfg);

// SSIM over the tight bounding box of S. The box must fit the window.
double region_ssim(const Tensor& a, const Tensor& b, const RegionMask& s, const MetricConfig& cfg);

// 10*log10(range^2 / MSE); +infinity when a == b.
double psnr(const Tensor& a, const Tensor& b, const MetricConfig& cfg);

// psnr over the tight bounding box of S (range still from the full reference
// unless fixed).
double region_psnr(const Tensor& a, const Tensor& b, const RegionMask& s, const MetricConfig& cfg);

// Differentiable mean SSIM between two real images on a tape, for use as a
// training objective. data_range must be fixed by the caller.
Var ssim_mean(Tape& t, Var a, Var b, const MetricConfig& cfg, double data_range);

} // namespace advmr
