#include "advmr/mri.hpp"

#include <algorithm>
#include <cmath>

#include "advmr/errors.hpp"
#include "advmr/fft.hpp"
#include "advmr/rng.hpp"

namespace advmr {

void MultiCoilKSpace::check() const {
    if (coils.rank() != 3 || coils.dim(0) < 1)
        throw ShapeError("k-space must be [N,H,W] with N >= 1, got " + coils.shape_str());
}

Tensor SamplingMask::plane(int h, int coils_n) const {
    const int wd = w();
    std::vector<int> shape = coils_n > 0 ? std::vector<int>{coils_n, h, wd} : std::vector<int>{h, wd};
    Tensor out(shape);
    const int planes = coils_n > 0 ? coils_n : 1;
    for (int n = 0; n < planes; ++n)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < wd; ++x)
                out[(std::int64_t(n) * h + y) * wd + x] = columns[x];
    return out;
}

double default_center_fraction(int accel) {
    if (accel == 4)
        return 0.08;
    if (accel == 8)
        return 0.04;
    throw Error("no center-fraction convention for acceleration " + std::to_string(accel));
}

MultiCoilKSpace synthesize_kspace(const Tensor& image, const SensitivityMaps& maps) {
    if (image.rank() != 2)
        throw ShapeError("synthesize_kspace: image must be [H,W], got " + image.shape_str());
    if (maps.maps.rank() != 3 || maps.maps.dim(1) != image.dim(0) || maps.maps.dim(2) != image.dim(1))
        throw ShapeError("synthesize_kspace: maps " + maps.maps.shape_str() + " do not cover image " +
                         image.shape_str());
    const int n = maps.num_coils(), h = image.dim(0), w = image.dim(1);
    MultiCoilKSpace out;
    out.coils = Tensor({n, h, w});
    Tensor plane({h, w});
    for (int c = 0; c < n; ++c) {
        const cplx* m = maps.maps.data() + std::int64_t(c) * h * w;
        for (std::int64_t i = 0; i < plane.numel(); ++i)
            plane[i] = m[i] * image[i];
        Tensor k = fft2c(plane);
        std::copy(k.data(), k.data() + k.numel(), out.coils.data() + std::int64_t(c) * h * w);
    }
    return out;
}

MultiCoilKSpace apply_mask(const MultiCoilKSpace& k, const SamplingMask& mask) {
    k.check();
    if (mask.w() != k.w())
        throw ShapeError("apply_mask: mask width " + std::to_string(mask.w()) + " vs k-space width " +
                         std::to_string(k.w()));
    MultiCoilKSpace out;
    out.coils = Tensor(k.coils.shape());
    const int n = k.num_coils(), h = k.h(), w = k.w();
    for (int c = 0; c < n; ++c)
        for (int y = 0; y < h; ++y) {
            const std::int64_t row = (std::int64_t(c) * h + y) * w;
            for (int x = 0; x < w; ++x)
                out.coils[row + x] = mask.columns[x].real() != 0 ? k.coils[row + x] : cplx{};
        }
    return out;
}

SamplingMask make_cartesian_mask(int w, int accel, double center_fraction, std::uint64_t seed,
                                 bool random_fill) {
    if (w < 8)
        throw UsageError("mask width must be >= 8, got " + std::to_string(w));
    if (accel != 4 && accel != 8)
        throw UsageError("acceleration must be 4 or 8, got " + std::to_string(accel));
    const double cf = center_fraction > 0 ? center_fraction : default_center_fraction(accel);
    if (cf >= 1)
        throw UsageError("center fraction must be in (0,1)");
    const int center = int(std::floor(cf * w));
    if (center < 1)
        throw UsageError("center fraction " + std::to_string(cf) + " selects no column at width " + std::to_string(w));
    const int quota = int(std::lround(double(w) / accel));
    if (center > quota)
        throw UsageError("center block (" + std::to_string(center) + " cols) exceeds the sampling quota (" +
                    std::to_string(quota) + ")");

    SamplingMask mask;
    mask.accel = accel;
    mask.center_fraction = cf;
    mask.columns = Tensor({w});
    const int start = (w - center + 1) / 2;
    for (int x = start; x < start + center; ++x)
        mask.columns[x] = cplx(1, 0);

    // columns outside the center block, in order
    std::vector<int> rest;
    rest.reserve(std::size_t(w - center));
    for (int x = 0; x < w; ++x)
        if (x < start || x >= start + center)
            rest.push_back(x);

    const int extra = quota - center;
    Rng rng(seed);
    if (extra > 0) {
        if (random_fill) {
            rng.shuffle(rest);
            for (int j = 0; j < extra; ++j)
                mask.columns[rest[std::size_t(j)]] = cplx(1, 0);
        } else {
            const double stride = double(rest.size()) / extra;
            const double off = rng.uniform(); // phase of the equispaced comb
            for (int j = 0; j < extra; ++j) {
                const int p = int(std::floor((j + off) * stride));
                mask.columns[rest[std::size_t(p)]] = cplx(1, 0);
            }
        }
    }
    return mask;
}

MultiCoilKSpace add_thermal_noise(const MultiCoilKSpace& k, const NoiseModel& noise) {
    k.check();
    if (noise.sigma < 0)
        throw UsageError("noise sigma must be >= 0");
    MultiCoilKSpace out;
    out.coils = k.coils;
    if (noise.sigma == 0)
        return out;
    Rng rng(noise.seed);
    for (std::int64_t i = 0; i < out.coils.numel(); ++i) {
        const real_t re = real_t(noise.sigma * rng.normal());
        const real_t im = real_t(noise.sigma * rng.normal());
        out.coils[i] += cplx(re, im);
    }
    return out;
}

Tensor rss_combine(const Tensor& coil_images) {
    if (coil_images.rank() != 3 || coil_images.dim(0) < 1)
        throw ShapeError("rss_combine: expected [N,H,W], got " + coil_images.shape_str());
    const int n = coil_images.dim(0), h = coil_images.dim(1), w = coil_images.dim(2);
    Tensor out({h, w});
    const std::int64_t plane = std::int64_t(h) * w;
    for (std::int64_t p = 0; p < plane; ++p) {
        double s = 0;
        for (int c = 0; c < n; ++c) {
            const cplx v = coil_images[c * plane + p];
            s += double(v.real()) * v.real() + double(v.imag()) * v.imag();
        }
        out[p] = cplx(real_t(std::sqrt(s)), 0);
    }
    return out;
}

double estimate_background_noise(const Tensor& image, const Tensor& background_mask, int num_coils) {
    if (!image.same_shape(background_mask))
        throw ShapeError("estimate_background_noise: image " + image.shape_str() + " vs mask " +
                         background_mask.shape_str());
    if (num_coils < 1)
        throw UsageError("estimate_background_noise: need num_coils >= 1");
    std::vector<double> mags;
    for (std::int64_t i = 0; i < image.numel(); ++i)
        if (background_mask[i].real() > real_t(0.5))
            mags.push_back(double(std::abs(image[i])));
    if (mags.empty())
        throw Error("estimate_background_noise: background mask selects no voxel");
    std::sort(mags.begin(), mags.end());
    const std::size_t m = mags.size();
    const double med = m % 2 ? mags[m / 2] : 0.5 * (mags[m / 2 - 1] + mags[m / 2]);

    // The RSS of N coils of iid complex Gaussian noise has magnitude
    // sigma * chi(2N). Dividing the median magnitude by the chi median
    // (exact sqrt(2 ln 2) for N=1, Wilson-Hilferty for the rest) gives a
    // median-based sigma estimate robust to residual signal in the mask.
    double chi2_median;
    if (num_coils == 1) {
        chi2_median = 2.0 * std::log(2.0);
    } else {
        const double k = 2.0 * num_coils;
        const double t = 1.0 - 2.0 / (9.0 * k);
        chi2_median = k * t * t * t;
    }
    return med / std::sqrt(chi2_median);
}

SensitivityMaps simulate_maps(int h, int w, int num_coils, std::uint64_t seed) {
    if (h < 1 || w < 1 || num_coils < 1)
        throw Error("simulate_maps: bad geometry");
    Rng rng(seed);
    Tensor maps({num_coils, h, w});
    const double cy0 = (h - 1) / 2.0, cx0 = (w - 1) / 2.0;
    const double ring = 0.55 * std::min(h, w) / 2.0;
    const double width = 0.75 * std::min(h, w);
    const std::int64_t plane = std::int64_t(h) * w;
    for (int c = 0; c < num_coils; ++c) {
        const double ang = 2 * M_PI * (c + 0.3 * rng.uniform()) / num_coils;
        const double cy = cy0 + ring * std::sin(ang);
        const double cx = cx0 + ring * std::cos(ang);
        const double py = (rng.uniform() - 0.5) * 2 * M_PI / h; // phase ramps
        const double px = (rng.uniform() - 0.5) * 2 * M_PI / w;
        const double p0 = rng.uniform() * 2 * M_PI;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                const double mag = std::exp(-d2 / (2 * width * width)) + 0.1;
                const double ph = p0 + py * y + px * x;
                maps[c * plane + y * std::int64_t(w) + x] =
                    cplx(real_t(mag * std::cos(ph)), real_t(mag * std::sin(ph)));
            }
    }
    // voxelwise RSS normalization
    for (std::int64_t p = 0; p < plane; ++p) {
        double s = 0;
        for (int c = 0; c < num_coils; ++c) {
            const cplx v = maps[c * plane + p];
            s += double(v.real()) * v.real() + double(v.imag()) * v.imag();
        }
        const real_t inv = real_t(1.0 / std::sqrt(s));
        for (int c = 0; c < num_coils; ++c)
            maps[c * plane + p] *= inv;
    }
    SensitivityMaps out;
    out.maps = std::move(maps);
    return out;
}

} // namespace advmr
