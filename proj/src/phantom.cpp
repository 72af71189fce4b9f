#include "advmr/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "advmr/errors.hpp"
#include "advmr/fft.hpp"
#include "advmr/metrics.hpp"
#include "advmr/rng.hpp"

namespace advmr {

namespace {

double smoothstep(double t) {
    t = std::min(std::max(t, 0.0), 1.0);
    return t * t * (3 - 2 * t);
}

// coverage in [0,1]: 1 well inside the ellipse, feathered to 0 across about
// `feather` pixels of normalized boundary distance
double ellipse_cov(double y, double x, double cy, double cx, double ay, double ax, double rot,
                   double feather) {
    const double c = std::cos(rot), s = std::sin(rot);
    const double dy = y - cy, dx = x - cx;
    const double u = (c * dx + s * dy) / ax;
    const double v = (-s * dx + c * dy) / ay;
    const double r = std::sqrt(u * u + v * v);
    // convert the normalized radial excess to an approximate pixel distance
    const double scale = std::min(ax, ay);
    return smoothstep((1.0 - r) * scale / feather + 0.5);
}

// distance from point to segment [p0, p1]
double seg_dist(double y, double x, double y0, double x0, double y1, double x1) {
    const double vy = y1 - y0, vx = x1 - x0;
    const double wy = y - y0, wx = x - x0;
    const double len2 = vy * vy + vx * vx;
    double t = len2 > 0 ? (wy * vy + wx * vx) / len2 : 0;
    t = std::min(std::max(t, 0.0), 1.0);
    const double py = y0 + t * vy, px = x0 + t * vx;
    return std::hypot(y - py, x - px);
}

struct Band {
    double y0, x0, y1, x1, thick, value;
};

Phantom draw_candidate(int h, int w, int num_coils, std::uint64_t draw_seed) {
    Rng rng(draw_seed);
    const double cy = h / 2.0 + (rng.uniform() - 0.5) * 0.06 * h;
    const double cx = w / 2.0 + (rng.uniform() - 0.5) * 0.06 * w;
    const double ay = (0.30 + 0.08 * rng.uniform()) * h;
    const double ax = (0.32 + 0.08 * rng.uniform()) * w;
    const double rot = rng.uniform() * M_PI;
    const double gy = (rng.uniform() - 0.5) * 0.6; // shading gradients
    const double gx = (rng.uniform() - 0.5) * 0.6;

    struct Blob {
        double cy, cx, ay, ax, rot, factor;
    };
    std::vector<Blob> blobs;
    const int nblob = rng.uniform_int(3, 5);
    for (int i = 0; i < nblob; ++i) {
        Blob b;
        const double ang = rng.uniform() * 2 * M_PI;
        const double rad = rng.uniform() * 0.55;
        b.cy = cy + rad * ay * std::sin(ang);
        b.cx = cx + rad * ax * std::cos(ang);
        b.ay = (0.06 + 0.12 * rng.uniform()) * h;
        b.ax = (0.06 + 0.12 * rng.uniform()) * w;
        b.rot = rng.uniform() * M_PI;
        b.factor = rng.uniform() < 0.5 ? 0.55 + 0.2 * rng.uniform() : 1.2 + 0.3 * rng.uniform();
        blobs.push_back(b);
    }

    std::vector<Band> bands;
    const int nband = rng.uniform_int(1, 2);
    for (int i = 0; i < nband; ++i) {
        Band b;
        const double ang = rng.uniform() * 2 * M_PI;
        const double rad = 0.15 + 0.30 * rng.uniform();
        const double by = cy + rad * ay * std::sin(ang);
        const double bx = cx + rad * ax * std::cos(ang);
        const double dir = rng.uniform() * M_PI;
        const double len = (0.16 + 0.12 * rng.uniform()) * std::min(h, w);
        b.y0 = by - 0.5 * len * std::sin(dir);
        b.x0 = bx - 0.5 * len * std::cos(dir);
        b.y1 = by + 0.5 * len * std::sin(dir);
        b.x1 = bx + 0.5 * len * std::cos(dir);
        // keep the band a few pixels thick: the workbench images are small,
        // and a feature much thinner than the resampling kernel would make
        // any geometric transform look artificially destructive
        b.thick = 2.4 + 1.2 * rng.uniform();
        b.value = i % 2 == 0 ? 1.55 : 0.08; // alternate bright/dark bands
        bands.push_back(b);
    }

    Tensor img({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double body = ellipse_cov(y, x, cy, cx, ay, ax, rot, 1.6);
            if (body <= 0) {
                img.at(y, x) = cplx(0, 0);
                continue;
            }
            double v = 0.55 * (1.0 + gy * (y - cy) / h + gx * (x - cx) / w) +
                       0.10 * std::cos(2 * M_PI * (y - cy) / h) * std::cos(2 * M_PI * (x - cx) / w);
            for (const Blob& b : blobs) {
                const double cov = ellipse_cov(y, x, b.cy, b.cx, b.ay, b.ax, b.rot, 1.8);
                v *= 1.0 + (b.factor - 1.0) * cov;
            }
            for (const Band& b : bands) {
                const double d = seg_dist(y, x, b.y0, b.x0, b.y1, b.x1);
                const double cov = smoothstep((b.thick / 2 - d) / 1.6 + 0.5);
                v = v * (1 - cov) + b.value * cov;
            }
            img.at(y, x) = cplx(real_t(std::max(v, 0.0) * body), 0);
        }
    }

    // normalize peak to 1 so intensity scales are comparable across seeds
    const double peak = img.max_real();
    for (std::int64_t i = 0; i < img.numel(); ++i)
        img[i] = cplx(real_t(img[i].real() / peak), 0);

    Phantom p;
    p.image = std::move(img);

    for (std::size_t i = 0; i < bands.size(); ++i) {
        const Band& b = bands[i];
        const double margin = b.thick / 2 + 2.5;
        int x0 = int(std::floor(std::min(b.x0, b.x1) - margin));
        int y0 = int(std::floor(std::min(b.y0, b.y1) - margin));
        int x1 = int(std::ceil(std::max(b.x0, b.x1) + margin));
        int y1 = int(std::ceil(std::max(b.y0, b.y1) + margin));
        // grow to the metric-window minimum, then clamp into the image
        while (x1 - x0 < 8) { --x0; ++x1; }
        while (y1 - y0 < 8) { --y0; ++y1; }
        x0 = std::max(x0, 0);
        y0 = std::max(y0, 0);
        x1 = std::min(x1, w);
        y1 = std::min(y1, h);
        AnnotationBox box;
        box.x = x0;
        box.y = y0;
        box.width = x1 - x0;
        box.height = y1 - y0;
        box.label = "band" + std::to_string(i);
        p.annotations.push_back(std::move(box));
    }

    // air region: zero-intensity voxels not claimed by any annotation box
    p.background_mask = Tensor({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (p.image.at(y, x).real() != 0)
                continue;
            bool boxed = false;
            for (const AnnotationBox& b : p.annotations)
                boxed = boxed || (x >= b.x && x < b.x + b.width && y >= b.y && y < b.y + b.height);
            if (!boxed)
                p.background_mask.at(y, x) = cplx(1, 0);
        }

    p.maps = simulate_maps(h, w, num_coils, Rng::mix(draw_seed, 0x6d617073));
    return p;
}

// is the box content genuinely lost under aggressive undersampling?
bool under_determined(const Phantom& p) {
    const int h = p.h(), w = p.w();
    const MultiCoilKSpace k = synthesize_kspace(p.image, p.maps);
    const SamplingMask m = make_cartesian_mask(w, 8, 0, Rng::mix(p.seed, 0x6d61736b));
    const MultiCoilKSpace km = apply_mask(k, m);
    Tensor coil_imgs({k.num_coils(), h, w});
    Tensor plane({h, w});
    for (int c = 0; c < k.num_coils(); ++c) {
        std::copy(km.coils.data() + std::int64_t(c) * h * w, km.coils.data() + std::int64_t(c + 1) * h * w,
                  plane.data());
        Tensor im = ifft2c(plane);
        std::copy(im.data(), im.data() + im.numel(), coil_imgs.data() + std::int64_t(c) * h * w);
    }
    const Tensor zf = rss_combine(coil_imgs);
    MetricConfig mcfg;
    for (const AnnotationBox& b : p.annotations) {
        RegionMask s = RegionMask::box(h, w, b.x, b.y, b.width, b.height);
        if (region_ssim(zf, p.image, s, mcfg) >= 0.95)
            return false;
    }
    return true;
}

} // namespace

Phantom generate_phantom(int h, int w, int num_coils, std::uint64_t seed) {
    if (h < 32 || w < 32)
        throw Error("phantom size must be at least 32x32, got " + std::to_string(h) + "x" + std::to_string(w));
    if (num_coils < 1)
        throw Error("phantom needs at least one coil");
    for (int attempt = 0; attempt < 32; ++attempt) {
        Phantom p = draw_candidate(h, w, num_coils, Rng::mix(seed, std::uint64_t(attempt)));
        p.seed = seed;
        if (under_determined(p))
            return p;
    }
    throw Error("phantom generation: no under-determined draw in 32 attempts for seed " + std::to_string(seed));
}

} // namespace advmr
