#include "advmr/metrics.hpp"

#include <cmath>
#include <limits>

#include "advmr/errors.hpp"

namespace advmr {

double MetricConfig::range_for(const Tensor& reference) const {
    const double r = fixed_range > 0 ? fixed_range : reference.max_real();
    if (!(r > 0))
        throw Error("metric data range must be positive, got " + std::to_string(r));
    return r;
}

RegionMask RegionMask::full(int h, int w) {
    RegionMask s;
    s.kind = RegionKind::full_image;
    s.mask = Tensor::full({h, w}, cplx(1, 0));
    return s;
}

RegionMask RegionMask::box(int h, int w, int x, int y, int bw, int bh) {
    if (x < 0 || y < 0 || bw < 1 || bh < 1 || x + bw > w || y + bh > h)
        throw ShapeError("region box [" + std::to_string(x) + "," + std::to_string(y) + " " +
                         std::to_string(bw) + "x" + std::to_string(bh) + "] outside " + std::to_string(h) +
                         "x" + std::to_string(w));
    RegionMask s;
    s.kind = RegionKind::annotation_box;
    s.mask = Tensor({h, w});
    for (int yy = y; yy < y + bh; ++yy)
        for (int xx = x; xx < x + bw; ++xx)
            s.mask.at(yy, xx) = cplx(1, 0);
    return s;
}

void RegionMask::bbox(int& x0, int& y0, int& bw, int& bh) const {
    if (mask.rank() != 2)
        throw ShapeError("region mask must be [H,W], got " + mask.shape_str());
    const int h = mask.dim(0), w = mask.dim(1);
    int ymin = h, ymax = -1, xmin = w, xmax = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(y, x).real() > real_t(0.5)) {
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
            }
    if (ymax < 0)
        throw Error("region mask selects no voxel");
    x0 = xmin;
    y0 = ymin;
    bw = xmax - xmin + 1;
    bh = ymax - ymin + 1;
}

namespace {

void check_pair(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2)
        throw ShapeError("metric inputs must be [H,W], got " + a.shape_str());
    if (!a.same_shape(b))
        throw ShapeError("metric inputs differ: " + a.shape_str() + " vs " + b.shape_str());
}

// summed-area table with a zero top row/left column
std::vector<double> sat(const Tensor& t, const Tensor* other) {
    const int h = t.dim(0), w = t.dim(1);
    std::vector<double> s(std::size_t(h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y) {
        double run = 0;
        for (int x = 0; x < w; ++x) {
            const double va = double(t.at(y, x).real());
            run += other ? va * double(other->at(y, x).real()) : va;
            s[std::size_t(y + 1) * (w + 1) + (x + 1)] = s[std::size_t(y) * (w + 1) + (x + 1)] + run;
        }
    }
    return s;
}

double rect(const std::vector<double>& s, int w, int y0, int x0, int y1, int x1) {
    // sum over [y0, y1) x [x0, x1)
    const int W = w + 1;
    return s[std::size_t(y1) * W + x1] - s[std::size_t(y0) * W + x1] - s[std::size_t(y1) * W + x0] +
           s[std::size_t(y0) * W + x0];
}

Tensor crop_to(const Tensor& t, int y0, int x0, int bh, int bw) {
    Tensor out({bh, bw});
    for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x)
            out.at(y, x) = t.at(y0 + y, x0 + x);
    return out;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b, const MetricConfig& cfg) {
    check_pair(a, b);
    if (cfg.window < 3 || cfg.window % 2 == 0)
        throw Error("ssim window must be odd and >= 3");
    if (cfg.k1 <= 0 || cfg.k2 <= 0)
        throw Error("ssim constants must be positive");
    const int h = a.dim(0), w = a.dim(1), win = cfg.window;
    if (h < win || w < win)
        throw Error("ssim: image " + a.shape_str() + " smaller than the " + std::to_string(win) + "-wide window");
    const double L = cfg.range_for(b);
    const double c1 = (cfg.k1 * L) * (cfg.k1 * L);
    const double c2 = (cfg.k2 * L) * (cfg.k2 * L);

    const auto sa = sat(a, nullptr), sb = sat(b, nullptr);
    const auto saa = sat(a, &a), sbb = sat(b, &b), sab = sat(a, &b);
    const double n = double(win) * win;
    double acc = 0;
    int cnt = 0;
    for (int y = 0; y + win <= h; ++y)
        for (int x = 0; x + win <= w; ++x) {
            const double ma = rect(sa, w, y, x, y + win, x + win) / n;
            const double mb = rect(sb, w, y, x, y + win, x + win) / n;
            const double va = rect(saa, w, y, x, y + win, x + win) / n - ma * ma;
            const double vb = rect(sbb, w, y, x, y + win, x + win) / n - mb * mb;
            const double cov = rect(sab, w, y, x, y + win, x + win) / n - ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++cnt;
        }
    return acc / cnt;
}

double region_ssim(const Tensor& a, const Tensor& b, const RegionMask& s, const MetricConfig& cfg) {
    check_pair(a, b);
    if (!s.mask.same_shape(a))
        throw ShapeError("region mask " + s.mask.shape_str() + " does not match images " + a.shape_str());
    int x0, y0, bw, bh;
    s.bbox(x0, y0, bw, bh);
    if (bw < cfg.window || bh < cfg.window)
        throw Error("region " + std::to_string(bw) + "x" + std::to_string(bh) + " smaller than the " +
                    std::to_string(cfg.window) + "-wide ssim window");
    MetricConfig boxed = cfg;
    if (boxed.fixed_range <= 0)
        boxed.fixed_range = cfg.range_for(b); // range from the full reference
    return ssim(crop_to(a, y0, x0, bh, bw), crop_to(b, y0, x0, bh, bw), boxed);
}

double region_psnr(const Tensor& a, const Tensor& b, const RegionMask& s, const MetricConfig& cfg) {
    check_pair(a, b);
    if (!s.mask.same_shape(a))
        throw ShapeError("region mask " + s.mask.shape_str() + " does not match images " + a.shape_str());
    int x0, y0, bw, bh;
    s.bbox(x0, y0, bw, bh);
    MetricConfig boxed = cfg;
    if (boxed.fixed_range <= 0)
        boxed.fixed_range = cfg.range_for(b);
    return psnr(crop_to(a, y0, x0, bh, bw), crop_to(b, y0, x0, bh, bw), boxed);
}

double psnr(const Tensor& a, const Tensor& b, const MetricConfig& cfg) {
    check_pair(a, b);
    const double L = cfg.range_for(b);
    double mse = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = double(a[i].real()) - double(b[i].real());
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse == 0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(L * L / mse);
}

Var ssim_mean(Tape& t, Var a, Var b, const MetricConfig& cfg, double data_range) {
    const Tensor& av = t.val(a);
    check_pair(av, t.val(b));
    if (!(data_range > 0))
        throw Error("ssim_mean: data range must be positive");
    const int h = av.dim(0), w = av.dim(1), win = cfg.window;
    if (h < win || w < win)
        throw Error("ssim_mean: image smaller than the window");
    const double c1 = (cfg.k1 * data_range) * (cfg.k1 * data_range);
    const double c2 = (cfg.k2 * data_range) * (cfg.k2 * data_range);

    Tensor kernel({1, 1, win, win});
    for (std::int64_t i = 0; i < kernel.numel(); ++i)
        kernel[i] = cplx(real_t(1.0 / (win * win)), 0);
    const Var kv = t.constant(std::move(kernel));

    const Var a3 = t.reshape(a, {1, h, w});
    const Var b3 = t.reshape(b, {1, h, w});
    auto wmean = [&](Var x) { return t.conv2d(x, kv, Var{}, 0); };
    const Var ma = wmean(a3), mb = wmean(b3);
    const Var maa = wmean(t.square(a3)), mbb = wmean(t.square(b3)), mab = wmean(t.mul(a3, b3));
    const Var va = t.sub(maa, t.square(ma));
    const Var vb = t.sub(mbb, t.square(mb));
    const Var cov = t.sub(mab, t.mul(ma, mb));

    const Var num = t.mul(t.add_const(t.mul_scalar(t.mul(ma, mb), cplx(2, 0)), cplx(real_t(c1), 0)),
                          t.add_const(t.mul_scalar(cov, cplx(2, 0)), cplx(real_t(c2), 0)));
    const Var den = t.mul(t.add_const(t.add(t.square(ma), t.square(mb)), cplx(real_t(c1), 0)),
                          t.add_const(t.add(va, vb), cplx(real_t(c2), 0)));
    return mean_of(t, t.mul(num, t.reciprocal(den)));
}

} // namespace advmr
