#include <cmath>
#include <cstdio>
#include <vector>

#include "advmr/errors.hpp"
#include "advmr/fft.hpp"
#include "advmr/mri.hpp"
#include "advmr/rng.hpp"
#include "check.hpp"

using namespace advmr;

namespace {

int count_cols(const SamplingMask& m) {
    int n = 0;
    for (int x = 0; x < m.w(); ++x)
        n += m.columns[x].real() != 0 ? 1 : 0;
    return n;
}

void test_mask_quota_and_center() {
    // W=16, R=4, cf=0.25: quota 4, center block 4 -> no extra columns
    const SamplingMask a = make_cartesian_mask(16, 4, 0.25, 5);
    REQUIRE(count_cols(a) == 4);
    REQUIRE(a.columns[8].real() == 1); // DC column always inside the center block
    for (int x = 0; x < 16; ++x)
        if (a.columns[x].real() != 0)
            REQUIRE(x >= 6 && x <= 9);

    // W=100, R=4, cf=0.08: quota 25 = 8 center + 17 equispaced extras
    const SamplingMask b = make_cartesian_mask(100, 4, 0.08, 5);
    REQUIRE(count_cols(b) == 25);
    for (int x = 46; x < 54; ++x)
        REQUIRE(b.columns[x].real() == 1);

    // W=64, R=8, default cf 0.04: quota 8 = 2 center + 6 extras
    const SamplingMask c = make_cartesian_mask(64, 8, 0, 9);
    REQUIRE(count_cols(c) == 8);
    REQUIRE(default_center_fraction(8) == 0.04);
    REQUIRE(default_center_fraction(4) == 0.08);

    // determinism and seed sensitivity of the equispaced phase
    const SamplingMask c2 = make_cartesian_mask(64, 8, 0, 9);
    REQUIRE(bit_equal(c.columns, c2.columns));
    bool any_diff = false;
    for (std::uint64_t s = 0; s < 16 && !any_diff; ++s)
        any_diff = !bit_equal(c.columns, make_cartesian_mask(64, 8, 0, 100 + s).columns);
    REQUIRE(any_diff);

    // random variant still meets the quota and keeps the center block
    const SamplingMask r = make_cartesian_mask(64, 4, 0, 3, true);
    REQUIRE(count_cols(r) == 16);
    const int cstart = (64 - 5 + 1) / 2; // floor(0.08*64) = 5 center columns
    for (int x = cstart; x < cstart + 5; ++x)
        REQUIRE(r.columns[x].real() == 1);

    REQUIRE_THROWS_AS(make_cartesian_mask(64, 3, 0, 1), UsageError);
    REQUIRE_THROWS_AS(make_cartesian_mask(4, 4, 0, 1), UsageError);
    ok("cartesian mask quotas, center block, determinism");
}

void test_mask_apply() {
    Rng rng(31);
    const SamplingMask m = make_cartesian_mask(16, 4, 0, 2);
    MultiCoilKSpace k;
    k.coils = rand_cplx({2, 8, 16}, rng);
    const MultiCoilKSpace km = apply_mask(k, m);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 16; ++x) {
                const cplx v = km.coils[(std::int64_t(c) * 8 + y) * 16 + x];
                const cplx u = k.coils[(std::int64_t(c) * 8 + y) * 16 + x];
                if (m.columns[x].real() == 0)
                    REQUIRE(v == cplx(0, 0));
                else
                    REQUIRE(v == u);
            }
    const Tensor plane = m.plane(8, 2);
    REQUIRE(plane.rank() == 3 && plane.dim(0) == 2 && plane.dim(1) == 8 && plane.dim(2) == 16);
    ok("mask application zeroes exactly the dropped columns");
}

void test_synthesize_and_rss() {
    // RSS of per-voxel magnitudes 3,4,5 is sqrt(50)
    Tensor coils({3, 1, 1});
    coils[0] = cplx(0, 3);
    coils[1] = cplx(4, 0);
    coils[2] = cplx(-3, -4);
    const Tensor r = rss_combine(coils);
    REQUIRE_CLOSE(r[0].real(), std::sqrt(50.0), 1e-12);
    REQUIRE(r[0].imag() == 0);

    // multiplying one coil by a global phase leaves the RSS unchanged
    Rng rng(32);
    Tensor ci = rand_cplx({3, 6, 6}, rng);
    const Tensor r1 = rss_combine(ci);
    const cplx ph = cplx(std::cos(real_t(1.1)), std::sin(real_t(1.1)));
    for (std::int64_t i = 0; i < 36; ++i)
        ci[i] *= ph;
    REQUIRE(max_abs_diff(rss_combine(ci), r1) < 1e-13);

    // synthesize_kspace is fft2c of maps * image, coil by coil
    const SensitivityMaps maps = simulate_maps(8, 8, 3, 7);
    Tensor img = rand_real({8, 8}, rng);
    for (std::int64_t i = 0; i < img.numel(); ++i)
        img[i] = cplx(std::abs(img[i].real()), 0);
    const MultiCoilKSpace k = synthesize_kspace(img, maps);
    for (int c = 0; c < 3; ++c) {
        Tensor prod({8, 8});
        for (std::int64_t i = 0; i < 64; ++i)
            prod[i] = maps.maps[std::int64_t(c) * 64 + i] * img[i];
        const Tensor kc = fft2c(prod);
        for (std::int64_t i = 0; i < 64; ++i)
            REQUIRE(std::abs(cplx(k.coils[std::int64_t(c) * 64 + i]) - cplx(kc[i])) < 1e-12);
    }

    // fully sampled acquisition reproduces the magnitude image through RSS
    Tensor co({3, 8, 8});
    for (int c = 0; c < 3; ++c) {
        Tensor plane({8, 8});
        for (std::int64_t i = 0; i < 64; ++i)
            plane[i] = k.coils[std::int64_t(c) * 64 + i];
        const Tensor ic = ifft2c(plane);
        for (std::int64_t i = 0; i < 64; ++i)
            co[std::int64_t(c) * 64 + i] = ic[i];
    }
    REQUIRE(max_abs_diff(rss_combine(co), img) < 1e-8); // maps are RSS-normalized
    ok("rss combination and k-space synthesis");
}

void test_simulate_maps() {
    const SensitivityMaps m = simulate_maps(16, 12, 4, 11);
    REQUIRE(m.num_coils() == 4 && m.h() == 16 && m.w() == 12);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 12; ++x) {
            double s = 0;
            for (int c = 0; c < 4; ++c) {
                const cplx v = m.maps[(std::int64_t(c) * 16 + y) * 12 + x];
                s += double(v.real()) * v.real() + double(v.imag()) * v.imag();
            }
            REQUIRE_CLOSE(std::sqrt(s), 1.0, 1e-12);
        }
    const SensitivityMaps m2 = simulate_maps(16, 12, 4, 11);
    REQUIRE(bit_equal(m.maps, m2.maps));
    REQUIRE(!bit_equal(m.maps, simulate_maps(16, 12, 4, 12).maps));
    ok("simulated maps are RSS-normalized and deterministic");
}

void test_thermal_noise() {
    MultiCoilKSpace k;
    k.coils = Tensor({4, 64, 64});
    const double sigma = 0.37;
    const MultiCoilKSpace kn = add_thermal_noise(k, {real_t(sigma), 99});
    double s = 0;
    const std::int64_t n = kn.coils.numel();
    for (std::int64_t i = 0; i < n; ++i)
        s += double(kn.coils[i].real()) * kn.coils[i].real() +
             double(kn.coils[i].imag()) * kn.coils[i].imag();
    const double est = std::sqrt(s / double(2 * n));
    REQUIRE_MSG(std::abs(est - sigma) / sigma < 0.02, "sample sigma %g vs %g", est, sigma);

    // deterministic in the seed, additive on top of the signal
    Rng rng(33);
    MultiCoilKSpace ks;
    ks.coils = rand_cplx({2, 8, 8}, rng);
    const MultiCoilKSpace a = add_thermal_noise(ks, {real_t(0.1), 5});
    const MultiCoilKSpace b = add_thermal_noise(ks, {real_t(0.1), 5});
    REQUIRE(bit_equal(a.coils, b.coils));
    Tensor diff({2, 8, 8});
    for (std::int64_t i = 0; i < diff.numel(); ++i)
        diff[i] = a.coils[i] - ks.coils[i];
    REQUIRE(diff.norm2() > 0);
    const MultiCoilKSpace z = add_thermal_noise(ks, {real_t(0.0), 5});
    REQUIRE(bit_equal(z.coils, ks.coils));
    ok("thermal noise level, determinism, zero-sigma identity");
}

void test_background_noise_estimator() {
    // single coil: RSS magnitude of pure complex noise is Rayleigh(sigma)
    Rng rng(34);
    const double sigma = 0.21;
    {
        Tensor coils({1, 80, 80});
        for (std::int64_t i = 0; i < coils.numel(); ++i)
            coils[i] = cplx(real_t(sigma * rng.normal()), real_t(sigma * rng.normal()));
        const Tensor img = rss_combine(coils);
        const Tensor mask = Tensor::full({80, 80}, cplx(1, 0));
        const double est = estimate_background_noise(img, mask, 1);
        REQUIRE_MSG(std::abs(est - sigma) / sigma < 0.05, "est %g vs %g", est, sigma);
    }
    // four coils: chi with 8 degrees of freedom
    {
        Tensor coils({4, 80, 80});
        for (std::int64_t i = 0; i < coils.numel(); ++i)
            coils[i] = cplx(real_t(sigma * rng.normal()), real_t(sigma * rng.normal()));
        const Tensor img = rss_combine(coils);
        const Tensor mask = Tensor::full({80, 80}, cplx(1, 0));
        const double est = estimate_background_noise(img, mask, 4);
        REQUIRE_MSG(std::abs(est - sigma) / sigma < 0.05, "est %g vs %g", est, sigma);
    }
    // the estimator only looks inside the mask
    {
        Tensor img({4, 4});
        Tensor mask({4, 4});
        img.at(0, 0) = cplx(1.0, 0);
        img.at(0, 1) = cplx(2.0, 0);
        mask.at(0, 0) = cplx(1, 0);
        mask.at(0, 1) = cplx(1, 0);
        const double med = 1.5; // median of {1, 2}
        const double est = estimate_background_noise(img, mask, 1);
        REQUIRE_CLOSE(est, med / std::sqrt(2.0 * std::log(2.0)), 1e-12);
        REQUIRE_THROWS_AS(estimate_background_noise(img, Tensor({4, 4}), 1), Error);
    }
    ok("background noise estimator recovers sigma");
}

} // namespace

int main() {
    test_mask_quota_and_center();
    test_mask_apply();
    test_synthesize_and_rss();
    test_simulate_maps();
    test_thermal_noise();
    test_background_noise_estimator();
    std::printf("test_mri: all passed\n");
    return 0;
}
