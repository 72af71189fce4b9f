#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "advmr/attack.hpp"
#include "advmr/fft.hpp"
#include "advmr/metrics.hpp"
#include "advmr/model.hpp"
#include "advmr/mri.hpp"
#include "advmr/phantom.hpp"
#include "check.hpp"

using namespace advmr;

namespace {

struct Case {
    Phantom ph;
    SamplingMask mask;
    MultiCoilKSpace kfull;
    MultiCoilKSpace km;
};

Case make_case(int size, int coils, int accel, std::uint64_t seed) {
    Case c;
    c.ph = generate_phantom(size, size, coils, seed);
    c.mask = make_cartesian_mask(size, accel, 0, Rng::mix(seed, 0x6d61736bULL));
    c.kfull = synthesize_kspace(c.ph.image, c.ph.maps);
    c.km = apply_mask(c.kfull, c.mask);
    return c;
}

SamplingMask full_mask(int w) {
    SamplingMask m;
    m.columns = Tensor({w});
    for (int j = 0; j < w; ++j)
        m.columns[j] = cplx(1, 0);
    m.accel = 1;
    m.center_fraction = 1;
    return m;
}

ReconOperator tiny_unet(std::uint64_t seed) {
    UNetConfig uc;
    uc.top_channels = 4;
    uc.depth = 1;
    return make_unet(uc, seed);
}

Tensor rotate_back(const Tensor& img, double theta_deg) {
    Tape t;
    const Var v = t.resample(t.constant(img), ResampleGrid::rotation(img.dim(0), img.dim(1), -theta_deg));
    return t.val(v);
}

Tensor ifft_coils(const Tensor& k) {
    const int n = k.dim(0), h = k.dim(1), w = k.dim(2);
    Tensor out({n, h, w});
    for (int i = 0; i < n; ++i) {
        Tensor plane({h, w});
        for (std::int64_t j = 0; j < std::int64_t(h) * w; ++j)
            plane[j] = k[i * std::int64_t(h) * w + j];
        const Tensor img = ifft2c(plane);
        for (std::int64_t j = 0; j < std::int64_t(h) * w; ++j)
            out[i * std::int64_t(h) * w + j] = img[j];
    }
    return out;
}

double coil_l2(const Tensor& k, int i) {
    double s = 0;
    const std::int64_t plane = k.numel() / k.dim(0);
    for (std::int64_t j = 0; j < plane; ++j) {
        const cplx v = k[i * plane + j];
        s += double(v.real()) * v.real() + double(v.imag()) * v.imag();
    }
    return std::sqrt(s);
}

void require_feasible(const AttackReport& rep, int coils) {
    REQUIRE(int(rep.constraint_slack.size()) == coils);
    for (const double s : rep.constraint_slack)
        REQUIRE(s <= 1.0 + 1e-9);
}

void test_zero_budget_is_exact_baseline() {
    const Case c = make_case(32, 2, 4, 210);
    const ReconOperator zf = make_zero_filled();
    NoiseAttackConfig cfg;
    cfg.eta = 0;
    cfg.steps = 4;
    const RegionMask full = RegionMask::full(32, 32);
    AttackReport rep = pgd_noise_attack(zf, c.kfull, c.mask, c.ph.image, full, cfg, &c.ph.maps);
    REQUIRE(rep.objective_adv == rep.objective_base);
    REQUIRE(rep.attacked.ssim == rep.baseline.ssim);
    REQUIRE(rep.attacked.psnr == rep.baseline.psnr);
    REQUIRE(rep.z.shape() == c.kfull.coils.shape());
    REQUIRE(rep.z.norm2() == 0.0);
    require_feasible(rep, 2);
    REQUIRE(bit_equal(rep.recon_adv, rep.recon_base));
    ok("zero budget reproduces the unperturbed reconstruction exactly");
}

void test_full_mask_single_coil_reaches_analytic_bound() {
    // With one coil, every column sampled and the zero-filled operator, the
    // objective || |F^-1(k+z)| - |F^-1 k| || is bounded by ||z|| and the
    // bound is attained at z proportional to k, so the optimum is eta*||k||.
    const Phantom ph = generate_phantom(32, 32, 1, 211);
    const SamplingMask mask = full_mask(32);
    const MultiCoilKSpace k = synthesize_kspace(ph.image, ph.maps);
    const ReconOperator zf = make_zero_filled();
    const Tensor base = reconstruct(zf, k, &mask, &ph.maps);

    const double eta = 0.05;
    NoiseAttackConfig cfg;
    cfg.eta = eta;
    cfg.steps = 40;
    cfg.step_size = 0.3;
    cfg.seed = 3;
    const RegionMask full = RegionMask::full(32, 32);
    AttackReport rep = pgd_noise_attack(zf, k, mask, base, full, cfg, &ph.maps);
    const double bound = eta * coil_l2(k.coils, 0);
    REQUIRE_MSG(rep.objective_adv >= 0.95 * bound, "reached %.6f of the bound %.6f",
                rep.objective_adv, bound);
    REQUIRE(rep.objective_adv <= bound * (1.0 + 1e-6));
    require_feasible(rep, 1);
    REQUIRE(rep.constraint_slack[0] >= 0.99);
    ok("projected ascent reaches the analytic optimum on the linear case");
}

void test_feasibility_and_dominance_randomized() {
    const ReconOperator zf = make_zero_filled();
    const ReconOperator un = tiny_unet(77);
    const double etas[3] = {0.01, 0.02, 0.03};
    for (int i = 0; i < 6; ++i) {
        const Case c = make_case(32, 2, i % 2 ? 8 : 4, 300 + std::uint64_t(i));
        const ReconOperator& f = i % 2 ? un : zf;
        NoiseAttackConfig cfg;
        cfg.eta = etas[i % 3];
        cfg.steps = 8;
        cfg.seed = 40 + std::uint64_t(i);
        const RegionMask s = RegionMask::full(32, 32);
        AttackReport rep = pgd_noise_attack(f, c.kfull, c.mask, c.ph.image, s, cfg, &c.ph.maps);
        require_feasible(rep, 2);
        REQUIRE(rep.objective_adv >= rep.objective_base);
        REQUIRE(!rep.objective_trace.empty());
        REQUIRE(rep.objective_trace.front() == rep.objective_base);
        double mx = -HUGE_VAL;
        for (const double v : rep.objective_trace)
            mx = std::max(mx, v);
        REQUIRE(rep.objective_adv >= mx - 1e-12);
        REQUIRE(rep.z.shape() == c.kfull.coils.shape());
    }
    ok("random cases stay feasible and never fall below the baseline");
}

void test_warm_start_monotone() {
    const Case c = make_case(32, 2, 4, 220);
    const ReconOperator un = tiny_unet(21);
    const RegionMask s = RegionMask::full(32, 32);

    NoiseAttackConfig a;
    a.eta = 0.01;
    a.steps = 8;
    a.seed = 5;
    AttackReport r1 = pgd_noise_attack(un, c.kfull, c.mask, c.ph.image, s, a, &c.ph.maps);

    NoiseAttackConfig b = a;
    b.eta = 0.02;
    b.warm_start = r1.z;
    AttackReport r2 = pgd_noise_attack(un, c.kfull, c.mask, c.ph.image, s, b, &c.ph.maps);
    REQUIRE_MSG(r2.objective_adv >= r1.objective_adv - 1e-12, "%.9f < %.9f", r2.objective_adv,
                r1.objective_adv);
    require_feasible(r2, 2);

    // a warm start outside the smaller budget gets projected back inside
    NoiseAttackConfig tight = a;
    tight.eta = 0.005;
    tight.warm_start = r2.z;
    AttackReport r3 = pgd_noise_attack(un, c.kfull, c.mask, c.ph.image, s, tight, &c.ph.maps);
    require_feasible(r3, 2);
    ok("larger budgets warm-started from smaller ones only improve");
}

void test_step_rule_variants() {
    const Case c = make_case(32, 2, 4, 230);
    const ReconOperator zf = make_zero_filled();
    const RegionMask s = RegionMask::full(32, 32);

    NoiseAttackConfig huge;
    huge.eta = 0.02;
    huge.steps = 5;
    huge.step_size = 25.0;
    AttackReport rh = pgd_noise_attack(zf, c.kfull, c.mask, c.ph.image, s, huge, &c.ph.maps);
    require_feasible(rh, 2);
    REQUIRE(rh.objective_adv >= rh.objective_base);

    NoiseAttackConfig raw;
    raw.eta = 0.02;
    raw.steps = 5;
    raw.step_size = 0.5;
    raw.raw_gradient_step = true;
    raw.restarts = 2;
    raw.seed = 9;
    AttackReport rr = pgd_noise_attack(zf, c.kfull, c.mask, c.ph.image, s, raw, &c.ph.maps);
    require_feasible(rr, 2);
    REQUIRE(rr.objective_adv >= rr.objective_base);

    REQUIRE_THROWS_AS(
        [&] {
            NoiseAttackConfig bad;
            bad.eta = -0.1;
            pgd_noise_attack(zf, c.kfull, c.mask, c.ph.image, s, bad, &c.ph.maps);
        }(),
        UsageError);
    REQUIRE_THROWS_AS(
        [&] {
            NoiseAttackConfig bad;
            bad.steps = 0;
            pgd_noise_attack(zf, c.kfull, c.mask, c.ph.image, s, bad, &c.ph.maps);
        }(),
        UsageError);
    ok("oversized and raw steps stay projected; bad configs are rejected");
}

void test_rotate_kspace_basics() {
    Rng rng(31);
    MultiCoilKSpace k;
    k.coils = rand_cplx({2, 8, 8}, rng);

    const MultiCoilKSpace same = rotate_kspace(k, 0);
    REQUIRE(bit_equal(same.coils, k.coils));

    // two quarter turns are the exact center flip, and a quarter turn on a
    // square permutes pixels without losing energy
    const MultiCoilKSpace quarter = rotate_kspace(k, 90);
    REQUIRE(std::abs(quarter.coils.norm2() - k.coils.norm2()) < 1e-9);
    const MultiCoilKSpace half = rotate_kspace(quarter, 90);
    Tensor img0 = ifft_coils(k.coils);
    Tensor img2 = ifft_coils(half.coils);
    double worst = 0;
    for (int n = 0; n < 2; ++n)
        for (int r = 0; r < 8; ++r)
            for (int col = 0; col < 8; ++col) {
                const cplx a = img2[(n * 8 + r) * 8 + col];
                const cplx b = img0[(n * 8 + (7 - r)) * 8 + (7 - col)];
                worst = std::max(worst, double(std::abs(a - b)));
            }
    REQUIRE_MSG(worst < 1e-10, "flip mismatch %.3e", worst);

    REQUIRE_THROWS_AS(rotate_kspace(k, 181.0), UsageError);
    ok("k-space rotation: identity at zero, exact quarter-turn permutation");
}

void test_rotation_roundtrip_small_angle() {
    // smooth input so bilinear resampling error stays small
    const int n = 32;
    Tensor img({n, n});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const double dy = r - (n - 1) / 2.0, dx = c - (n - 1) / 2.0;
            img[r * n + c] = cplx(real_t(std::exp(-(dx * dx + dy * dy) / 50.0)), 0);
        }
    SensitivityMaps maps;
    maps.maps = Tensor({1, n, n});
    for (std::int64_t i = 0; i < n * n; ++i)
        maps.maps[i] = cplx(1, 0);
    const MultiCoilKSpace k = synthesize_kspace(img, maps);
    const MultiCoilKSpace back = rotate_kspace(rotate_kspace(k, 3.0), -3.0);
    const Tensor a = ifft_coils(k.coils), b = ifft_coils(back.coils);
    REQUIRE_MSG(max_abs_diff(a, b) < 2e-2, "roundtrip error %.3e", max_abs_diff(a, b));
    ok("small-angle rotation roundtrips within interpolation error");
}

void test_rotation_grid_and_dominance() {
    const Case c = make_case(32, 2, 4, 240);
    const ReconOperator zf = make_zero_filled();
    const RegionMask s = RegionMask::full(32, 32);

    RotationAttackConfig cfg;
    cfg.theta_max = 0.35;
    cfg.grid_step = 0.1;
    AttackReport rep = rotation_attack(zf, c.kfull, c.mask, c.ph.image, s, cfg, &c.ph.maps);
    REQUIRE(rep.angle_curve.size() == 9);
    REQUIRE(rep.angle_curve.front()[0] == -0.35);
    REQUIRE(rep.angle_curve.back()[0] == 0.35);
    bool has_zero = false;
    for (std::size_t i = 0; i + 1 < rep.angle_curve.size(); ++i)
        REQUIRE(rep.angle_curve[i][0] < rep.angle_curve[i + 1][0]);
    double best = -HUGE_VAL;
    for (const auto& e : rep.angle_curve) {
        if (e[0] == 0.0) {
            has_zero = true;
            REQUIRE(e[1] == rep.objective_base);
        }
        best = std::max(best, e[1]);
    }
    REQUIRE(has_zero);
    REQUIRE(rep.objective_adv == best);
    REQUIRE(rep.objective_adv >= rep.objective_base);
    REQUIRE(std::abs(rep.theta_star) <= 0.35);
    REQUIRE(rep.z.empty());

    RotationAttackConfig exact;
    exact.theta_max = 0.3;
    exact.grid_step = 0.1;
    AttackReport re = rotation_attack(zf, c.kfull, c.mask, c.ph.image, s, exact, &c.ph.maps);
    REQUIRE(re.angle_curve.size() == 7);

    RotationAttackConfig zero;
    zero.theta_max = 0;
    AttackReport rz = rotation_attack(zf, c.kfull, c.mask, c.ph.image, s, zero, &c.ph.maps);
    REQUIRE(rz.angle_curve.size() == 1);
    REQUIRE(rz.theta_star == 0.0);
    REQUIRE(rz.objective_adv == rz.objective_base);
    ok("rotation grid covers endpoints and zero; the pick dominates exactly");
}

void test_rotation_curve_recomputable() {
    const Case c = make_case(32, 2, 4, 250);
    const ReconOperator zf = make_zero_filled();
    const AnnotationBox& box = c.ph.annotations.front();
    const RegionMask s = RegionMask::box(32, 32, box.x, box.y, box.width, box.height);

    RotationAttackConfig cfg;
    cfg.theta_max = 0.2;
    cfg.grid_step = 0.1;
    AttackReport rep = rotation_attack(zf, c.kfull, c.mask, c.ph.image, s, cfg, &c.ph.maps);

    for (const auto& e : rep.angle_curve) {
        const double theta = e[0];
        const MultiCoilKSpace kr = rotate_kspace(c.kfull, theta);
        Tensor out = reconstruct(zf, apply_mask(kr, c.mask), &c.mask, &c.ph.maps);
        if (theta != 0)
            out = rotate_back(out, theta);
        double obj = 0;
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            const double d = double(out[i].real()) - double(c.ph.image[i].real());
            obj += s.mask[i].real() * d * d;
        }
        obj = std::sqrt(obj);
        REQUIRE_CLOSE(obj, e[1], 1e-9);
        REQUIRE_CLOSE(region_ssim(out, c.ph.image, s, MetricConfig{}), e[2], 1e-9);
    }
    ok("every reported angle score is reproducible from the pieces");
}

void test_sweep_rows_and_monotonicity() {
    std::vector<Phantom> ds;
    ds.push_back(generate_phantom(32, 32, 2, 501));
    ds.push_back(generate_phantom(32, 32, 2, 502));

    std::vector<SweepModelEntry> models;
    models.push_back({"zero_filled", 4, make_zero_filled()});
    models.push_back({"unet", 4, tiny_unet(88)});

    SweepConfig cfg;
    cfg.kind = AttackKind::noise;
    cfg.params = {0.02, 0.0, 0.01}; // sweep sorts ascending
    cfg.seed = 61;
    cfg.pgd_steps = 6;
    cfg.workers = 1;
    const std::vector<SweepRow> rows = sweep(models, ds, cfg);
    REQUIRE(rows.size() == 2 * 2 * 3);

    for (int mi = 0; mi < 2; ++mi)
        for (int si = 0; si < 2; ++si) {
            const SweepRow* r = &rows[std::size_t(mi * 2 + si) * 3];
            REQUIRE(r[0].param == 0.0);
            REQUIRE(r[1].param == 0.01);
            REQUIRE(r[2].param == 0.02);
            REQUIRE(r[0].ssim_adv == r[0].ssim_base);
            REQUIRE(r[0].psnr_adv == r[0].psnr_base);
            for (int pi = 0; pi < 3; ++pi) {
                REQUIRE(r[pi].model == models[std::size_t(mi)].model);
                REQUIRE(r[pi].sample == si);
                REQUIRE(r[pi].attack == std::string("noise"));
                REQUIRE(r[pi].smode == std::string("annotated"));
                REQUIRE(r[pi].seed == 61);
                REQUIRE(r[pi].ssim_base == r[0].ssim_base);
                if (pi) {
                    REQUIRE(r[pi].ssim_adv <= r[pi - 1].ssim_adv);
                    REQUIRE(r[pi].objective >= r[pi - 1].objective);
                }
            }
        }

    // bitwise repeatability of the whole table
    const std::vector<SweepRow> again = sweep(models, ds, cfg);
    REQUIRE(again.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        REQUIRE(again[i].ssim_adv == rows[i].ssim_adv);
        REQUIRE(again[i].psnr_adv == rows[i].psnr_adv);
        REQUIRE(again[i].objective == rows[i].objective);
    }

    // selection over the whole field changes the label and the optimization
    SweepConfig fullsel = cfg;
    fullsel.params = {0.02};
    fullsel.smode = SelectionMode::full;
    const std::vector<SweepRow> fr = sweep(models, ds, fullsel);
    REQUIRE(fr.size() == 4);
    for (const SweepRow& row : fr) {
        REQUIRE(row.smode == std::string("full"));
        REQUIRE(row.ssim_adv <= 1.0);
        REQUIRE(row.objective >= 0.0);
    }

    SweepConfig rot = cfg;
    rot.kind = AttackKind::rotation;
    rot.params = {0.2};
    const std::vector<SweepRow> rr = sweep(models, ds, rot);
    REQUIRE(rr.size() == 4);
    for (const SweepRow& row : rr) {
        REQUIRE(row.attack == std::string("rotation"));
        REQUIRE(row.ssim_adv <= row.ssim_base + 1e-12);
    }

    std::vector<Phantom> bare = ds;
    bare[0].annotations.clear();
    REQUIRE_THROWS_AS(sweep(models, bare, cfg), Error);
    REQUIRE_THROWS_AS(sweep({}, ds, cfg), UsageError);
    SweepConfig noparams = cfg;
    noparams.params.clear();
    REQUIRE_THROWS_AS(sweep(models, ds, noparams), UsageError);
    ok("sweep rows are ordered, monotone, repeatable, and validated");
}

} // namespace

int main() {
    test_zero_budget_is_exact_baseline();
    test_full_mask_single_coil_reaches_analytic_bound();
    test_feasibility_and_dominance_randomized();
    test_warm_start_monotone();
    test_step_rule_variants();
    test_rotate_kspace_basics();
    test_rotation_roundtrip_small_angle();
    test_rotation_grid_and_dominance();
    test_rotation_curve_recomputable();
    test_sweep_rows_and_monotonicity();
    std::printf("test_attack: all passed\n");
    return 0;
}
