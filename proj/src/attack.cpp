#include "advmr/attack.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "advmr/errors.hpp"
#include "advmr/fft.hpp"
#include "advmr/rng.hpp"
#include "advmr/runio.hpp"

namespace advmr {

const char* attack_name(AttackKind k) {
    return k == AttackKind::noise ? "noise" : "rotation";
}

const char* smode_name(SelectionMode m) {
    return m == SelectionMode::annotated ? "annotated" : "full";
}

namespace {

double coil_norm(const Tensor& t, int c) {
    const std::int64_t plane = std::int64_t(t.dim(1)) * t.dim(2);
    double s = 0;
    for (std::int64_t i = c * plane; i < (c + 1) * plane; ++i)
        s += double(t[i].real()) * t[i].real() + double(t[i].imag()) * t[i].imag();
    return std::sqrt(s);
}

// scale each coil's noise back onto its L2 ball when it left it
void project_coils(Tensor& z, const std::vector<double>& budget) {
    const int n = z.dim(0);
    const std::int64_t plane = std::int64_t(z.dim(1)) * z.dim(2);
    for (int c = 0; c < n; ++c) {
        const double nz = coil_norm(z, c);
        if (nz <= budget[std::size_t(c)])
            continue;
        const real_t f = budget[std::size_t(c)] > 0 ? real_t(budget[std::size_t(c)] / nz) : real_t(0);
        for (std::int64_t i = c * plane; i < (c + 1) * plane; ++i)
            z[i] *= f;
    }
}

struct ObjectiveEval {
    double objective = 0;
    Tensor recon;
    Tensor grad; // empty unless requested
};

// obj(z) = || S * (f(mask(k + z)) - target) ||_2, with d obj / d z on demand
ObjectiveEval eval_objective(const ReconOperator& f, const Tensor& k_full, const SamplingMask& mask,
                             const Tensor& target, const std::shared_ptr<const Tensor>& sel,
                             const SensitivityMaps* maps, const Tensor& z, bool want_grad, int step_tag) {
    Tape t;
    ModelVars vars = register_params(t, f, false);
    const Var kv = t.constant(k_full);
    const Var zv = t.leaf(z, want_grad);
    const Var mplane = t.constant(mask.plane(k_full.dim(1), k_full.dim(0)));
    const Var km = t.mul(t.add(kv, zv), mplane);
    const Var pred = model_forward(t, f, vars, km, &mask, maps);
    if (!t.val(pred).same_shape(target))
        throw ShapeError("attack target " + target.shape_str() + " does not match model output " +
                         t.val(pred).shape_str());
    const Var diff = t.sub(pred, t.constant(target));
    const Var obj = t.sqrt_(t.masked_sum(t.mul(diff, t.conj(diff)), sel));

    ObjectiveEval ev;
    ev.objective = double(t.val(obj)[0].real());
    ev.recon = t.val(pred);
    if (want_grad) {
        GradMap gm = t.backward(obj);
        ev.grad = std::move(gm.at(zv.id));
        if (!ev.grad.all_finite())
            throw NumericalError("non-finite attack gradient at step " + std::to_string(step_tag));
    }
    return ev;
}

// deterministic fallback ascent direction for coils whose gradient vanishes
// exactly (a stationary start, typically the unperturbed full-mask case)
void fill_random_direction(Tensor& g, int c, Rng& rng) {
    const std::int64_t plane = std::int64_t(g.dim(1)) * g.dim(2);
    for (std::int64_t i = c * plane; i < (c + 1) * plane; ++i)
        g[i] = cplx(real_t(rng.normal()), real_t(rng.normal()));
}

struct PgdOutcome {
    Tensor z;
    double objective = 0;
    Tensor recon;
    std::vector<double> trace;
};

PgdOutcome run_pgd(const ReconOperator& f, const Tensor& k_full, const SamplingMask& mask,
                   const Tensor& target, const std::shared_ptr<const Tensor>& sel,
                   const SensitivityMaps* maps, const std::vector<double>& budget, Tensor z0,
                   const NoiseAttackConfig& cfg, std::uint64_t run_seed) {
    const int n = k_full.dim(0);
    const std::int64_t plane = std::int64_t(k_full.dim(1)) * k_full.dim(2);

    PgdOutcome best;
    Tensor z = std::move(z0);
    project_coils(z, budget);

    ObjectiveEval ev = eval_objective(f, k_full, mask, target, sel, maps, z, true, 0);
    best.z = z;
    best.objective = ev.objective;
    best.recon = ev.recon;
    best.trace.push_back(ev.objective);

    Rng fallback_rng(run_seed);
    Tensor z_last = z;
    ObjectiveEval ev_last = ev;
    for (int step = 1; step <= cfg.steps; ++step) {
        Tensor g = std::move(ev_last.grad);
        for (int c = 0; c < n; ++c) {
            if (budget[std::size_t(c)] <= 0)
                continue;
            double gn = coil_norm(g, c);
            if (gn == 0) {
                fill_random_direction(g, c, fallback_rng);
                gn = coil_norm(g, c);
            }
            const real_t scale = cfg.raw_gradient_step
                                     ? real_t(cfg.step_size)
                                     : real_t(cfg.step_size * budget[std::size_t(c)] / gn);
            for (std::int64_t i = c * plane; i < (c + 1) * plane; ++i)
                z_last[i] += scale * g[i];
        }
        project_coils(z_last, budget);

        const bool last = step == cfg.steps;
        ev_last = eval_objective(f, k_full, mask, target, sel, maps, z_last, !last, step);
        best.trace.push_back(ev_last.objective);
        if (ev_last.objective > best.objective) {
            best.objective = ev_last.objective;
            best.z = z_last;
            best.recon = ev_last.recon;
        }
    }
    if (!cfg.track_best_iterate) {
        best.z = z_last;
        best.objective = ev_last.objective;
        best.recon = ev_last.recon;
    }
    return best;
}

} // namespace

AttackReport pgd_noise_attack(const ReconOperator& f, const MultiCoilKSpace& k, const SamplingMask& mask,
                              const Tensor& target, const RegionMask& s, const NoiseAttackConfig& cfg,
                              const SensitivityMaps* maps, const MetricConfig& mcfg) {
    k.check();
    if (cfg.eta < 0)
        throw UsageError("attack budget eta must be >= 0, got " + std::to_string(cfg.eta));
    if (cfg.steps < 1 || cfg.step_size <= 0)
        throw UsageError("attack needs steps >= 1 and step_size > 0");
    const int n = k.num_coils();

    auto sel = std::make_shared<const Tensor>(s.mask);
    std::vector<double> budget(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c)
        budget[std::size_t(c)] = cfg.eta * coil_norm(k.coils, c);

    // the unperturbed instance doubles as baseline and as the z = 0 candidate
    ObjectiveEval base = eval_objective(f, k.coils, mask, target, sel, maps, Tensor(k.coils.shape()), false, 0);

    AttackReport rep;
    rep.recon_base = base.recon;
    rep.objective_base = base.objective;
    rep.baseline.ssim = region_ssim(base.recon, target, s, mcfg);
    rep.baseline.psnr = region_psnr(base.recon, target, s, mcfg);

    if (cfg.eta == 0) {
        rep.z = Tensor(k.coils.shape());
        rep.objective_adv = base.objective;
        rep.recon_adv = base.recon;
        rep.attacked = rep.baseline;
        rep.objective_trace.assign(1, base.objective);
        rep.constraint_slack.assign(std::size_t(n), 0.0);
        return rep;
    }

    PgdOutcome best;
    best.z = Tensor(k.coils.shape());
    best.objective = base.objective;
    best.recon = base.recon;

    std::vector<Tensor> starts;
    starts.push_back(!cfg.warm_start.empty() ? cfg.warm_start : Tensor(k.coils.shape()));
    if (!cfg.warm_start.empty() && !cfg.warm_start.same_shape(k.coils))
        throw ShapeError("warm start " + cfg.warm_start.shape_str() + " does not match k-space " +
                         k.coils.shape_str());
    for (int r = 0; r < cfg.restarts; ++r) {
        Tensor z0(k.coils.shape());
        Rng rng(Rng::mix(cfg.seed, 0x72657374 + std::uint64_t(r)));
        for (int c = 0; c < n; ++c)
            fill_random_direction(z0, c, rng);
        project_coils(z0, budget);
        starts.push_back(std::move(z0));
    }

    for (std::size_t si = 0; si < starts.size(); ++si) {
        PgdOutcome out = run_pgd(f, k.coils, mask, target, sel, maps, budget, std::move(starts[si]), cfg,
                                 Rng::mix(cfg.seed, 0x70676400 + std::uint64_t(si)));
        if (si == 0)
            rep.objective_trace = out.trace;
        const bool better = cfg.track_best_iterate ? out.objective > best.objective : si == 0;
        if (better) {
            best.z = std::move(out.z);
            best.objective = out.objective;
            best.recon = std::move(out.recon);
        }
    }

    rep.z = std::move(best.z);
    rep.objective_adv = best.objective;
    rep.recon_adv = std::move(best.recon);
    rep.attacked.ssim = region_ssim(rep.recon_adv, target, s, mcfg);
    rep.attacked.psnr = region_psnr(rep.recon_adv, target, s, mcfg);
    rep.constraint_slack.resize(std::size_t(n));
    for (int c = 0; c < n; ++c) {
        const double nz = coil_norm(rep.z, c);
        rep.constraint_slack[std::size_t(c)] = budget[std::size_t(c)] > 0 ? nz / budget[std::size_t(c)]
                                                                          : (nz > 0 ? HUGE_VAL : 0.0);
    }
    return rep;
}

namespace {

Tensor rotate_image(const Tensor& img, double theta_deg) {
    const auto grid = ResampleGrid::rotation(img.dim(0), img.dim(1), theta_deg);
    Tape t;
    return t.val(t.resample(t.constant(img), grid));
}

} // namespace

MultiCoilKSpace rotate_kspace(const MultiCoilKSpace& k, double theta_deg) {
    k.check();
    if (std::abs(theta_deg) > 180)
        throw UsageError("rotation angle out of range: " + std::to_string(theta_deg));
    MultiCoilKSpace out;
    if (theta_deg == 0) { // identity; skip the transform roundtrip entirely
        out.coils = k.coils;
        return out;
    }
    const int n = k.num_coils(), h = k.h(), w = k.w();
    out.coils = Tensor({n, h, w});
    const auto grid = ResampleGrid::rotation(h, w, theta_deg);
    Tensor plane({h, w});
    for (int c = 0; c < n; ++c) {
        std::copy(k.coils.data() + std::int64_t(c) * h * w, k.coils.data() + std::int64_t(c + 1) * h * w,
                  plane.data());
        Tape t;
        Tensor rotated = t.val(t.resample(t.constant(ifft2c(plane)), grid));
        Tensor back = fft2c(rotated);
        std::copy(back.data(), back.data() + back.numel(), out.coils.data() + std::int64_t(c) * h * w);
    }
    return out;
}

AttackReport rotation_attack(const ReconOperator& f, const MultiCoilKSpace& k, const SamplingMask& mask,
                             const Tensor& target, const RegionMask& s, const RotationAttackConfig& cfg,
                             const SensitivityMaps* maps, const MetricConfig& mcfg) {
    k.check();
    if (cfg.theta_max < 0 || cfg.grid_step <= 0)
        throw UsageError("rotation attack needs theta_max >= 0 and grid_step > 0");

    std::vector<double> angles;
    const int jmax = int(std::floor(cfg.theta_max / cfg.grid_step + 1e-9));
    for (int j = -jmax; j <= jmax; ++j)
        angles.push_back(j * cfg.grid_step);
    if (jmax * cfg.grid_step < cfg.theta_max - 1e-12) { // keep the endpoints on the grid
        angles.insert(angles.begin(), -cfg.theta_max);
        angles.push_back(cfg.theta_max);
    }

    auto sel = std::make_shared<const Tensor>(s.mask);
    AttackReport rep;
    bool have_best = false;
    double best_obj = 0, best_theta = 0;
    Tensor best_recon;

    for (const double theta : angles) {
        const MultiCoilKSpace kr = rotate_kspace(k, theta);
        ObjectiveEval raw =
            eval_objective(f, kr.coils, mask, target, sel, maps, Tensor(kr.coils.shape()), false, 0);
        // undo the patient rotation on the output before scoring
        Tensor out = theta != 0 ? rotate_image(raw.recon, -theta) : raw.recon;
        double obj = 0;
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            const double d = double(out[i].real()) - double(target[i].real());
            obj += (*sel)[i].real() * d * d;
        }
        obj = std::sqrt(obj);
        const double ssim_here = region_ssim(out, target, s, mcfg);
        rep.angle_curve.push_back({theta, obj, ssim_here});

        if (theta == 0) {
            rep.recon_base = out;
            rep.objective_base = obj;
            rep.baseline.ssim = ssim_here;
            rep.baseline.psnr = region_psnr(out, target, s, mcfg);
        }
        if (!have_best || obj > best_obj ||
            (obj == best_obj && std::abs(theta) < std::abs(best_theta))) {
            have_best = true;
            best_obj = obj;
            best_theta = theta;
            best_recon = std::move(out);
        }
    }

    rep.theta_star = best_theta;
    rep.objective_adv = best_obj;
    rep.recon_adv = std::move(best_recon);
    rep.attacked.ssim = region_ssim(rep.recon_adv, target, s, mcfg);
    rep.attacked.psnr = region_psnr(rep.recon_adv, target, s, mcfg);
    return rep;
}

std::vector<SweepRow> sweep(const std::vector<SweepModelEntry>& models, const std::vector<Phantom>& ds,
                            const SweepConfig& cfg) {
    if (models.empty())
        throw UsageError("sweep: no models");
    if (ds.empty())
        throw Error("sweep: empty dataset");
    if (cfg.params.empty())
        throw UsageError("sweep: empty parameter list");
    std::vector<double> params = cfg.params;
    std::sort(params.begin(), params.end());

    const int nm = int(models.size()), ns = int(ds.size()), np = int(params.size());
    std::vector<SweepRow> rows(std::size_t(nm) * ns * np);

    // one job per (model, sample): the parameter axis is sequential inside a
    // job because higher budgets warm-start from the lower-budget solution
    parallel_for(nm * ns, cfg.workers, [&](int job) {
        const int mi = job / ns, si = job % ns;
        const SweepModelEntry& me = models[std::size_t(mi)];
        const Phantom& ph = ds[std::size_t(si)];
        const int h = ph.h(), w = ph.w();

        const SamplingMask mask = make_cartesian_mask(
            w, me.accel, 0, Rng::mix(cfg.seed, 0x6d000000 + std::uint64_t(me.accel) * 65536 + std::uint64_t(si)));
        MultiCoilKSpace kfull = synthesize_kspace(ph.image, ph.maps);
        if (cfg.noise_sigma > 0)
            kfull = add_thermal_noise(kfull,
                                      {real_t(cfg.noise_sigma), Rng::mix(cfg.seed, 0x6e000000 + std::uint64_t(si))});
        // noise perturbs the measured samples, so its budget references the
        // masked acquisition; rotation acts on the patient before sampling
        const MultiCoilKSpace kmeas = apply_mask(kfull, mask);

        if (ph.annotations.empty())
            throw Error("sweep: phantom " + std::to_string(si) + " has no annotation box");
        const AnnotationBox& box = ph.annotations.front();
        const RegionMask region = RegionMask::box(h, w, box.x, box.y, box.width, box.height);
        const RegionMask objective_region =
            cfg.smode == SelectionMode::annotated ? region : RegionMask::full(h, w);

        MetricConfig mcfg;
        // the attacked columns report the pool-worst candidate so far, which
        // makes ssim_adv non-increasing and objective non-decreasing along
        // the (ascending) parameter axis by construction
        double pool_obj = -HUGE_VAL, pool_ssim = HUGE_VAL, pool_psnr = HUGE_VAL;
        double base_ssim = 0, base_psnr = 0;
        Tensor warm;

        for (int pi = 0; pi < np; ++pi) {
            AttackReport rep;
            if (cfg.kind == AttackKind::noise) {
                NoiseAttackConfig acfg;
                acfg.eta = params[std::size_t(pi)];
                acfg.steps = cfg.pgd_steps;
                acfg.step_size = cfg.pgd_step_size;
                acfg.seed = Rng::mix(cfg.seed, std::uint64_t(job) * 1000 + std::uint64_t(pi));
                acfg.warm_start = warm;
                rep = pgd_noise_attack(me.op, kmeas, mask, ph.image, objective_region, acfg, &ph.maps, mcfg);
                warm = rep.z;
            } else {
                RotationAttackConfig acfg;
                acfg.theta_max = params[std::size_t(pi)];
                acfg.grid_step = cfg.rot_grid_step;
                rep = rotation_attack(me.op, kfull, mask, ph.image, objective_region, acfg, &ph.maps, mcfg);
            }

            // metrics always restricted to the annotation box, whatever the
            // attack optimized, so selection modes compare on equal footing
            const double cand_ssim = region_ssim(rep.recon_adv, ph.image, region, mcfg);
            const double cand_psnr = region_psnr(rep.recon_adv, ph.image, region, mcfg);
            if (pi == 0) {
                base_ssim = region_ssim(rep.recon_base, ph.image, region, mcfg);
                base_psnr = region_psnr(rep.recon_base, ph.image, region, mcfg);
                pool_obj = rep.objective_base;
                if (base_ssim < pool_ssim) {
                    pool_ssim = base_ssim;
                    pool_psnr = base_psnr;
                }
            }
            pool_obj = std::max(pool_obj, rep.objective_adv);
            if (cand_ssim < pool_ssim) {
                pool_ssim = cand_ssim;
                pool_psnr = cand_psnr;
            }

            SweepRow& row = rows[(std::size_t(mi) * ns + si) * np + std::size_t(pi)];
            row.model = me.model;
            row.accel = me.accel;
            row.attack = attack_name(cfg.kind);
            row.smode = smode_name(cfg.smode);
            row.param = params[std::size_t(pi)];
            row.seed = cfg.seed;
            row.sample = si;
            row.ssim_base = base_ssim;
            row.psnr_base = base_psnr;
            row.ssim_adv = pool_ssim;
            row.psnr_adv = pool_psnr;
            row.objective = pool_obj;
        }
    });
    return rows;
}

} // namespace advmr
