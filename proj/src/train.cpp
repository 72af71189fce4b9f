#include "advmr/train.hpp"

#include <cmath>

#include "advmr/errors.hpp"
#include "advmr/metrics.hpp"
#include "advmr/rng.hpp"

namespace advmr {

const char* loss_name(LossKind k) {
    return k == LossKind::l1 ? "l1" : "one_minus_ssim";
}

LossKind loss_from_name(const std::string& name) {
    if (name == "l1")
        return LossKind::l1;
    if (name == "one_minus_ssim" || name == "ssim")
        return LossKind::one_minus_ssim;
    throw UsageError("unknown loss '" + name + "'");
}

namespace {

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::int64_t step = 0;
};

void adam_step(ReconOperator& model, const std::vector<Tensor>& grads, AdamState& st, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    st.step += 1;
    const double c1 = 1.0 - std::pow(b1, double(st.step));
    const double c2 = 1.0 - std::pow(b2, double(st.step));
    for (std::size_t p = 0; p < model.params.size(); ++p) {
        Tensor& w = model.params[p];
        auto& m = st.m[p];
        auto& v = st.v[p];
        for (std::int64_t i = 0; i < w.numel(); ++i) {
            const double g = double(grads[p][i].real());
            m[std::size_t(i)] = b1 * m[std::size_t(i)] + (1 - b1) * g;
            v[std::size_t(i)] = b2 * v[std::size_t(i)] + (1 - b2) * g * g;
            const double mh = m[std::size_t(i)] / c1;
            const double vh = v[std::size_t(i)] / c2;
            w[i] = cplx(real_t(double(w[i].real()) - lr * mh / (std::sqrt(vh) + eps)), 0);
        }
    }
}

} // namespace

TrainResult train(const ReconOperator& init, const std::vector<Phantom>& ds, const TrainConfig& cfg) {
    if (ds.empty())
        throw UsageError("train: empty dataset");
    if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.learning_rate < 0)
        throw UsageError("train: epochs/batch_size/learning_rate out of range");
    const int h = ds[0].h(), w = ds[0].w();
    for (const Phantom& p : ds)
        if (p.h() != h || p.w() != w)
            throw ShapeError("train: mixed phantom sizes in dataset");

    TrainResult res;
    res.model = init;

    // acquisition synthesis is deterministic per phantom. Do it once.
    std::vector<MultiCoilKSpace> kspaces;
    kspaces.reserve(ds.size());
    for (const Phantom& p : ds)
        kspaces.push_back(synthesize_kspace(p.image, p.maps));

    AdamState st;
    st.m.resize(res.model.params.size());
    st.v.resize(res.model.params.size());
    for (std::size_t p = 0; p < res.model.params.size(); ++p) {
        st.m[p].assign(std::size_t(res.model.params[p].numel()), 0.0);
        st.v[p].assign(std::size_t(res.model.params[p].numel()), 0.0);
    }

    MetricConfig mcfg;
    const int nds = int(ds.size());
    std::vector<int> order(static_cast<std::size_t>(nds));
    for (int i = 0; i < nds; ++i)
        order[std::size_t(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng eperm(Rng::mix(cfg.seed, 0x65706f63 + std::uint64_t(epoch)));
        eperm.shuffle(order);
        double loss_sum = 0;

        for (int start = 0; start < nds; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, nds - start);
            std::vector<Tensor> gacc(res.model.params.size());
            for (std::size_t p = 0; p < gacc.size(); ++p)
                gacc[p] = Tensor(res.model.params[p].shape());

            for (int bi = 0; bi < bsz; ++bi) {
                const int s = order[std::size_t(start + bi)];
                const std::uint64_t step_seed =
                    Rng::mix(cfg.seed, std::uint64_t(epoch) * std::uint64_t(nds) + std::uint64_t(s) + 1);
                const SamplingMask mask = make_cartesian_mask(w, cfg.accel, cfg.center_fraction,
                                                              Rng::mix(step_seed, 0x6d61736b), cfg.random_mask);
                MultiCoilKSpace kin = kspaces[std::size_t(s)];
                if (cfg.noise_sigma > 0)
                    kin = add_thermal_noise(kin, {real_t(cfg.noise_sigma), Rng::mix(step_seed, 0x6e6f6973)});
                const MultiCoilKSpace km = apply_mask(kin, mask);

                Tape t;
                ModelVars vars = register_params(t, res.model, true);
                const Var kvar = t.constant(km.coils);
                const Var pred = model_forward(t, res.model, vars, kvar, &mask, &ds[std::size_t(s)].maps);
                const Var target = t.constant(ds[std::size_t(s)].image);

                Var loss{};
                if (cfg.loss == LossKind::l1) {
                    loss = mean_of(t, t.magnitude(t.sub(pred, target)));
                } else {
                    const double range = ds[std::size_t(s)].image.max_real();
                    const Var s_ = ssim_mean(t, pred, target, mcfg, range);
                    loss = t.add_const(t.mul_scalar(s_, cplx(-1, 0)), cplx(1, 0));
                }
                const double lval = double(t.val(loss)[0].real());
                if (!std::isfinite(lval))
                    throw NumericalError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
                loss_sum += lval;

                GradMap gm = t.backward(loss);
                for (std::size_t p = 0; p < vars.params.size(); ++p) {
                    const Tensor& g = gm.at(vars.params[p].id);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        gacc[p][i] += g[i] / real_t(bsz);
                }
            }
            if (!res.model.params.empty())
                adam_step(res.model, gacc, st, cfg.learning_rate);
        }
        res.loss_curve.push_back(loss_sum / nds);
    }
    return res;
}

} // namespace advmr
