#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "advmr/attack.hpp"
#include "advmr/dataset.hpp"
#include "advmr/errors.hpp"
#include "advmr/metrics.hpp"
#include "advmr/model.hpp"
#include "advmr/mri.hpp"
#include "advmr/phantom.hpp"
#include "advmr/rng.hpp"
#include "advmr/runio.hpp"
#include "advmr/train.hpp"

namespace advmr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kCodeVersion = "advmr 0.1.0";

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec)
        throw DataError(DataError::Code::io, "cannot create output directory " + path + ": " + ec.message());
}

void push_cfg(RunManifest& m, const std::string& key, const std::string& value) {
    m.config.emplace_back(key, value);
}

void push_cfg(RunManifest& m, const std::string& key, double value) {
    m.config.emplace_back(key, format_g(value));
}

void push_cfg(RunManifest& m, const std::string& key, std::uint64_t value) {
    m.config.emplace_back(key, std::to_string(value));
}

void push_cfg(RunManifest& m, const std::string& key, int value) {
    m.config.emplace_back(key, std::to_string(value));
}

// ---- phantom ----------------------------------------------------------

struct PhantomArgs {
    int n = 20;
    int size = 64;
    int coils = 4;
    std::uint64_t seed = 7;
    std::string out;
};

int cmd_phantom(const PhantomArgs& a) {
    Timer timer;
    if (a.n < 1)
        throw UsageError("phantom: --n must be >= 1");
    std::vector<Phantom> set;
    set.reserve(std::size_t(a.n));
    for (int i = 0; i < a.n; ++i)
        set.push_back(generate_phantom(a.size, a.size, a.coils, Rng::mix(a.seed, std::uint64_t(i))));
    save_dataset(a.out, set);

    RunManifest m;
    m.command = "phantom";
    push_cfg(m, "n", a.n);
    push_cfg(m, "size", a.size);
    push_cfg(m, "coils", a.coils);
    push_cfg(m, "seed", a.seed);
    m.outputs = {"manifest.json", "blobs/"};
    m.code_version = kCodeVersion;
    m.wall_seconds = timer.seconds();
    write_manifest(a.out, m);
    std::printf("wrote %d phantoms (%dx%d, %d coils) to %s\n", a.n, a.size, a.size, a.coils,
                a.out.c_str());
    return 0;
}

// ---- train ------------------------------------------------------------

struct TrainArgs {
    std::string model = "unet";
    std::string dataset;
    std::string out;
    int accel = 4;
    TrainConfig tc;
    std::string loss = "ssim";
    int top_channels = 8;
    int depth = 3;
    int cascades = 4;
    int vn_channels = 6;
    int vn_depth = 2;
    std::uint64_t init_seed = 1;
};

int cmd_train(const TrainArgs& a) {
    Timer timer;
    const ModelKind kind = kind_from_name(a.model);
    TrainConfig tc = a.tc;
    tc.accel = a.accel;
    tc.loss = loss_from_name(a.loss);

    ReconOperator init;
    if (kind == ModelKind::unet) {
        UNetConfig c;
        c.top_channels = a.top_channels;
        c.depth = a.depth;
        init = make_unet(c, a.init_seed);
    } else if (kind == ModelKind::varnet) {
        VarNetConfig c;
        c.cascades = a.cascades;
        c.unet_top_channels = a.vn_channels;
        c.unet_depth = a.vn_depth;
        init = make_varnet(c, a.init_seed);
    } else {
        throw UsageError("train: model must be unet or varnet");
    }

    const std::vector<Phantom> ds = load_dataset(a.dataset);
    TrainResult res = train(init, ds, tc);

    ensure_dir(a.out);
    save_checkpoint(a.out + "/model.ckpt", res.model);
    std::string csv = "epoch,loss\n";
    for (std::size_t e = 0; e < res.loss_curve.size(); ++e)
        csv += std::to_string(e) + "," + format_g(res.loss_curve[e]) + "\n";
    write_text_atomic(a.out + "/loss.csv", csv);

    RunManifest m;
    m.command = "train";
    push_cfg(m, "model", a.model);
    push_cfg(m, "R", a.accel);
    push_cfg(m, "epochs", tc.epochs);
    push_cfg(m, "batch", tc.batch_size);
    push_cfg(m, "lr", tc.learning_rate);
    push_cfg(m, "loss", a.loss);
    push_cfg(m, "seed", tc.seed);
    push_cfg(m, "init_seed", a.init_seed);
    push_cfg(m, "sigma", tc.noise_sigma);
    push_cfg(m, "center_fraction", tc.center_fraction);
    push_cfg(m, "random_mask", tc.random_mask ? "true" : "false");
    if (kind == ModelKind::unet) {
        push_cfg(m, "top_channels", a.top_channels);
        push_cfg(m, "depth", a.depth);
    } else {
        push_cfg(m, "cascades", a.cascades);
        push_cfg(m, "vn_channels", a.vn_channels);
        push_cfg(m, "vn_depth", a.vn_depth);
    }
    m.inputs = {a.dataset};
    m.outputs = {"model.ckpt", "loss.csv"};
    m.code_version = kCodeVersion;
    m.wall_seconds = timer.seconds();
    write_manifest(a.out, m);

    if (!res.loss_curve.empty())
        std::printf("trained %s for %d epochs, loss %s -> %s\n", a.model.c_str(), tc.epochs,
                    format_g(res.loss_curve.front()).c_str(), format_g(res.loss_curve.back()).c_str());
    else
        std::printf("wrote initialization checkpoint for %s (0 epochs)\n", a.model.c_str());
    return 0;
}

// ---- attack -----------------------------------------------------------

struct AttackArgs {
    std::string kind = "noise";
    std::vector<std::string> models; // checkpoint paths or "zero_filled"
    std::string dataset;
    std::string out;
    int accel = 4;
    std::string smode = "annotated";
    std::vector<double> params;
    std::uint64_t seed = 0;
    double sigma = 0;
    int steps = 10;
    double step_size = 0.5;
    double grid_step = 0.1;
    int workers = 0;
};

ReconOperator load_model_spec(const std::string& spec) {
    if (spec == "zero_filled")
        return make_zero_filled();
    return load_checkpoint(spec);
}

void append_blob(json& meta, const std::string& dir, const std::string& name, const Tensor& t,
                 bool complex_vals) {
    std::string bytes;
    bytes.reserve(std::size_t(t.numel()) * (complex_vals ? 16 : 8));
    auto put = [&bytes](double v) {
        unsigned char buf[8];
        std::memcpy(buf, &v, 8);
        bytes.append(reinterpret_cast<const char*>(buf), 8);
    };
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        put(double(t[i].real()));
        if (complex_vals)
            put(double(t[i].imag()));
    }
    write_text_atomic(dir + "/" + name, bytes);
    json entry;
    entry["shape"] = t.shape();
    entry["dtype"] = complex_vals ? "c128le" : "f64le";
    entry["bytes"] = bytes.size();
    entry["crc32"] = crc32(bytes.data(), bytes.size());
    meta["files"][name] = entry;
}

// detailed single-instance artifacts for the first (model, sample) pair:
// image dumps, the objective trace or angle curve, and the perturbation
void dump_detail(const AttackArgs& a, const ReconOperator& op, const Phantom& ph,
                 SelectionMode smode) {
    const std::string dir = a.out + "/detail";
    ensure_dir(dir);
    const int h = ph.h(), w = ph.w();

    const SamplingMask mask =
        make_cartesian_mask(w, a.accel, 0, Rng::mix(a.seed, 0x6d000000 + std::uint64_t(a.accel) * 65536));
    MultiCoilKSpace k = synthesize_kspace(ph.image, ph.maps);
    if (a.sigma > 0)
        k = add_thermal_noise(k, {real_t(a.sigma), Rng::mix(a.seed, 0x6e000000)});

    const AnnotationBox& box = ph.annotations.front();
    const RegionMask region = RegionMask::box(h, w, box.x, box.y, box.width, box.height);
    const RegionMask objective_region = smode == SelectionMode::annotated ? region : RegionMask::full(h, w);
    const double param = a.params.back();

    AttackReport rep;
    json meta;
    if (a.kind == "noise") {
        NoiseAttackConfig cfg;
        cfg.eta = param;
        cfg.steps = a.steps;
        cfg.step_size = a.step_size;
        cfg.seed = Rng::mix(a.seed, 0xde7a11);
        rep = pgd_noise_attack(op, k, mask, ph.image, objective_region, cfg, &ph.maps);
        std::string trace = "step,objective\n";
        for (std::size_t i = 0; i < rep.objective_trace.size(); ++i)
            trace += std::to_string(i) + "," + format_g(rep.objective_trace[i]) + "\n";
        write_text_atomic(dir + "/trace.csv", trace);
        append_blob(meta, dir, "z.bin", rep.z, true);
    } else {
        RotationAttackConfig cfg;
        cfg.theta_max = param;
        cfg.grid_step = a.grid_step;
        rep = rotation_attack(op, k, mask, ph.image, objective_region, cfg, &ph.maps);
        std::string curve = "theta,objective,ssim\n";
        for (const auto& row : rep.angle_curve)
            curve += format_g(row[0]) + "," + format_g(row[1]) + "," + format_g(row[2]) + "\n";
        write_text_atomic(dir + "/angles.csv", curve);
        meta["theta_star"] = rep.theta_star;
    }

    const double top = ph.image.max_real();
    write_pgm(dir + "/baseline.pgm", rep.recon_base, top);
    write_pgm(dir + "/attacked.pgm", rep.recon_adv, top);
    Tensor diff({h, w});
    for (std::int64_t i = 0; i < diff.numel(); ++i)
        diff[i] = cplx(std::abs(rep.recon_base[i].real() - rep.recon_adv[i].real()), 0);
    write_pgm(dir + "/diff.pgm", diff, top);
    append_blob(meta, dir, "baseline.bin", rep.recon_base, false);
    append_blob(meta, dir, "attacked.bin", rep.recon_adv, false);

    meta["param"] = param;
    meta["model"] = kind_name(op.kind);
    meta["objective_base"] = rep.objective_base;
    meta["objective_adv"] = rep.objective_adv;
    meta["ssim_base"] = rep.baseline.ssim;
    meta["ssim_adv"] = rep.attacked.ssim;
    write_text_atomic(dir + "/detail.json", meta.dump(2) + "\n");
}

int cmd_attack(const AttackArgs& a) {
    Timer timer;
    if (a.models.empty())
        throw UsageError("attack: at least one --model is required");
    if (a.params.empty())
        throw UsageError("attack: at least one --param is required");
    if (a.kind != "noise" && a.kind != "rotation")
        throw UsageError("attack: --kind must be noise or rotation");
    if (a.smode != "annotated" && a.smode != "full")
        throw UsageError("attack: --smode must be annotated or full");

    const std::vector<Phantom> ds = load_dataset(a.dataset);

    SweepConfig sc;
    sc.kind = a.kind == "noise" ? AttackKind::noise : AttackKind::rotation;
    sc.params = a.params;
    sc.smode = a.smode == "annotated" ? SelectionMode::annotated : SelectionMode::full;
    sc.seed = a.seed;
    sc.noise_sigma = a.sigma;
    sc.pgd_steps = a.steps;
    sc.pgd_step_size = a.step_size;
    sc.rot_grid_step = a.grid_step;
    sc.workers = a.workers;

    std::vector<SweepModelEntry> entries;
    std::vector<std::string> names;
    for (const std::string& spec : a.models) {
        SweepModelEntry e;
        e.op = load_model_spec(spec);
        e.accel = a.accel;
        e.model = kind_name(e.op.kind);
        if (std::count(names.begin(), names.end(), e.model))
            e.model += "#" + std::to_string(std::count(names.begin(), names.end(), e.model) + 1);
        names.push_back(kind_name(e.op.kind));
        entries.push_back(std::move(e));
    }

    std::vector<SweepRow> rows = sweep(entries, ds, sc);

    ensure_dir(a.out);
    write_text_atomic(a.out + "/sweep.csv", sweep_rows_to_csv(rows));

    const std::vector<SummaryRow> sum = summarize(rows);
    std::vector<SvgSeries> series;
    for (const SummaryRow& s : sum) {
        const std::string label = s.model + " R=" + std::to_string(s.accel);
        auto it = std::find_if(series.begin(), series.end(),
                               [&](const SvgSeries& v) { return v.label == label; });
        if (it == series.end()) {
            series.push_back({label, {}});
            it = series.end() - 1;
        }
        it->points.emplace_back(s.param, s.mean_ssim_adv);
    }
    write_svg_chart(a.out + "/sweep.svg", std::string(attack_name(sc.kind)) + " attack",
                    sc.kind == AttackKind::noise ? "eta" : "theta_max (deg)", "region SSIM", series);

    dump_detail(a, entries.front().op, ds.front(), sc.smode);

    RunManifest m;
    m.command = "attack";
    push_cfg(m, "kind", a.kind);
    for (const std::string& spec : a.models)
        push_cfg(m, "model", spec);
    push_cfg(m, "R", a.accel);
    push_cfg(m, "smode", a.smode);
    for (const double p : a.params)
        push_cfg(m, "param", p);
    push_cfg(m, "seed", a.seed);
    push_cfg(m, "sigma", a.sigma);
    push_cfg(m, "steps", a.steps);
    push_cfg(m, "step_size", a.step_size);
    push_cfg(m, "grid_step", a.grid_step);
    m.inputs = {a.dataset};
    for (const std::string& spec : a.models)
        if (spec != "zero_filled")
            m.inputs.push_back(spec);
    m.outputs = {"sweep.csv", "sweep.svg", "detail/"};
    m.code_version = kCodeVersion;
    m.wall_seconds = timer.seconds();
    write_manifest(a.out, m);

    std::printf("attacked %zu models x %zu samples x %zu params; wrote %s/sweep.csv\n", entries.size(),
                ds.size(), a.params.size(), a.out.c_str());
    return 0;
}

// ---- report -----------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& path) {
    const std::string text = read_text(path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kSweepCsvHeader)
        throw DataError(DataError::Code::malformed, path + ": unexpected sweep CSV header");
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 12)
            throw DataError(DataError::Code::malformed, path + ": bad sweep CSV row: " + line);
        try {
            SweepRow r;
            r.model = f[0];
            r.accel = std::stoi(f[1]);
            r.attack = f[2];
            r.smode = f[3];
            r.param = std::stod(f[4]);
            r.seed = std::stoull(f[5]);
            r.sample = std::stoi(f[6]);
            r.ssim_base = std::stod(f[7]);
            r.ssim_adv = std::stod(f[8]);
            r.psnr_base = std::stod(f[9]);
            r.psnr_adv = std::stod(f[10]);
            r.objective = std::stod(f[11]);
            rows.push_back(std::move(r));
        } catch (const std::exception&) {
            throw DataError(DataError::Code::malformed, path + ": bad sweep CSV row: " + line);
        }
    }
    return rows;
}

Tensor load_detail_blob(const std::string& dir, const json& meta, const std::string& name) {
    if (!meta.contains("files") || !meta["files"].contains(name))
        throw DataError(DataError::Code::malformed, dir + "/detail.json: missing entry for " + name);
    const json& entry = meta["files"][name];
    const std::vector<int> shape = entry["shape"].get<std::vector<int>>();
    const std::string bytes = read_text(dir + "/" + name);
    if (bytes.size() != entry["bytes"].get<std::size_t>())
        throw DataError(DataError::Code::truncated, dir + "/" + name + ": size mismatch");
    if (crc32(bytes.data(), bytes.size()) != entry["crc32"].get<std::uint32_t>())
        throw DataError(DataError::Code::checksum_mismatch, dir + "/" + name + ": checksum mismatch");
    Tensor t(shape);
    if (bytes.size() != std::size_t(t.numel()) * 8)
        throw DataError(DataError::Code::malformed, dir + "/" + name + ": shape/bytes mismatch");
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double v;
        std::memcpy(&v, bytes.data() + std::size_t(i) * 8, 8);
        t[i] = cplx(real_t(v), 0);
    }
    return t;
}

struct ReportArgs {
    std::vector<std::string> runs;
    std::string out;
};

int cmd_report(const ReportArgs& a) {
    Timer timer;
    if (a.runs.empty())
        throw UsageError("report: at least one run directory is required");
    std::vector<SweepRow> all;
    for (const std::string& dir : a.runs) {
        std::vector<SweepRow> rows = parse_sweep_csv(dir + "/sweep.csv");
        all.insert(all.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
    }

    ensure_dir(a.out);
    write_text_atomic(a.out + "/summary.csv", summary_to_csv(summarize(all)));

    for (const std::string& dir : a.runs) {
        const std::string detail = dir + "/detail";
        if (!fs::exists(detail + "/detail.json"))
            continue;
        const json meta = json::parse(read_text(detail + "/detail.json"));
        const Tensor base = load_detail_blob(detail, meta, "baseline.bin");
        const Tensor adv = load_detail_blob(detail, meta, "attacked.bin");
        if (!base.same_shape(adv))
            throw DataError(DataError::Code::malformed, detail + ": baseline/attacked shape mismatch");
        Tensor diff(base.shape());
        for (std::int64_t i = 0; i < diff.numel(); ++i)
            diff[i] = cplx(std::abs(base[i].real() - adv[i].real()), 0);
        const std::string label = fs::path(dir).filename().string();
        const double top = base.max_real();
        write_pgm(a.out + "/" + label + "_baseline.pgm", base, top);
        write_pgm(a.out + "/" + label + "_attacked.pgm", adv, top);
        write_pgm(a.out + "/" + label + "_diff.pgm", diff, top);
    }

    RunManifest m;
    m.command = "report";
    for (const std::string& dir : a.runs)
        m.inputs.push_back(dir);
    m.outputs = {"summary.csv"};
    m.code_version = kCodeVersion;
    m.wall_seconds = timer.seconds();
    write_manifest(a.out, m);
    std::printf("summarized %zu rows from %zu runs into %s/summary.csv\n", all.size(), a.runs.size(),
                a.out.c_str());
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"adversarial robustness workbench for undersampled multi-coil MR reconstruction"};
    app.require_subcommand(1);

    PhantomArgs pa;
    CLI::App* sp = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
    sp->add_option("--n", pa.n, "number of phantoms");
    sp->add_option("--size", pa.size, "image height and width");
    sp->add_option("--coils", pa.coils, "number of receiver coils");
    sp->add_option("--seed", pa.seed, "master seed");
    sp->add_option("--out", pa.out, "output dataset directory")->required();

    TrainArgs ta;
    CLI::App* st = app.add_subcommand("train", "train a reconstruction model");
    st->add_option("--model", ta.model, "unet or varnet");
    st->add_option("--dataset", ta.dataset, "phantom dataset directory")->required();
    st->add_option("--out", ta.out, "output run directory")->required();
    st->add_option("--R", ta.accel, "acceleration factor (4 or 8)");
    st->add_option("--epochs", ta.tc.epochs, "training epochs");
    st->add_option("--batch", ta.tc.batch_size, "batch size");
    st->add_option("--lr", ta.tc.learning_rate, "learning rate");
    st->add_option("--loss", ta.loss, "l1 or ssim");
    st->add_option("--seed", ta.tc.seed, "training seed");
    st->add_option("--init-seed", ta.init_seed, "weight initialization seed");
    st->add_option("--sigma", ta.tc.noise_sigma, "thermal noise std");
    st->add_option("--center-fraction", ta.tc.center_fraction, "mask center fraction (0: default)");
    st->add_flag("--random-mask", ta.tc.random_mask, "random instead of equispaced mask columns");
    st->add_option("--top-channels", ta.top_channels, "unet top-level channels");
    st->add_option("--depth", ta.depth, "unet pooling depth");
    st->add_option("--cascades", ta.cascades, "varnet cascade count");
    st->add_option("--vn-channels", ta.vn_channels, "varnet internal unet channels");
    st->add_option("--vn-depth", ta.vn_depth, "varnet internal unet depth");

    AttackArgs aa;
    CLI::App* sa = app.add_subcommand("attack", "run an attack sweep over a dataset");
    sa->add_option("--kind", aa.kind, "noise or rotation");
    sa->add_option("--model", aa.models, "checkpoint path or zero_filled (repeatable)")->required();
    sa->add_option("--dataset", aa.dataset, "phantom dataset directory")->required();
    sa->add_option("--out", aa.out, "output run directory")->required();
    sa->add_option("--R", aa.accel, "acceleration factor (4 or 8)");
    sa->add_option("--smode", aa.smode, "objective region: annotated or full");
    sa->add_option("--param", aa.params, "eta values (noise) or theta_max degrees (rotation)")->required();
    sa->add_option("--seed", aa.seed, "attack seed");
    sa->add_option("--sigma", aa.sigma, "thermal noise std added to the acquisition");
    sa->add_option("--steps", aa.steps, "gradient ascent steps");
    sa->add_option("--step-size", aa.step_size, "gradient ascent step size");
    sa->add_option("--grid-step", aa.grid_step, "rotation grid step (degrees)");
    sa->add_option("--workers", aa.workers, "worker threads (0: auto)");

    ReportArgs ra;
    CLI::App* sr = app.add_subcommand("report", "aggregate attack runs into a summary table");
    sr->add_option("runs", ra.runs, "attack run directories");
    sr->add_option("--out", ra.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (sp->parsed())
            return cmd_phantom(pa);
        if (st->parsed())
            return cmd_train(ta);
        if (sa->parsed())
            return cmd_attack(aa);
        return cmd_report(ra);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

} // namespace advmr
