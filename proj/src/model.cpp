#include "advmr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "advmr/errors.hpp"
#include "advmr/rng.hpp"
#include "advmr/runio.hpp"

namespace advmr {

using nlohmann::json;

const char* kind_name(ModelKind k) {
    switch (k) {
    case ModelKind::zero_filled: return "zero_filled";
    case ModelKind::unet: return "unet";
    case ModelKind::varnet: return "varnet";
    }
    return "?";
}

ModelKind kind_from_name(const std::string& name) {
    if (name == "zero_filled")
        return ModelKind::zero_filled;
    if (name == "unet")
        return ModelKind::unet;
    if (name == "varnet")
        return ModelKind::varnet;
    throw UsageError("unknown model kind '" + name + "'");
}

int ReconOperator::find_param(const std::string& name) const {
    for (std::size_t i = 0; i < param_names.size(); ++i)
        if (param_names[i] == name)
            return int(i);
    return -1;
}

std::int64_t ReconOperator::num_scalars() const {
    std::int64_t n = 0;
    for (const Tensor& p : params)
        n += p.numel();
    return n;
}

namespace {

constexpr double kNormEps = 1e-8;
constexpr double kReluSlope = 0.2;

struct ConvSpec {
    std::string name;
    int cout = 0, cin = 0, k = 3;
    bool zero_init = false;
};

// one shared layout so initialization and forward consume parameters in the
// same order: encoder blocks, bottleneck, decoder blocks, 1x1 head
std::vector<ConvSpec> unet_layout(const std::string& prefix, int top, int depth, int in_ch, int out_ch) {
    std::vector<ConvSpec> specs;
    auto block = [&](const std::string& name, int cin, int cout) {
        specs.push_back({prefix + name + ".conv0", cout, cin, 3, false});
        specs.push_back({prefix + name + ".conv1", cout, cout, 3, false});
    };
    int ch = in_ch;
    for (int l = 0; l < depth; ++l) {
        const int c = top << l;
        block("enc" + std::to_string(l), ch, c);
        ch = c;
    }
    block("bottleneck", ch, top << depth);
    for (int l = depth - 1; l >= 0; --l) {
        const int c = top << l;
        block("dec" + std::to_string(l), (top << (l + 1)) + c, c);
    }
    specs.push_back({prefix + "head", out_ch, top, 1, true});
    return specs;
}

void append_conv_params(ReconOperator& m, const std::vector<ConvSpec>& specs, Rng& rng) {
    for (const ConvSpec& s : specs) {
        Tensor w({s.cout, s.cin, s.k, s.k});
        if (!s.zero_init) {
            const double std = std::sqrt(2.0 / (double(s.cin) * s.k * s.k));
            for (std::int64_t i = 0; i < w.numel(); ++i)
                w[i] = cplx(real_t(std * rng.normal()), 0);
        }
        m.param_names.push_back(s.name + ".weight");
        m.params.push_back(std::move(w));
        m.param_names.push_back(s.name + ".bias");
        m.params.push_back(Tensor({s.cout}));
    }
}

// ---- tape-level building blocks ----

Var coil_transform(Tape& t, Var k, bool inverse) {
    const Tensor& v = t.val(k);
    if (v.rank() != 3)
        throw ShapeError("coil transform expects [N,H,W], got " + v.shape_str());
    const int n = v.dim(0), h = v.dim(1), w = v.dim(2);
    Var out{};
    for (int c = 0; c < n; ++c) {
        Var plane = t.reshape(t.slice(k, {c, 0, 0}, {1, h, w}), {h, w});
        plane = inverse ? t.ifft2c(plane) : t.fft2c(plane);
        plane = t.reshape(plane, {1, h, w});
        out = c == 0 ? plane : t.concat0(out, plane);
    }
    return out;
}

Var coil_sum(Tape& t, Var x) {
    const Tensor& v = t.val(x);
    const int n = v.dim(0), h = v.dim(1), w = v.dim(2);
    Var acc = t.reshape(t.slice(x, {0, 0, 0}, {1, h, w}), {h, w});
    for (int c = 1; c < n; ++c)
        acc = t.add(acc, t.reshape(t.slice(x, {c, 0, 0}, {1, h, w}), {h, w}));
    return acc;
}

Var coil_tile(Tape& t, Var img, int n) {
    const Tensor& v = t.val(img);
    const int h = v.dim(0), w = v.dim(1);
    Var plane = t.reshape(img, {1, h, w});
    Var out = plane;
    for (int c = 1; c < n; ++c)
        out = t.concat0(out, plane);
    return out;
}

Var rss_var(Tape& t, Var coil_imgs) {
    Var sq = t.mul(coil_imgs, t.conj(coil_imgs)); // |x|^2, exactly real
    return t.sqrt_(coil_sum(t, sq));
}

Var crop_center(Tape& t, Var img, int crop) {
    if (crop <= 0)
        return img;
    const Tensor& v = t.val(img);
    const int h = v.dim(0), w = v.dim(1);
    if (crop > h || crop > w)
        throw ShapeError("crop " + std::to_string(crop) + " larger than image " + v.shape_str());
    return t.slice(img, {(h - crop) / 2, (w - crop) / 2}, {crop, crop});
}

// parameters are consumed through a cursor so layout changes stay in one place
struct ParamCursor {
    const std::vector<Var>* vars;
    std::size_t pos = 0;
    Var next() {
        if (pos >= vars->size())
            throw ShapeError("model forward ran past its parameter list");
        return (*vars)[pos++];
    }
};

Var unet_apply(Tape& t, ParamCursor& pc, Var x, int top, int depth) {
    const Tensor& v = t.val(x);
    const int h = v.dim(1), w = v.dim(2);
    if (h % (1 << depth) || w % (1 << depth))
        throw ShapeError("unet depth " + std::to_string(depth) + " needs dims divisible by " +
                         std::to_string(1 << depth) + ", got " + v.shape_str());
    auto conv_act = [&](Var in, int pad) {
        const Var wv = pc.next(), bv = pc.next();
        return t.leaky_relu(t.conv2d(in, wv, bv, pad), kReluSlope);
    };

    std::vector<Var> skips;
    Var cur = x;
    for (int l = 0; l < depth; ++l) {
        cur = conv_act(cur, 1);
        cur = conv_act(cur, 1);
        skips.push_back(cur);
        const Tensor& cv = t.val(cur);
        cur = t.resample(cur, ResampleGrid::scaled(cv.dim(1), cv.dim(2), cv.dim(1) / 2, cv.dim(2) / 2));
    }
    cur = conv_act(cur, 1);
    cur = conv_act(cur, 1);
    for (int l = depth - 1; l >= 0; --l) {
        const Tensor& sv = t.val(skips[std::size_t(l)]);
        const Tensor& cv = t.val(cur);
        cur = t.resample(cur, ResampleGrid::scaled(cv.dim(1), cv.dim(2), sv.dim(1), sv.dim(2)));
        cur = t.concat0(cur, skips[std::size_t(l)]);
        cur = conv_act(cur, 1);
        cur = conv_act(cur, 1);
    }
    const Var wv = pc.next(), bv = pc.next();
    return t.conv2d(cur, wv, bv, 0); // 1x1 head, linear
}

Var zero_filled_var(Tape& t, Var k, int crop) {
    return crop_center(t, rss_var(t, coil_transform(t, k, true)), crop);
}

Var unet_forward_var(Tape& t, const ReconOperator& m, ParamCursor& pc, Var k) {
    const Tensor& kv = t.val(k);
    const int h = kv.dim(1), w = kv.dim(2);
    Var zf = rss_var(t, coil_transform(t, k, true)); // [H,W] real

    // normalization statistics are part of the differentiated graph: the
    // attacked map must be the exact operator under study
    Var mu = mean_of(t, zf);
    Var centered = t.add_bcast(zf, t.mul_scalar(mu, cplx(-1, 0)));
    Var var = mean_of(t, t.square(centered));
    Var sigma = t.sqrt_(t.add_const(var, cplx(real_t(kNormEps), 0)));
    Var xn = t.mul_bcast(centered, t.reciprocal(sigma));

    Var r = unet_apply(t, pc, t.reshape(xn, {1, h, w}), m.ucfg.top_channels, m.ucfg.depth);
    // scale-only denormalization keeps the zeroed head an exact identity
    Var out = t.add(zf, t.mul_bcast(t.reshape(r, {h, w}), sigma));
    return crop_center(t, t.magnitude(out), m.ucfg.crop);
}

Var varnet_forward_var(Tape& t, const ReconOperator& m, ParamCursor& pc, Var k0,
                       const SamplingMask* mask, const SensitivityMaps* maps) {
    if (!mask)
        throw Error("cascade model needs the sampling mask for data consistency");
    if (!maps)
        throw Error("cascade model needs sensitivity maps");
    const Tensor& kv = t.val(k0);
    const int n = kv.dim(0), h = kv.dim(1), w = kv.dim(2);
    if (maps->maps.rank() != 3 || maps->maps.dim(0) != n || maps->maps.dim(1) != h || maps->maps.dim(2) != w)
        throw ShapeError("maps " + maps->maps.shape_str() + " do not match k-space " + kv.shape_str());
    if (mask->w() != w)
        throw ShapeError("mask width " + std::to_string(mask->w()) + " vs k-space " + kv.shape_str());

    const Var dc_w = pc.next();
    const Var mplane = t.constant(mask->plane(h, n));
    Var conj_maps, maps_c;
    {
        Tensor mc = maps->maps;
        maps_c = t.constant(mc);
        conj_maps = t.conj(maps_c);
    }

    Var k = k0;
    for (int c = 0; c < m.vcfg.cascades; ++c) {
        // reduce to a single complex image through the coil profiles
        Var img = coil_sum(t, t.mul(conj_maps, coil_transform(t, k, true)));

        // scale-only normalization; the zero-initialized head then makes the
        // whole refinement vanish, leaving pure data-consistency iterations
        Var msq = mean_of(t, t.mul(img, t.conj(img)));
        Var sigma = t.sqrt_(t.add_const(msq, cplx(real_t(kNormEps), 0)));
        Var xn = t.mul_bcast(img, t.reciprocal(sigma));

        Var ch2 = t.concat0(t.reshape(real_of(t, xn), {1, h, w}), t.reshape(imag_of(t, xn), {1, h, w}));
        Var r = unet_apply(t, pc, ch2, m.vcfg.unet_top_channels, m.vcfg.unet_depth);
        Var r_img = complex_join(t, t.reshape(t.slice(r, {0, 0, 0}, {1, h, w}), {h, w}),
                                 t.reshape(t.slice(r, {1, 0, 0}, {1, h, w}), {h, w}));
        Var refined = t.mul_bcast(r_img, sigma);

        // expand back to per-coil k-space and take the cascade step
        Var g = coil_transform(t, t.mul(maps_c, coil_tile(t, refined, n)), false);
        Var dc = t.mul_bcast(t.mul(mplane, t.sub(k, k0)), dc_w);
        k = t.add(t.sub(k, dc), g);
    }
    return crop_center(t, rss_var(t, coil_transform(t, k, true)), m.vcfg.crop);
}

} // namespace

ReconOperator make_zero_filled(int crop) {
    ReconOperator m;
    m.kind = ModelKind::zero_filled;
    m.ucfg.crop = crop;
    m.vcfg.crop = crop;
    return m;
}

ReconOperator make_unet(const UNetConfig& cfg, std::uint64_t seed) {
    if (cfg.top_channels < 1 || cfg.depth < 1)
        throw Error("unet config: top_channels and depth must be >= 1");
    ReconOperator m;
    m.kind = ModelKind::unet;
    m.ucfg = cfg;
    Rng rng(seed);
    append_conv_params(m, unet_layout("", cfg.top_channels, cfg.depth, 1, 1), rng);
    return m;
}

ReconOperator make_varnet(const VarNetConfig& cfg, std::uint64_t seed) {
    if (cfg.cascades < 0 || cfg.unet_top_channels < 1 || cfg.unet_depth < 1)
        throw Error("varnet config: bad architecture numbers");
    ReconOperator m;
    m.kind = ModelKind::varnet;
    m.vcfg = cfg;
    m.param_names.push_back("dc_weight");
    m.params.push_back(Tensor::full({1}, cplx(real_t(cfg.dc_weight_init), 0)));
    Rng rng(seed);
    for (int c = 0; c < cfg.cascades; ++c)
        append_conv_params(
            m, unet_layout("cascade" + std::to_string(c) + ".", cfg.unet_top_channels, cfg.unet_depth, 2, 2),
            rng);
    return m;
}

ModelVars register_params(Tape& t, const ReconOperator& m, bool requires_grad) {
    ModelVars vars;
    vars.params.reserve(m.params.size());
    for (const Tensor& p : m.params)
        vars.params.push_back(t.leaf(p, requires_grad));
    return vars;
}

Var model_forward(Tape& t, const ReconOperator& m, const ModelVars& vars, Var k_masked,
                  const SamplingMask* mask, const SensitivityMaps* maps) {
    const Tensor& kv = t.val(k_masked);
    if (kv.rank() != 3 || kv.dim(0) < 1)
        throw ShapeError("model forward expects k-space [N,H,W], got " + kv.shape_str());
    ParamCursor pc{&vars.params, 0};
    Var out{};
    switch (m.kind) {
    case ModelKind::zero_filled:
        out = zero_filled_var(t, k_masked, m.ucfg.crop);
        break;
    case ModelKind::unet:
        out = unet_forward_var(t, m, pc, k_masked);
        break;
    case ModelKind::varnet:
        out = varnet_forward_var(t, m, pc, k_masked, mask, maps);
        break;
    }
    if (pc.pos != vars.params.size())
        throw ShapeError("model forward consumed " + std::to_string(pc.pos) + " of " +
                         std::to_string(vars.params.size()) + " parameters");
    return out;
}

Tensor reconstruct(const ReconOperator& m, const MultiCoilKSpace& k_masked, const SamplingMask* mask,
                   const SensitivityMaps* maps) {
    Tape t;
    ModelVars vars = register_params(t, m, false);
    Var k = t.constant(k_masked.coils);
    return t.val(model_forward(t, m, vars, k, mask, maps));
}

namespace {

constexpr char kCkptMagic[8] = {'A', 'D', 'V', 'M', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kCkptVersion = 1;

template <class T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size())
        throw DataError(DataError::Code::truncated, "checkpoint ends inside a fixed field");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const ReconOperator& m) {
    json header = {{"kind", kind_name(m.kind)},
                   {"precision", "f64"},
                   {"unet", {{"top_channels", m.ucfg.top_channels}, {"depth", m.ucfg.depth}, {"crop", m.ucfg.crop}}},
                   {"varnet",
                    {{"cascades", m.vcfg.cascades},
                     {"unet_top_channels", m.vcfg.unet_top_channels},
                     {"unet_depth", m.vcfg.unet_depth},
                     {"dc_weight_init", m.vcfg.dc_weight_init},
                     {"crop", m.vcfg.crop}}},
                   {"params", json::array()}};
    for (std::size_t i = 0; i < m.params.size(); ++i)
        header["params"].push_back({{"name", m.param_names[i]}, {"shape", m.params[i].shape()}});
    const std::string htxt = header.dump();

    std::string payload;
    for (const Tensor& p : m.params)
        for (std::int64_t i = 0; i < p.numel(); ++i)
            put<double>(payload, double(p[i].real()));

    std::string buf;
    buf.append(kCkptMagic, sizeof kCkptMagic);
    put<std::uint32_t>(buf, kCkptVersion);
    put<std::uint64_t>(buf, htxt.size());
    buf += htxt;
    put<std::uint64_t>(buf, payload.size());
    buf += payload;
    put<std::uint32_t>(buf, crc32(payload.data(), payload.size()));
    write_text_atomic(path, buf);
}

ReconOperator load_checkpoint(const std::string& path) {
    const std::string buf = read_text(path);
    std::size_t pos = 0;
    if (buf.size() < sizeof kCkptMagic || std::memcmp(buf.data(), kCkptMagic, sizeof kCkptMagic) != 0)
        throw DataError(DataError::Code::malformed, path + " is not a checkpoint file");
    pos = sizeof kCkptMagic;
    const auto version = get<std::uint32_t>(buf, pos);
    if (version != kCkptVersion)
        throw DataError(DataError::Code::version_mismatch,
                        "checkpoint version " + std::to_string(version) + ", reader supports " +
                            std::to_string(kCkptVersion));
    const auto hlen = get<std::uint64_t>(buf, pos);
    if (pos + hlen > buf.size())
        throw DataError(DataError::Code::truncated, "checkpoint header cut short");
    json header;
    try {
        header = json::parse(buf.substr(pos, hlen));
    } catch (const json::exception& e) {
        throw DataError(DataError::Code::malformed, "checkpoint header: " + std::string(e.what()));
    }
    pos += hlen;

    ReconOperator m;
    try {
        if (header["precision"] != "f64")
            throw DataError(DataError::Code::malformed, "unsupported checkpoint precision");
        m.kind = kind_from_name(header["kind"].get<std::string>());
        m.ucfg.top_channels = header["unet"]["top_channels"].get<int>();
        m.ucfg.depth = header["unet"]["depth"].get<int>();
        m.ucfg.crop = header["unet"]["crop"].get<int>();
        m.vcfg.cascades = header["varnet"]["cascades"].get<int>();
        m.vcfg.unet_top_channels = header["varnet"]["unet_top_channels"].get<int>();
        m.vcfg.unet_depth = header["varnet"]["unet_depth"].get<int>();
        m.vcfg.dc_weight_init = header["varnet"]["dc_weight_init"].get<double>();
        m.vcfg.crop = header["varnet"]["crop"].get<int>();

        const auto plen = get<std::uint64_t>(buf, pos);
        if (pos + plen + 4 > buf.size())
            throw DataError(DataError::Code::truncated, "checkpoint payload cut short");
        const std::uint32_t crc_want = [&] {
            std::size_t p2 = pos + plen;
            return get<std::uint32_t>(buf, p2);
        }();
        if (crc32(buf.data() + pos, plen) != crc_want)
            throw DataError(DataError::Code::checksum_mismatch, "checkpoint payload checksum mismatch");

        std::size_t need = 0;
        for (const json& p : header["params"])
            need += std::size_t(Tensor::count(p["shape"].get<std::vector<int>>())) * 8;
        if (need != plen)
            throw DataError(DataError::Code::malformed, "checkpoint payload size does not match shapes");

        for (const json& p : header["params"]) {
            Tensor tns(p["shape"].get<std::vector<int>>());
            for (std::int64_t i = 0; i < tns.numel(); ++i)
                tns[i] = cplx(real_t(get<double>(buf, pos)), 0);
            m.param_names.push_back(p["name"].get<std::string>());
            m.params.push_back(std::move(tns));
        }
    } catch (const json::exception& e) {
        throw DataError(DataError::Code::malformed, "checkpoint header field: " + std::string(e.what()));
    }
    return m;
}

} // namespace advmr
