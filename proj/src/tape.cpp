#include "advmr/tape.hpp"

#include <cmath>
#include <cstring>

#include "advmr/errors.hpp"
#include "advmr/fft.hpp"

namespace advmr {

const char* op_name(Op op) {
    switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::conj_: return "conj";
    case Op::magnitude: return "magnitude";
    case Op::square: return "square";
    case Op::sqrt_: return "sqrt";
    case Op::reciprocal: return "reciprocal";
    case Op::sum: return "sum";
    case Op::masked_sum: return "masked_sum";
    case Op::mul_scalar: return "mul_scalar";
    case Op::add_const: return "add_const";
    case Op::mul_bcast: return "mul_bcast";
    case Op::add_bcast: return "add_bcast";
    case Op::conv2d: return "conv2d";
    case Op::leaky_relu: return "leaky_relu";
    case Op::resample: return "resample";
    case Op::concat0: return "concat0";
    case Op::slice: return "slice";
    case Op::reshape: return "reshape";
    case Op::fft2c_: return "fft2c";
    case Op::ifft2c_: return "ifft2c";
    }
    return "?";
}

namespace {

// Catmull-Rom weight (cubic, a = -1/2); exactly interpolating, so integer
// sample positions reduce to a pure copy
double cubic_weight(double t) {
    t = std::abs(t);
    if (t < 1)
        return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2)
        return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

} // namespace

std::shared_ptr<const ResampleGrid> ResampleGrid::rotation(int h, int w, double theta_deg) {
    if (h < 1 || w < 1)
        throw ShapeError("resample rotation: empty grid " + std::to_string(h) + "x" + std::to_string(w));
    auto g = std::make_shared<ResampleGrid>();
    g->out_h = g->in_h = h;
    g->out_w = g->in_w = w;
    g->ntaps = 16;
    g->idx.resize(std::size_t(h) * w * 16);
    g->w.resize(std::size_t(h) * w * 16);
    const double th = theta_deg * (M_PI / 180.0);
    const double c = std::cos(th), s = std::sin(th);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // inverse-map the output pixel into the source image
            const double dy = y - cy, dx = x - cx;
            double sx = c * dx + s * dy + cx;
            double sy = -s * dx + c * dy + cy;
            // snap lattice-preserving angles (0, 90, ...) to exact pixels so
            // they stay pure permutations instead of picking up cos(pi/2)
            // rounding dust
            if (std::abs(sx - std::round(sx)) < 1e-9)
                sx = std::round(sx);
            if (std::abs(sy - std::round(sy)) < 1e-9)
                sy = std::round(sy);
            const std::size_t base = (std::size_t(y) * w + x) * 16;
            const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            double wy[4], wx[4];
            for (int k = 0; k < 4; ++k) {
                wy[k] = cubic_weight(fy - (k - 1));
                wx[k] = cubic_weight(fx - (k - 1));
            }
            for (int j = 0; j < 4; ++j)
                for (int i = 0; i < 4; ++i) {
                    const int yy = y0 + j - 1, xx = x0 + i - 1;
                    const bool inside = yy >= 0 && yy < h && xx >= 0 && xx < w;
                    g->idx[base + std::size_t(j) * 4 + i] = inside ? std::int64_t(yy) * w + xx : -1;
                    g->w[base + std::size_t(j) * 4 + i] = real_t(inside ? wy[j] * wx[i] : 0.0);
                }
        }
    }
    return g;
}

std::shared_ptr<const ResampleGrid> ResampleGrid::scaled(int in_h, int in_w, int out_h, int out_w) {
    if (in_h < 1 || in_w < 1 || out_h < 1 || out_w < 1)
        throw ShapeError("resample scaled: empty grid");
    auto g = std::make_shared<ResampleGrid>();
    g->in_h = in_h;
    g->in_w = in_w;
    g->out_h = out_h;
    g->out_w = out_w;
    g->ntaps = 4;
    g->idx.resize(std::size_t(out_h) * out_w * 4);
    g->w.resize(std::size_t(out_h) * out_w * 4);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double sy = (y + 0.5) * double(in_h) / out_h - 0.5;
            double sx = (x + 0.5) * double(in_w) / out_w - 0.5;
            // clamp so downscale/upscale edges replicate instead of darken
            sy = std::min(std::max(sy, 0.0), double(in_h - 1));
            sx = std::min(std::max(sx, 0.0), double(in_w - 1));
            const std::size_t base = (std::size_t(y) * out_w + x) * 4;
            const int y0 = std::min(int(std::floor(sy)), in_h - 1);
            const int x0 = std::min(int(std::floor(sx)), in_w - 1);
            const int y1 = std::min(y0 + 1, in_h - 1);
            const int x1 = std::min(x0 + 1, in_w - 1);
            const double fy = sy - y0, fx = sx - x0;
            const double wt[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
            const std::int64_t id[4] = {std::int64_t(y0) * in_w + x0, std::int64_t(y0) * in_w + x1,
                                        std::int64_t(y1) * in_w + x0, std::int64_t(y1) * in_w + x1};
            for (int k = 0; k < 4; ++k) {
                g->idx[base + std::size_t(k)] = id[k];
                g->w[base + std::size_t(k)] = real_t(wt[k]);
            }
        }
    }
    return g;
}

const Node& Tape::node(Var v) const {
    if (v.id < 0 || v.id >= int(nodes_.size()))
        throw ShapeError("tape: invalid var id " + std::to_string(v.id));
    return nodes_[std::size_t(v.id)];
}

Var Tape::record(Node n) {
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor v, bool requires_grad) {
    if (!v.all_finite())
        throw NumericalError("tape leaf: non-finite values in tensor " + v.shape_str());
    Node n;
    n.op = Op::leaf;
    n.needs_grad = requires_grad;
    n.val = std::move(v);
    return record(std::move(n));
}

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

Node binary(Op op, Var a, Var b, const Node& na, const Node& nb, Tensor val) {
    Node n;
    n.op = op;
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    n.needs_grad = na.needs_grad || nb.needs_grad;
    n.val = std::move(val);
    return n;
}

Node unary(Op op, Var a, const Node& na, Tensor val) {
    Node n;
    n.op = op;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.needs_grad = na.needs_grad;
    n.val = std::move(val);
    return n;
}

} // namespace

Var Tape::add(Var a, Var b) {
    const Node &na = node(a), &nb = node(b);
    check_same(na.val, nb.val, "add");
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = na.val[i] + nb.val[i];
    return record(binary(Op::add, a, b, na, nb, std::move(out)));
}

Var Tape::sub(Var a, Var b) {
    const Node &na = node(a), &nb = node(b);
    check_same(na.val, nb.val, "sub");
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = na.val[i] - nb.val[i];
    return record(binary(Op::sub, a, b, na, nb, std::move(out)));
}

Var Tape::mul(Var a, Var b) {
    const Node &na = node(a), &nb = node(b);
    check_same(na.val, nb.val, "mul");
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = na.val[i] * nb.val[i];
    return record(binary(Op::mul, a, b, na, nb, std::move(out)));
}

Var Tape::conj(Var a) {
    const Node& na = node(a);
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = std::conj(na.val[i]);
    return record(unary(Op::conj_, a, na, std::move(out)));
}

Var Tape::magnitude(Var a) {
    const Node& na = node(a);
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = cplx(std::abs(na.val[i]), 0);
    return record(unary(Op::magnitude, a, na, std::move(out)));
}

Var Tape::square(Var a) {
    const Node& na = node(a);
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = na.val[i] * na.val[i];
    return record(unary(Op::square, a, na, std::move(out)));
}

Var Tape::sqrt_(Var a) {
    const Node& na = node(a);
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const cplx v = na.val[i];
        if (v.imag() != 0)
            throw ShapeError("sqrt: complex input (use magnitude first)");
        if (v.real() < 0)
            throw NumericalError("sqrt: negative input " + std::to_string(double(v.real())));
        out[i] = cplx(std::sqrt(v.real()), 0);
    }
    return record(unary(Op::sqrt_, a, na, std::move(out)));
}

Var Tape::reciprocal(Var a) {
    const Node& na = node(a);
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = cplx(1, 0) / na.val[i];
    return record(unary(Op::reciprocal, a, na, std::move(out)));
}

Var Tape::sum(Var a) {
    const Node& na = node(a);
    double re = 0, im = 0;
    for (std::int64_t i = 0; i < na.val.numel(); ++i) {
        re += double(na.val[i].real());
        im += double(na.val[i].imag());
    }
    Tensor out({1});
    out[0] = cplx(real_t(re), real_t(im));
    return record(unary(Op::sum, a, na, std::move(out)));
}

Var Tape::masked_sum(Var a, std::shared_ptr<const Tensor> mask) {
    const Node& na = node(a);
    if (!mask)
        throw ShapeError("masked_sum: null mask");
    check_same(na.val, *mask, "masked_sum");
    if (!mask->is_real())
        throw ShapeError("masked_sum: mask must be real-valued");
    double re = 0, im = 0;
    for (std::int64_t i = 0; i < na.val.numel(); ++i) {
        const real_t m = (*mask)[i].real();
        re += double(m * na.val[i].real());
        im += double(m * na.val[i].imag());
    }
    Tensor out({1});
    out[0] = cplx(real_t(re), real_t(im));
    Node n = unary(Op::masked_sum, a, na, std::move(out));
    n.aux = std::move(mask);
    return record(std::move(n));
}

Var Tape::mul_scalar(Var a, cplx c) {
    const Node& na = node(a);
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = na.val[i] * c;
    Node n = unary(Op::mul_scalar, a, na, std::move(out));
    n.scalar = c;
    return record(std::move(n));
}

Var Tape::add_const(Var a, cplx c) {
    const Node& na = node(a);
    Tensor out(na.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = na.val[i] + c;
    Node n = unary(Op::add_const, a, na, std::move(out));
    n.scalar = c;
    return record(std::move(n));
}

Var Tape::mul_bcast(Var x, Var s) {
    const Node &nx = node(x), &ns = node(s);
    if (ns.val.numel() != 1)
        throw ShapeError("mul_bcast: scale must have one element, got " + ns.val.shape_str());
    const cplx c = ns.val[0];
    Tensor out(nx.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = nx.val[i] * c;
    return record(binary(Op::mul_bcast, x, s, nx, ns, std::move(out)));
}

Var Tape::add_bcast(Var x, Var s) {
    const Node &nx = node(x), &ns = node(s);
    if (ns.val.numel() != 1)
        throw ShapeError("add_bcast: offset must have one element, got " + ns.val.shape_str());
    const cplx c = ns.val[0];
    Tensor out(nx.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = nx.val[i] + c;
    return record(binary(Op::add_bcast, x, s, nx, ns, std::move(out)));
}

namespace {

// Direct convolution on contiguous planes. The real fast path matters: model
// activations are exactly real, and complex muls cost four times as much.
struct ConvDims {
    int cin, h, w, cout, kh, kw, pad, oh, ow, ph, pw;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, const Tensor* bias, int pad) {
    if (x.rank() != 3)
        throw ShapeError("conv2d: input must be [C,H,W], got " + x.shape_str());
    if (wt.rank() != 4)
        throw ShapeError("conv2d: weight must be [Cout,Cin,kh,kw], got " + wt.shape_str());
    if (pad < 0)
        throw ShapeError("conv2d: negative padding");
    ConvDims d;
    d.cin = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.cout = wt.dim(0);
    d.kh = wt.dim(2);
    d.kw = wt.dim(3);
    d.pad = pad;
    if (wt.dim(1) != d.cin)
        throw ShapeError("conv2d: weight expects " + std::to_string(wt.dim(1)) + " input channels, input has " +
                         std::to_string(d.cin));
    d.oh = d.h + 2 * pad - d.kh + 1;
    d.ow = d.w + 2 * pad - d.kw + 1;
    if (d.oh < 1 || d.ow < 1)
        throw ShapeError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                         " larger than padded input " + x.shape_str());
    if (d.kh - 1 < pad || d.kw - 1 < pad)
        throw ShapeError("conv2d: padding exceeds kernel-1");
    d.ph = d.h + 2 * pad;
    d.pw = d.w + 2 * pad;
    if (bias && !(bias->rank() == 1 && bias->dim(0) == d.cout))
        throw ShapeError("conv2d: bias must be [" + std::to_string(d.cout) + "], got " + bias->shape_str());
    return d;
}

template <class T>
void pad_plane(const cplx* src, int h, int w, int pad, T* dst, int ph, int pw);

template <>
void pad_plane<double>(const cplx* src, int h, int w, int pad, double* dst, int ph, int pw) {
    std::memset(dst, 0, sizeof(double) * std::size_t(ph) * pw);
    for (int y = 0; y < h; ++y) {
        double* row = dst + std::size_t(y + pad) * pw + pad;
        const cplx* s = src + std::size_t(y) * w;
        for (int x = 0; x < w; ++x)
            row[x] = double(s[x].real());
    }
}

template <>
void pad_plane<cplx>(const cplx* src, int h, int w, int pad, cplx* dst, int ph, int pw) {
    std::fill(dst, dst + std::size_t(ph) * pw, cplx{});
    for (int y = 0; y < h; ++y)
        std::memcpy(dst + std::size_t(y + pad) * pw + pad, src + std::size_t(y) * w, sizeof(cplx) * std::size_t(w));
}

// out[co] += sum_ci kernel(co,ci) * padded(ci); kernel read via krd(co,ci,ky,kx)
template <class T, class KR>
void conv_planes(const std::vector<T>& padded, const ConvDims& d, int cin, int cout, int kh, int kw, KR krd,
                 int oh, int ow, T* out) {
    for (int co = 0; co < cout; ++co) {
        T* oplane = out + std::size_t(co) * oh * ow;
        for (int ci = 0; ci < cin; ++ci) {
            const T* pin = padded.data() + std::size_t(ci) * d.ph * d.pw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const T wv = krd(co, ci, ky, kx);
                    if (wv == T{})
                        continue;
                    for (int y = 0; y < oh; ++y) {
                        const T* irow = pin + std::size_t(y + ky) * d.pw + kx;
                        T* orow = oplane + std::size_t(y) * ow;
                        for (int x = 0; x < ow; ++x)
                            orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
}

} // namespace

Var Tape::conv2d(Var x, Var w, Var bias, int pad) {
    const Node &nx = node(x), &nw = node(w);
    const Node* nb = bias.valid() ? &node(bias) : nullptr;
    const ConvDims d = conv_dims(nx.val, nw.val, nb ? &nb->val : nullptr, pad);

    Tensor out({d.cout, d.oh, d.ow});
    const bool realpath = nx.val.is_real() && nw.val.is_real() && (!nb || nb->val.is_real());
    if (realpath) {
        std::vector<double> padded(std::size_t(d.cin) * d.ph * d.pw);
        for (int ci = 0; ci < d.cin; ++ci)
            pad_plane<double>(nx.val.data() + std::size_t(ci) * d.h * d.w, d.h, d.w, pad,
                              padded.data() + std::size_t(ci) * d.ph * d.pw, d.ph, d.pw);
        std::vector<double> acc(std::size_t(d.cout) * d.oh * d.ow, 0.0);
        const cplx* wd = nw.val.data();
        auto krd = [&](int co, int ci, int ky, int kx) {
            return double(wd[((std::size_t(co) * d.cin + ci) * d.kh + ky) * d.kw + kx].real());
        };
        conv_planes<double>(padded, d, d.cin, d.cout, d.kh, d.kw, krd, d.oh, d.ow, acc.data());
        for (int co = 0; co < d.cout; ++co) {
            const double bv = nb ? double(nb->val[co].real()) : 0.0;
            cplx* op = out.data() + std::size_t(co) * d.oh * d.ow;
            const double* ap = acc.data() + std::size_t(co) * d.oh * d.ow;
            for (std::int64_t i = 0; i < std::int64_t(d.oh) * d.ow; ++i)
                op[i] = cplx(real_t(ap[i] + bv), 0);
        }
    } else {
        std::vector<cplx> padded(std::size_t(d.cin) * d.ph * d.pw);
        for (int ci = 0; ci < d.cin; ++ci)
            pad_plane<cplx>(nx.val.data() + std::size_t(ci) * d.h * d.w, d.h, d.w, pad,
                            padded.data() + std::size_t(ci) * d.ph * d.pw, d.ph, d.pw);
        std::vector<cplx> acc(std::size_t(d.cout) * d.oh * d.ow, cplx{});
        const cplx* wd = nw.val.data();
        auto krd = [&](int co, int ci, int ky, int kx) {
            return wd[((std::size_t(co) * d.cin + ci) * d.kh + ky) * d.kw + kx];
        };
        conv_planes<cplx>(padded, d, d.cin, d.cout, d.kh, d.kw, krd, d.oh, d.ow, acc.data());
        for (int co = 0; co < d.cout; ++co) {
            const cplx bv = nb ? nb->val[co] : cplx{};
            cplx* op = out.data() + std::size_t(co) * d.oh * d.ow;
            const cplx* ap = acc.data() + std::size_t(co) * d.oh * d.ow;
            for (std::int64_t i = 0; i < std::int64_t(d.oh) * d.ow; ++i)
                op[i] = ap[i] + bv;
        }
    }

    Node n;
    n.op = Op::conv2d;
    n.in = {x.id, w.id, bias.valid() ? bias.id : -1};
    n.n_in = bias.valid() ? 3 : 2;
    n.needs_grad = nx.needs_grad || nw.needs_grad || (nb && nb->needs_grad);
    n.val = std::move(out);
    n.pad = pad;
    return record(std::move(n));
}

Var Tape::leaky_relu(Var x, double slope) {
    const Node& nx = node(x);
    Tensor out(nx.val.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const cplx v = nx.val[i];
        if (v.imag() != 0)
            throw ShapeError("leaky_relu: complex input");
        out[i] = cplx(v.real() > 0 ? v.real() : real_t(slope) * v.real(), 0);
    }
    Node n = unary(Op::leaky_relu, x, nx, std::move(out));
    n.slope = slope;
    return record(std::move(n));
}

Var Tape::resample(Var x, std::shared_ptr<const ResampleGrid> g) {
    const Node& nx = node(x);
    if (!g)
        throw ShapeError("resample: null grid");
    const int rank = nx.val.rank();
    if (rank != 2 && rank != 3)
        throw ShapeError("resample: input must be [H,W] or [C,H,W], got " + nx.val.shape_str());
    const int ch = rank == 3 ? nx.val.dim(0) : 1;
    const int h = nx.val.dim(rank - 2), w = nx.val.dim(rank - 1);
    if (h != g->in_h || w != g->in_w)
        throw ShapeError("resample: grid expects " + std::to_string(g->in_h) + "x" + std::to_string(g->in_w) +
                         ", input is " + nx.val.shape_str());
    std::vector<int> oshape = rank == 3 ? std::vector<int>{ch, g->out_h, g->out_w}
                                        : std::vector<int>{g->out_h, g->out_w};
    Tensor out(oshape);
    const std::int64_t oplane = std::int64_t(g->out_h) * g->out_w;
    const std::int64_t iplane = std::int64_t(h) * w;
    const int nt = g->ntaps;
    for (int c = 0; c < ch; ++c) {
        const cplx* src = nx.val.data() + c * iplane;
        cplx* dst = out.data() + c * oplane;
        for (std::int64_t p = 0; p < oplane; ++p) {
            const std::int64_t* ti = g->idx.data() + p * nt;
            const real_t* tw = g->w.data() + p * nt;
            cplx v{};
            for (int k = 0; k < nt; ++k)
                if (ti[k] >= 0)
                    v += tw[k] * src[ti[k]];
            dst[p] = v;
        }
    }
    Node n = unary(Op::resample, x, nx, std::move(out));
    n.grid = std::move(g);
    return record(std::move(n));
}

Var Tape::concat0(Var a, Var b) {
    const Node &na = node(a), &nb = node(b);
    if (na.val.rank() != nb.val.rank() || na.val.rank() < 1)
        throw ShapeError("concat0: rank mismatch " + na.val.shape_str() + " vs " + nb.val.shape_str());
    for (int i = 1; i < na.val.rank(); ++i)
        if (na.val.dim(i) != nb.val.dim(i))
            throw ShapeError("concat0: trailing dims differ " + na.val.shape_str() + " vs " + nb.val.shape_str());
    std::vector<int> oshape = na.val.shape();
    oshape[0] += nb.val.dim(0);
    Tensor out(oshape);
    std::memcpy(out.data(), na.val.data(), sizeof(cplx) * std::size_t(na.val.numel()));
    std::memcpy(out.data() + na.val.numel(), nb.val.data(), sizeof(cplx) * std::size_t(nb.val.numel()));
    return record(binary(Op::concat0, a, b, na, nb, std::move(out)));
}

Var Tape::slice(Var x, std::vector<int> off, std::vector<int> sz) {
    const Node& nx = node(x);
    const int r = nx.val.rank();
    if (int(off.size()) != r || int(sz.size()) != r)
        throw ShapeError("slice: offset/size rank mismatch for " + nx.val.shape_str());
    for (int i = 0; i < r; ++i)
        if (off[i] < 0 || sz[i] < 1 || off[i] + sz[i] > nx.val.dim(i))
            throw ShapeError("slice: window [" + std::to_string(off[i]) + "," + std::to_string(off[i] + sz[i]) +
                             ") outside dim " + std::to_string(i) + " of " + nx.val.shape_str());
    Tensor out(sz);
    // generic strided copy over the (small, <=4) rank
    std::vector<std::int64_t> istr(r, 1);
    for (int i = r - 2; i >= 0; --i)
        istr[std::size_t(i)] = istr[std::size_t(i) + 1] * nx.val.dim(i + 1);
    std::vector<int> idx(r, 0);
    for (std::int64_t o = 0; o < out.numel(); ++o) {
        std::int64_t src = 0;
        for (int i = 0; i < r; ++i)
            src += istr[std::size_t(i)] * (off[std::size_t(i)] + idx[std::size_t(i)]);
        out[o] = nx.val[src];
        for (int i = r - 1; i >= 0; --i) {
            if (++idx[std::size_t(i)] < sz[std::size_t(i)])
                break;
            idx[std::size_t(i)] = 0;
        }
    }
    Node n = unary(Op::slice, x, nx, std::move(out));
    n.off = std::move(off);
    n.sz = std::move(sz);
    return record(std::move(n));
}

Var Tape::reshape(Var x, std::vector<int> shape) {
    const Node& nx = node(x);
    if (Tensor::count(shape) != nx.val.numel())
        throw ShapeError("reshape: cannot view " + nx.val.shape_str() + " as " + shape_to_string(shape));
    Tensor out(shape);
    std::memcpy(out.data(), nx.val.data(), sizeof(cplx) * std::size_t(out.numel()));
    return record(unary(Op::reshape, x, nx, std::move(out)));
}

Var Tape::fft2c(Var x) {
    const Node& nx = node(x);
    return record(unary(Op::fft2c_, x, nx, advmr::fft2c(nx.val)));
}

Var Tape::ifft2c(Var x) {
    const Node& nx = node(x);
    return record(unary(Op::ifft2c_, x, nx, advmr::ifft2c(nx.val)));
}

namespace {

// conv2d backward pieces, shared by real and complex paths via templates
template <class T, class CJ>
void conv_grad_input(const std::vector<T>& gpad, const ConvDims& d, const cplx* wd, CJ cj, T* gin) {
    // full correlation with the flipped kernel over gradient padded by k-1-p
    const int qh = d.kh - 1 - d.pad, qw = d.kw - 1 - d.pad;
    const int gph = d.oh + 2 * qh, gpw = d.ow + 2 * qw;
    (void)gph;
    for (int ci = 0; ci < d.cin; ++ci) {
        T* out = gin + std::size_t(ci) * d.h * d.w;
        for (int co = 0; co < d.cout; ++co) {
            const T* gpl = gpad.data() + std::size_t(co) * gph * gpw;
            for (int ky = 0; ky < d.kh; ++ky) {
                for (int kx = 0; kx < d.kw; ++kx) {
                    const T wv = cj(wd[((std::size_t(co) * d.cin + ci) * d.kh + (d.kh - 1 - ky)) * d.kw +
                                      (d.kw - 1 - kx)]);
                    if (wv == T{})
                        continue;
                    for (int y = 0; y < d.h; ++y) {
                        const T* grow = gpl + std::size_t(y + ky) * gpw + kx;
                        T* orow = out + std::size_t(y) * d.w;
                        for (int x = 0; x < d.w; ++x)
                            orow[x] += wv * grow[x];
                    }
                }
            }
        }
    }
}

template <class T>
void conv_grad_weight(const std::vector<T>& xpad, const std::vector<T>& gout, const ConvDims& d, T* gw) {
    // gw[co,ci,ky,kx] = sum_{y,x} gout[co,y,x] * xpad[ci,y+ky,x+kx]
    for (int co = 0; co < d.cout; ++co) {
        const T* gpl = gout.data() + std::size_t(co) * d.oh * d.ow;
        for (int ci = 0; ci < d.cin; ++ci) {
            const T* xpl = xpad.data() + std::size_t(ci) * d.ph * d.pw;
            for (int ky = 0; ky < d.kh; ++ky) {
                for (int kx = 0; kx < d.kw; ++kx) {
                    T acc{};
                    for (int y = 0; y < d.oh; ++y) {
                        const T* xrow = xpl + std::size_t(y + ky) * d.pw + kx;
                        const T* grow = gpl + std::size_t(y) * d.ow;
                        for (int x = 0; x < d.ow; ++x)
                            acc += grow[x] * xrow[x];
                    }
                    gw[((std::size_t(co) * d.cin + ci) * d.kh + ky) * d.kw + kx] += acc;
                }
            }
        }
    }
}

} // namespace

GradMap Tape::backward(Var loss) const {
    const Node& ln = node(loss);
    if (ln.val.numel() != 1)
        throw ShapeError("backward: loss must be a scalar, got " + ln.val.shape_str());
    if (ln.val[0].imag() != 0)
        throw ShapeError("backward: loss must be real-valued");

    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> has(nodes_.size(), 0);
    auto gslot = [&](int id) -> Tensor& {
        if (!has[std::size_t(id)]) {
            grads[std::size_t(id)] = Tensor(nodes_[std::size_t(id)].val.shape());
            has[std::size_t(id)] = 1;
        }
        return grads[std::size_t(id)];
    };

    {
        Tensor seed({1});
        seed[0] = cplx(1, 0);
        grads[std::size_t(loss.id)] = std::move(seed);
        has[std::size_t(loss.id)] = 1;
    }

    for (int id = loss.id; id >= 0; --id) {
        const Node& n = nodes_[std::size_t(id)];
        if (!has[std::size_t(id)] || !n.needs_grad || n.op == Op::leaf)
            continue;
        const Tensor& g = grads[std::size_t(id)];
        auto in_needs = [&](int slot) {
            const int i = n.in[std::size_t(slot)];
            return i >= 0 && nodes_[std::size_t(i)].needs_grad;
        };

        switch (n.op) {
        case Op::leaf:
            break;
        case Op::add:
            for (int s = 0; s < 2; ++s)
                if (in_needs(s)) {
                    Tensor& ga = gslot(n.in[std::size_t(s)]);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        ga[i] += g[i];
                }
            break;
        case Op::sub: {
            if (in_needs(0)) {
                Tensor& ga = gslot(n.in[0]);
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    ga[i] += g[i];
            }
            if (in_needs(1)) {
                Tensor& gb = gslot(n.in[1]);
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    gb[i] -= g[i];
            }
            break;
        }
        case Op::mul: {
            const Tensor& a = nodes_[std::size_t(n.in[0])].val;
            const Tensor& b = nodes_[std::size_t(n.in[1])].val;
            if (in_needs(0)) {
                Tensor& ga = gslot(n.in[0]);
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    ga[i] += std::conj(b[i]) * g[i];
            }
            if (in_needs(1)) {
                Tensor& gb = gslot(n.in[1]);
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    gb[i] += std::conj(a[i]) * g[i];
            }
            break;
        }
        case Op::conj_: {
            Tensor& ga = gslot(n.in[0]);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                ga[i] += std::conj(g[i]);
            break;
        }
        case Op::magnitude: {
            const Tensor& a = nodes_[std::size_t(n.in[0])].val;
            Tensor& ga = gslot(n.in[0]);
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const real_t m = n.val[i].real();
                if (m == 0)
                    continue; // subgradient at the cone point
                ga[i] += (g[i].real() / m) * a[i];
            }
            break;
        }
        case Op::square: {
            const Tensor& a = nodes_[std::size_t(n.in[0])].val;
            Tensor& ga = gslot(n.in[0]);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                ga[i] += real_t(2) * std::conj(a[i]) * g[i];
            break;
        }
        case Op::sqrt_: {
            Tensor& ga = gslot(n.in[0]);
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const real_t r = n.val[i].real();
                if (r == 0)
                    continue;
                ga[i] += cplx(g[i].real() / (2 * r), 0);
            }
            break;
        }
        case Op::reciprocal: {
            Tensor& ga = gslot(n.in[0]);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                ga[i] += -std::conj(n.val[i] * n.val[i]) * g[i];
            break;
        }
        case Op::sum: {
            Tensor& ga = gslot(n.in[0]);
            const cplx gv = g[0];
            for (std::int64_t i = 0; i < ga.numel(); ++i)
                ga[i] += gv;
            break;
        }
        case Op::masked_sum: {
            Tensor& ga = gslot(n.in[0]);
            const cplx gv = g[0];
            for (std::int64_t i = 0; i < ga.numel(); ++i)
                ga[i] += (*n.aux)[i].real() * gv;
            break;
        }
        case Op::mul_scalar: {
            Tensor& ga = gslot(n.in[0]);
            const cplx cc = std::conj(n.scalar);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                ga[i] += cc * g[i];
            break;
        }
        case Op::add_const: {
            Tensor& ga = gslot(n.in[0]);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                ga[i] += g[i];
            break;
        }
        case Op::mul_bcast: {
            const Tensor& x = nodes_[std::size_t(n.in[0])].val;
            const Tensor& s = nodes_[std::size_t(n.in[1])].val;
            if (in_needs(0)) {
                Tensor& gx = gslot(n.in[0]);
                const cplx cc = std::conj(s[0]);
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    gx[i] += cc * g[i];
            }
            if (in_needs(1)) {
                Tensor& gs = gslot(n.in[1]);
                cplx acc{};
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    acc += std::conj(x[i]) * g[i];
                gs[0] += acc;
            }
            break;
        }
        case Op::add_bcast: {
            if (in_needs(0)) {
                Tensor& gx = gslot(n.in[0]);
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    gx[i] += g[i];
            }
            if (in_needs(1)) {
                Tensor& gs = gslot(n.in[1]);
                cplx acc{};
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    acc += g[i];
                gs[0] += acc;
            }
            break;
        }
        case Op::conv2d: {
            const Node& xn = nodes_[std::size_t(n.in[0])];
            const Node& wn = nodes_[std::size_t(n.in[1])];
            const Node* bn = n.in[2] >= 0 ? &nodes_[std::size_t(n.in[2])] : nullptr;
            const ConvDims d = conv_dims(xn.val, wn.val, bn ? &bn->val : nullptr, n.pad);
            const bool realpath = xn.val.is_real() && wn.val.is_real() && g.is_real();
            const int qh = d.kh - 1 - d.pad, qw = d.kw - 1 - d.pad;
            const int gph = d.oh + 2 * qh, gpw = d.ow + 2 * qw;

            if (realpath) {
                if (xn.needs_grad) {
                    std::vector<double> gpad(std::size_t(d.cout) * gph * gpw);
                    for (int co = 0; co < d.cout; ++co)
                        pad_plane<double>(g.data() + std::size_t(co) * d.oh * d.ow, d.oh, d.ow, qh,
                                          gpad.data() + std::size_t(co) * gph * gpw, gph, gpw);
                    std::vector<double> gi(std::size_t(d.cin) * d.h * d.w, 0.0);
                    conv_grad_input<double>(gpad, d, wn.val.data(), [](cplx v) { return double(v.real()); },
                                            gi.data());
                    Tensor& gx = gslot(n.in[0]);
                    for (std::int64_t i = 0; i < gx.numel(); ++i)
                        gx[i] += cplx(real_t(gi[std::size_t(i)]), 0);
                }
                if (wn.needs_grad) {
                    std::vector<double> xpad(std::size_t(d.cin) * d.ph * d.pw);
                    for (int ci = 0; ci < d.cin; ++ci)
                        pad_plane<double>(xn.val.data() + std::size_t(ci) * d.h * d.w, d.h, d.w, d.pad,
                                          xpad.data() + std::size_t(ci) * d.ph * d.pw, d.ph, d.pw);
                    std::vector<double> gout(std::size_t(d.cout) * d.oh * d.ow);
                    for (std::int64_t i = 0; i < std::int64_t(gout.size()); ++i)
                        gout[std::size_t(i)] = double(g[i].real());
                    std::vector<double> gw(std::size_t(wn.val.numel()), 0.0);
                    conv_grad_weight<double>(xpad, gout, d, gw.data());
                    Tensor& gwt = gslot(n.in[1]);
                    for (std::int64_t i = 0; i < gwt.numel(); ++i)
                        gwt[i] += cplx(real_t(gw[std::size_t(i)]), 0);
                }
            } else {
                if (xn.needs_grad) {
                    std::vector<cplx> gpad(std::size_t(d.cout) * gph * gpw);
                    for (int co = 0; co < d.cout; ++co)
                        pad_plane<cplx>(g.data() + std::size_t(co) * d.oh * d.ow, d.oh, d.ow, qh,
                                        gpad.data() + std::size_t(co) * gph * gpw, gph, gpw);
                    std::vector<cplx> gi(std::size_t(d.cin) * d.h * d.w, cplx{});
                    conv_grad_input<cplx>(gpad, d, wn.val.data(), [](cplx v) { return std::conj(v); }, gi.data());
                    Tensor& gx = gslot(n.in[0]);
                    for (std::int64_t i = 0; i < gx.numel(); ++i)
                        gx[i] += gi[std::size_t(i)];
                }
                if (wn.needs_grad) {
                    std::vector<cplx> xpad(std::size_t(d.cin) * d.ph * d.pw);
                    for (int ci = 0; ci < d.cin; ++ci)
                        pad_plane<cplx>(xn.val.data() + std::size_t(ci) * d.h * d.w, d.h, d.w, d.pad,
                                        xpad.data() + std::size_t(ci) * d.ph * d.pw, d.ph, d.pw);
                    for (auto& v : xpad)
                        v = std::conj(v);
                    std::vector<cplx> gout(g.data(), g.data() + g.numel());
                    std::vector<cplx> gw(std::size_t(wn.val.numel()), cplx{});
                    conv_grad_weight<cplx>(xpad, gout, d, gw.data());
                    Tensor& gwt = gslot(n.in[1]);
                    for (std::int64_t i = 0; i < gwt.numel(); ++i)
                        gwt[i] += gw[std::size_t(i)];
                }
            }
            if (bn && bn->needs_grad) {
                Tensor& gb = gslot(n.in[2]);
                for (int co = 0; co < d.cout; ++co) {
                    cplx acc{};
                    const cplx* gp = g.data() + std::size_t(co) * d.oh * d.ow;
                    for (std::int64_t i = 0; i < std::int64_t(d.oh) * d.ow; ++i)
                        acc += gp[i];
                    gb[co] += acc;
                }
            }
            break;
        }
        case Op::leaky_relu: {
            const Tensor& a = nodes_[std::size_t(n.in[0])].val;
            Tensor& ga = gslot(n.in[0]);
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const real_t f = a[i].real() > 0 ? real_t(1) : real_t(n.slope);
                // output imag is identically zero, so only the real part of
                // the cotangent carries information
                ga[i] += cplx(f * g[i].real(), 0);
            }
            break;
        }
        case Op::resample: {
            Tensor& ga = gslot(n.in[0]);
            const ResampleGrid& gr = *n.grid;
            const int ch = ga.rank() == 3 ? ga.dim(0) : 1;
            const std::int64_t oplane = std::int64_t(gr.out_h) * gr.out_w;
            const std::int64_t iplane = std::int64_t(gr.in_h) * gr.in_w;
            const int nt = gr.ntaps;
            for (int c = 0; c < ch; ++c) {
                const cplx* gp = g.data() + c * oplane;
                cplx* ip = ga.data() + c * iplane;
                for (std::int64_t p = 0; p < oplane; ++p) {
                    const std::int64_t* ti = gr.idx.data() + p * nt;
                    const real_t* tw = gr.w.data() + p * nt;
                    for (int k = 0; k < nt; ++k)
                        if (ti[k] >= 0)
                            ip[ti[k]] += tw[k] * gp[p];
                }
            }
            break;
        }
        case Op::concat0: {
            const std::int64_t na = nodes_[std::size_t(n.in[0])].val.numel();
            if (in_needs(0)) {
                Tensor& ga = gslot(n.in[0]);
                for (std::int64_t i = 0; i < na; ++i)
                    ga[i] += g[i];
            }
            if (in_needs(1)) {
                Tensor& gb = gslot(n.in[1]);
                for (std::int64_t i = 0; i < gb.numel(); ++i)
                    gb[i] += g[na + i];
            }
            break;
        }
        case Op::slice: {
            Tensor& ga = gslot(n.in[0]);
            const Tensor& xin = nodes_[std::size_t(n.in[0])].val;
            const int r = xin.rank();
            std::vector<std::int64_t> istr(std::size_t(r), 1);
            for (int i = r - 2; i >= 0; --i)
                istr[std::size_t(i)] = istr[std::size_t(i) + 1] * xin.dim(i + 1);
            std::vector<int> idx(std::size_t(r), 0);
            for (std::int64_t o = 0; o < g.numel(); ++o) {
                std::int64_t src = 0;
                for (int i = 0; i < r; ++i)
                    src += istr[std::size_t(i)] * (n.off[std::size_t(i)] + idx[std::size_t(i)]);
                ga[src] += g[o];
                for (int i = r - 1; i >= 0; --i) {
                    if (++idx[std::size_t(i)] < n.sz[std::size_t(i)])
                        break;
                    idx[std::size_t(i)] = 0;
                }
            }
            break;
        }
        case Op::reshape: {
            Tensor& ga = gslot(n.in[0]);
            for (std::int64_t i = 0; i < g.numel(); ++i)
                ga[i] += g[i];
            break;
        }
        case Op::fft2c_: {
            Tensor& ga = gslot(n.in[0]);
            Tensor t = advmr::ifft2c(g);
            for (std::int64_t i = 0; i < t.numel(); ++i)
                ga[i] += t[i];
            break;
        }
        case Op::ifft2c_: {
            Tensor& ga = gslot(n.in[0]);
            Tensor t = advmr::fft2c(g);
            for (std::int64_t i = 0; i < t.numel(); ++i)
                ga[i] += t[i];
            break;
        }
        }
    }

    GradMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op == Op::leaf && n.needs_grad) {
            if (has[i])
                out.emplace(int(i), std::move(grads[i]));
            else
                out.emplace(int(i), Tensor(n.val.shape()));
        }
    }
    return out;
}

Var real_of(Tape& t, Var z) {
    return t.mul_scalar(t.add(z, t.conj(z)), cplx(0.5, 0));
}

Var imag_of(Tape& t, Var z) {
    return t.mul_scalar(t.sub(z, t.conj(z)), cplx(0, -0.5));
}

Var complex_join(Tape& t, Var re, Var im) {
    return t.add(re, t.mul_scalar(im, cplx(0, 1)));
}

Var mean_of(Tape& t, Var x) {
    const std::int64_t n = t.val(x).numel();
    return t.mul_scalar(t.sum(x), cplx(real_t(1) / real_t(n), 0));
}

} // namespace advmr
