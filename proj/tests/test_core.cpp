#include <cmath>
#include <complex>
#include <cstdio>
#include <vector>

#include "advmr/errors.hpp"
#include "advmr/fft.hpp"
#include "advmr/rng.hpp"
#include "advmr/tape.hpp"
#include "advmr/tensor.hpp"
#include "check.hpp"

using namespace advmr;

namespace {

// Brute-force centered orthonormal DFT:
//   out[k] = (1/sqrt(HW)) sum_m x[m] exp(-+ 2 pi i (k-c)(m-c)/N) per axis,
// c = floor(N/2). Independent of the radix/Bluestein implementation path.
Tensor dft2c_ref(const Tensor& x, bool inverse) {
    const int h = x.dim(0), w = x.dim(1), cy = h / 2, cx = w / 2;
    const double sgn = inverse ? 1.0 : -1.0;
    const double tau = 6.283185307179586476925286766559;
    Tensor out({h, w});
    for (int ky = 0; ky < h; ++ky)
        for (int kx = 0; kx < w; ++kx) {
            std::complex<double> acc = 0;
            for (int y = 0; y < h; ++y)
                for (int c = 0; c < w; ++c) {
                    const double ph = sgn * tau *
                                      (double(ky - cy) * (y - cy) / h + double(kx - cx) * (c - cx) / w);
                    acc += std::complex<double>(x.at(y, c)) *
                           std::complex<double>(std::cos(ph), std::sin(ph));
                }
            out.at(ky, kx) = cplx(acc / std::sqrt(double(h) * w));
        }
    return out;
}

void test_fft_against_dft_oracle() {
    Rng rng(11);
    for (const auto [h, w] : std::vector<std::pair<int, int>>{{3, 5}, {4, 4}, {8, 8}, {7, 9}, {16, 12}, {1, 6}}) {
        const Tensor x = rand_cplx({h, w}, rng);
        REQUIRE(max_abs_diff(fft2c(x), dft2c_ref(x, false)) < 1e-10);
        REQUIRE(max_abs_diff(ifft2c(x), dft2c_ref(x, true)) < 1e-10);
    }
    ok("fft2c/ifft2c match the brute-force centered DFT");
}

void test_fft_basic_properties() {
    // all-ones 4x4: energy 4.0 lands on the centered DC bin (2,2)
    Tensor ones = Tensor::full({4, 4}, cplx(1, 0));
    const Tensor f = fft2c(ones);
    REQUIRE(std::abs(cplx(f.at(2, 2)) - cplx(4, 0)) < 1e-12);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            if (y != 2 || x != 2)
                REQUIRE(std::abs(cplx(f.at(y, x))) < 1e-12);

    Rng rng(12);
    const Tensor x = rand_cplx({12, 10}, rng);
    REQUIRE(std::abs(fft2c(x).norm2() - x.norm2()) < 1e-10);          // Parseval
    REQUIRE(max_abs_diff(ifft2c(fft2c(x)), x) < 1e-12);               // roundtrip
    REQUIRE(max_abs_diff(fft2c(ifft2c(x)), x) < 1e-12);

    // adjoint identity <F x, y> = <x, F^H y> with F^H = ifft2c
    const Tensor y = rand_cplx({12, 10}, rng);
    std::complex<double> lhs = 0, rhs = 0;
    const Tensor fx = fft2c(x), fy = ifft2c(y);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        lhs += std::conj(std::complex<double>(fx[i])) * std::complex<double>(y[i]);
        rhs += std::conj(std::complex<double>(x[i])) * std::complex<double>(fy[i]);
    }
    REQUIRE(std::abs(lhs - rhs) < 1e-10);
    ok("fft unitarity, DC placement, adjoint identity");
}

// ---- tape gradients ----------------------------------------------------

Var quad_loss(Tape& t, Var y) { return t.sum(t.mul(y, t.conj(y))); }

// linear probe with a fixed complex coefficient; catches missing conjugates
Var lin_loss(Tape& t, Var y, const Tensor& c) {
    return t.sum(real_of(t, t.mul(t.constant(c), y)));
}

Tensor away_from_zero(Tensor t, double r) {
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (std::abs(cplx(t[i])) < r)
            t[i] += cplx(real_t(2 * r), real_t(r));
    return t;
}

void test_elementwise_gradients() {
    Rng rng(21);
    const Tensor z0 = rand_cplx({3, 4}, rng);
    const Tensor c = rand_cplx({3, 4}, rng);
    const Tensor zs = away_from_zero(rand_cplx({3, 4}, rng), 0.3);

    auto chk = [](double e) { REQUIRE(e < 1e-6); };
    chk(gradcheck(z0, [&](Tape& t, Var z) { return quad_loss(t, t.add(z, t.constant(c))); }));
    chk(gradcheck(z0, [&](Tape& t, Var z) { return lin_loss(t, t.sub(t.constant(c), z), c); }));
    chk(gradcheck(z0, [&](Tape& t, Var z) { return lin_loss(t, t.mul(z, t.constant(c)), c); }));
    chk(gradcheck(z0, [&](Tape& t, Var z) { return quad_loss(t, t.mul(z, z)); }));
    chk(gradcheck(z0, [&](Tape& t, Var z) { return lin_loss(t, t.conj(z), c); }));
    chk(gradcheck(zs, [&](Tape& t, Var z) { return lin_loss(t, t.magnitude(z), c); }));
    chk(gradcheck(z0, [&](Tape& t, Var z) { return lin_loss(t, t.square(z), c); }));
    chk(gradcheck(zs, [&](Tape& t, Var z) { return lin_loss(t, t.reciprocal(z), c); }));
    chk(gradcheck(z0, [&](Tape& t, Var z) { return lin_loss(t, t.mul_scalar(z, cplx(0.7, -1.3)), c); }));
    chk(gradcheck(z0, [&](Tape& t, Var z) { return quad_loss(t, t.add_const(z, cplx(0.3, 0.9))); }));

    // sqrt on a positive real channel; gradient w.r.t. Im must vanish
    Tensor zp = rand_cplx({3, 4}, rng);
    for (std::int64_t i = 0; i < zp.numel(); ++i)
        zp[i] = cplx(real_t(0.5 + std::abs(zp[i].real())), zp[i].imag());
    chk(gradcheck(zp, [&](Tape& t, Var z) { return lin_loss(t, t.sqrt_(real_of(t, z)), c); }));

    // weighted sum with a non-binary mask
    Tensor mask({3, 4});
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        mask[i] = cplx(real_t(i % 3 == 0 ? 0.0 : (i % 3 == 1 ? 1.0 : 0.7)), 0);
    auto shared = std::make_shared<const Tensor>(mask);
    chk(gradcheck(z0, [&](Tape& t, Var z) { return t.masked_sum(t.mul(z, t.conj(z)), shared); }));

    // leaky_relu away from the kink, on the real channel
    Tensor zr = rand_cplx({3, 4}, rng);
    for (std::int64_t i = 0; i < zr.numel(); ++i)
        if (std::abs(zr[i].real()) < 0.2)
            zr[i] = cplx(real_t(0.5), zr[i].imag());
    chk(gradcheck(zr, [&](Tape& t, Var z) { return lin_loss(t, t.leaky_relu(real_of(t, z), 0.2), c); }));

    // reuse: z enters the graph twice, gradients must accumulate
    chk(gradcheck(z0, [&](Tape& t, Var z) {
        return quad_loss(t, t.add(t.mul(z, t.constant(c)), t.mul(z, z)));
    }));
    ok("elementwise op gradients match finite differences");
}

void test_bcast_shape_fft_gradients() {
    Rng rng(22);
    const Tensor x0 = rand_cplx({2, 3, 4}, rng);
    const Tensor c3 = rand_cplx({2, 3, 4}, rng);
    const Tensor s0 = rand_cplx({1}, rng);
    auto chk = [](double e) { REQUIRE(e < 1e-6); };

    chk(gradcheck(x0, [&](Tape& t, Var z) { return quad_loss(t, t.mul_bcast(z, t.constant(s0))); }));
    chk(gradcheck(s0, [&](Tape& t, Var z) { return quad_loss(t, t.mul_bcast(t.constant(x0), z)); }));
    chk(gradcheck(x0, [&](Tape& t, Var z) { return quad_loss(t, t.add_bcast(z, t.constant(s0))); }));
    chk(gradcheck(s0, [&](Tape& t, Var z) { return lin_loss(t, t.add_bcast(t.constant(x0), z), c3); }));

    const Tensor tail = rand_cplx({1, 3, 4}, rng);
    const Tensor call = rand_cplx({3, 3, 4}, rng);
    chk(gradcheck(x0, [&](Tape& t, Var z) { return lin_loss(t, t.concat0(z, t.constant(tail)), call); }));
    chk(gradcheck(x0, [&](Tape& t, Var z) { return lin_loss(t, t.concat0(t.constant(tail), z), call); }));

    const Tensor cs = rand_cplx({1, 2, 2}, rng);
    chk(gradcheck(x0, [&](Tape& t, Var z) { return lin_loss(t, t.slice(z, {1, 0, 2}, {1, 2, 2}), cs); }));
    const Tensor cr = rand_cplx({6, 4}, rng);
    chk(gradcheck(x0, [&](Tape& t, Var z) { return lin_loss(t, t.reshape(z, {6, 4}), cr); }));

    const Tensor z2 = rand_cplx({6, 8}, rng);
    const Tensor c2 = rand_cplx({6, 8}, rng);
    chk(gradcheck(z2, [&](Tape& t, Var z) { return lin_loss(t, t.fft2c(z), c2); }));
    chk(gradcheck(z2, [&](Tape& t, Var z) { return lin_loss(t, t.ifft2c(z), c2); }));
    chk(gradcheck(z2, [&](Tape& t, Var z) { return quad_loss(t, t.fft2c(z)); }));
    ok("broadcast/shape/fft op gradients match finite differences");
}

void test_conv_resample_gradients() {
    Rng rng(23);
    auto chk = [](double e) { REQUIRE(e < 1e-6); };

    const Tensor xr = rand_real({2, 5, 6}, rng);
    const Tensor wr = rand_real({3, 2, 3, 3}, rng, 0.5);
    const Tensor br = rand_real({3}, rng, 0.2);
    const Tensor cy1 = rand_cplx({3, 5, 6}, rng);
    // real fast path: real input, weights, bias, real-linear loss
    chk(gradcheck(xr, [&](Tape& t, Var z) {
        return lin_loss(t, t.conv2d(real_of(t, z), t.constant(wr), t.constant(br), 1), cy1);
    }));
    chk(gradcheck(wr, [&](Tape& t, Var z) {
        return lin_loss(t, t.conv2d(t.constant(xr), real_of(t, z), t.constant(br), 1), cy1);
    }));
    chk(gradcheck(br, [&](Tape& t, Var z) {
        return lin_loss(t, t.conv2d(t.constant(xr), t.constant(wr), real_of(t, z), 1), cy1);
    }));

    // complex path, valid padding
    const Tensor xc = rand_cplx({2, 5, 6}, rng);
    const Tensor wc = rand_cplx({2, 2, 3, 3}, rng, 0.5);
    const Tensor cy0 = rand_cplx({2, 3, 4}, rng);
    chk(gradcheck(xc, [&](Tape& t, Var z) {
        return lin_loss(t, t.conv2d(z, t.constant(wc), Var{}, 0), cy0);
    }));
    chk(gradcheck(wc, [&](Tape& t, Var z) {
        return lin_loss(t, t.conv2d(t.constant(xc), z, Var{}, 0), cy0);
    }));

    // 1x1 kernel
    const Tensor w1 = rand_cplx({4, 2, 1, 1}, rng);
    const Tensor cy2 = rand_cplx({4, 5, 6}, rng);
    chk(gradcheck(xc, [&](Tape& t, Var z) {
        return lin_loss(t, t.conv2d(z, t.constant(w1), Var{}, 0), cy2);
    }));

    // resample: rotation and 2x scaling grids
    const Tensor z2 = rand_cplx({6, 8}, rng);
    const auto rot = ResampleGrid::rotation(6, 8, 7.3);
    const Tensor crot = rand_cplx({6, 8}, rng);
    chk(gradcheck(z2, [&](Tape& t, Var z) { return lin_loss(t, t.resample(z, rot), crot); }));
    const auto down = ResampleGrid::scaled(6, 8, 3, 4);
    const Tensor cdn = rand_cplx({3, 4}, rng);
    chk(gradcheck(z2, [&](Tape& t, Var z) { return lin_loss(t, t.resample(z, down), cdn); }));
    const auto up = ResampleGrid::scaled(6, 8, 12, 16);
    const Tensor cup = rand_cplx({12, 16}, rng);
    chk(gradcheck(z2, [&](Tape& t, Var z) { return lin_loss(t, t.resample(z, up), cup); }));
    ok("conv2d and resample gradients match finite differences");
}

void test_gradient_conventions_at_kinks() {
    // magnitude and sqrt define gradient 0 at exact 0
    Tensor z({3});
    z[0] = cplx(0, 0);
    z[1] = cplx(1.5, -0.5);
    z[2] = cplx(-0.25, 2.0);
    Tensor ones = Tensor::full({3}, cplx(1, 0));
    const Tensor g = autodiff_grad(z, [&](Tape& t, Var v) {
        return t.sum(t.mul(t.constant(ones), t.magnitude(v)));
    });
    REQUIRE(g[0].real() == 0 && g[0].imag() == 0);
    REQUIRE(std::abs(cplx(g[1])) > 0.1);

    Tensor x({2});
    x[0] = cplx(0, 0);
    x[1] = cplx(2.25, 0);
    const Tensor gs = autodiff_grad(x, [&](Tape& t, Var v) {
        return t.sum(t.mul(t.constant(Tensor::full({2}, cplx(1, 0))), t.sqrt_(real_of(t, v))));
    });
    REQUIRE(gs[0].real() == 0);
    REQUIRE_CLOSE(gs[1].real(), 1.0 / 3.0, 1e-12); // d sqrt(x) = 1/(2 sqrt(x))
    ok("zero-point gradient conventions for magnitude and sqrt");
}

void test_composite_gradcheck() {
    Rng rng(24);
    Tensor z0 = rand_cplx({1, 8, 8}, rng);
    const Tensor w = rand_real({2, 2, 3, 3}, rng, 0.4);
    const Tensor b = rand_real({2}, rng, 0.1);
    const Tensor cfin = rand_cplx({1}, rng);
    auto build = [&](Tape& t, Var z) {
        Var re = real_of(t, z);
        Var im = imag_of(t, z);
        Var x2 = t.concat0(re, im);                       // [2,8,8]
        Var h1 = t.leaky_relu(t.conv2d(x2, t.constant(w), t.constant(b), 1), 0.2);
        Var dn = t.resample(h1, ResampleGrid::scaled(8, 8, 4, 4));
        Var fl = t.reshape(t.slice(dn, {0, 0, 0}, {1, 4, 4}), {4, 4});
        Var sp = t.fft2c(complex_join(t, fl, t.mul_scalar(fl, cplx(0.5, 0))));
        Var mg = t.magnitude(sp);
        return t.sum(t.mul(mg, mg));
    };
    REQUIRE(gradcheck(z0, build, 1e-5, 20) < 1e-5);
    ok("composite graph gradcheck (conv/relu/resample/fft/magnitude)");
}

void test_tape_errors_and_mean() {
    Tape t;
    Tensor bad({2});
    bad[0] = cplx(std::numeric_limits<real_t>::quiet_NaN(), 0);
    REQUIRE_THROWS_AS(t.leaf(bad, false), NumericalError);

    Rng rng(25);
    const Tensor a = rand_cplx({2, 3}, rng);
    Tape t2;
    const Var v = t2.leaf(a, false);
    REQUIRE_THROWS_AS(t2.add(v, t2.constant(rand_cplx({3, 2}, rng))), ShapeError);
    REQUIRE_THROWS_AS(t2.sqrt_(v), ShapeError);
    REQUIRE_THROWS_AS(t2.backward(v), ShapeError); // non-scalar loss

    cplx m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        m += a[i];
    m /= real_t(a.numel());
    Tape t3;
    const Var mv = mean_of(t3, t3.constant(a));
    REQUIRE(std::abs(cplx(t3.val(mv)[0]) - m) < 1e-14);
    ok("tape validation errors and mean helper");
}

void test_rng() {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 64; ++i)
        REQUIRE(a.next_u64() == b.next_u64());
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 64; ++i)
        differs |= a2.next_u64() != c.next_u64();
    REQUIRE(differs);
    REQUIRE(Rng::mix(1, 2) != Rng::mix(2, 1));
    REQUIRE(Rng::mix(1, 2) != Rng::mix(1, 3));

    Rng r(7);
    double mean = 0, var = 0;
    const int n = 100000;
    std::vector<double> xs(n);
    for (double& x : xs) {
        x = r.normal();
        mean += x;
    }
    mean /= n;
    for (const double x : xs)
        var += (x - mean) * (x - mean);
    var /= n - 1;
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE(std::abs(var - 1.0) < 0.03);

    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0 && u < 1);
        const int k = r.uniform_int(3, 9);
        REQUIRE(k >= 3 && k <= 9);
    }

    std::vector<int> perm{0, 1, 2, 3, 4, 5, 6, 7};
    r.shuffle(perm);
    std::vector<int> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE((sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
    ok("rng determinism, moments, shuffle");
}

void test_tensor_basics() {
    Tensor t({2, 3});
    t.at(1, 2) = cplx(5, -1);
    REQUIRE(t[5] == cplx(5, -1)); // row-major
    REQUIRE(t.rank() == 2 && t.dim(0) == 2 && t.dim(1) == 3 && t.numel() == 6);
    REQUIRE(!t.is_real());
    t.at(1, 2) = cplx(5, 0);
    REQUIRE(t.is_real());
    REQUIRE_CLOSE(t.norm2(), 5.0, 1e-15);
    REQUIRE(t.shape_str() == "[2,3]");
    ok("tensor indexing and queries");
}

} // namespace

int main() {
    test_tensor_basics();
    test_rng();
    test_fft_against_dft_oracle();
    test_fft_basic_properties();
    test_elementwise_gradients();
    test_bcast_shape_fft_gradients();
    test_conv_resample_gradients();
    test_gradient_conventions_at_kinks();
    test_composite_gradcheck();
    test_tape_errors_and_mean();
    std::printf("test_core: all passed\n");
    return 0;
}
