#include "advmr/fft.hpp"

#include <cmath>
#include <memory>
#include <unordered_map>
#include <vector>

namespace advmr {
namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_pow2(int n) {
    int m = 1;
    while (m < n) m <<= 1;
    return m;
}

// Precomputed tables for one power-of-two length.
struct Radix2Plan {
    int n = 0;
    std::vector<int> bitrev;
    std::vector<cplx> tw; // forward twiddles e^{-2πi k/n}, n/2 entries

    explicit Radix2Plan(int n_) : n(n_), bitrev(size_t(n_)), tw(size_t(n_ / 2)) {
        int logn = 0;
        while ((1 << logn) < n) ++logn;
        for (int i = 0; i < n; ++i) {
            int r = 0;
            for (int b = 0; b < logn; ++b)
                if (i & (1 << b)) r |= 1 << (logn - 1 - b);
            bitrev[size_t(i)] = r;
        }
        for (int k = 0; k < n / 2; ++k) {
            double a = -2.0 * kPi * k / n;
            tw[size_t(k)] = cplx(real_t(std::cos(a)), real_t(std::sin(a)));
        }
    }

    void run(cplx* x, bool inverse) const {
        for (int i = 0; i < n; ++i) {
            int j = bitrev[size_t(i)];
            if (i < j) std::swap(x[i], x[j]);
        }
        for (int len = 2; len <= n; len <<= 1) {
            int half = len / 2;
            int step = n / len;
            for (int base = 0; base < n; base += len) {
                for (int k = 0; k < half; ++k) {
                    cplx w = tw[size_t(k * step)];
                    if (inverse) w = std::conj(w);
                    cplx u = x[base + k];
                    cplx v = x[base + k + half] * w;
                    x[base + k] = u + v;
                    x[base + k + half] = u - v;
                }
            }
        }
    }
};

// Bluestein chirp-z: X_k = conj(b_k) * (a ⊛ b)_k with a_n = x_n conj(b_n),
// b_m = e^{iπ m²/N}; the circular convolution runs at a power-of-two size.
struct BluesteinPlan {
    int n = 0;
    int m = 0; // pow2 conv length >= 2n-1
    std::vector<cplx> chirp;   // b_j, j in [0, n)
    std::vector<cplx> bfft;    // FFT of the wrapped chirp kernel
    std::shared_ptr<const Radix2Plan> sub;

    explicit BluesteinPlan(int n_, std::shared_ptr<const Radix2Plan> sub_)
        : n(n_), m(sub_->n), chirp(size_t(n_)), bfft(size_t(sub_->n)), sub(std::move(sub_)) {
        for (int j = 0; j < n; ++j) {
            // j² mod 2n keeps the phase argument small for large n
            long long q = (long long)j * j % (2LL * n);
            double a = kPi * double(q) / n;
            chirp[size_t(j)] = cplx(real_t(std::cos(a)), real_t(std::sin(a)));
        }
        std::vector<cplx> b(size_t(m), cplx{});
        b[0] = chirp[0];
        for (int j = 1; j < n; ++j) {
            b[size_t(j)] = chirp[size_t(j)];
            b[size_t(m - j)] = chirp[size_t(j)];
        }
        sub->run(b.data(), false);
        bfft = std::move(b);
    }

    void run(cplx* x) const {
        std::vector<cplx> a(size_t(m), cplx{});
        for (int j = 0; j < n; ++j) a[size_t(j)] = x[j] * std::conj(chirp[size_t(j)]);
        sub->run(a.data(), false);
        for (int j = 0; j < m; ++j) a[size_t(j)] *= bfft[size_t(j)];
        sub->run(a.data(), true);
        real_t inv_m = real_t(1.0 / m);
        for (int k = 0; k < n; ++k)
            x[k] = std::conj(chirp[size_t(k)]) * a[size_t(k)] * inv_m;
    }
};

struct PlanCache {
    std::unordered_map<int, std::shared_ptr<const Radix2Plan>> radix2;
    std::unordered_map<int, std::shared_ptr<const BluesteinPlan>> bluestein;

    const Radix2Plan& pow2(int n) {
        auto it = radix2.find(n);
        if (it == radix2.end())
            it = radix2.emplace(n, std::make_shared<Radix2Plan>(n)).first;
        return *it->second;
    }

    const BluesteinPlan& chirp(int n) {
        auto it = bluestein.find(n);
        if (it == bluestein.end()) {
            int m = next_pow2(2 * n - 1);
            auto it2 = radix2.find(m);
            if (it2 == radix2.end())
                it2 = radix2.emplace(m, std::make_shared<Radix2Plan>(m)).first;
            it = bluestein.emplace(n, std::make_shared<BluesteinPlan>(n, it2->second)).first;
        }
        return *it->second;
    }
};

PlanCache& cache() {
    thread_local PlanCache c;
    return c;
}

} // namespace

void fft_1d(cplx* x, int n, bool inverse) {
    if (n <= 1) return;
    if (is_pow2(n)) {
        cache().pow2(n).run(x, inverse);
        return;
    }
    if (!inverse) {
        cache().chirp(n).run(x);
        return;
    }
    // unnormalized inverse via conjugation of the forward transform
    for (int i = 0; i < n; ++i) x[i] = std::conj(x[i]);
    cache().chirp(n).run(x);
    for (int i = 0; i < n; ++i) x[i] = std::conj(x[i]);
}

namespace {

void require_rank2(const Tensor& x, const char* op) {
    if (x.rank() != 2 || x.dim(0) < 1 || x.dim(1) < 1)
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + x.shape_str());
}

// out[y][x] = in[(y+sy) mod H][(x+sx) mod W]
Tensor roll_left(const Tensor& in, int sy, int sx) {
    int h = in.dim(0), w = in.dim(1);
    Tensor out(std::vector<int>{h, w});
    for (int y = 0; y < h; ++y) {
        int yy = (y + sy) % h;
        for (int x = 0; x < w; ++x)
            out.at(y, x) = in.at(yy, (x + sx) % w);
    }
    return out;
}

Tensor transform2(const Tensor& x, bool inverse) {
    int h = x.dim(0), w = x.dim(1);
    // ifftshift: roll by floor(n/2); fftshift: roll by ceil(n/2)
    Tensor t = roll_left(x, h / 2, w / 2);
    for (int y = 0; y < h; ++y) fft_1d(t.data() + std::int64_t(y) * w, w, inverse);
    std::vector<cplx> col(static_cast<std::size_t>(h));
    for (int c = 0; c < w; ++c) {
        for (int y = 0; y < h; ++y) col[size_t(y)] = t.at(y, c);
        fft_1d(col.data(), h, inverse);
        for (int y = 0; y < h; ++y) t.at(y, c) = col[size_t(y)];
    }
    real_t s = real_t(1.0 / std::sqrt(double(h) * double(w)));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] *= s;
    return roll_left(t, (h + 1) / 2, (w + 1) / 2);
}

} // namespace

Tensor fft2c(const Tensor& x) {
    require_rank2(x, "fft2c");
    return transform2(x, false);
}

Tensor ifft2c(const Tensor& x) {
    require_rank2(x, "ifft2c");
    return transform2(x, true);
}

} // namespace advmr
