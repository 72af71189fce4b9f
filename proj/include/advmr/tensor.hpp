#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "advmr/errors.hpp"

namespace advmr {

#ifdef ADVMR_SCALAR32
using real_t = float;
#else
using real_t = double;
#endif
using cplx = std::complex<real_t>;

inline std::string shape_to_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Dense n-dimensional complex array, row-major. Real data rides along with
// zero imaginary parts; ops that require real input check for that.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        v_.assign(static_cast<size_t>(count(shape_)), cplx{});
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, cplx value) {
        Tensor t(std::move(shape));
        for (auto& x : t.v_) x = value;
        return t;
    }

    static Tensor scalar(cplx value) {
        Tensor t(std::vector<int>{1});
        t.v_[0] = value;
        return t;
    }

    static Tensor from_real(std::vector<int> shape, const std::vector<real_t>& re) {
        Tensor t(std::move(shape));
        if (static_cast<size_t>(t.numel()) != re.size())
            throw ShapeError("from_real: " + shape_to_string(t.shape_) + " does not hold " +
                             std::to_string(re.size()) + " values");
        for (size_t i = 0; i < re.size(); ++i) t.v_[i] = cplx(re[i], 0);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return count(shape_); }
    bool empty() const { return v_.empty(); }

    cplx* data() { return v_.data(); }
    const cplx* data() const { return v_.data(); }
    cplx& operator[](std::int64_t i) { return v_[static_cast<size_t>(i)]; }
    const cplx& operator[](std::int64_t i) const { return v_[static_cast<size_t>(i)]; }

    // rank-2 accessors
    cplx& at(int y, int x) { return v_[static_cast<size_t>(y) * dim(1) + x]; }
    const cplx& at(int y, int x) const { return v_[static_cast<size_t>(y) * dim(1) + x]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool is_real() const {
        for (const auto& x : v_)
            if (x.imag() != real_t(0)) return false;
        return true;
    }

    bool all_finite() const {
        for (const auto& x : v_)
            if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) return false;
        return true;
    }

    double norm2() const {
        double s = 0;
        for (const auto& x : v_)
            s += double(x.real()) * x.real() + double(x.imag()) * x.imag();
        return std::sqrt(s);
    }

    double max_abs() const {
        double m = 0;
        for (const auto& x : v_) m = std::max(m, double(std::abs(x)));
        return m;
    }

    double max_real() const {
        double m = -HUGE_VAL;
        for (const auto& x : v_) m = std::max(m, double(x.real()));
        return m;
    }

    std::string shape_str() const { return shape_to_string(shape_); }

    static std::int64_t count(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("tensor: negative dimension in " + shape_to_string(shape));
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<cplx> v_;
};

} // namespace advmr
