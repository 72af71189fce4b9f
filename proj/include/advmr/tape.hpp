#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

#include "advmr/tensor.hpp"

namespace advmr {

// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Fixed sampling pattern: ntaps source taps with weights per output pixel,
// stored flat as taps_per_pixel runs. Source points outside the input grid
// carry idx -1 and contribute zero.
struct ResampleGrid {
    int out_h = 0, out_w = 0, in_h = 0, in_w = 0;
    int ntaps = 0;
    std::vector<std::int64_t> idx; // [out_h*out_w*ntaps]
    std::vector<real_t> w;

    // Rotation about the image center (cx=(w-1)/2, cy=(h-1)/2), positive
    // angle counterclockwise; output pixel p samples the input at R(-θ)p with
    // a 16-tap Catmull-Rom kernel so thin structures survive the resampling.
    static std::shared_ptr<const ResampleGrid> rotation(int h, int w, double theta_deg);

    // Bilinear resize with the half-pixel-center mapping
    // src = (dst+0.5)*in/out - 0.5.
    static std::shared_ptr<const ResampleGrid> scaled(int in_h, int in_w, int out_h, int out_w);
};

enum class Op : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    conj_,
    magnitude,
    square,
    sqrt_,
    reciprocal,
    sum,
    masked_sum,
    mul_scalar,
    add_const,
    mul_bcast,
    add_bcast,
    conv2d,
    leaky_relu,
    resample,
    concat0,
    slice,
    reshape,
    fft2c_,
    ifft2c_,
};

const char* op_name(Op op);

struct Node {
    Op op = Op::leaf;
    std::array<int, 3> in{{-1, -1, -1}};
    int n_in = 0;
    bool needs_grad = false;
    Tensor val;
    // per-op attributes
    cplx scalar{};
    double slope = 0;
    int pad = 0;
    std::vector<int> off, sz;
    std::shared_ptr<const Tensor> aux;
    std::shared_ptr<const ResampleGrid> grid;
};

// leaf id -> gradient with respect to that leaf, packed as a complex tensor
// holding (dL/dRe, dL/dIm); for a real-valued loss this equals 2·∂L/∂z̄.
using GradMap = std::unordered_map<int, Tensor>;

// Reverse-mode tape over complex dense tensors. Forward values are computed
// eagerly at record time; node order is a topological order by construction.
// A tape and its tensors belong to one thread of execution.
class Tape {
public:
    // Leaves reject non-finite data. requires_grad marks attack/training
    // variables; everything else enters as a constant.
    Var leaf(Tensor v, bool requires_grad = false);
    Var constant(Tensor v) { return leaf(std::move(v), false); }

    const Tensor& val(Var v) const { return node(v).val; }
    int size() const { return int(nodes_.size()); }
    bool needs_grad(Var v) const { return node(v).needs_grad; }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var conj(Var a);
    Var magnitude(Var a);
    Var square(Var a);
    Var sqrt_(Var a);
    Var reciprocal(Var a);
    Var sum(Var a);
    Var masked_sum(Var a, std::shared_ptr<const Tensor> mask);
    Var mul_scalar(Var a, cplx c);
    Var add_const(Var a, cplx c);
    Var mul_bcast(Var x, Var s);
    Var add_bcast(Var x, Var s);
    Var conv2d(Var x, Var w, Var bias, int pad); // bias optional: pass {} to skip
    Var leaky_relu(Var x, double slope);
    Var resample(Var x, std::shared_ptr<const ResampleGrid> g);
    Var concat0(Var a, Var b);
    Var slice(Var x, std::vector<int> off, std::vector<int> sz);
    Var reshape(Var x, std::vector<int> shape);
    Var fft2c(Var x);
    Var ifft2c(Var x);

    // Gradients of a real scalar loss for every requires_grad leaf.
    GradMap backward(Var loss) const;

private:
    const Node& node(Var v) const;
    Var record(Node n);
    std::vector<Node> nodes_;
};

// Composite helpers built from tape primitives.
Var real_of(Tape& t, Var z);       // (z + conj z)/2, exactly real
Var imag_of(Tape& t, Var z);       // (z - conj z)·(-i/2), exactly real
Var complex_join(Tape& t, Var re, Var im); // re + i·im
Var mean_of(Tape& t, Var x);

} // namespace advmr
